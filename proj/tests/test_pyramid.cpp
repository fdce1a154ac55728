#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "tafe/errors.hpp"
#include "tafe/params.hpp"
#include "tafe/pyramid.hpp"

using namespace tafe;

namespace {

FeaturePyramid random_pyramid(std::mt19937_64& rng, std::size_t n, std::size_t d,
                              const std::vector<std::pair<std::size_t, std::size_t>>& sizes) {
    FeaturePyramid p;
    for (const auto& [h, w] : sizes) p.layers.push_back(oracle::random_tensor(Shape{n, d, h, w}, rng));
    return p;
}

std::vector<std::pair<std::size_t, std::size_t>> random_sizes(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(1, 9);
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    for (std::size_t l = 0; l < kPyramidLevels; ++l) sizes.emplace_back(dim(rng), dim(rng));
    return sizes;
}

}  // namespace

TEST(Geometry, ToyIndexExample) {
    const PyramidGeometry g({{2, 2}, {1, 1}});
    EXPECT_EQ(g.total_tokens(), 5u);
    EXPECT_EQ(g.layer(0).offset, 0u);
    EXPECT_EQ(g.layer(1).offset, 4u);
    // Level 2, element (1,1): 1 + (1-1)*1 + 2^2.
    EXPECT_EQ(g.token_index(2, 1, 1), 5u);
    // Level 1, element (2,1): 2 + (1-1)*2.
    EXPECT_EQ(g.token_index(1, 2, 1), 2u);
    EXPECT_EQ(g.token_index(1, 1, 2), 3u);
}

TEST(Geometry, SquareCaseMatchesSquaredResolutionSum) {
    const std::vector<std::size_t> r{6, 3, 2, 1};
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    for (std::size_t v : r) sizes.emplace_back(v, v);
    const PyramidGeometry g(sizes);
    for (std::size_t l = 1; l <= r.size(); ++l) {
        std::size_t offset = 0;  // sum_{k=0}^{l-1} R_k^2 with R_0 = 0
        for (std::size_t k = 1; k < l; ++k) offset += r[k - 1] * r[k - 1];
        for (std::size_t i = 1; i <= r[l - 1]; ++i) {
            for (std::size_t j = 1; j <= r[l - 1]; ++j) {
                EXPECT_EQ(g.token_index(l, i, j), i + (j - 1) * r[l - 1] + offset);
            }
        }
    }
}

TEST(Geometry, IndexAuditUniqueAndInRange) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const PyramidGeometry g(random_sizes(rng));
        std::set<std::size_t> seen;
        for (std::size_t l = 1; l <= g.levels(); ++l) {
            for (std::size_t i = 1; i <= g.layer(l - 1).h; ++i) {
                for (std::size_t j = 1; j <= g.layer(l - 1).w; ++j) {
                    const std::size_t t = g.token_index(l, i, j);
                    EXPECT_GE(t, 1u);
                    EXPECT_LE(t, g.total_tokens());
                    EXPECT_TRUE(seen.insert(t).second);
                }
            }
        }
        EXPECT_EQ(seen.size(), g.total_tokens());
    }
}

TEST(Geometry, InputGeometryTokenCount) {
    const PyramidGeometry g = PyramidGeometry::for_input(64, 64);
    EXPECT_EQ(g.total_tokens(), 16u * 16 + 8 * 8 + 4 * 4 + 2 * 2);
    EXPECT_EQ(g.total_tokens(), 340u);
    const PyramidGeometry r = PyramidGeometry::for_input(32, 96);
    EXPECT_EQ(r.layer(0).h, 8u);
    EXPECT_EQ(r.layer(0).w, 24u);
    EXPECT_EQ(r.layer(3).w, 3u);
    EXPECT_THROW(PyramidGeometry::for_input(48, 64), ConfigError);
}

TEST(Geometry, JsonSidecarRoundTrip) {
    const PyramidGeometry g({{4, 6}, {2, 3}, {1, 2}, {1, 1}});
    const std::string json = g.to_json();
    EXPECT_NE(json.find("\"layers\""), std::string::npos);
    EXPECT_EQ(PyramidGeometry::from_json(json), g);
}

TEST(Flatten, ColumnMajorWithinLevel) {
    FeaturePyramid p;
    // [[a, b], [c, d]] with a=1, b=2, c=3, d=4.
    p.layers.push_back(Tensor::from(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
    const TokenSequence f = flatten_pyramid(p);
    EXPECT_EQ(f.tokens.shape(), (Shape{1, 1, 4, 1}));
    EXPECT_EQ(f.tokens.values(), (std::vector<double>{1, 3, 2, 4}));
}

TEST(Flatten, MatchesIndexFormula) {
    std::mt19937_64 rng(12);
    const auto sizes = random_sizes(rng);
    const FeaturePyramid p = random_pyramid(rng, 2, 3, sizes);
    const TokenSequence f = flatten_pyramid(p);
    const PyramidGeometry& g = f.geometry;
    for (std::size_t l = 0; l < sizes.size(); ++l) {
        for (std::size_t n = 0; n < 2; ++n) {
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t i = 1; i <= sizes[l].first; ++i) {
                    for (std::size_t j = 1; j <= sizes[l].second; ++j) {
                        const std::size_t t = g.token_index(l + 1, i, j);
                        EXPECT_EQ(f.tokens.at(n, c, t - 1, 0), p.layers[l].at(n, c, i - 1, j - 1));
                    }
                }
            }
        }
    }
}

TEST(Flatten, RoundTripsBitExact) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        const auto sizes = random_sizes(rng);
        const FeaturePyramid p = random_pyramid(rng, 1 + trial % 2, 1 + trial % 3, sizes);
        const TokenSequence f = flatten_pyramid(p);
        const FeaturePyramid back = unflatten_tokens(f);
        ASSERT_EQ(back.layers.size(), p.layers.size());
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            EXPECT_EQ(back.layers[l].shape(), p.layers[l].shape());
            EXPECT_EQ(back.layers[l].values(), p.layers[l].values());
        }
        EXPECT_EQ(flatten_pyramid(back).tokens.values(), f.tokens.values());
    }
}

TEST(Flatten, TokenCountMismatch) {
    TokenSequence f{Tensor(Shape{1, 2, 7, 1}), PyramidGeometry({{2, 2}, {1, 1}})};
    EXPECT_THROW(unflatten_tokens(f), ShapeError);
    FeaturePyramid bad;
    bad.layers.push_back(Tensor(Shape{1, 2, 2, 2}));
    bad.layers.push_back(Tensor(Shape{1, 3, 1, 1}));
    EXPECT_THROW(flatten_pyramid(bad), ShapeError);
}

TEST(Backbone, ShapesFor64) {
    ParamStore store;
    ParamInit init(0, 0.02);
    init_backbone(store, init, 3, 16);
    std::mt19937_64 rng(14);
    const FeaturePyramid p = extract_pyramid(oracle::random_tensor(Shape{2, 3, 64, 64}, rng, 0, 1), store);
    ASSERT_EQ(p.layers.size(), 4u);
    EXPECT_EQ(p.layers[0].shape(), (Shape{2, 16, 16, 16}));
    EXPECT_EQ(p.layers[1].shape(), (Shape{2, 16, 8, 8}));
    EXPECT_EQ(p.layers[2].shape(), (Shape{2, 16, 4, 4}));
    EXPECT_EQ(p.layers[3].shape(), (Shape{2, 16, 2, 2}));
}

TEST(Backbone, ZeroImageZeroBiases) {
    ParamStore store;
    ParamInit init(3, 0.5);
    init_backbone(store, init, 3, 8);
    const FeaturePyramid p = extract_pyramid(Tensor(Shape{1, 3, 32, 32}), store);
    for (const Tensor& t : p.layers) {
        for (double v : t.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(Backbone, DeterministicAndRejectsBadExtent) {
    auto build = [] {
        ParamStore store;
        ParamInit init(7, 0.02, true);
        init_backbone(store, init, 3, 8);
        return store;
    };
    const ParamStore a = build();
    const ParamStore b = build();
    std::mt19937_64 rng(15);
    const Tensor img = oracle::random_tensor(Shape{1, 3, 32, 64}, rng, 0, 1);
    const FeaturePyramid pa = extract_pyramid(img, a);
    const FeaturePyramid pb = extract_pyramid(img, b);
    for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(pa.layers[l].values(), pb.layers[l].values());
    EXPECT_THROW(extract_pyramid(Tensor(Shape{1, 3, 40, 64}), a), ConfigError);
}

TEST(FlattenAdjoint, IsInversePermutation) {
    std::mt19937_64 rng(16);
    const PyramidGeometry geom({{3, 2}, {2, 1}, {1, 1}, {1, 1}});
    const Tensor tokens = oracle::random_tensor(Shape{1, 2, geom.total_tokens(), 1}, rng);
    const Tensor upstream = oracle::random_tensor(Shape{1, 2, geom.total_tokens(), 1}, rng);
    ad::Graph g;
    const ad::Var t = g.parameter("t", tokens);
    const auto layers = ad::unflatten_tokens(g, t, geom);
    const ad::Var back = ad::flatten_pyramid(g, layers);
    g.backward(ad::sum(g, ad::mul(g, back, g.constant(upstream))));
    // flatten(unflatten(.)) is the identity, so its adjoint passes the upstream through.
    EXPECT_EQ(g.grad(t).values(), upstream.values());
}
