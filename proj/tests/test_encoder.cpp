#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "tafe/encoder.hpp"
#include "tafe/errors.hpp"

using namespace tafe;

namespace {

ParamStore make_block(std::size_t d, std::size_t heads, std::uint64_t seed, double std_dev = 0.3) {
    ParamStore store;
    ParamInit init(seed, std_dev);
    init_encoder_block(store, init, "blk", EncoderShape{d, heads, 4});
    return store;
}

void zero_layer(ParamStore& s, const std::string& prefix) {
    s.at(prefix + ".weight").fill(0.0);
    s.at(prefix + ".bias").fill(0.0);
}

TokenSequence tokens_of(const Tensor& t) {
    return TokenSequence{t, PyramidGeometry({{t.shape().h, 1}})};
}

// Token-wise affine map y = W x + b with W (c_out, c_in, 1, 1).
std::vector<double> affine(const ParamStore& s, const std::string& prefix, const std::vector<double>& x) {
    const Tensor& w = s.at(prefix + ".weight");
    const Tensor& b = s.at(prefix + ".bias");
    std::vector<double> y(w.shape().n);
    for (std::size_t o = 0; o < y.size(); ++o) {
        y[o] = b[o];
        for (std::size_t i = 0; i < x.size(); ++i) y[o] += w.at(o, i, 0, 0) * x[i];
    }
    return y;
}

std::vector<double> normalize(const std::vector<double>& x, double eps) {
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= x.size();
    std::vector<double> y;
    for (double v : x) y.push_back((v - mean) / std::sqrt(var + eps));
    return y;
}

}  // namespace

TEST(Attention, MatchesDirectSoftmaxOracle) {
    std::mt19937_64 rng(1);
    const std::size_t d = 6;
    const std::size_t heads = 3;
    const std::size_t t_n = 5;
    const Tensor q = oracle::random_tensor(Shape{2, d, t_n, 1}, rng);
    const Tensor k = oracle::random_tensor(Shape{2, d, t_n, 1}, rng);
    const Tensor v = oracle::random_tensor(Shape{2, d, t_n, 1}, rng);
    ad::Graph g;
    const Tensor out = g.value(ad::multi_head_attention(g, g.constant(q), g.constant(k), g.constant(v), heads));
    const std::size_t hd = d / heads;
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < t_n; ++t) {
                std::vector<double> score(t_n);
                double mx = -1e300;
                for (std::size_t s = 0; s < t_n; ++s) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) dot += q.at(n, h * hd + c, t, 0) * k.at(n, h * hd + c, s, 0);
                    score[s] = dot / std::sqrt(static_cast<double>(hd));
                    mx = std::max(mx, score[s]);
                }
                double z = 0.0;
                for (double& sc : score) z += (sc = std::exp(sc - mx));
                for (std::size_t c = 0; c < hd; ++c) {
                    double acc = 0.0;
                    for (std::size_t s = 0; s < t_n; ++s) acc += score[s] / z * v.at(n, h * hd + c, s, 0);
                    EXPECT_NEAR(out.at(n, h * hd + c, t, 0), acc, 1e-13);
                }
            }
        }
    }
}

TEST(Attention, RowsSumToOne) {
    std::mt19937_64 rng(2);
    const Tensor q = oracle::random_tensor(Shape{1, 8, 7, 1}, rng, -3, 3);
    const Tensor k = oracle::random_tensor(Shape{1, 8, 7, 1}, rng, -3, 3);
    const Tensor p = attention_probabilities(q, k, 4);
    EXPECT_EQ(p.shape(), (Shape{1, 4, 7, 7}));
    for (std::size_t r = 0; r < 4 * 7; ++r) {
        double total = 0.0;
        for (std::size_t s = 0; s < 7; ++s) total += p[r * 7 + s];
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Mhsa, SingleTokenClosedForm) {
    const std::size_t d = 4;
    const ParamStore s = make_block(d, 2, 3);
    std::mt19937_64 rng(3);
    const Tensor f = oracle::random_tensor(Shape{1, d, 1, 1}, rng);
    const Tensor out = mhsa(tokens_of(f), s, "blk", 2).tokens;
    // gamma = 1, beta = 0 at init, so LN is plain normalization.
    const std::vector<double> x(f.data().begin(), f.data().end());
    const auto o = affine(s, "blk.attn.o", affine(s, "blk.attn.v", normalize(x, kLayerNormEps)));
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(out[i], x[i] + o[i], 1e-13);
}

TEST(Mhsa, ZeroProjectionsIsIdentity) {
    ParamStore s = make_block(8, 4, 4);
    for (const char* p : {"q", "k", "v", "o"}) zero_layer(s, std::string("blk.attn.") + p);
    std::mt19937_64 rng(4);
    const Tensor f = oracle::random_tensor(Shape{2, 8, 6, 1}, rng);
    EXPECT_EQ(mhsa(tokens_of(f), s, "blk", 4).tokens.values(), f.values());
}

TEST(EncoderBlock, ZeroAttentionAndFfnIsIdentity) {
    ParamStore s = make_block(8, 4, 5);
    zero_layer(s, "blk.attn.o");
    zero_layer(s, "blk.ffn.fc2");
    std::mt19937_64 rng(5);
    const Tensor f = oracle::random_tensor(Shape{1, 8, 9, 1}, rng);
    const TokenSequence in = tokens_of(f);
    const TokenSequence out = encoder_block(in, s, "blk", 4);
    EXPECT_EQ(out.tokens.values(), f.values());
    EXPECT_EQ(out.geometry, in.geometry);
}

TEST(EncoderBlock, ShapeAndGeometryPreserved) {
    const ParamStore s = make_block(8, 2, 6);
    std::mt19937_64 rng(6);
    const PyramidGeometry geom({{2, 2}, {1, 1}, {1, 1}, {1, 1}});
    const TokenSequence in{oracle::random_tensor(Shape{3, 8, geom.total_tokens(), 1}, rng), geom};
    const TokenSequence out = encoder_block(in, s, "blk", 2);
    EXPECT_EQ(out.tokens.shape(), in.tokens.shape());
    EXPECT_EQ(out.geometry, geom);
    EXPECT_TRUE(out.tokens.all_finite());
}

TEST(EncoderBlock, PermutationEquivariant) {
    const ParamStore s = make_block(8, 4, 7);
    std::mt19937_64 rng(7);
    const std::size_t t_n = 10;
    const Tensor f = oracle::random_tensor(Shape{2, 8, t_n, 1}, rng);
    const Tensor pe = oracle::random_tensor(Shape{2, 8, t_n, 1}, rng, -0.1, 0.1);
    std::vector<std::size_t> perm(t_n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permute = [&](const Tensor& x) {
        Tensor y(x.shape());
        for (std::size_t n = 0; n < 2; ++n) {
            for (std::size_t c = 0; c < 8; ++c) {
                for (std::size_t t = 0; t < t_n; ++t) y.at(n, c, t, 0) = x.at(n, c, perm[t], 0);
            }
        }
        return y;
    };
    const Tensor direct = permute(encoder_block(tokens_of(add(f, pe)), s, "blk", 4).tokens);
    const Tensor permuted = encoder_block(tokens_of(add(permute(f), permute(pe))), s, "blk", 4).tokens;
    EXPECT_LT(max_abs_diff(direct, permuted), 1e-10);
}

TEST(EncoderBlock, RejectsIndivisibleHeads) {
    ParamStore store;
    ParamInit init(0, 0.02);
    EXPECT_THROW(init_encoder_block(store, init, "blk", EncoderShape{10, 4, 4}), ConfigError);
    const ParamStore s = make_block(8, 4, 8);
    EXPECT_THROW(mhsa(tokens_of(Tensor(Shape{1, 6, 3, 1})), s, "blk", 4), ShapeError);
}
