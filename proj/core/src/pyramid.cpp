#include "tafe/pyramid.hpp"

#include <json.hpp>

#include "tafe/errors.hpp"

namespace tafe {

PyramidGeometry::PyramidGeometry(const std::vector<std::pair<std::size_t, std::size_t>>& sizes) {
    if (sizes.empty()) throw ShapeError("pyramid geometry needs at least one level");
    std::size_t offset = 0;
    for (const auto& [h, w] : sizes) {
        if (h == 0 || w == 0) throw ShapeError("pyramid levels must be non-empty");
        layers_.push_back({h, w, offset});
        offset += h * w;
    }
}

PyramidGeometry PyramidGeometry::for_input(std::size_t height, std::size_t width) {
    check_input_extent(height, width);
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        const std::size_t div = std::size_t{4} << l;
        sizes.emplace_back(height / div, width / div);
    }
    return PyramidGeometry(sizes);
}

std::size_t PyramidGeometry::total_tokens() const {
    if (layers_.empty()) return 0;
    return layers_.back().offset + layers_.back().area();
}

std::size_t PyramidGeometry::token_index(std::size_t l, std::size_t i, std::size_t j) const {
    if (l < 1 || l > layers_.size()) throw ShapeError("level index out of range");
    const LayerGeometry& g = layers_[l - 1];
    if (i < 1 || i > g.h || j < 1 || j > g.w) throw ShapeError("pixel index out of range");
    return g.offset + i + (j - 1) * g.h;
}

std::string PyramidGeometry::to_json() const {
    nlohmann::ordered_json doc;
    doc["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : layers_) doc["layers"].push_back({{"h", l.h}, {"w", l.w}});
    return doc.dump();
}

PyramidGeometry PyramidGeometry::from_json(const std::string& text) {
    try {
        const auto doc = nlohmann::json::parse(text);
        std::vector<std::pair<std::size_t, std::size_t>> sizes;
        for (const auto& l : doc.at("layers")) {
            sizes.emplace_back(l.at("h").get<std::size_t>(), l.at("w").get<std::size_t>());
        }
        return PyramidGeometry(sizes);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid geometry sidecar: ") + e.what());
    }
}

PyramidGeometry FeaturePyramid::geometry() const {
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    for (const auto& t : layers) sizes.emplace_back(t.shape().h, t.shape().w);
    return PyramidGeometry(sizes);
}

void validate_pyramid(const FeaturePyramid& p) {
    if (p.layers.empty()) throw ShapeError("empty pyramid");
    const Shape& first = p.layers.front().shape();
    for (const auto& t : p.layers) {
        if (t.shape().n != first.n || t.shape().c != first.c) {
            throw ShapeError("pyramid layers must share batch and channel width");
        }
    }
}

namespace {

void check_tokens(const Shape& s, const PyramidGeometry& geometry) {
    if (s.w != 1 || s.h != geometry.total_tokens()) {
        throw ShapeError("token tensor " + s.str() + " does not match geometry with " +
                         std::to_string(geometry.total_tokens()) + " tokens");
    }
}

// Level l occupies tokens [offset, offset + h*w) in column-major order.
void level_to_tokens(const LayerGeometry& lg, const Tensor& map, Tensor& tokens) {
    const Shape& ms = map.shape();
    const std::size_t t_total = tokens.shape().h;
    for (std::size_t bc = 0; bc < ms.n * ms.c; ++bc) {
        const double* m = map.data().data() + bc * ms.plane();
        double* t = tokens.data().data() + bc * t_total + lg.offset;
        for (std::size_t j = 0; j < lg.w; ++j) {
            for (std::size_t i = 0; i < lg.h; ++i) t[i + j * lg.h] = m[i * lg.w + j];
        }
    }
}

Tensor tokens_to_level(const LayerGeometry& lg, const Tensor& tokens) {
    const Shape& ts = tokens.shape();
    Tensor map(Shape{ts.n, ts.c, lg.h, lg.w});
    for (std::size_t bc = 0; bc < ts.n * ts.c; ++bc) {
        const double* t = tokens.data().data() + bc * ts.h + lg.offset;
        double* m = map.data().data() + bc * map.shape().plane();
        for (std::size_t j = 0; j < lg.w; ++j) {
            for (std::size_t i = 0; i < lg.h; ++i) m[i * lg.w + j] = t[i + j * lg.h];
        }
    }
    return map;
}

Tensor flatten_layers(const std::vector<const Tensor*>& layers, const PyramidGeometry& geometry) {
    const Shape& first = layers.front()->shape();
    Tensor tokens(Shape{first.n, first.c, geometry.total_tokens(), 1});
    for (std::size_t l = 0; l < layers.size(); ++l) {
        level_to_tokens(geometry.layer(l), *layers[l], tokens);
    }
    return tokens;
}

}  // namespace

TokenSequence flatten_pyramid(const FeaturePyramid& p) {
    validate_pyramid(p);
    std::vector<const Tensor*> layers;
    for (const auto& t : p.layers) layers.push_back(&t);
    PyramidGeometry geometry = p.geometry();
    Tensor tokens = flatten_layers(layers, geometry);
    return {std::move(tokens), std::move(geometry)};
}

FeaturePyramid unflatten_tokens(const TokenSequence& f) {
    check_tokens(f.tokens.shape(), f.geometry);
    FeaturePyramid p;
    for (const auto& lg : f.geometry.layers()) p.layers.push_back(tokens_to_level(lg, f.tokens));
    return p;
}

namespace ad {

Var flatten_pyramid(Graph& g, const std::vector<Var>& layers) {
    std::vector<const Tensor*> values;
    for (Var v : layers) values.push_back(&g.value(v));
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    const Shape& first = values.front()->shape();
    for (const Tensor* t : values) {
        if (t->shape().n != first.n || t->shape().c != first.c) {
            throw ShapeError("pyramid layers must share batch and channel width");
        }
        sizes.emplace_back(t->shape().h, t->shape().w);
    }
    const PyramidGeometry geometry(sizes);
    Tensor tokens = flatten_layers(values, geometry);
    return g.record(std::move(tokens), layers, [=](Graph& gr, const Tensor& dy) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (gr.requires_grad(layers[l])) {
                gr.accumulate(layers[l], tokens_to_level(geometry.layer(l), dy));
            }
        }
    });
}

std::vector<Var> unflatten_tokens(Graph& g, Var tokens, const PyramidGeometry& geometry) {
    check_tokens(g.value(tokens).shape(), geometry);
    std::vector<Var> out;
    for (std::size_t l = 0; l < geometry.levels(); ++l) {
        const LayerGeometry lg = geometry.layer(l);
        Tensor map = tokens_to_level(lg, g.value(tokens));
        out.push_back(g.record(std::move(map), {tokens}, [=](Graph& gr, const Tensor& dy) {
            Tensor dt(gr.value(tokens).shape());
            level_to_tokens(lg, dy, dt);
            gr.accumulate(tokens, dt);
        }));
    }
    return out;
}

}  // namespace ad

// ---------------------------------------------------------------------------

void check_input_extent(std::size_t height, std::size_t width) {
    if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0) {
        throw ConfigError("input extent " + std::to_string(height) + "x" + std::to_string(width) +
                          " must be a positive multiple of 32");
    }
}

void init_backbone(ParamStore& store, ParamInit& init, std::size_t in_channels, std::size_t d) {
    init.feature_conv(store, "backbone.stem1", d, in_channels, 3, 3, true);
    init.feature_conv(store, "backbone.stem2", d, d, 3, 3, true);
    for (std::size_t l = 2; l <= kPyramidLevels; ++l) {
        init.feature_conv(store, "backbone.down" + std::to_string(l), d, d, 3, 3, true);
    }
    for (std::size_t l = 1; l <= kPyramidLevels; ++l) {
        init.feature_conv(store, "backbone.proj" + std::to_string(l), d, d, 1, 1, true);
    }
}

std::vector<ad::Var> backbone_forward(Binding& b, ad::Var image) {
    ad::Graph& g = b.graph();
    const Shape& s = g.value(image).shape();
    check_input_extent(s.h, s.w);
    ad::Var trunk = ad::relu(g, conv_layer(b, "backbone.stem1", image, Padding::Same, 2));
    trunk = ad::relu(g, conv_layer(b, "backbone.stem2", trunk, Padding::Same, 2));
    std::vector<ad::Var> levels;
    for (std::size_t l = 1; l <= kPyramidLevels; ++l) {
        if (l > 1) {
            trunk = ad::relu(g, conv_layer(b, "backbone.down" + std::to_string(l), trunk,
                                           Padding::Same, 2));
        }
        levels.push_back(conv_layer(b, "backbone.proj" + std::to_string(l), trunk, Padding::Same));
    }
    return levels;
}

FeaturePyramid extract_pyramid(const Tensor& image, const ParamStore& params) {
    ad::Graph g;
    Binding b(g, params, false);
    const auto levels = backbone_forward(b, g.constant(image));
    FeaturePyramid p;
    for (ad::Var v : levels) p.layers.push_back(g.value(v));
    return p;
}

}  // namespace tafe
