#include "tafe/afe.hpp"

#include <optional>

#include "tafe/errors.hpp"

namespace tafe {

const char* topology_name(BlockTopology t) {
    return t == BlockTopology::Anatomy ? "anatomy" : "instrument";
}

std::string aggregate_prefix(const std::string& layer_prefix, BlockTopology t, bool shared) {
    if (shared) return layer_prefix + ".aggregate";
    return layer_prefix + "." + topology_name(t) + ".aggregate";
}

std::string strip_prefix(const std::string& layer_prefix, BlockTopology t, std::size_t m,
                         bool row) {
    return layer_prefix + "." + topology_name(t) + ".branch" + std::to_string(m) +
           (row ? ".row" : ".col");
}

std::string fuse_prefix(const std::string& layer_prefix, BlockTopology t) {
    return layer_prefix + "." + topology_name(t) + ".fuse";
}

std::string afe_layer_prefix(const std::string& stage_prefix, std::size_t level) {
    return stage_prefix + ".afe.l" + std::to_string(level + 1);
}

void init_afe_layer(ParamStore& store, ParamInit& init, const std::string& layer_prefix,
                    std::size_t d, bool share_aggregation) {
    if (share_aggregation) {
        init.feature_conv(store, aggregate_prefix(layer_prefix, BlockTopology::Anatomy, true), d, d,
                          kAggregateSize, kAggregateSize, true);
    }
    for (BlockTopology t : {BlockTopology::Anatomy, BlockTopology::Instrument}) {
        if (!share_aggregation) {
            init.feature_conv(store, aggregate_prefix(layer_prefix, t, false), d, d,
                              kAggregateSize, kAggregateSize, true);
        }
        for (std::size_t m = 0; m < kStripSizes.size(); ++m) {
            const std::size_t k = kStripSizes[m];
            init.conv(store, strip_prefix(layer_prefix, t, m, true), d, d, 1, k, false);
            init.conv(store, strip_prefix(layer_prefix, t, m, false), d, d, k, 1, false);
        }
        // Strips and gate keep the small init so E starts near zero and each
        // stage begins close to its encoder-only form.
        init.conv(store, fuse_prefix(layer_prefix, t), d, d, 1, 1, true);
    }
}

namespace {

void require_strip(const ConvKernel& k, bool row) {
    const bool ok = row ? k.kh() == 1 : k.kw() == 1;
    if (!ok) throw ShapeError(row ? "row kernel must be 1 x k" : "column kernel must be k x 1");
}

// Runs a graph op with every parameter as a constant and returns its value.
template <typename F>
Tensor run_pure(const ParamStore& params, F&& body) {
    ad::Graph g;
    Binding b(g, params, false);
    return g.value(body(b));
}

}  // namespace

Tensor aggregate(const Tensor& c_l, const ConvKernel& kernel) {
    return relu(conv2d(c_l, kernel, Padding::Same));
}

Tensor anatomy_branch(const Tensor& c_agg, const ConvKernel& row, const ConvKernel& col) {
    require_strip(row, true);
    require_strip(col, false);
    return conv2d(conv2d(c_agg, row, Padding::Same), col, Padding::Same);
}

Tensor instrument_branch(const Tensor& c_agg, const ConvKernel& row, const ConvKernel& col) {
    require_strip(row, true);
    require_strip(col, false);
    return add(conv2d(c_agg, col, Padding::Same), conv2d(c_agg, row, Padding::Same));
}

Tensor enhance_from_aggregate(const Tensor& c_agg, const ParamStore& params,
                              const std::string& layer_prefix, BlockTopology topology) {
    return run_pure(params, [&](Binding& b) {
        return ad::enhance_from_aggregate(b, layer_prefix, topology, b.graph().constant(c_agg));
    });
}

Tensor enhance_block(const Tensor& c_l, const ParamStore& params, const std::string& layer_prefix,
                     BlockTopology topology, bool share_aggregation) {
    return run_pure(params, [&](Binding& b) {
        const ad::Var agg = ad::afe_aggregate(
            b, aggregate_prefix(layer_prefix, topology, share_aggregation), b.graph().constant(c_l));
        return ad::enhance_from_aggregate(b, layer_prefix, topology, agg);
    });
}

FeaturePyramid afe_forward(const FeaturePyramid& p, const ParamStore& params,
                           const std::string& stage_prefix, bool share_aggregation) {
    validate_pyramid(p);
    ad::Graph g;
    Binding b(g, params, false);
    std::vector<ad::Var> layers;
    for (const auto& t : p.layers) layers.push_back(g.constant(t));
    const auto out = ad::afe_forward(b, stage_prefix, layers, share_aggregation);
    FeaturePyramid e;
    for (ad::Var v : out) e.layers.push_back(g.value(v));
    return e;
}

namespace ad {

Var afe_aggregate(Binding& b, const std::string& prefix, Var c_l) {
    return relu(b.graph(), conv_layer(b, prefix, c_l, Padding::Same));
}

Var anatomy_branch(Binding& b, const std::string& layer_prefix, std::size_t m, Var c_agg) {
    const Var rowed =
        conv_layer(b, strip_prefix(layer_prefix, BlockTopology::Anatomy, m, true), c_agg, Padding::Same);
    return conv_layer(b, strip_prefix(layer_prefix, BlockTopology::Anatomy, m, false), rowed,
                      Padding::Same);
}

Var instrument_branch(Binding& b, const std::string& layer_prefix, std::size_t m, Var c_agg) {
    const Var col = conv_layer(b, strip_prefix(layer_prefix, BlockTopology::Instrument, m, false),
                               c_agg, Padding::Same);
    const Var row = conv_layer(b, strip_prefix(layer_prefix, BlockTopology::Instrument, m, true),
                               c_agg, Padding::Same);
    return add(b.graph(), col, row);
}

Var enhance_from_aggregate(Binding& b, const std::string& layer_prefix, BlockTopology topology,
                           Var c_agg) {
    Graph& g = b.graph();
    std::optional<Var> branches;
    for (std::size_t m = 0; m < kStripSizes.size(); ++m) {
        const Var s = topology == BlockTopology::Anatomy
                          ? anatomy_branch(b, layer_prefix, m, c_agg)
                          : instrument_branch(b, layer_prefix, m, c_agg);
        branches = branches ? add(g, *branches, s) : s;
    }
    const Var acc = add(g, *branches, c_agg);
    const Var fused = conv_layer(b, fuse_prefix(layer_prefix, topology), acc, Padding::Same);
    return mul(g, fused, c_agg);
}

Var afe_layer(Binding& b, const std::string& layer_prefix, Var c_l, bool share_aggregation) {
    Graph& g = b.graph();
    Var anatomy_agg = afe_aggregate(
        b, aggregate_prefix(layer_prefix, BlockTopology::Anatomy, share_aggregation), c_l);
    Var instrument_agg =
        share_aggregation
            ? anatomy_agg
            : afe_aggregate(b, aggregate_prefix(layer_prefix, BlockTopology::Instrument, false), c_l);
    const Var anatomy = enhance_from_aggregate(b, layer_prefix, BlockTopology::Anatomy, anatomy_agg);
    const Var instrument =
        enhance_from_aggregate(b, layer_prefix, BlockTopology::Instrument, instrument_agg);
    return add(g, anatomy, instrument);
}

std::vector<Var> afe_forward(Binding& b, const std::string& stage_prefix,
                             const std::vector<Var>& pyramid, bool share_aggregation) {
    if (pyramid.size() != kPyramidLevels) {
        throw ShapeError("afe_forward expects " + std::to_string(kPyramidLevels) + " levels, got " +
                         std::to_string(pyramid.size()));
    }
    std::vector<Var> out;
    for (std::size_t l = 0; l < pyramid.size(); ++l) {
        out.push_back(afe_layer(b, afe_layer_prefix(stage_prefix, l), pyramid[l], share_aggregation));
    }
    return out;
}

}  // namespace ad

}  // namespace tafe
