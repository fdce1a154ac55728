#include "gradcheck_suite.hpp"

#include <functional>
#include <random>

#include <json.hpp>

#include "tafe/afe.hpp"
#include "tafe/autodiff.hpp"
#include "tafe/encoder.hpp"
#include "tafe/errors.hpp"
#include "tafe/model.hpp"
#include "tafe/params.hpp"
#include "tafe/pyramid.hpp"

namespace tafe::tools {

namespace {

using ad::Graph;
using ad::NamedTensor;
using ad::Var;

constexpr std::size_t kProbeBudget = 5000;

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(s);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

// Values with |v| in [0.2, 1] so piecewise-linear ops stay away from kinks.
Tensor off_kink_tensor(Shape s, std::uint64_t seed) {
    Tensor t = random_tensor(s, seed, 0.2, 1.0);
    std::mt19937_64 rng(seed + 1);
    for (double& v : t.data()) {
        if (rng() & 1U) v = -v;
    }
    return t;
}

// Scalar probe: sum(out * R) with a fixed random R.
Var project(Graph& g, Var out) {
    const Tensor r = random_tensor(g.value(out).shape(), 977);
    return ad::sum(g, ad::mul(g, out, g.constant(r)));
}

class Suite {
public:
    explicit Suite(SuiteReport& report) : report_(report) {}

    void check(const std::string& name, const std::vector<NamedTensor>& params,
               const ad::LossBuilder& build, std::size_t probes_per_param = 0) {
        ad::GradCheckOptions opts;
        opts.tol = kGradTolerance;
        opts.h = kGradStep;
        opts.max_scalars = kProbeBudget;
        opts.probes_per_param = probes_per_param;
        const ad::GradReport r = ad::grad_check(build, params, opts);
        CheckResult c{name, r.max_rel_err, 0, r.pass};
        for (const auto& p : r.params) c.probes += p.probed;
        report_.pass = report_.pass && c.pass;
        report_.checks.push_back(std::move(c));
    }

    // Block check: every entry of `store` plus the named inputs are probed.
    void check_block(const std::string& name, const ParamStore& store,
                     const std::vector<NamedTensor>& inputs,
                     const std::function<Var(Binding&, const std::vector<Var>&)>& fn,
                     std::size_t probes_per_param = 0) {
        std::vector<NamedTensor> params = store.entries();
        params.insert(params.end(), inputs.begin(), inputs.end());
        const std::size_t n_store = store.size();
        check(name, params,
              [&store, &fn, n_store](Graph& g, const std::vector<Var>& vars) {
                  Binding b(g, store, true);
                  for (std::size_t i = 0; i < n_store; ++i) b.bind(store.entries()[i].name, vars[i]);
                  const std::vector<Var> in(vars.begin() + static_cast<long>(n_store), vars.end());
                  return project(g, fn(b, in));
              },
              probes_per_param);
    }

private:
    SuiteReport& report_;
};

void op_checks(Suite& s) {
    const auto conv_case = [&s](const std::string& name, Shape xs, Shape ws, bool bias,
                                Padding pad, std::size_t stride, std::uint64_t seed) {
        std::vector<NamedTensor> p{{"x", random_tensor(xs, seed)}, {"w", random_tensor(ws, seed + 1)}};
        if (bias) p.push_back({"b", random_tensor(Shape{1, ws.n, 1, 1}, seed + 2)});
        s.check(name, p, [bias, pad, stride](Graph& g, const std::vector<Var>& v) {
            std::optional<Var> b;
            if (bias) b = v[2];
            return project(g, ad::conv2d(g, v[0], v[1], b, pad, stride));
        });
    };
    conv_case("conv2d.same_bias", {2, 3, 6, 5}, {4, 3, 3, 3}, true, Padding::Same, 1, 11);
    conv_case("conv2d.valid", {1, 2, 7, 6}, {3, 2, 3, 2}, false, Padding::Valid, 1, 21);
    conv_case("conv2d.stride2", {1, 2, 8, 8}, {3, 2, 3, 3}, true, Padding::Same, 2, 31);
    conv_case("conv2d.row_strip", {1, 2, 6, 9}, {2, 2, 1, 5}, false, Padding::Same, 1, 41);
    conv_case("conv2d.col_strip", {1, 2, 9, 6}, {2, 2, 7, 1}, false, Padding::Same, 1, 51);

    const Shape es{2, 3, 4, 5};
    s.check("add", {{"a", random_tensor(es, 61)}, {"b", random_tensor(es, 62)}},
            [](Graph& g, const std::vector<Var>& v) { return project(g, ad::add(g, v[0], v[1])); });
    s.check("add_batch_broadcast",
            {{"a", random_tensor(es, 63)}, {"b", random_tensor(Shape{1, 3, 4, 5}, 64)}},
            [](Graph& g, const std::vector<Var>& v) {
                return project(g, ad::add_batch_broadcast(g, v[0], v[1]));
            });
    s.check("mul", {{"a", random_tensor(es, 65)}, {"b", random_tensor(es, 66)}},
            [](Graph& g, const std::vector<Var>& v) { return project(g, ad::mul(g, v[0], v[1])); });
    s.check("scale", {{"x", random_tensor(es, 67)}},
            [](Graph& g, const std::vector<Var>& v) { return project(g, ad::scale(g, v[0], -1.7)); });
    s.check("relu", {{"x", off_kink_tensor(es, 68)}},
            [](Graph& g, const std::vector<Var>& v) { return project(g, ad::relu(g, v[0])); });
    s.check("gelu", {{"x", random_tensor(es, 69, -3.0, 3.0)}},
            [](Graph& g, const std::vector<Var>& v) { return project(g, ad::gelu(g, v[0])); });
    s.check("layernorm",
            {{"x", random_tensor(Shape{2, 6, 5, 1}, 70)},
             {"gamma", random_tensor(Shape{1, 6, 1, 1}, 71, 0.5, 1.5)},
             {"beta", random_tensor(Shape{1, 6, 1, 1}, 72)}},
            [](Graph& g, const std::vector<Var>& v) {
                return project(g, ad::layernorm(g, v[0], v[1], v[2], kLayerNormEps));
            });
    s.check("upsample_bilinear", {{"x", random_tensor(Shape{1, 2, 3, 4}, 73)}},
            [](Graph& g, const std::vector<Var>& v) {
                return project(g, ad::upsample_bilinear(g, v[0], 7, 9));
            });
    s.check("sum", {{"x", random_tensor(es, 74)}},
            [](Graph& g, const std::vector<Var>& v) { return ad::sum(g, v[0]); });

    Tensor labels(Shape{2, 1, 3, 3});
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>((i * 7) % 4);
    s.check("softmax_cross_entropy", {{"logits", random_tensor(Shape{2, 4, 3, 3}, 75, -2.0, 2.0)}},
            [labels](Graph& g, const std::vector<Var>& v) {
                return ad::softmax_cross_entropy(g, v[0], labels);
            });

    const Shape ts{2, 8, 7, 1};
    s.check("multi_head_attention",
            {{"q", random_tensor(ts, 76)}, {"k", random_tensor(ts, 77)}, {"v", random_tensor(ts, 78)}},
            [](Graph& g, const std::vector<Var>& v) {
                return project(g, ad::multi_head_attention(g, v[0], v[1], v[2], 2));
            });

    const std::vector<std::pair<std::size_t, std::size_t>> sizes{{4, 6}, {2, 3}, {1, 2}, {1, 1}};
    std::vector<NamedTensor> layers;
    for (std::size_t l = 0; l < sizes.size(); ++l) {
        layers.push_back({"layer" + std::to_string(l + 1),
                          random_tensor(Shape{1, 3, sizes[l].first, sizes[l].second}, 80 + l)});
    }
    s.check("flatten_pyramid", layers, [](Graph& g, const std::vector<Var>& v) {
        return project(g, ad::flatten_pyramid(g, v));
    });
    const PyramidGeometry geometry(sizes);
    s.check("unflatten_tokens",
            {{"tokens", random_tensor(Shape{1, 3, geometry.total_tokens(), 1}, 90)}},
            [geometry](Graph& g, const std::vector<Var>& v) {
                Var acc = g.constant(Tensor(Shape{1, 1, 1, 1}));
                for (Var layer : ad::unflatten_tokens(g, v[0], geometry)) acc = ad::add(g, acc, project(g, layer));
                return acc;
            });
}

void block_checks(Suite& s) {
    constexpr std::size_t d = 4;
    constexpr double std_dev = 0.3;
    const std::string lp = "afe.l1";
    const NamedTensor c_l{"input", random_tensor(Shape{1, d, 6, 7}, 101)};

    for (bool shared : {true, false}) {
        ParamStore store;
        ParamInit init(7, std_dev);
        init_afe_layer(store, init, lp, d, shared);
        const std::string tag = shared ? "shared" : "separate";
        s.check_block("afe.layer." + tag, store, {c_l},
                      [lp, shared](Binding& b, const std::vector<Var>& in) {
                          return ad::afe_layer(b, lp, in[0], shared);
                      });
    }

    ParamStore store;
    ParamInit init(8, std_dev);
    init_afe_layer(store, init, lp, d, true);
    s.check_block("afe.aggregate", store, {c_l}, [lp](Binding& b, const std::vector<Var>& in) {
        return ad::afe_aggregate(b, aggregate_prefix(lp, BlockTopology::Anatomy, true), in[0]);
    });
    const NamedTensor c_agg{"aggregated", random_tensor(Shape{1, d, 7, 6}, 102)};
    for (std::size_t m = 0; m < kStripSizes.size(); ++m) {
        const std::string km = "k" + std::to_string(kStripSizes[m]);
        s.check_block("afe.anatomy_branch." + km, store, {c_agg},
                      [lp, m](Binding& b, const std::vector<Var>& in) {
                          return ad::anatomy_branch(b, lp, m, in[0]);
                      });
        s.check_block("afe.instrument_branch." + km, store, {c_agg},
                      [lp, m](Binding& b, const std::vector<Var>& in) {
                          return ad::instrument_branch(b, lp, m, in[0]);
                      });
    }
    for (BlockTopology t : {BlockTopology::Anatomy, BlockTopology::Instrument}) {
        s.check_block(std::string("afe.enhance.") + topology_name(t), store, {c_agg},
                      [lp, t](Binding& b, const std::vector<Var>& in) {
                          return ad::enhance_from_aggregate(b, lp, t, in[0]);
                      });
    }

    {
        ParamStore ps;
        ParamInit pi(9, std_dev);
        for (std::size_t l = 0; l < kPyramidLevels; ++l) init_afe_layer(ps, pi, afe_layer_prefix("stage0", l), 2, true);
        std::vector<NamedTensor> levels;
        const std::size_t dims[4][2] = {{4, 4}, {2, 2}, {1, 2}, {1, 1}};
        for (std::size_t l = 0; l < kPyramidLevels; ++l) {
            levels.push_back({"level" + std::to_string(l + 1),
                              random_tensor(Shape{1, 2, dims[l][0], dims[l][1]}, 110 + l)});
        }
        s.check_block("afe.forward", ps, levels, [](Binding& b, const std::vector<Var>& in) {
            const auto out = ad::afe_forward(b, "stage0", in, true);
            return ad::flatten_pyramid(b.graph(), out);
        });
    }

    {
        ParamStore es;
        ParamInit ei(10, std_dev);
        init_encoder_block(es, ei, "enc", EncoderShape{8, 2, 4});
        const NamedTensor tokens{"tokens", random_tensor(Shape{2, 8, 6, 1}, 120)};
        s.check_block("encoder.mhsa", es, {tokens}, [](Binding& b, const std::vector<Var>& in) {
            return ad::mhsa(b, "enc", in[0], 2);
        });
        s.check_block("encoder.block", es, {tokens}, [](Binding& b, const std::vector<Var>& in) {
            return ad::encoder_block(b, "enc", in[0], 2);
        });
    }

    {
        ParamStore bs;
        ParamInit bi(11, std_dev);
        init_backbone(bs, bi, 3, 4);
        const NamedTensor image{"image", random_tensor(Shape{1, 3, 32, 32}, 130, 0.0, 1.0)};
        s.check_block("pyramid.backbone", bs, {image},
                      [](Binding& b, const std::vector<Var>& in) {
                          return ad::flatten_pyramid(b.graph(), backbone_forward(b, in[0]));
                      },
                      40);
    }

    TafeConfig cfg;
    cfg.d = 4;
    cfg.heads = 2;
    cfg.stages = 1;
    cfg.height = 32;
    cfg.width = 32;
    cfg.init_std = std_dev;
    const TafeModel model = TafeModel::init(cfg);
    const PyramidGeometry geometry = PyramidGeometry::for_input(32, 32);
    std::vector<NamedTensor> pyramid;
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        const auto& lg = geometry.layer(l);
        pyramid.push_back({"level" + std::to_string(l + 1), random_tensor(Shape{1, 4, lg.h, lg.w}, 140 + l)});
    }
    {
        ParamStore stage;
        for (const auto& e : model.params.entries()) {
            if (e.name.rfind("stage0.", 0) == 0) stage.add(e.name, e.value);
        }
        std::vector<NamedTensor> inputs = pyramid;
        inputs.push_back({"tokens", random_tensor(Shape{1, 4, geometry.total_tokens(), 1}, 150)});
        s.check_block("mia.stage_interact", stage, inputs,
                      [cfg](Binding& b, const std::vector<Var>& in) {
                          const std::vector<Var> levels(in.begin(), in.begin() + kPyramidLevels);
                          const StageVars out = ad::stage_interact(b, cfg, 0, in.back(), levels);
                          Graph& g = b.graph();
                          return ad::add(g, out.tokens, ad::flatten_pyramid(g, out.pyramid));
                      },
                      12);
    }
    for (bool skip : {true, false}) {
        ParamStore head;
        ParamInit hi(12, std_dev, true);
        hi.feature_conv(head, "head.fuse", 4, 4, 3, 3, true);
        hi.feature_conv(head, "head.classifier", 3, 4, 1, 1, true);
        if (skip) hi.feature_conv(head, "head.skip", 4, 3, 3, 3, true);
        std::vector<NamedTensor> inputs = pyramid;
        inputs.push_back({"image", random_tensor(Shape{1, 3, 32, 32}, 160, 0.0, 1.0)});
        s.check_block(skip ? "mia.head.skip" : "mia.head.plain", head, inputs,
                      [](Binding& b, const std::vector<Var>& in) {
                          const std::vector<Var> levels(in.begin(), in.begin() + kPyramidLevels);
                          return ad::segmentation_head(b, levels, in.back());
                      },
                      40);
    }
}

void model_check(Suite& s) {
    TafeConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.stages = 1;
    cfg.height = 32;
    cfg.width = 32;
    cfg.init_std = 0.3;
    const TafeModel model = TafeModel::init(cfg);
    SceneSpec spec;
    spec.height = 32;
    spec.width = 32;
    spec.seed = 5;
    const Sample sample = gen_scene(spec);
    const std::size_t per_param = (kProbeBudget - 200) / model.params.size();
    s.check_block("mia.forward.full_model_32x32_d8_m1", model.params, {},
                  [cfg, mask = sample.mask, image = sample.image](Binding& b, const std::vector<Var>&) {
                      Graph& g = b.graph();
                      const Var logits = ad::forward(b, cfg, g.constant(image));
                      return ad::scale(g, ad::softmax_cross_entropy(g, logits, mask), 100.0);
                  },
                  per_param);
}

void fault_check(Suite& s) {
    s.check("negative_control.faulty_square", {{"x", random_tensor(Shape{1, 1, 2, 3}, 999, 1.0, 2.0)}},
            [](Graph& g, const std::vector<Var>& v) { return ad::sum(g, ad::faulty_square(g, v[0])); });
}

}  // namespace

SuiteReport run_gradcheck(GradScope scope, bool inject_fault) {
    SuiteReport report;
    Suite suite(report);
    switch (scope) {
        case GradScope::Ops: op_checks(suite); break;
        case GradScope::Blocks: block_checks(suite); break;
        case GradScope::Model: model_check(suite); break;
    }
    if (inject_fault) fault_check(suite);
    return report;
}

GradScope parse_scope(const std::string& s) {
    if (s == "ops") return GradScope::Ops;
    if (s == "blocks") return GradScope::Blocks;
    if (s == "model") return GradScope::Model;
    throw UsageError("unknown gradcheck scope '" + s + "' (expected ops, blocks or model)");
}

const char* scope_name(GradScope s) {
    switch (s) {
        case GradScope::Ops: return "ops";
        case GradScope::Blocks: return "blocks";
        case GradScope::Model: return "model";
    }
    return "?";
}

std::string report_json(const SuiteReport& report, GradScope scope) {
    nlohmann::ordered_json j;
    j["scope"] = scope_name(scope);
    j["tolerance"] = kGradTolerance;
    j["h"] = kGradStep;
    j["checks"] = nlohmann::ordered_json::array();
    for (const auto& c : report.checks) {
        j["checks"].push_back(
            {{"name", c.name}, {"max_rel_err", c.max_rel_err}, {"probes", c.probes}, {"pass", c.pass}});
    }
    j["pass"] = report.pass;
    return j.dump(2) + "\n";
}

}  // namespace tafe::tools
