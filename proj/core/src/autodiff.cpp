#include "tafe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <memory>
#include <random>

#include "tafe/errors.hpp"

namespace tafe::ad {

namespace {

Tensor scalar_tensor(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }

std::vector<double> as_vector(const Tensor& t) { return t.values(); }

Shape channel_param_shape(std::size_t c) { return Shape{1, c, 1, 1}; }

}  // namespace

const Graph::Node& Graph::node(Var v) const {
    if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this graph");
    return nodes_[v.id];
}

Graph::Node& Graph::node(Var v) {
    if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this graph");
    return nodes_[v.id];
}

Var Graph::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false, false, {}});
    return Var{nodes_.size() - 1};
}

Var Graph::parameter(std::string name, Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, true, true, std::move(name)});
    return Var{nodes_.size() - 1};
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || node(in).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs, false, {}});
    return Var{nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
}

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

std::vector<std::pair<std::string, Var>> Graph::parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].is_parameter) out.emplace_back(nodes_[i].name, Var{i});
    }
    return out;
}

void Graph::accumulate(Var v, const Tensor& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
        throw ShapeError("gradient shape " + g.shape().str() + " does not match value " +
                         n.value.shape().str());
    }
    if (n.grad.empty()) {
        n.grad = g;
    } else {
        tafe::accumulate(n.grad, g);
    }
}

void Graph::backward(Var loss) {
    if (node(loss).value.size() != 1) {
        throw UsageError("backward() needs a scalar loss, got shape " +
                         node(loss).value.shape().str());
    }
    for (Node& n : nodes_) {
        if (!n.is_parameter) n.grad = Tensor();
    }
    accumulate(loss, scalar_tensor(1.0));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.is_parameter || !n.backward || n.grad.empty()) continue;
        // The closure may touch other nodes' slots but never this one.
        const Tensor grad_out = std::move(n.grad);
        n.grad = Tensor();
        n.backward(*this, grad_out);
    }
}

// ---------------------------------------------------------------------------

Var conv2d(Graph& g, Var x, Var weights, std::optional<Var> bias, Padding padding,
           std::size_t stride) {
    ConvKernel kernel{g.value(weights), {}};
    std::vector<Var> inputs{x, weights};
    if (bias) {
        kernel.bias = as_vector(g.value(*bias));
        inputs.push_back(*bias);
    }
    Tensor out = tafe::conv2d(g.value(x), kernel, padding, stride);
    return g.record(std::move(out), inputs, [=](Graph& gr, const Tensor& dy) {
        const Tensor& xv = gr.value(x);
        const Tensor& wv = gr.value(weights);
        if (gr.requires_grad(x)) {
            gr.accumulate(x, conv2d_grad_input(dy, wv, xv.shape(), padding, stride));
        }
        if (gr.requires_grad(weights)) {
            gr.accumulate(weights, conv2d_grad_weights(dy, xv, wv.shape(), padding, stride));
        }
        if (bias && gr.requires_grad(*bias)) {
            auto db = conv2d_grad_bias(dy);
            gr.accumulate(*bias, Tensor(gr.value(*bias).shape(), std::move(db)));
        }
    });
}

Var add(Graph& g, Var a, Var b) {
    return g.record(tafe::add(g.value(a), g.value(b)), {a, b}, [=](Graph& gr, const Tensor& dy) {
        gr.accumulate(a, dy);
        gr.accumulate(b, dy);
    });
}

Var add_batch_broadcast(Graph& g, Var a, Var b) {
    const Shape sa = g.value(a).shape();
    const Shape sb = g.value(b).shape();
    if (sb.n != 1 || sb.c != sa.c || sb.h != sa.h || sb.w != sa.w) {
        throw ShapeError("add_batch_broadcast: " + sb.str() + " cannot broadcast to " + sa.str());
    }
    Tensor out = g.value(a);
    const std::size_t per = sb.numel();
    const auto bv = g.value(b).data();
    for (std::size_t n = 0; n < sa.n; ++n) {
        for (std::size_t i = 0; i < per; ++i) out[n * per + i] += bv[i];
    }
    return g.record(std::move(out), {a, b}, [=](Graph& gr, const Tensor& dy) {
        gr.accumulate(a, dy);
        if (!gr.requires_grad(b)) return;
        Tensor db(sb);
        for (std::size_t n = 0; n < sa.n; ++n) {
            for (std::size_t i = 0; i < per; ++i) db[i] += dy[n * per + i];
        }
        gr.accumulate(b, db);
    });
}

Var mul(Graph& g, Var a, Var b) {
    return g.record(tafe::mul(g.value(a), g.value(b)), {a, b}, [=](Graph& gr, const Tensor& dy) {
        if (gr.requires_grad(a)) gr.accumulate(a, tafe::mul(dy, gr.value(b)));
        if (gr.requires_grad(b)) gr.accumulate(b, tafe::mul(dy, gr.value(a)));
    });
}

Var scale(Graph& g, Var x, double s) {
    return g.record(tafe::scale(g.value(x), s), {x},
                    [=](Graph& gr, const Tensor& dy) { gr.accumulate(x, tafe::scale(dy, s)); });
}

Var relu(Graph& g, Var x) {
    return g.record(tafe::relu(g.value(x)), {x}, [=](Graph& gr, const Tensor& dy) {
        const Tensor& xv = gr.value(x);
        Tensor dx(xv.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xv[i] > 0.0 ? dy[i] : 0.0;
        gr.accumulate(x, dx);
    });
}

Var gelu(Graph& g, Var x) {
    return g.record(tafe::gelu(g.value(x)), {x}, [=](Graph& gr, const Tensor& dy) {
        const Tensor& xv = gr.value(x);
        Tensor dx(xv.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * gelu_derivative(xv[i]);
        gr.accumulate(x, dx);
    });
}

Var layernorm(Graph& g, Var x, Var gamma, Var beta, double eps) {
    const Shape s = g.value(x).shape();
    if (g.value(gamma).shape() != channel_param_shape(s.c) ||
        g.value(beta).shape() != channel_param_shape(s.c)) {
        throw ShapeError("layernorm: gamma/beta must have shape " + channel_param_shape(s.c).str());
    }
    Tensor out = tafe::layernorm(g.value(x), g.value(gamma).data(), g.value(beta).data(), eps);
    return g.record(std::move(out), {x, gamma, beta}, [=](Graph& gr, const Tensor& dy) {
        const Tensor& xv = gr.value(x);
        const auto gm = gr.value(gamma).data();
        const std::size_t plane = s.plane();
        const double inv_c = 1.0 / static_cast<double>(s.c);
        Tensor dx(s);
        Tensor dgamma(channel_param_shape(s.c));
        Tensor dbeta(channel_param_shape(s.c));
        std::vector<double> xhat(s.c);
        std::vector<double> dxhat(s.c);
        for (std::size_t b = 0; b < s.n; ++b) {
            const std::size_t base = b * s.c * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                double mean = 0.0;
                for (std::size_t c = 0; c < s.c; ++c) mean += xv[base + c * plane + p];
                mean *= inv_c;
                double var = 0.0;
                for (std::size_t c = 0; c < s.c; ++c) {
                    const double d = xv[base + c * plane + p] - mean;
                    var += d * d;
                }
                var *= inv_c;
                const double rstd = 1.0 / std::sqrt(var + eps);
                double mean_dxhat = 0.0;
                double mean_dxhat_xhat = 0.0;
                for (std::size_t c = 0; c < s.c; ++c) {
                    const std::size_t i = base + c * plane + p;
                    xhat[c] = (xv[i] - mean) * rstd;
                    dxhat[c] = dy[i] * gm[c];
                    dgamma[c] += dy[i] * xhat[c];
                    dbeta[c] += dy[i];
                    mean_dxhat += dxhat[c];
                    mean_dxhat_xhat += dxhat[c] * xhat[c];
                }
                mean_dxhat *= inv_c;
                mean_dxhat_xhat *= inv_c;
                for (std::size_t c = 0; c < s.c; ++c) {
                    dx[base + c * plane + p] =
                        rstd * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                }
            }
        }
        gr.accumulate(x, dx);
        gr.accumulate(gamma, dgamma);
        gr.accumulate(beta, dbeta);
    });
}

Var upsample_bilinear(Graph& g, Var x, std::size_t out_h, std::size_t out_w) {
    return g.record(tafe::upsample_bilinear(g.value(x), out_h, out_w), {x},
                    [=](Graph& gr, const Tensor& dy) {
                        gr.accumulate(x, upsample_bilinear_grad(dy, gr.value(x).shape()));
                    });
}

Var sum(Graph& g, Var x) {
    return g.record(scalar_tensor(tafe::sum(g.value(x))), {x}, [=](Graph& gr, const Tensor& dy) {
        gr.accumulate(x, Tensor(gr.value(x).shape(), dy[0]));
    });
}

Var softmax_cross_entropy(Graph& g, Var logits, const Tensor& labels) {
    const Shape s = g.value(logits).shape();
    const Shape ls = labels.shape();
    if (ls.n != s.n || ls.c != 1 || ls.h != s.h || ls.w != s.w) {
        throw ShapeError("cross-entropy: labels " + ls.str() + " do not match logits " + s.str());
    }
    const std::size_t plane = s.plane();
    std::vector<std::size_t> cls(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double v = labels[i];
        if (!(v >= 0.0) || v >= static_cast<double>(s.c) || v != std::floor(v)) {
            throw DataError("class id " + std::to_string(v) + " outside [0, " +
                            std::to_string(s.c) + ")");
        }
        cls[i] = static_cast<std::size_t>(v);
    }
    // Probabilities are kept for the backward pass.
    auto probs = std::make_shared<Tensor>(s);
    const Tensor& z = g.value(logits);
    double total = 0.0;
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t p = 0; p < plane; ++p) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < s.c; ++c) mx = std::max(mx, z.at(b, c, 0, p));
            double denom = 0.0;
            for (std::size_t c = 0; c < s.c; ++c) {
                const double e = std::exp(z.at(b, c, 0, p) - mx);
                probs->at(b, c, 0, p) = e;
                denom += e;
            }
            for (std::size_t c = 0; c < s.c; ++c) probs->at(b, c, 0, p) /= denom;
            const std::size_t k = cls[b * plane + p];
            total += -(z.at(b, k, 0, p) - mx - std::log(denom));
        }
    }
    const double inv_count = 1.0 / static_cast<double>(s.n * plane);
    return g.record(scalar_tensor(total * inv_count), {logits},
                    [=](Graph& gr, const Tensor& dy) {
                        Tensor dz = *probs;
                        for (std::size_t b = 0; b < s.n; ++b) {
                            for (std::size_t p = 0; p < plane; ++p) {
                                dz.at(b, cls[b * plane + p], 0, p) -= 1.0;
                            }
                        }
                        gr.accumulate(logits, tafe::scale(dz, dy[0] * inv_count));
                    });
}

Var faulty_square(Graph& g, Var x) {
    return g.record(tafe::mul(g.value(x), g.value(x)), {x},
                    [=](Graph& gr, const Tensor& dy) { gr.accumulate(x, tafe::mul(dy, gr.value(x))); });
}

// ---------------------------------------------------------------------------

std::vector<Tensor> finite_diff_grad(const ScalarFn& f, std::vector<NamedTensor> params, double h) {
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (auto& p : params) {
        Tensor gt(p.value.shape());
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value[i];
            p.value[i] = orig + h;
            const double up = f(params);
            p.value[i] = orig - h;
            const double down = f(params);
            p.value[i] = orig;
            gt[i] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(gt));
    }
    return grads;
}

double relative_error(double ad_value, double fd_value) {
    const double denom = std::max({1.0, std::abs(ad_value), std::abs(fd_value)});
    return std::abs(ad_value - fd_value) / denom;
}

GradReport grad_check(const LossBuilder& build, const std::vector<NamedTensor>& params,
                      const GradCheckOptions& opts) {
    // Coordinates to probe, per parameter.
    std::mt19937_64 rng(opts.seed);
    std::vector<std::vector<std::size_t>> coords(params.size());
    std::size_t total = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        std::vector<std::size_t> all(params[k].value.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        if (opts.probes_per_param != 0 && all.size() > opts.probes_per_param) {
            std::shuffle(all.begin(), all.end(), rng);
            all.resize(opts.probes_per_param);
            std::sort(all.begin(), all.end());
        }
        total += all.size();
        coords[k] = std::move(all);
    }
    if (total > opts.max_scalars) {
        throw ConfigError("grad_check: " + std::to_string(total) +
                          " probes exceed the finite-difference budget of " +
                          std::to_string(opts.max_scalars));
    }

    auto evaluate = [&build](const std::vector<NamedTensor>& ps) {
        Graph g;
        std::vector<Var> vars;
        vars.reserve(ps.size());
        for (const auto& p : ps) vars.push_back(g.parameter(p.name, p.value));
        const Var loss = build(g, vars);
        return g.value(loss)[0];
    };

    Graph g;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(g.parameter(p.name, p.value));
    g.backward(build(g, vars));

    GradReport report;
    report.h = opts.h;
    report.pass = true;
    std::vector<NamedTensor> work = params;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor analytic = g.grad(vars[k]);
        ParamError pe{params[k].name, 0.0, coords[k].size(), true};
        for (std::size_t i : coords[k]) {
            const double orig = work[k].value[i];
            work[k].value[i] = orig + opts.h;
            const double up = evaluate(work);
            work[k].value[i] = orig - opts.h;
            const double down = evaluate(work);
            work[k].value[i] = orig;
            const double numeric = (up - down) / (2.0 * opts.h);
            pe.max_rel_err = std::max(pe.max_rel_err, relative_error(analytic[i], numeric));
        }
        pe.pass = pe.max_rel_err < opts.tol;
        report.pass = report.pass && pe.pass;
        report.max_rel_err = std::max(report.max_rel_err, pe.max_rel_err);
        report.params.push_back(std::move(pe));
    }
    return report;
}

}  // namespace tafe::ad
