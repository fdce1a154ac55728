#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tafe/tensor.hpp"

namespace tafe::ad {

class Graph;

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    [[nodiscard]] bool valid() const { return id != npos; }
};

// Receives the gradient flowing into a node and pushes contributions to the
// node's inputs through Graph::accumulate.
using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

// Append-only tape. Nodes only reference earlier nodes, so reverse creation
// order is a valid topological order for the backward sweep.
class Graph {
public:
    Var constant(Tensor value);
    Var parameter(std::string name, Tensor value);

    // Adds an op node. `fn` may be empty for ops with no differentiable inputs.
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

    [[nodiscard]] const Tensor& value(Var v) const;
    // Gradient of the last backward() target; a zero tensor if none reached v.
    [[nodiscard]] Tensor grad(Var v) const;
    [[nodiscard]] bool requires_grad(Var v) const;
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    // Parameters in registration order.
    [[nodiscard]] std::vector<std::pair<std::string, Var>> parameters() const;

    // Propagates d(loss)/d(node) to every node. Parameter gradients
    // accumulate across calls; intermediate gradients are reset each call.
    void backward(Var loss);

    // Adds `g` to the gradient slot of `v` (no-op for constants).
    void accumulate(Var v, const Tensor& g);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_parameter = false;
        std::string name;
    };
    const Node& node(Var v) const;
    Node& node(Var v);

    std::vector<Node> nodes_;
};

// Differentiable ops. Parameters for biases and norms are stored as
// (1, c, 1, 1) tensors.
Var conv2d(Graph& g, Var x, Var weights, std::optional<Var> bias, Padding padding,
           std::size_t stride = 1);
Var add(Graph& g, Var a, Var b);
// a (n,c,h,w) plus b (1,c,h,w) repeated over the batch.
Var add_batch_broadcast(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var x, double s);
Var relu(Graph& g, Var x);
Var gelu(Graph& g, Var x);
Var layernorm(Graph& g, Var x, Var gamma, Var beta, double eps);
Var upsample_bilinear(Graph& g, Var x, std::size_t out_h, std::size_t out_w);
Var sum(Graph& g, Var x);
// Mean per-pixel softmax cross-entropy; labels (n,1,h,w) hold class ids.
Var softmax_cross_entropy(Graph& g, Var logits, const Tensor& labels);

// Test fixture: computes x*x elementwise but back-propagates x instead of
// 2x. Exists only as a negative control for gradient checking.
Var faulty_square(Graph& g, Var x);

// -------------------------------------------------------------------------
// Finite-difference oracle.

struct NamedTensor {
    std::string name;
    Tensor value;
};

using ScalarFn = std::function<double(const std::vector<NamedTensor>&)>;

// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every coordinate.
std::vector<Tensor> finite_diff_grad(const ScalarFn& f, std::vector<NamedTensor> params,
                                     double h = 1e-6);

// Builds a scalar loss from parameter nodes registered in the same order as
// the NamedTensor list given to grad_check.
using LossBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheckOptions {
    double tol = 1e-5;
    double h = 1e-6;
    // Upper bound on finite-difference probes per check.
    std::size_t max_scalars = 5000;
    // 0 probes every coordinate; otherwise at most this many per parameter,
    // picked with `seed`.
    std::size_t probes_per_param = 0;
    std::uint64_t seed = 0;
};

struct ParamError {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t probed = 0;
    bool pass = false;
};

struct GradReport {
    std::vector<ParamError> params;
    double h = 0.0;
    double max_rel_err = 0.0;
    bool pass = false;
};

// |a - b| / max(1, |a|, |b|)
double relative_error(double ad_value, double fd_value);

// Compares reverse-mode gradients of `build` against central differences.
// Throws ConfigError when the probe count exceeds opts.max_scalars.
GradReport grad_check(const LossBuilder& build, const std::vector<NamedTensor>& params,
                      const GradCheckOptions& opts = {});

}  // namespace tafe::ad
