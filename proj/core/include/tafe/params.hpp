#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "tafe/autodiff.hpp"
#include "tafe/tensor.hpp"

namespace tafe {

// Named parameter tensors in registration order. The order is part of the
// checkpoint contract and of deterministic initialization.
class ParamStore {
public:
    void add(const std::string& name, Tensor value);
    [[nodiscard]] bool contains(const std::string& name) const;
    [[nodiscard]] const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    [[nodiscard]] const std::vector<ad::NamedTensor>& entries() const { return entries_; }
    std::vector<ad::NamedTensor>& entries() { return entries_; }
    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] std::size_t scalar_count() const;

private:
    std::vector<ad::NamedTensor> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Deterministic initializer: weights ~ N(0, std), biases 0. With
// fan_in_convs set, feature_conv draws from N(0, 2 / fan_in) instead.
class ParamInit {
public:
    ParamInit(std::uint64_t seed, double std_dev, bool fan_in_convs = false)
        : rng_(seed), std_(std_dev), fan_in_convs_(fan_in_convs) {}

    Tensor normal(Shape shape);
    std::mt19937_64& rng() { return rng_; }

    // Adds "<prefix>.weight" (c_out, c_in, kh, kw) and, when requested,
    // "<prefix>.bias" (1, c_out, 1, 1).
    void conv(ParamStore& store, const std::string& prefix, std::size_t c_out, std::size_t c_in,
              std::size_t kh, std::size_t kw, bool bias);
    // Same naming as conv; used for the convolutional feature path (backbone,
    // enhancement, head).
    void feature_conv(ParamStore& store, const std::string& prefix, std::size_t c_out,
                      std::size_t c_in, std::size_t kh, std::size_t kw, bool bias);
    // "<prefix>.gamma" = 1 and "<prefix>.beta" = 0, both (1, c, 1, 1).
    void norm(ParamStore& store, const std::string& prefix, std::size_t c);

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> dist_{0.0, 1.0};
    double std_;
    bool fan_in_convs_;
};

// Exposes ParamStore entries to a Graph, registering each one on first use.
// With trainable=false the tensors enter the graph as constants.
class Binding {
public:
    Binding(ad::Graph& graph, const ParamStore& store, bool trainable = true)
        : graph_(graph), store_(store), trainable_(trainable) {}

    ad::Var operator()(const std::string& name);
    // Pre-registers an existing node under `name` (used by gradient checks that
    // own their parameter nodes).
    void bind(const std::string& name, ad::Var v) { bound_.insert_or_assign(name, v); }
    [[nodiscard]] bool has(const std::string& name) const { return store_.contains(name); }
    ad::Graph& graph() { return graph_; }
    // Registered parameter nodes keyed by name.
    [[nodiscard]] const std::map<std::string, ad::Var>& bound() const { return bound_; }

private:
    ad::Graph& graph_;
    const ParamStore& store_;
    bool trainable_;
    std::map<std::string, ad::Var> bound_;
};

// Convenience for conv layers named by ParamInit::conv.
ad::Var conv_layer(Binding& b, const std::string& prefix, ad::Var x, Padding padding,
                   std::size_t stride = 1);

// Dense kernel view of a named conv layer (bias included when present).
ConvKernel conv_kernel(const ParamStore& store, const std::string& prefix);

}  // namespace tafe
