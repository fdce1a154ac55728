#include "tafe/params.hpp"

#include <cmath>

#include "tafe/errors.hpp"

namespace tafe {

void ParamStore::add(const std::string& name, Tensor value) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, std::move(value)});
}

bool ParamStore::contains(const std::string& name) const { return index_.contains(name); }

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return entries_[it->second].value;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return entries_[it->second].value;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.value.size();
    return total;
}

Tensor ParamInit::normal(Shape shape) {
    Tensor t(shape);
    for (double& v : t.data()) v = std_ * dist_(rng_);
    return t;
}

void ParamInit::conv(ParamStore& store, const std::string& prefix, std::size_t c_out,
                     std::size_t c_in, std::size_t kh, std::size_t kw, bool bias) {
    store.add(prefix + ".weight", normal(Shape{c_out, c_in, kh, kw}));
    if (bias) store.add(prefix + ".bias", Tensor(Shape{1, c_out, 1, 1}));
}

void ParamInit::feature_conv(ParamStore& store, const std::string& prefix, std::size_t c_out,
                             std::size_t c_in, std::size_t kh, std::size_t kw, bool bias) {
    if (!fan_in_convs_) {
        conv(store, prefix, c_out, c_in, kh, kw, bias);
        return;
    }
    const double sd = std::sqrt(2.0 / static_cast<double>(c_in * kh * kw));
    Tensor w(Shape{c_out, c_in, kh, kw});
    for (double& v : w.data()) v = sd * dist_(rng_);
    store.add(prefix + ".weight", std::move(w));
    if (bias) store.add(prefix + ".bias", Tensor(Shape{1, c_out, 1, 1}));
}

void ParamInit::norm(ParamStore& store, const std::string& prefix, std::size_t c) {
    store.add(prefix + ".gamma", Tensor(Shape{1, c, 1, 1}, 1.0));
    store.add(prefix + ".beta", Tensor(Shape{1, c, 1, 1}));
}

ad::Var Binding::operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    const Tensor& value = store_.at(name);
    const ad::Var v = trainable_ ? graph_.parameter(name, value) : graph_.constant(value);
    bound_.emplace(name, v);
    return v;
}

ad::Var conv_layer(Binding& b, const std::string& prefix, ad::Var x, Padding padding,
                   std::size_t stride) {
    std::optional<ad::Var> bias;
    if (b.has(prefix + ".bias")) bias = b(prefix + ".bias");
    return ad::conv2d(b.graph(), x, b(prefix + ".weight"), bias, padding, stride);
}

ConvKernel conv_kernel(const ParamStore& store, const std::string& prefix) {
    ConvKernel k{store.at(prefix + ".weight"), {}};
    if (store.contains(prefix + ".bias")) k.bias = store.at(prefix + ".bias").values();
    return k;
}

}  // namespace tafe
