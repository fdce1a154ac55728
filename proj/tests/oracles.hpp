#pragma once

// Independent reference implementations used only by the tests. None of
// these call into the library kernels they are checked against.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "tafe/tensor.hpp"

namespace tafe::oracle {

// Direct sliding-window cross-correlation with explicit zero padding.
inline Tensor naive_conv(const Tensor& x, const ConvKernel& k, bool same, std::size_t stride = 1) {
    const Shape& s = x.shape();
    const std::size_t kh = k.kh();
    const std::size_t kw = k.kw();
    const long ph = same ? static_cast<long>(kh / 2) : 0;
    const long pw = same ? static_cast<long>(kw / 2) : 0;
    const long span_h = static_cast<long>(s.h) + 2 * ph - static_cast<long>(kh);
    const long span_w = static_cast<long>(s.w) + 2 * pw - static_cast<long>(kw);
    const std::size_t oh = static_cast<std::size_t>(span_h / static_cast<long>(stride) + 1);
    const std::size_t ow = static_cast<std::size_t>(span_w / static_cast<long>(stride) + 1);
    Tensor out(Shape{s.n, k.c_out(), oh, ow});
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t o = 0; o < k.c_out(); ++o) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    double acc = k.has_bias() ? k.bias[o] : 0.0;
                    for (std::size_t i = 0; i < s.c; ++i) {
                        for (std::size_t a = 0; a < kh; ++a) {
                            for (std::size_t b = 0; b < kw; ++b) {
                                const long sy = static_cast<long>(y * stride + a) - ph;
                                const long sx = static_cast<long>(xx * stride + b) - pw;
                                if (sy < 0 || sx < 0 || sy >= static_cast<long>(s.h) ||
                                    sx >= static_cast<long>(s.w)) {
                                    continue;
                                }
                                acc += k.weights.at(o, i, a, b) *
                                       x.at(n, i, static_cast<std::size_t>(sy),
                                            static_cast<std::size_t>(sx));
                            }
                        }
                    }
                    out.at(n, o, y, xx) = acc;
                }
            }
        }
    }
    return out;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (double& v : t.data()) v = u(rng);
    return t;
}

// Single-channel bias-free kernel.
inline ConvKernel kernel_1c(std::size_t kh, std::size_t kw, const std::vector<double>& w) {
    return ConvKernel{Tensor(Shape{1, 1, kh, kw}, w), {}};
}

// Dense k x k kernel equal to the outer product col * row^T.
inline ConvKernel outer_product(const std::vector<double>& col, const std::vector<double>& row) {
    std::vector<double> w;
    for (double c : col) {
        for (double r : row) w.push_back(c * r);
    }
    return kernel_1c(col.size(), row.size(), w);
}

// Per-channel delta kernel (c, c, k, k): 1 at the centre of the diagonal.
inline ConvKernel delta_kernel(std::size_t c, std::size_t kh, std::size_t kw) {
    ConvKernel k{Tensor(Shape{c, c, kh, kw}), {}};
    for (std::size_t i = 0; i < c; ++i) k.weights.at(i, i, kh / 2, kw / 2) = 1.0;
    return k;
}

}  // namespace tafe::oracle
