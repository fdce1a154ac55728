#include "tafe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "tafe/errors.hpp"
#include "tafe/parallel.hpp"

namespace tafe {

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
}

namespace {

void check_dims(const Shape& s) {
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
        throw ShapeError("tensor dimensions must be >= 1, got " + s.str());
    }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
    }
}

template <typename F>
Tensor map(const Tensor& x, F f) {
    Tensor out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
    require_same(a, b, op);
    Tensor out(a.shape());
    auto x = a.data();
    auto y = b.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
    return out;
}

// Range of output columns [lo, hi) whose input column ox*stride + kx - pad
// lands inside [0, in_w).
struct ColRange {
    std::size_t lo;
    std::size_t hi;
};

ColRange valid_cols(std::size_t kx, std::size_t pad, std::size_t stride, std::size_t in_w,
                    std::size_t out_w) {
    const auto off = static_cast<long>(kx) - static_cast<long>(pad);
    const auto s = static_cast<long>(stride);
    long lo = 0;
    if (off < 0) lo = (-off + s - 1) / s;
    long hi = (static_cast<long>(in_w) - 1 - off);
    hi = hi < 0 ? 0 : hi / s + 1;
    hi = std::min<long>(hi, static_cast<long>(out_w));
    if (lo > hi) lo = hi;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

bool is_pointwise(const Shape& w, const ConvGeometry& g) {
    return w.h == 1 && w.w == 1 && g.stride == 1 && g.pad_h == 0 && g.pad_w == 0;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
    check_dims(shape);
    data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
    check_dims(shape);
    if (data_.size() != shape.numel()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape.str());
    }
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
    return Tensor(shape, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.numel() != shape_.numel()) {
        throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

ConvGeometry conv_geometry(const Shape& input, const Shape& weights, Padding padding,
                           std::size_t stride) {
    if (input.c != weights.c) {
        throw ShapeError("conv2d: input has " + std::to_string(input.c) +
                         " channels, kernel expects " + std::to_string(weights.c));
    }
    if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
    ConvGeometry g;
    g.stride = stride;
    if (padding == Padding::Same) {
        if (weights.h % 2 == 0 || weights.w % 2 == 0) {
            throw ConfigError("conv2d: same padding requires odd kernel sizes, got " +
                              std::to_string(weights.h) + "x" + std::to_string(weights.w));
        }
        g.pad_h = (weights.h - 1) / 2;
        g.pad_w = (weights.w - 1) / 2;
    } else if (input.h < weights.h || input.w < weights.w) {
        throw ShapeError("conv2d: valid padding needs input at least as large as the kernel");
    }
    g.out_h = (input.h + 2 * g.pad_h - weights.h) / stride + 1;
    g.out_w = (input.w + 2 * g.pad_w - weights.w) / stride + 1;
    return g;
}

Tensor conv2d(const Tensor& input, const ConvKernel& kernel, Padding padding, std::size_t stride) {
    const Shape& is = input.shape();
    const Shape& ws = kernel.weights.shape();
    const ConvGeometry g = conv_geometry(is, ws, padding, stride);
    if (kernel.has_bias() && kernel.bias.size() != ws.n) {
        throw ShapeError("conv2d: bias length does not match output channels");
    }
    Tensor out(Shape{is.n, ws.n, g.out_h, g.out_w});
    const double* in = input.data().data();
    const double* wt = kernel.weights.data().data();
    double* dst = out.data().data();
    const std::size_t in_plane = is.plane();
    const std::size_t out_plane = g.out_h * g.out_w;
    const bool pointwise = is_pointwise(ws, g);

    parallel_for(is.n * ws.n, [&](std::size_t item) {
        const std::size_t b = item / ws.n;
        const std::size_t co = item % ws.n;
        double* o = dst + item * out_plane;
        std::fill(o, o + out_plane, kernel.has_bias() ? kernel.bias[co] : 0.0);
        for (std::size_t ci = 0; ci < is.c; ++ci) {
            const double* x = in + (b * is.c + ci) * in_plane;
            const double* wk = wt + (co * ws.c + ci) * ws.h * ws.w;
            if (pointwise) {
                const double wv = wk[0];
                for (std::size_t p = 0; p < out_plane; ++p) o[p] += wv * x[p];
                continue;
            }
            for (std::size_t ky = 0; ky < ws.h; ++ky) {
                for (std::size_t kx = 0; kx < ws.w; ++kx) {
                    const double wv = wk[ky * ws.w + kx];
                    const ColRange cols = valid_cols(kx, g.pad_w, g.stride, is.w, g.out_w);
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) -
                                        static_cast<long>(g.pad_h);
                        if (iy < 0 || iy >= static_cast<long>(is.h)) continue;
                        const long base = iy * static_cast<long>(is.w) + static_cast<long>(kx) -
                                         static_cast<long>(g.pad_w);
                        double* orow = o + oy * g.out_w;
                        for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
                            orow[ox] += wv * x[base + static_cast<long>(ox * g.stride)];
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weights, const Shape& input_shape,
                         Padding padding, std::size_t stride) {
    const Shape& ws = weights.shape();
    const ConvGeometry g = conv_geometry(input_shape, ws, padding, stride);
    const Shape& gs = grad_out.shape();
    if (gs != Shape{input_shape.n, ws.n, g.out_h, g.out_w}) {
        throw ShapeError("conv2d_grad_input: gradient shape " + gs.str() + " is inconsistent");
    }
    Tensor dx(input_shape);
    const double* dy = grad_out.data().data();
    const double* wt = weights.data().data();
    double* dst = dx.data().data();
    const std::size_t in_plane = input_shape.plane();
    const std::size_t out_plane = g.out_h * g.out_w;
    const bool pointwise = is_pointwise(ws, g);

    parallel_for(input_shape.n * input_shape.c, [&](std::size_t item) {
        const std::size_t b = item / input_shape.c;
        const std::size_t ci = item % input_shape.c;
        double* d = dst + item * in_plane;
        for (std::size_t co = 0; co < ws.n; ++co) {
            const double* gy = dy + (b * ws.n + co) * out_plane;
            const double* wk = wt + (co * ws.c + ci) * ws.h * ws.w;
            if (pointwise) {
                const double wv = wk[0];
                for (std::size_t p = 0; p < in_plane; ++p) d[p] += wv * gy[p];
                continue;
            }
            for (std::size_t ky = 0; ky < ws.h; ++ky) {
                for (std::size_t kx = 0; kx < ws.w; ++kx) {
                    const double wv = wk[ky * ws.w + kx];
                    const ColRange cols = valid_cols(kx, g.pad_w, g.stride, input_shape.w, g.out_w);
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) -
                                        static_cast<long>(g.pad_h);
                        if (iy < 0 || iy >= static_cast<long>(input_shape.h)) continue;
                        const long base = iy * static_cast<long>(input_shape.w) +
                                         static_cast<long>(kx) - static_cast<long>(g.pad_w);
                        const double* grow = gy + oy * g.out_w;
                        for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
                            d[base + static_cast<long>(ox * g.stride)] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });
    return dx;
}

Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const Shape& weight_shape,
                           Padding padding, std::size_t stride) {
    const Shape& is = input.shape();
    const ConvGeometry g = conv_geometry(is, weight_shape, padding, stride);
    const Shape& gs = grad_out.shape();
    if (gs != Shape{is.n, weight_shape.n, g.out_h, g.out_w}) {
        throw ShapeError("conv2d_grad_weights: gradient shape " + gs.str() + " is inconsistent");
    }
    Tensor dw(weight_shape);
    const double* dy = grad_out.data().data();
    const double* in = input.data().data();
    double* dst = dw.data().data();
    const std::size_t in_plane = is.plane();
    const std::size_t out_plane = g.out_h * g.out_w;
    const std::size_t taps = weight_shape.h * weight_shape.w;
    const bool pointwise = is_pointwise(weight_shape, g);

    parallel_for(weight_shape.n, [&](std::size_t co) {
        for (std::size_t ci = 0; ci < is.c; ++ci) {
            double* d = dst + (co * weight_shape.c + ci) * taps;
            for (std::size_t ky = 0; ky < weight_shape.h; ++ky) {
                for (std::size_t kx = 0; kx < weight_shape.w; ++kx) {
                    const ColRange cols = valid_cols(kx, g.pad_w, g.stride, is.w, g.out_w);
                    double acc = 0.0;
                    for (std::size_t b = 0; b < is.n; ++b) {
                        const double* x = in + (b * is.c + ci) * in_plane;
                        const double* gy = dy + (b * weight_shape.n + co) * out_plane;
                        if (pointwise) {
                            for (std::size_t p = 0; p < out_plane; ++p) acc += gy[p] * x[p];
                            continue;
                        }
                        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                            const long iy = static_cast<long>(oy * g.stride + ky) -
                                            static_cast<long>(g.pad_h);
                            if (iy < 0 || iy >= static_cast<long>(is.h)) continue;
                            const long base = iy * static_cast<long>(is.w) + static_cast<long>(kx) -
                                             static_cast<long>(g.pad_w);
                            const double* grow = gy + oy * g.out_w;
                            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
                                acc += grow[ox] * x[base + static_cast<long>(ox * g.stride)];
                            }
                        }
                    }
                    d[ky * weight_shape.w + kx] = acc;
                }
            }
        }
    });
    return dw;
}

std::vector<double> conv2d_grad_bias(const Tensor& grad_out) {
    const Shape& s = grad_out.shape();
    std::vector<double> db(s.c, 0.0);
    const std::size_t plane = s.plane();
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const double* g = grad_out.data().data() + (b * s.c + c) * plane;
            double acc = 0.0;
            for (std::size_t p = 0; p < plane; ++p) acc += g[p];
            db[c] += acc;
        }
    }
    return db;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
    return map(a, [s](double x) { return x * s; });
}

Tensor relu(const Tensor& x) {
    return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor gelu(const Tensor& x) {
    return map(x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
}

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    return cdf + x * pdf;
}

void accumulate(Tensor& dst, const Tensor& src) {
    require_same(dst, src, "accumulate");
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Tensor softmax_rows(const Tensor& x) {
    Tensor out(x.shape());
    const std::size_t cols = x.shape().w;
    const std::size_t rows = x.size() / cols;
    const double* src = x.data().data();
    double* dst = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = src + r * cols;
        double* o = dst + r * cols;
        const double mx = *std::max_element(in, in + cols);
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        const double inv = 1.0 / total;
        for (std::size_t j = 0; j < cols; ++j) o[j] *= inv;
    }
    return out;
}

Tensor layernorm(const Tensor& x, std::span<const double> gamma, std::span<const double> beta,
                 double eps) {
    const Shape& s = x.shape();
    if (gamma.size() != s.c || beta.size() != s.c) {
        throw ShapeError("layernorm: gamma/beta length must equal channel count " +
                         std::to_string(s.c));
    }
    Tensor out(s);
    const std::size_t plane = s.plane();
    const double inv_c = 1.0 / static_cast<double>(s.c);
    for (std::size_t b = 0; b < s.n; ++b) {
        const double* in = x.data().data() + b * s.c * plane;
        double* o = out.data().data() + b * s.c * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            double mean = 0.0;
            for (std::size_t c = 0; c < s.c; ++c) mean += in[c * plane + p];
            mean *= inv_c;
            double var = 0.0;
            for (std::size_t c = 0; c < s.c; ++c) {
                const double d = in[c * plane + p] - mean;
                var += d * d;
            }
            var *= inv_c;
            const double rstd = 1.0 / std::sqrt(var + eps);
            for (std::size_t c = 0; c < s.c; ++c) {
                o[c * plane + p] = (in[c * plane + p] - mean) * rstd * gamma[c] + beta[c];
            }
        }
    }
    return out;
}

namespace {

struct Lerp {
    std::size_t i0;
    std::size_t i1;
    double frac;
};

std::vector<Lerp> lerp_table(std::size_t src, std::size_t dst) {
    std::vector<Lerp> table(dst);
    for (std::size_t d = 0; d < dst; ++d) {
        if (src == 1 || dst == 1) {
            table[d] = {0, 0, 0.0};
            continue;
        }
        const double pos = static_cast<double>(d * (src - 1)) / static_cast<double>(dst - 1);
        auto i0 = static_cast<std::size_t>(std::floor(pos));
        i0 = std::min(i0, src - 1);
        const std::size_t i1 = std::min(i0 + 1, src - 1);
        table[d] = {i0, i1, pos - static_cast<double>(i0)};
    }
    return table;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    const Shape& s = x.shape();
    if (out_h < s.h || out_w < s.w) {
        throw ConfigError("upsample_bilinear: cannot downscale " + s.str() + " to " +
                          std::to_string(out_h) + "x" + std::to_string(out_w));
    }
    if (out_h == s.h && out_w == s.w) return x;
    const auto ys = lerp_table(s.h, out_h);
    const auto xs = lerp_table(s.w, out_w);
    Tensor out(Shape{s.n, s.c, out_h, out_w});
    for (std::size_t plane = 0; plane < s.n * s.c; ++plane) {
        const double* in = x.data().data() + plane * s.plane();
        double* o = out.data().data() + plane * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const Lerp& ly = ys[oy];
            const double* r0 = in + ly.i0 * s.w;
            const double* r1 = in + ly.i1 * s.w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const Lerp& lx = xs[ox];
                const double top = r0[lx.i0] * (1.0 - lx.frac) + r0[lx.i1] * lx.frac;
                const double bot = r1[lx.i0] * (1.0 - lx.frac) + r1[lx.i1] * lx.frac;
                o[oy * out_w + ox] = top * (1.0 - ly.frac) + bot * ly.frac;
            }
        }
    }
    return out;
}

Tensor upsample_bilinear_grad(const Tensor& grad_out, const Shape& input_shape) {
    const Shape& gs = grad_out.shape();
    if (gs.n != input_shape.n || gs.c != input_shape.c) {
        throw ShapeError("upsample_bilinear_grad: batch/channel mismatch");
    }
    if (gs.h == input_shape.h && gs.w == input_shape.w) return grad_out;
    const auto ys = lerp_table(input_shape.h, gs.h);
    const auto xs = lerp_table(input_shape.w, gs.w);
    Tensor dx(input_shape);
    for (std::size_t plane = 0; plane < gs.n * gs.c; ++plane) {
        const double* g = grad_out.data().data() + plane * gs.plane();
        double* d = dx.data().data() + plane * input_shape.plane();
        for (std::size_t oy = 0; oy < gs.h; ++oy) {
            const Lerp& ly = ys[oy];
            double* r0 = d + ly.i0 * input_shape.w;
            double* r1 = d + ly.i1 * input_shape.w;
            for (std::size_t ox = 0; ox < gs.w; ++ox) {
                const Lerp& lx = xs[ox];
                const double v = g[oy * gs.w + ox];
                const double top = v * (1.0 - ly.frac);
                const double bot = v * ly.frac;
                r0[lx.i0] += top * (1.0 - lx.frac);
                r0[lx.i1] += top * lx.frac;
                r1[lx.i0] += bot * (1.0 - lx.frac);
                r1[lx.i1] += bot * lx.frac;
            }
        }
    }
    return dx;
}

double sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return acc;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace tafe
