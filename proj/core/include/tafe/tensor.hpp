#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tafe {

// (batch, channel, rows, cols); cols vary fastest in memory.
struct Shape {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    [[nodiscard]] std::size_t numel() const { return n * c * h * w; }
    [[nodiscard]] std::size_t plane() const { return h * w; }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense rank-4 array of doubles. A plain value type: copies are deep and
// every kernel below returns a fresh tensor.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(shape); }
    static Tensor full(Shape shape, double value) { return Tensor(shape, value); }
    static Tensor from(Shape shape, std::initializer_list<double> values);

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    [[nodiscard]] std::size_t index(std::size_t n, std::size_t c, std::size_t h,
                                    std::size_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[index(n, c, h, w)];
    }
    [[nodiscard]] double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[index(n, c, h, w)];
    }

    // Same data, different dimensions; element count must match.
    [[nodiscard]] Tensor reshaped(Shape shape) const;

    void fill(double value);
    [[nodiscard]] bool all_finite() const;

private:
    Shape shape_{};
    std::vector<double> data_;
};

enum class Padding { Same, Valid };

// weights: (c_out, c_in, kh, kw). bias is either empty (absent) or c_out long.
struct ConvKernel {
    Tensor weights;
    std::vector<double> bias;

    [[nodiscard]] std::size_t c_out() const { return weights.shape().n; }
    [[nodiscard]] std::size_t c_in() const { return weights.shape().c; }
    [[nodiscard]] std::size_t kh() const { return weights.shape().h; }
    [[nodiscard]] std::size_t kw() const { return weights.shape().w; }
    [[nodiscard]] bool is_strip() const { return kh() == 1 || kw() == 1; }
    [[nodiscard]] bool has_bias() const { return !bias.empty(); }
};

struct ConvGeometry {
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
    std::size_t stride = 1;
    std::size_t out_h = 0;
    std::size_t out_w = 0;
};

// Validates the combination and computes output extent.
ConvGeometry conv_geometry(const Shape& input, const Shape& weights, Padding padding,
                           std::size_t stride = 1);

// Cross-correlation (no kernel flip). Same padding zero-pads (k-1)/2 on each
// side. Each output element is reduced in a fixed (c_in, ky, kx) order, so
// the result does not depend on the worker count.
Tensor conv2d(const Tensor& input, const ConvKernel& kernel, Padding padding,
              std::size_t stride = 1);

// Adjoints of conv2d with respect to its input, weights and bias.
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weights, const Shape& input_shape,
                         Padding padding, std::size_t stride = 1);
Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const Shape& weight_shape,
                           Padding padding, std::size_t stride = 1);
std::vector<double> conv2d_grad_bias(const Tensor& grad_out);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
double gelu_derivative(double x);

// In-place accumulate: dst += src.
void accumulate(Tensor& dst, const Tensor& src);

// Softmax over each row, where a row is the trailing (w) axis.
Tensor softmax_rows(const Tensor& x);

// Normalizes each (n, h, w) position across its c channels, then applies
// the per-channel affine gamma/beta.
Tensor layernorm(const Tensor& x, std::span<const double> gamma, std::span<const double> beta,
                 double eps);

// Align-corners bilinear upscaling. Requesting a smaller size is an error.
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor upsample_bilinear_grad(const Tensor& grad_out, const Shape& input_shape);

double sum(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace tafe
