#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tafe/tensor.hpp"

namespace tafe {

// K x K pixel counts; rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes);

    [[nodiscard]] std::size_t classes() const { return k_; }
    [[nodiscard]] std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }
    [[nodiscard]] std::uint64_t total() const;
    [[nodiscard]] std::uint64_t row_sum(std::size_t k) const;
    [[nodiscard]] std::uint64_t col_sum(std::size_t k) const;

    // Ids must lie in [0, K); both masks must have the same shape.
    void accumulate(const Tensor& pred, const Tensor& gt);
    void add(std::size_t gt, std::size_t pred, std::uint64_t count = 1);
    void merge(const ConfusionMatrix& other);

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

// Per-class scores; classes whose union is empty are std::nullopt and do
// not enter the mean.
struct ClassScores {
    std::vector<std::optional<double>> per_class;
    double mean = 0.0;
};

ClassScores miou(const ConfusionMatrix& cm);
ClassScores mdice(const ConfusionMatrix& cm);

// Per-pixel argmax over the channel axis: (n, K, h, w) -> (n, 1, h, w).
Tensor argmax_channels(const Tensor& logits);

}  // namespace tafe
