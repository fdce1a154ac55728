#include "tafe/metrics.hpp"

#include <cmath>

#include "tafe/errors.hpp"

namespace tafe {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
    if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t k) const {
    std::uint64_t t = 0;
    for (std::size_t p = 0; p < k_; ++p) t += at(k, p);
    return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t k) const {
    std::uint64_t t = 0;
    for (std::size_t g = 0; g < k_; ++g) t += at(g, k);
    return t;
}

namespace {

std::size_t class_id(double v, std::size_t k) {
    if (!(v >= 0.0) || v >= static_cast<double>(k) || v != std::floor(v)) {
        throw DataError("class id " + std::to_string(v) + " outside [0, " + std::to_string(k) + ")");
    }
    return static_cast<std::size_t>(v);
}

}  // namespace

void ConfusionMatrix::accumulate(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) {
        throw ShapeError("prediction " + pred.shape().str() + " and ground truth " +
                         gt.shape().str() + " differ in shape");
    }
    // Validate first so a bad id leaves the matrix untouched.
    std::vector<std::size_t> ids(2 * pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ids[2 * i] = class_id(gt[i], k_);
        ids[2 * i + 1] = class_id(pred[i], k_);
    }
    for (std::size_t i = 0; i < pred.size(); ++i) ++counts_[ids[2 * i] * k_ + ids[2 * i + 1]];
}

void ConfusionMatrix::add(std::size_t gt, std::size_t pred, std::uint64_t count) {
    if (gt >= k_ || pred >= k_) throw DataError("class id outside confusion matrix");
    counts_[gt * k_ + pred] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw ShapeError("cannot merge confusion matrices of different size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

namespace {

template <typename F>
ClassScores score(const ConfusionMatrix& cm, F per_class) {
    ClassScores out;
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < cm.classes(); ++k) {
        const auto tp = static_cast<double>(cm.at(k, k));
        const auto row = static_cast<double>(cm.row_sum(k));
        const auto col = static_cast<double>(cm.col_sum(k));
        if (row + col == 0.0) {
            out.per_class.emplace_back(std::nullopt);
            continue;
        }
        const double v = per_class(tp, row, col);
        out.per_class.emplace_back(v);
        total += v;
        ++present;
    }
    if (present == 0) throw DataError("every class is absent; mean score is undefined");
    out.mean = total / static_cast<double>(present);
    return out;
}

}  // namespace

ClassScores miou(const ConfusionMatrix& cm) {
    return score(cm, [](double tp, double row, double col) { return tp / (row + col - tp); });
}

ClassScores mdice(const ConfusionMatrix& cm) {
    return score(cm, [](double tp, double row, double col) { return 2.0 * tp / (row + col); });
}

Tensor argmax_channels(const Tensor& logits) {
    const Shape& s = logits.shape();
    Tensor out(Shape{s.n, 1, s.h, s.w});
    const std::size_t plane = s.plane();
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t p = 0; p < plane; ++p) {
            std::size_t best = 0;
            double best_v = logits[(b * s.c) * plane + p];
            for (std::size_t c = 1; c < s.c; ++c) {
                const double v = logits[(b * s.c + c) * plane + p];
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            out[b * plane + p] = static_cast<double>(best);
        }
    }
    return out;
}

}  // namespace tafe
