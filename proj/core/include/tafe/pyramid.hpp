#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tafe/autodiff.hpp"
#include "tafe/params.hpp"
#include "tafe/tensor.hpp"

namespace tafe {

inline constexpr std::size_t kPyramidLevels = 4;

// One pyramid level: its extent and where its tokens start in the flat
// sequence. `offset` is the number of tokens belonging to earlier levels.
struct LayerGeometry {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t offset = 0;

    [[nodiscard]] std::size_t area() const { return h * w; }
    friend bool operator==(const LayerGeometry&, const LayerGeometry&) = default;
};

class PyramidGeometry {
public:
    PyramidGeometry() = default;
    // Offsets are derived as running sums of the preceding areas.
    explicit PyramidGeometry(const std::vector<std::pair<std::size_t, std::size_t>>& sizes);

    // Geometry of the 1/4 .. 1/32 pyramid of an H x W input.
    static PyramidGeometry for_input(std::size_t height, std::size_t width);

    [[nodiscard]] std::size_t levels() const { return layers_.size(); }
    [[nodiscard]] const LayerGeometry& layer(std::size_t l) const { return layers_.at(l); }
    [[nodiscard]] const std::vector<LayerGeometry>& layers() const { return layers_; }
    [[nodiscard]] std::size_t total_tokens() const;

    // Flat position of element (i, j) of level l, all 1-based: the row index
    // i varies fastest within a column, i.e. offset_l + i + (j - 1) * h_l.
    // For square levels this is F(i + (j - 1) R_l + sum_{k<l} R_k^2).
    [[nodiscard]] std::size_t token_index(std::size_t l, std::size_t i, std::size_t j) const;

    [[nodiscard]] std::string to_json() const;
    static PyramidGeometry from_json(const std::string& text);

    friend bool operator==(const PyramidGeometry&, const PyramidGeometry&) = default;

private:
    std::vector<LayerGeometry> layers_;
};

// Per-level feature maps sharing batch and channel width.
struct FeaturePyramid {
    std::vector<Tensor> layers;

    [[nodiscard]] PyramidGeometry geometry() const;
    [[nodiscard]] std::size_t width() const { return layers.at(0).shape().c; }
};

// Flat multi-scale embedding: tokens has shape (n, d, T, 1).
struct TokenSequence {
    Tensor tokens;
    PyramidGeometry geometry;
};

// Throws ShapeError unless the layers share n and d and match `geometry`.
void validate_pyramid(const FeaturePyramid& p);

TokenSequence flatten_pyramid(const FeaturePyramid& p);
FeaturePyramid unflatten_tokens(const TokenSequence& f);

namespace ad {
// Differentiable counterparts; the adjoint of each is the inverse index map.
Var flatten_pyramid(Graph& g, const std::vector<Var>& layers);
std::vector<Var> unflatten_tokens(Graph& g, Var tokens, const PyramidGeometry& geometry);
}  // namespace ad

// ---------------------------------------------------------------------------
// Backbone: stride-2 3x3 conv stack with ReLU, two convs down to 1/4 and one
// per further level, plus a 1x1 projection per level.

void init_backbone(ParamStore& store, ParamInit& init, std::size_t in_channels, std::size_t d);

std::vector<ad::Var> backbone_forward(Binding& b, ad::Var image);

// image (n, 3, H, W) with H, W divisible by 32.
FeaturePyramid extract_pyramid(const Tensor& image, const ParamStore& params);

void check_input_extent(std::size_t height, std::size_t width);

}  // namespace tafe
