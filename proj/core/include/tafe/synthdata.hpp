#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tafe/tensor.hpp"

namespace tafe {

enum SceneClass : std::uint8_t { kBackground = 0, kPolygon = 1, kBar = 2, kThread = 3 };
inline constexpr std::size_t kSceneClasses = 4;

struct ClassTexture {
    std::array<double, 3> color{};
    double noise = 0.0;
};

// Scene recipe. A convex polygon ("anatomy"), a rotated bar ("instrument")
// and a thin smooth thread are drawn in that z-order over a textured
// background. Polygon and bar share nearly the same intensity statistics so
// shape, not colour, separates them.
struct SceneSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    std::uint64_t seed = 0;
    std::array<ClassTexture, kSceneClasses> textures{{
        {{0.26, 0.18, 0.17}, 0.070},
        {{0.62, 0.40, 0.36}, 0.084},
        {{0.56, 0.44, 0.42}, 0.084},
        {{0.80, 0.74, 0.42}, 0.056},
    }};
    std::size_t polygon_min_vertices = 5;
    std::size_t polygon_max_vertices = 9;
    double bar_min_width = 3.0;
    double bar_max_width = 6.0;
    double thread_min_width = 1.0;
    double thread_max_width = 2.0;
    // Amplitude of the multiplicative low-frequency shading shared by all classes.
    double shading = 0.15;
};

struct Sample {
    Tensor image;  // (1, 3, H, W) in [0, 1]
    Tensor mask;   // (1, 1, H, W) class ids
};

// Deterministic in spec (including its seed). Throws DataError if no valid
// geometry is found within 10 attempts.
Sample gen_scene(const SceneSpec& spec);

// Fraction of mask pixels equal to `cls`.
double class_fraction(const Tensor& mask, std::size_t cls);

// Mean over class-a pixels minus mean over class-b pixels (absolute value)
// of the 5x5 box-filtered channel-mean intensity. NaN if a class is absent.
double local_intensity_gap(const Sample& s, std::size_t cls_a, std::size_t cls_b);

struct DatasetEntry {
    std::string image;
    std::string mask;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    std::vector<DatasetEntry> samples;
    SceneSpec spec;
};

// Writes sample_XXXX.ppm (P6) / sample_XXXX.pgm (P5) for seeds base..base+n-1
// and manifest.json.
DatasetManifest gen_dataset(std::size_t n, std::uint64_t base_seed,
                            const std::filesystem::path& out_dir, SceneSpec spec = {});

DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

std::vector<std::uint8_t> encode_ppm(const Tensor& image);
std::vector<std::uint8_t> encode_pgm(const Tensor& mask);
Tensor decode_ppm(const std::vector<std::uint8_t>& bytes);
Tensor decode_pgm(const std::vector<std::uint8_t>& bytes);

std::string spec_to_json(const SceneSpec& spec);

}  // namespace tafe
