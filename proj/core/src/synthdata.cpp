#include "tafe/synthdata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "tafe/errors.hpp"
#include "tafe/tensor_io.hpp"

namespace tafe {

namespace {

constexpr int kMaxAttempts = 10;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Point {
    double x;
    double y;
};

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
    std::size_t integer(std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(eng_);
    }
    double normal() { return normal_(eng_); }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Counter-clockwise convex polygon with vertices on a rotated ellipse.
std::vector<Point> make_polygon(Rng& rng, const SceneSpec& spec) {
    const double size = static_cast<double>(std::min(spec.height, spec.width));
    const std::size_t count = rng.integer(spec.polygon_min_vertices, spec.polygon_max_vertices);
    const double rx = rng.uniform(0.18, 0.32) * size;
    const double ry = rng.uniform(0.18, 0.32) * size;
    const double rot = rng.uniform(0.0, kTwoPi);
    const double reach = std::max(rx, ry);
    const double cx = rng.uniform(reach + 1.0, static_cast<double>(spec.width) - reach - 1.0);
    const double cy = rng.uniform(reach + 1.0, static_cast<double>(spec.height) - reach - 1.0);
    std::vector<double> angles(count);
    for (double& a : angles) a = rng.uniform(0.0, kTwoPi);
    std::sort(angles.begin(), angles.end());
    std::vector<Point> pts;
    for (double a : angles) {
        const double ex = rx * std::cos(a);
        const double ey = ry * std::sin(a);
        pts.push_back({cx + ex * std::cos(rot) - ey * std::sin(rot),
                       cy + ex * std::sin(rot) + ey * std::cos(rot)});
    }
    return pts;
}

bool inside_convex(const std::vector<Point>& poly, Point p) {
    for (std::size_t i = 0; i < poly.size(); ++i) {
        if (cross(poly[i], poly[(i + 1) % poly.size()], p) < 0.0) return false;
    }
    return true;
}

struct Bar {
    Point center;
    double along_x;
    double along_y;
    double half_len;
    double half_width;
};

Bar make_bar(Rng& rng, const SceneSpec& spec) {
    const double size = static_cast<double>(std::min(spec.height, spec.width));
    Bar bar{};
    bar.half_width = 0.5 * rng.uniform(spec.bar_min_width, spec.bar_max_width);
    bar.half_len = 0.5 * rng.uniform(0.45, 0.75) * size;
    const double angle = rng.uniform(0.0, std::numbers::pi);
    bar.along_x = std::cos(angle);
    bar.along_y = std::sin(angle);
    // Half extents of the rotated rectangle's bounding box.
    const double ex = std::abs(bar.along_x) * bar.half_len + std::abs(bar.along_y) * bar.half_width;
    const double ey = std::abs(bar.along_y) * bar.half_len + std::abs(bar.along_x) * bar.half_width;
    bar.center = {rng.uniform(ex + 0.5, static_cast<double>(spec.width) - ex - 0.5),
                  rng.uniform(ey + 0.5, static_cast<double>(spec.height) - ey - 0.5)};
    return bar;
}

bool inside_bar(const Bar& bar, Point p) {
    const double dx = p.x - bar.center.x;
    const double dy = p.y - bar.center.y;
    const double along = dx * bar.along_x + dy * bar.along_y;
    const double across = -dx * bar.along_y + dy * bar.along_x;
    return std::abs(along) <= bar.half_len && std::abs(across) <= bar.half_width;
}

struct Thread {
    std::vector<Point> path;
    double half_width;
};

// Quadratic Bezier sampled into a polyline.
Thread make_thread(Rng& rng, const SceneSpec& spec) {
    const double w = static_cast<double>(spec.width);
    const double h = static_cast<double>(spec.height);
    const double margin = 2.0;
    auto random_point = [&] { return Point{rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)}; };
    const Point a = random_point();
    const Point ctrl = random_point();
    const Point c = random_point();
    Thread t;
    t.half_width = 0.5 * rng.uniform(spec.thread_min_width, spec.thread_max_width);
    constexpr int kSegments = 48;
    for (int i = 0; i <= kSegments; ++i) {
        const double s = static_cast<double>(i) / kSegments;
        const double u = 1.0 - s;
        t.path.push_back({u * u * a.x + 2 * u * s * ctrl.x + s * s * c.x,
                          u * u * a.y + 2 * u * s * ctrl.y + s * s * c.y});
    }
    return t;
}

double segment_distance(Point p, Point a, Point b) {
    const double vx = b.x - a.x;
    const double vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double s = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    const double dx = p.x - (a.x + s * vx);
    const double dy = p.y - (a.y + s * vy);
    return std::sqrt(dx * dx + dy * dy);
}

bool on_thread(const Thread& t, Point p) {
    for (std::size_t i = 0; i + 1 < t.path.size(); ++i) {
        if (segment_distance(p, t.path[i], t.path[i + 1]) <= t.half_width) return true;
    }
    return false;
}

bool plausible(const Tensor& mask) {
    return class_fraction(mask, kPolygon) >= 0.03 && class_fraction(mask, kBar) >= 0.02 &&
           class_fraction(mask, kThread) >= 0.002 && class_fraction(mask, kThread) <= 0.05;
}

void render_texture(const SceneSpec& spec, Rng& rng, Sample& s) {
    const std::size_t hh = spec.height;
    const std::size_t ww = spec.width;
    const double fx = rng.uniform(0.5, 1.5) * kTwoPi / static_cast<double>(ww);
    const double fy = rng.uniform(0.5, 1.5) * kTwoPi / static_cast<double>(hh);
    const double phase = rng.uniform(0.0, kTwoPi);
    for (std::size_t y = 0; y < hh; ++y) {
        for (std::size_t x = 0; x < ww; ++x) {
            const auto cls = static_cast<std::size_t>(s.mask.at(0, 0, y, x));
            const ClassTexture& tex = spec.textures[cls];
            const double shade =
                1.0 + spec.shading * std::sin(fx * static_cast<double>(x) + phase) *
                          std::cos(fy * static_cast<double>(y));
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = tex.color[c] * shade + tex.noise * rng.normal();
                s.image.at(0, c, y, x) = std::clamp(v, 0.0, 1.0);
            }
        }
    }
}

}  // namespace

Sample gen_scene(const SceneSpec& spec) {
    if (spec.height < 16 || spec.width < 16) throw ConfigError("scenes must be at least 16x16");
    if (spec.polygon_min_vertices < 3 || spec.polygon_min_vertices > spec.polygon_max_vertices) {
        throw ConfigError("invalid polygon vertex range");
    }
    Rng rng(spec.seed);
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const auto polygon = make_polygon(rng, spec);
        const Bar bar = make_bar(rng, spec);
        const Thread thread = make_thread(rng, spec);

        Sample s{Tensor(Shape{1, 3, spec.height, spec.width}),
                 Tensor(Shape{1, 1, spec.height, spec.width})};
        for (std::size_t y = 0; y < spec.height; ++y) {
            for (std::size_t x = 0; x < spec.width; ++x) {
                const Point p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
                std::uint8_t cls = kBackground;
                if (inside_convex(polygon, p)) cls = kPolygon;
                if (inside_bar(bar, p)) cls = kBar;
                if (on_thread(thread, p)) cls = kThread;
                s.mask.at(0, 0, y, x) = cls;
            }
        }
        if (!plausible(s.mask)) continue;
        render_texture(spec, rng, s);
        return s;
    }
    throw DataError("no valid scene geometry for seed " + std::to_string(spec.seed) + " after " +
                    std::to_string(kMaxAttempts) + " attempts");
}

double class_fraction(const Tensor& mask, std::size_t cls) {
    std::size_t hits = 0;
    for (double v : mask.data()) hits += static_cast<std::size_t>(v) == cls ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(mask.size());
}

double local_intensity_gap(const Sample& s, std::size_t cls_a, std::size_t cls_b) {
    const Shape& is = s.image.shape();
    const std::size_t hh = is.h;
    const std::size_t ww = is.w;
    std::vector<double> gray(hh * ww);
    for (std::size_t y = 0; y < hh; ++y) {
        for (std::size_t x = 0; x < ww; ++x) {
            double v = 0.0;
            for (std::size_t c = 0; c < 3; ++c) v += s.image.at(0, c, y, x);
            gray[y * ww + x] = v / 3.0;
        }
    }
    double sum_a = 0.0;
    double sum_b = 0.0;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    for (std::size_t y = 0; y < hh; ++y) {
        for (std::size_t x = 0; x < ww; ++x) {
            const auto cls = static_cast<std::size_t>(s.mask.at(0, 0, y, x));
            if (cls != cls_a && cls != cls_b) continue;
            double acc = 0.0;
            std::size_t cnt = 0;
            for (std::size_t yy = y >= 2 ? y - 2 : 0; yy <= std::min(hh - 1, y + 2); ++yy) {
                for (std::size_t xx = x >= 2 ? x - 2 : 0; xx <= std::min(ww - 1, x + 2); ++xx) {
                    acc += gray[yy * ww + xx];
                    ++cnt;
                }
            }
            const double local = acc / static_cast<double>(cnt);
            if (cls == cls_a) {
                sum_a += local;
                ++n_a;
            } else {
                sum_b += local;
                ++n_b;
            }
        }
    }
    if (n_a == 0 || n_b == 0) return std::numeric_limits<double>::quiet_NaN();
    return std::abs(sum_a / static_cast<double>(n_a) - sum_b / static_cast<double>(n_b));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> netpbm_header(const char* magic, std::size_t w, std::size_t h) {
    std::ostringstream os;
    os << magic << '\n' << w << ' ' << h << '\n' << 255 << '\n';
    const std::string s = os.str();
    return {s.begin(), s.end()};
}

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct NetpbmView {
    std::size_t width;
    std::size_t height;
    std::size_t data_offset;
};

NetpbmView parse_netpbm(const std::vector<std::uint8_t>& bytes, const char* magic, std::size_t channels) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos]) != 0) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto token = [&] {
        skip_space();
        std::string t;
        while (pos < bytes.size() && std::isspace(bytes[pos]) == 0) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    if (token() != magic) throw DataError(std::string("expected netpbm magic ") + magic);
    std::size_t w = 0;
    std::size_t h = 0;
    std::size_t maxval = 0;
    try {
        w = std::stoul(token());
        h = std::stoul(token());
        maxval = std::stoul(token());
    } catch (const std::exception&) {
        throw DataError("malformed netpbm header");
    }
    if (maxval != 255) throw DataError("only 8-bit netpbm files are supported");
    ++pos;  // single whitespace before the raster
    if (w == 0 || h == 0 || bytes.size() < pos + w * h * channels) {
        throw DataError("truncated netpbm raster");
    }
    return {w, h, pos};
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("PPM export expects (1,3,H,W), got " + s.str());
    auto out = netpbm_header("P6", s.w, s.h);
    for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) out.push_back(quantize(image.at(0, c, y, x)));
        }
    }
    return out;
}

std::vector<std::uint8_t> encode_pgm(const Tensor& mask) {
    const Shape& s = mask.shape();
    if (s.n != 1 || s.c != 1) throw ShapeError("PGM export expects (1,1,H,W), got " + s.str());
    auto out = netpbm_header("P5", s.w, s.h);
    for (double v : mask.data()) out.push_back(static_cast<std::uint8_t>(v));
    return out;
}

Tensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
    const NetpbmView v = parse_netpbm(bytes, "P6", 3);
    Tensor img(Shape{1, 3, v.height, v.width});
    const std::uint8_t* p = bytes.data() + v.data_offset;
    for (std::size_t y = 0; y < v.height; ++y) {
        for (std::size_t x = 0; x < v.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) img.at(0, c, y, x) = static_cast<double>(*p++) / 255.0;
        }
    }
    return img;
}

Tensor decode_pgm(const std::vector<std::uint8_t>& bytes) {
    const NetpbmView v = parse_netpbm(bytes, "P5", 1);
    Tensor mask(Shape{1, 1, v.height, v.width});
    const std::uint8_t* p = bytes.data() + v.data_offset;
    for (double& m : mask.data()) m = static_cast<double>(*p++);
    return mask;
}

namespace {

nlohmann::ordered_json spec_json(const SceneSpec& spec) {
    nlohmann::ordered_json j;
    j["height"] = spec.height;
    j["width"] = spec.width;
    j["classes"] = {"background", "polygon", "bar", "thread"};
    j["textures"] = nlohmann::ordered_json::array();
    for (const auto& t : spec.textures) {
        j["textures"].push_back({{"color", t.color}, {"noise", t.noise}});
    }
    j["polygon_vertices"] = {spec.polygon_min_vertices, spec.polygon_max_vertices};
    j["bar_width"] = {spec.bar_min_width, spec.bar_max_width};
    j["thread_width"] = {spec.thread_min_width, spec.thread_max_width};
    j["shading"] = spec.shading;
    return j;
}

SceneSpec spec_from_json(const nlohmann::json& j) {
    SceneSpec spec;
    spec.height = j.at("height").get<std::size_t>();
    spec.width = j.at("width").get<std::size_t>();
    const auto& tex = j.at("textures");
    if (tex.size() != kSceneClasses) throw DataError("manifest spec must list 4 textures");
    for (std::size_t k = 0; k < kSceneClasses; ++k) {
        spec.textures[k].color = tex[k].at("color").get<std::array<double, 3>>();
        spec.textures[k].noise = tex[k].at("noise").get<double>();
    }
    const auto verts = j.at("polygon_vertices").get<std::array<std::size_t, 2>>();
    spec.polygon_min_vertices = verts[0];
    spec.polygon_max_vertices = verts[1];
    const auto bw = j.at("bar_width").get<std::array<double, 2>>();
    spec.bar_min_width = bw[0];
    spec.bar_max_width = bw[1];
    const auto tw = j.at("thread_width").get<std::array<double, 2>>();
    spec.thread_min_width = tw[0];
    spec.thread_max_width = tw[1];
    spec.shading = j.at("shading").get<double>();
    return spec;
}

std::string sample_stem(std::size_t i) {
    std::ostringstream os;
    os << "sample_";
    os.width(4);
    os.fill('0');
    os << i;
    return os.str();
}

}  // namespace

std::string spec_to_json(const SceneSpec& spec) { return spec_json(spec).dump(); }

DatasetManifest gen_dataset(std::size_t n, std::uint64_t base_seed,
                            const std::filesystem::path& out_dir, SceneSpec spec) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

    DatasetManifest manifest;
    nlohmann::ordered_json doc;
    doc["samples"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < n; ++i) {
        spec.seed = base_seed + i;
        const Sample s = gen_scene(spec);
        DatasetEntry e{sample_stem(i) + ".ppm", sample_stem(i) + ".pgm", spec.seed};
        write_file_bytes(out_dir / e.image, encode_ppm(s.image));
        write_file_bytes(out_dir / e.mask, encode_pgm(s.mask));
        doc["samples"].push_back({{"image", e.image}, {"mask", e.mask}, {"seed", e.seed}});
        manifest.samples.push_back(std::move(e));
    }
    doc["spec"] = spec_json(spec);
    manifest.spec = spec;
    write_text_file(out_dir / "manifest.json", doc.dump(2) + "\n");
    return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
    DatasetManifest m;
    try {
        const auto doc = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
        for (const auto& s : doc.at("samples")) {
            m.samples.push_back({s.at("image").get<std::string>(), s.at("mask").get<std::string>(),
                                 s.at("seed").get<std::uint64_t>()});
        }
        m.spec = spec_from_json(doc.at("spec"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("invalid dataset manifest in " + dir.string() + ": " + e.what());
    }
    return m;
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
    const DatasetManifest m = read_manifest(dir);
    std::vector<Sample> out;
    for (const auto& e : m.samples) {
        Sample s{decode_ppm(read_file_bytes(dir / e.image)), decode_pgm(read_file_bytes(dir / e.mask))};
        if (s.image.shape().h != s.mask.shape().h || s.image.shape().w != s.mask.shape().w) {
            throw DataError("image/mask size mismatch for " + e.image);
        }
        out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError("dataset " + dir.string() + " has no samples");
    return out;
}

}  // namespace tafe
