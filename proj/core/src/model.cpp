#include "tafe/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "tafe/afe.hpp"
#include "tafe/encoder.hpp"
#include "tafe/errors.hpp"
#include "tafe/tensor_io.hpp"

namespace tafe {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

namespace {

const char* optimizer_name(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(const std::string& s) {
    if (s == "sgd") return Optimizer::Sgd;
    if (s == "adam") return Optimizer::Adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

const char* init_scheme_name(InitScheme s) { return s == InitScheme::Normal ? "normal" : "fan_in"; }

InitScheme parse_init_scheme(const std::string& s) {
    if (s == "normal") return InitScheme::Normal;
    if (s == "fan_in") return InitScheme::FanIn;
    throw ConfigError("unknown init_scheme '" + s + "' (expected normal or fan_in)");
}

const char* schedule_name(LrSchedule s) { return s == LrSchedule::Constant ? "constant" : "cosine"; }

LrSchedule parse_schedule(const std::string& s) {
    if (s == "constant") return LrSchedule::Constant;
    if (s == "cosine") return LrSchedule::Cosine;
    throw ConfigError("unknown lr_schedule '" + s + "' (expected constant or cosine)");
}

ordered_json config_json(const TafeConfig& c) {
    ordered_json j;
    j["d"] = c.d;
    j["stages"] = c.stages;
    j["heads"] = c.heads;
    j["classes"] = c.classes;
    j["height"] = c.height;
    j["width"] = c.width;
    j["encoder_blocks"] = c.encoder_blocks;
    j["learning_rate"] = c.learning_rate;
    j["iterations"] = c.iterations;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["afe_enabled"] = c.afe_enabled;
    j["share_aggregation"] = c.share_aggregation;
    j["head_skip"] = c.head_skip;
    j["init_std"] = c.init_std;
    j["init_scheme"] = init_scheme_name(c.init_scheme);
    j["checkpoint_every"] = c.checkpoint_every;
    j["optimizer"] = optimizer_name(c.optimizer);
    j["lr_schedule"] = schedule_name(c.lr_schedule);
    j["grad_clip"] = c.grad_clip;
    return j;
}

template <typename T>
T get_as(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

std::size_t get_count(const json& v, const std::string& key) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

void apply_key(TafeConfig& c, const std::string& key, const json& v) {
    if (key == "d") c.d = get_count(v, key);
    else if (key == "stages") c.stages = get_count(v, key);
    else if (key == "heads") c.heads = get_count(v, key);
    else if (key == "classes") c.classes = get_count(v, key);
    else if (key == "height") c.height = get_count(v, key);
    else if (key == "width") c.width = get_count(v, key);
    else if (key == "encoder_blocks") c.encoder_blocks = get_count(v, key);
    else if (key == "learning_rate") c.learning_rate = get_as<double>(v, key);
    else if (key == "iterations") c.iterations = get_count(v, key);
    else if (key == "batch_size") c.batch_size = get_count(v, key);
    else if (key == "seed") c.seed = get_count(v, key);
    else if (key == "afe_enabled") c.afe_enabled = get_as<bool>(v, key);
    else if (key == "share_aggregation") c.share_aggregation = get_as<bool>(v, key);
    else if (key == "head_skip") c.head_skip = get_as<bool>(v, key);
    else if (key == "init_std") c.init_std = get_as<double>(v, key);
    else if (key == "init_scheme") c.init_scheme = parse_init_scheme(get_as<std::string>(v, key));
    else if (key == "checkpoint_every") c.checkpoint_every = get_count(v, key);
    else if (key == "optimizer") c.optimizer = parse_optimizer(get_as<std::string>(v, key));
    else if (key == "grad_clip") c.grad_clip = get_as<double>(v, key);
    else if (key == "lr_schedule") c.lr_schedule = parse_schedule(get_as<std::string>(v, key));
    else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void TafeConfig::validate() const {
    check_input_extent(height, width);
    if (d == 0) throw ConfigError("d must be >= 1");
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
    }
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (encoder_blocks == 0) throw ConfigError("encoder_blocks must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (!(init_std > 0.0) || !std::isfinite(init_std)) throw ConfigError("init_std must be positive");
    if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be >= 1");
    if (!(grad_clip >= 0.0) || !std::isfinite(grad_clip)) throw ConfigError("grad_clip must be >= 0");
}

std::string TafeConfig::to_json() const { return config_json(*this).dump(); }

TafeConfig TafeConfig::from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    TafeConfig c;
    for (const auto& [key, value] : doc.items()) apply_key(c, key, value);
    return c;
}

void TafeConfig::set(const std::string& key, const std::string& value) {
    json v;
    try {
        v = json::parse(value);
    } catch (const json::exception&) {
        v = value;  // bare strings such as optimizer=sgd
    }
    apply_key(*this, key, v);
}

// ---------------------------------------------------------------------------
// Model

namespace {

constexpr std::size_t kImageChannels = 3;

std::string stage_prefix(std::size_t s) { return "stage" + std::to_string(s); }

std::string encoder_prefix(std::size_t s, std::size_t block) {
    return stage_prefix(s) + ".encoder.block" + std::to_string(block);
}

}  // namespace

TafeModel TafeModel::init(const TafeConfig& config) {
    config.validate();
    TafeModel m{config, {}};
    ParamInit init(config.seed, config.init_std, config.init_scheme == InitScheme::FanIn);
    init_backbone(m.params, init, kImageChannels, config.d);
    if (config.stages > 0) {
        const auto geometry = PyramidGeometry::for_input(config.height, config.width);
        init_positional_embedding(m.params, init, config.d, geometry.total_tokens());
    }
    const EncoderShape shape{config.d, config.heads, 4};
    for (std::size_t s = 0; s < config.stages; ++s) {
        for (std::size_t blk = 0; blk < config.encoder_blocks; ++blk) {
            init_encoder_block(m.params, init, encoder_prefix(s, blk), shape);
        }
        if (config.afe_enabled) {
            for (std::size_t l = 0; l < kPyramidLevels; ++l) {
                init_afe_layer(m.params, init, afe_layer_prefix(stage_prefix(s), l), config.d,
                               config.share_aggregation);
            }
        }
    }
    init.feature_conv(m.params, "head.fuse", config.d, config.d, 3, 3, true);
    init.feature_conv(m.params, "head.classifier", config.classes, config.d, 1, 1, true);
    if (config.head_skip) init.feature_conv(m.params, "head.skip", config.d, kImageChannels, 3, 3, true);
    return m;
}

namespace ad {

StageVars stage_interact(Binding& b, const TafeConfig& config, std::size_t stage, Var tokens,
                         const std::vector<Var>& pyramid) {
    Graph& g = b.graph();
    if (pyramid.size() != kPyramidLevels) throw ShapeError("stage expects a 4-level pyramid");
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    for (Var v : pyramid) sizes.emplace_back(g.value(v).shape().h, g.value(v).shape().w);
    const PyramidGeometry geometry(sizes);
    if (g.value(tokens).shape().h != geometry.total_tokens()) {
        throw ShapeError("token count does not match the pyramid geometry");
    }

    Var encoded = tokens;
    for (std::size_t blk = 0; blk < config.encoder_blocks; ++blk) {
        encoded = encoder_block(b, encoder_prefix(stage, blk), encoded, config.heads);
    }
    auto unflat = unflatten_tokens(g, encoded, geometry);
    if (!config.afe_enabled) return {encoded, unflat};

    const auto enhanced = afe_forward(b, stage_prefix(stage), pyramid, config.share_aggregation);
    StageVars out;
    for (std::size_t l = 0; l < kPyramidLevels; ++l) out.pyramid.push_back(add(g, unflat[l], enhanced[l]));
    out.tokens = add(g, encoded, flatten_pyramid(g, enhanced));
    return out;
}

Var segmentation_head(Binding& b, const std::vector<Var>& pyramid, Var image) {
    Graph& g = b.graph();
    const Shape base = g.value(pyramid.front()).shape();
    const Shape img = g.value(image).shape();
    Var fused = pyramid.front();
    for (std::size_t l = 1; l < pyramid.size(); ++l) {
        fused = add(g, fused, upsample_bilinear(g, pyramid[l], base.h, base.w));
    }
    const Var hidden = relu(g, conv_layer(b, "head.fuse", fused, Padding::Same));
    if (!b.has("head.skip.weight")) {
        const Var logits = conv_layer(b, "head.classifier", hidden, Padding::Same);
        return upsample_bilinear(g, logits, img.h, img.w);
    }
    const Var skip = conv_layer(b, "head.skip", image, Padding::Same);
    const Var full = relu(g, add(g, upsample_bilinear(g, hidden, img.h, img.w), skip));
    return conv_layer(b, "head.classifier", full, Padding::Same);
}

Var forward(Binding& b, const TafeConfig& config, Var image) {
    Graph& g = b.graph();
    const Shape s = g.value(image).shape();
    if (s.c != kImageChannels || s.h != config.height || s.w != config.width) {
        throw ShapeError("image " + s.str() + " does not match the configured " +
                         std::to_string(config.height) + "x" + std::to_string(config.width) +
                         " RGB input");
    }
    std::vector<Var> pyramid = backbone_forward(b, image);
    if (config.stages > 0) {
        Var tokens = add_batch_broadcast(g, flatten_pyramid(g, pyramid), b("pos_embed"));
        for (std::size_t st = 0; st < config.stages; ++st) {
            StageVars next = stage_interact(b, config, st, tokens, pyramid);
            tokens = next.tokens;
            pyramid = std::move(next.pyramid);
        }
    }
    return segmentation_head(b, pyramid, image);
}

}  // namespace ad

std::pair<TokenSequence, FeaturePyramid> stage_interact(const TokenSequence& f,
                                                        const FeaturePyramid& p,
                                                        const TafeModel& model, std::size_t stage) {
    if (!(f.geometry == p.geometry())) throw ShapeError("token geometry does not match pyramid");
    ad::Graph g;
    Binding b(g, model.params, false);
    std::vector<ad::Var> layers;
    for (const auto& t : p.layers) layers.push_back(g.constant(t));
    const StageVars out = ad::stage_interact(b, model.config, stage, g.constant(f.tokens), layers);
    FeaturePyramid next;
    for (ad::Var v : out.pyramid) next.layers.push_back(g.value(v));
    return {TokenSequence{g.value(out.tokens), f.geometry}, std::move(next)};
}

Tensor forward(const Tensor& image, const TafeModel& model) {
    ad::Graph g;
    Binding b(g, model.params, false);
    return g.value(ad::forward(b, model.config, g.constant(image)));
}

double loss_ce(const Tensor& logits, const Tensor& mask) {
    ad::Graph g;
    return g.value(ad::softmax_cross_entropy(g, g.constant(logits), mask))[0];
}

Sample make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw UsageError("empty batch");
    const Shape is = samples.at(indices[0]).image.shape();
    const Shape ms = samples.at(indices[0]).mask.shape();
    Sample batch{Tensor(Shape{indices.size(), is.c, is.h, is.w}),
                 Tensor(Shape{indices.size(), ms.c, ms.h, ms.w})};
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Sample& s = samples.at(indices[i]);
        if (s.image.shape() != is || s.mask.shape() != ms) throw ShapeError("samples differ in size");
        std::copy(s.image.data().begin(), s.image.data().end(),
                  batch.image.data().begin() + static_cast<long>(i * is.numel()));
        std::copy(s.mask.data().begin(), s.mask.data().end(),
                  batch.mask.data().begin() + static_cast<long>(i * ms.numel()));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Training

namespace {

class Updater {
public:
    Updater(const TafeConfig& config, const ParamStore& params) : config_(config) {
        if (config.optimizer == Optimizer::Adam) {
            for (const auto& e : params.entries()) {
                m_.emplace_back(e.value.shape());
                v_.emplace_back(e.value.shape());
            }
        }
    }

    void step(ParamStore& params, const std::vector<Tensor>& grads) {
        const double lr = rate(t_);
        ++t_;
        auto& entries = params.entries();
        if (config_.optimizer == Optimizer::Sgd) {
            for (std::size_t k = 0; k < entries.size(); ++k) {
                auto p = entries[k].value.data();
                for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grads[k][i];
            }
            return;
        }
        constexpr double beta1 = 0.9;
        constexpr double beta2 = 0.999;
        constexpr double eps = 1e-8;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < entries.size(); ++k) {
            auto p = entries[k].value.data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = grads[k][i];
                m_[k][i] = beta1 * m_[k][i] + (1.0 - beta1) * gi;
                v_[k][i] = beta2 * v_[k][i] + (1.0 - beta2) * gi * gi;
                p[i] -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps);
            }
        }
    }

private:
    double rate(std::size_t step) const {
        if (config_.lr_schedule == LrSchedule::Constant || config_.iterations == 0) {
            return config_.learning_rate;
        }
        const double frac = static_cast<double>(step) / static_cast<double>(config_.iterations);
        return config_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    }

    const TafeConfig& config_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::size_t t_ = 0;
};

}  // namespace

TrainResult train(const TafeConfig& config, const std::vector<Sample>& samples,
                  const TrainOptions& options) {
    if (samples.empty()) throw DataError("training set is empty");
    TrainResult result{TafeModel::init(config), {}};
    TafeModel& model = result.model;
    Updater updater(config, model.params);
    const std::size_t n = samples.size();
    const std::size_t batch = std::min(config.batch_size, n);

    if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

    for (std::size_t it = 0; it < config.iterations; ++it) {
        std::vector<std::size_t> idx(batch);
        for (std::size_t i = 0; i < batch; ++i) idx[i] = (it * batch + i) % n;
        const Sample mb = make_batch(samples, idx);

        ad::Graph g;
        Binding b(g, model.params, true);
        const ad::Var logits = ad::forward(b, config, g.constant(mb.image));
        const ad::Var loss = ad::softmax_cross_entropy(g, logits, mb.mask);
        const double loss_value = g.value(loss)[0];
        if (!std::isfinite(loss_value)) {
            throw NumericError("non-finite loss at iteration " + std::to_string(it));
        }
        g.backward(loss);

        std::vector<Tensor> grads;
        grads.reserve(model.params.size());
        for (const auto& e : model.params.entries()) {
            auto it_bound = b.bound().find(e.name);
            grads.push_back(it_bound == b.bound().end() ? Tensor(e.value.shape())
                                                        : g.grad(it_bound->second));
        }
        if (config.grad_clip > 0.0) {
            double sq = 0.0;
            for (const auto& t : grads) {
                for (double v : t.data()) sq += v * v;
            }
            const double norm = std::sqrt(sq);
            if (!std::isfinite(norm)) {
                throw NumericError("non-finite gradient at iteration " + std::to_string(it));
            }
            if (norm > config.grad_clip) {
                const double s = config.grad_clip / norm;
                for (auto& t : grads) {
                    for (double& v : t.data()) v *= s;
                }
            }
        }
        updater.step(model.params, grads);

        const TrainRecord rec{it, loss_value};
        result.log.push_back(rec);
        if (options.on_step) options.on_step(rec);
        if (options.out_dir && (it + 1) % config.checkpoint_every == 0) {
            save_checkpoint(*options.out_dir / "checkpoint", model, it + 1);
        }
    }
    if (options.out_dir) {
        save_checkpoint(*options.out_dir / "checkpoint", model, config.iterations);
        write_text_file(*options.out_dir / "train_log.json", train_log_json(result.log, config));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate_predictions(const std::vector<Tensor>& predictions,
                                const std::vector<Sample>& samples, std::size_t classes) {
    if (predictions.size() != samples.size()) throw ShapeError("prediction count mismatch");
    EvalResult r{ConfusionMatrix(classes), {}, {}};
    for (std::size_t i = 0; i < samples.size(); ++i) r.confusion.accumulate(predictions[i], samples[i].mask);
    r.iou = miou(r.confusion);
    r.dice = mdice(r.confusion);
    return r;
}

EvalResult evaluate(const TafeModel& model, const std::vector<Sample>& samples,
                    bool gt_as_prediction) {
    std::vector<Tensor> preds;
    preds.reserve(samples.size());
    for (const auto& s : samples) {
        if (gt_as_prediction) {
            preds.push_back(s.mask);
            continue;
        }
        preds.push_back(argmax_channels(forward(s.image, model)));
    }
    return evaluate_predictions(preds, samples, model.config.classes);
}

namespace {

ordered_json optional_list(const std::vector<std::optional<double>>& v) {
    ordered_json out = ordered_json::array();
    for (const auto& x : v) {
        if (x) {
            out.push_back(*x);
        } else {
            out.push_back(nullptr);
        }
    }
    return out;
}

}  // namespace

std::string metrics_json(const EvalResult& result, const TafeConfig& config) {
    ordered_json j;
    j["miou"] = result.iou.mean;
    j["mdice"] = result.dice.mean;
    j["per_class_iou"] = optional_list(result.iou.per_class);
    j["per_class_dice"] = optional_list(result.dice.per_class);
    j["absent_class_rule"] = "classes with an empty union are reported as null and excluded from the means";
    ordered_json cm = ordered_json::array();
    for (std::size_t g = 0; g < result.confusion.classes(); ++g) {
        ordered_json row = ordered_json::array();
        for (std::size_t p = 0; p < result.confusion.classes(); ++p) row.push_back(result.confusion.at(g, p));
        cm.push_back(row);
    }
    j["confusion"] = cm;
    j["config"] = config_json(config);
    return j.dump(2) + "\n";
}

std::string train_log_json(const std::vector<TrainRecord>& log, const TafeConfig& config) {
    ordered_json j;
    j["config"] = config_json(config);
    j["iterations"] = ordered_json::array();
    for (const auto& r : log) j["iterations"].push_back({{"iteration", r.iteration}, {"loss", r.loss}});
    j["final_loss"] = log.empty() ? 0.0 : log.back().loss;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::string param_file(std::size_t i) {
    std::ostringstream os;
    os << "param_";
    os.width(4);
    os.fill('0');
    os << i << ".tafet";
    return os.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TafeModel& model, std::size_t iteration) {
    std::filesystem::create_directories(dir);
    ordered_json j;
    j["format"] = "tafe-checkpoint-v1";
    j["iteration"] = iteration;
    j["config"] = config_json(model.config);
    j["parameters"] = ordered_json::array();
    const auto& entries = model.params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Shape& s = entries[i].value.shape();
        const std::string file = param_file(i);
        save_tensor(dir / file, entries[i].value);
        j["parameters"].push_back({{"name", entries[i].name}, {"file", file}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

TafeModel load_checkpoint(const std::filesystem::path& dir) {
    json j;
    try {
        j = json::parse(read_text_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw DataError("invalid checkpoint manifest: " + std::string(e.what()));
    }
    if (j.value("format", "") != "tafe-checkpoint-v1") throw DataError("unknown checkpoint format");
    TafeModel model = TafeModel::init(TafeConfig::from_json(j.at("config").dump()));
    const auto& params = j.at("parameters");
    if (params.size() != model.params.size()) {
        throw ShapeError("checkpoint has " + std::to_string(params.size()) + " parameters, config expects " +
                         std::to_string(model.params.size()));
    }
    for (const auto& p : params) {
        const auto name = p.at("name").get<std::string>();
        Tensor value = load_tensor(dir / p.at("file").get<std::string>());
        Tensor& slot = model.params.at(name);
        if (slot.shape() != value.shape()) {
            throw ShapeError("checkpoint parameter " + name + " has shape " + value.shape().str() +
                             ", expected " + slot.shape().str());
        }
        slot = std::move(value);
    }
    return model;
}

}  // namespace tafe
