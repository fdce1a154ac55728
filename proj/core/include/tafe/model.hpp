#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tafe/metrics.hpp"
#include "tafe/params.hpp"
#include "tafe/pyramid.hpp"
#include "tafe/synthdata.hpp"
#include "tafe/tensor.hpp"

namespace tafe {

enum class Optimizer { Sgd, Adam };

// Normal: every weight ~ N(0, init_std). FanIn: backbone, enhancement and
// head convs use N(0, 2 / fan_in); encoder weights and pos_embed keep init_std.
enum class InitScheme { Normal, FanIn };

// Constant: learning_rate every step. Cosine: learning_rate * (1 + cos(pi t / T)) / 2.
enum class LrSchedule { Constant, Cosine };

struct TafeConfig {
    std::size_t d = 16;
    std::size_t stages = 2;
    std::size_t heads = 4;
    std::size_t classes = 4;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t encoder_blocks = 1;
    double learning_rate = 1e-2;
    std::size_t iterations = 200;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    bool afe_enabled = true;
    bool share_aggregation = true;
    // Adds a full-resolution 3x3 conv of the image to the upsampled head
    // features before classification. Off: classify at 1/4 scale, then upsample.
    bool head_skip = true;
    double init_std = 0.02;
    InitScheme init_scheme = InitScheme::FanIn;
    std::size_t checkpoint_every = 50;
    Optimizer optimizer = Optimizer::Adam;
    LrSchedule lr_schedule = LrSchedule::Constant;
    // Global L2 norm cap on the gradient before each update; 0 disables.
    double grad_clip = 0.5;

    // Throws ConfigError on inconsistent values.
    void validate() const;

    [[nodiscard]] std::string to_json() const;
    // Strict: unknown keys are rejected. Missing keys keep their defaults.
    static TafeConfig from_json(const std::string& text);
    // Applies one "key=value" override with the same key set as the JSON form.
    void set(const std::string& key, const std::string& value);
};

// Parameters of the whole network, named by role:
//   backbone.*                       strided conv stack and level projections
//   pos_embed                        (1, d, T, 1), present when stages > 0
//   stage<s>.encoder.block<b>.*      transformer blocks
//   stage<s>.afe.l<l>.*              enhancement module per level (if enabled)
//   head.fuse, head.classifier       per-pixel segmentation head
//   head.skip                        image conv, present when head_skip
struct TafeModel {
    TafeConfig config;
    ParamStore params;

    static TafeModel init(const TafeConfig& config);
};

// One fused stage: encoder on the tokens, enhancement on the pyramid, and
// mutual addition.
//   F' = encoder(F_in);  E = AFE(P_in)
//   P_out[l] = unflatten(F')[l] + E_l;  F_out = F' + flatten(E)
// With AFE disabled E is identically zero.
struct StageVars {
    ad::Var tokens;
    std::vector<ad::Var> pyramid;
};

namespace ad {
StageVars stage_interact(Binding& b, const TafeConfig& config, std::size_t stage, Var tokens,
                         const std::vector<Var>& pyramid);
// logits (n, K, H, W)
Var forward(Binding& b, const TafeConfig& config, Var image);
// Sum of levels at 1/4 scale -> 3x3 fuse + ReLU -> classifier, upsampled to
// the image size. `image` feeds head.skip when present.
Var segmentation_head(Binding& b, const std::vector<Var>& pyramid, Var image);
}  // namespace ad

std::pair<TokenSequence, FeaturePyramid> stage_interact(const TokenSequence& f,
                                                        const FeaturePyramid& p,
                                                        const TafeModel& model, std::size_t stage);
Tensor forward(const Tensor& image, const TafeModel& model);

// Mean per-pixel softmax cross-entropy of logits (n,K,H,W) against a mask
// (n,1,H,W) of class ids.
double loss_ce(const Tensor& logits, const Tensor& mask);

// Stacks samples[indices] into one batch.
Sample make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

struct TrainRecord {
    std::size_t iteration = 0;
    double loss = 0.0;
};

struct TrainResult {
    TafeModel model;
    std::vector<TrainRecord> log;
};

struct TrainOptions {
    // Checkpoint and log destination; nothing is written when empty.
    std::optional<std::filesystem::path> out_dir;
    std::function<void(const TrainRecord&)> on_step;
};

// Deterministic given (config, samples). Throws NumericError on a non-finite
// loss.
TrainResult train(const TafeConfig& config, const std::vector<Sample>& samples,
                  const TrainOptions& options = {});

struct EvalResult {
    ConfusionMatrix confusion;
    ClassScores iou;
    ClassScores dice;
};

// Argmax predictions against the masks. `gt_as_prediction` scores the
// ground truth against itself (debug path).
EvalResult evaluate(const TafeModel& model, const std::vector<Sample>& samples,
                    bool gt_as_prediction = false);
EvalResult evaluate_predictions(const std::vector<Tensor>& predictions,
                                const std::vector<Sample>& samples, std::size_t classes);

std::string metrics_json(const EvalResult& result, const TafeConfig& config);
std::string train_log_json(const std::vector<TrainRecord>& log, const TafeConfig& config);

// Directory holding manifest.json plus one TAFE-T1 file per parameter.
void save_checkpoint(const std::filesystem::path& dir, const TafeModel& model,
                     std::size_t iteration);
TafeModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace tafe
