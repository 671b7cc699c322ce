#pragma once

#include "slideseg/loss.hpp"
#include "slideseg/model.hpp"
#include "slideseg/prompt_sim.hpp"

#include <array>
#include <functional>
#include <random>
#include <vector>

#include <json.hpp>

namespace slideseg {

struct TrainingSample {
    SliceWindow window;  // image_size x image_size
    MaskStack gt;
    Indicator indicator{1, 1, 1};
    std::uint64_t prompt_seed = 0;
    LabelSource source = LabelSource::GroundTruth;
};

// Resizes a labeled window to image_size and copies its labels/indicator.
// Throws InvalidInput when the window has no labels, an all-zero indicator
// or an empty central slice.
TrainingSample make_training_sample(const SliceWindow& window, int image_size, std::uint64_t prompt_seed);

struct OptimizerConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.1;
    double eps = 1e-8;
    int epochs = 20;

    void validate() const;  // throws ConfigError
};

// Decoupled weight decay Adam over the trainable parameters of a ParamSet.
class AdamW {
public:
    explicit AdamW(const OptimizerConfig& cfg);
    void step(ParamSet& ps, const Grads& grads);
    long steps() const { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<Mat> m_, v_;
    long t_ = 0;
};

struct TrainConfig {
    OptimizerConfig optimizer;
    LossWeights weights;
    int steps = 0;  // 0: epochs * ceil(samples / batch_size)
    int batch_size = 4;
    std::uint64_t seed = 0;
    int log_every = 10;
    PromptSimOptions prompts;
};

nlohmann::json to_json(const TrainConfig& c);
// Accepts a JSON object or flat "key = value" lines.
TrainConfig train_config_from_text(const std::string& text);

// Losses of one sample under the current weights plus the gradient of the
// selected head's loss with respect to the raw outputs.
struct SampleLoss {
    std::array<double, 3> seg{};
    std::array<double, 3> iou{};
    std::array<double, 3> total{};
    int head = 0;
    OutputGrads grads;
};
SampleLoss evaluate_sample(const RawOutputs& out, const TrainingSample& sample, const LossWeights& w);

struct StepStats {
    long step = 0;
    double loss = 0.0;
    std::array<int, 3> head_counts{0, 0, 0};
};
nlohmann::json to_json(const StepStats& s);

// One optimization step: per-sample forward, per-hypothesis losses,
// per-sample head selection, backprop of the selected loss only, batch
// mean, one AdamW update. Throws TrainingFault on a non-finite loss.
StepStats train_step(SlideModel& model, AdamW& opt, const std::vector<const TrainingSample*>& batch,
                     const std::vector<Prompt>& prompts, const LossWeights& w = {});

// Gradient of the mean selected loss without updating the model.
Grads batch_gradient(const SlideModel& model, const std::vector<const TrainingSample*>& batch,
                     const std::vector<Prompt>& prompts, const LossWeights& w, StepStats* stats = nullptr);

// Draws batches uniformly from `samples` and simulates one prompt per
// sample per step. `on_step` sees every step's stats.
std::vector<StepStats> train(SlideModel& model, const std::vector<TrainingSample>& samples, const TrainConfig& cfg,
                             const std::function<void(const StepStats&)>& on_step = {});

}  // namespace slideseg
