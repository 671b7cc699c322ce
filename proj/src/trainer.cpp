#include "slideseg/trainer.hpp"

#include "slideseg/error.hpp"

#include <cmath>
#include <exception>
#include <sstream>

namespace slideseg {

TrainingSample make_training_sample(const SliceWindow& window, int image_size, std::uint64_t prompt_seed) {
    if (!window.labels) throw InvalidInput("training window has no labels");
    if (included_slices(window.indicator) == 0) throw InvalidInput("training window indicator is all zero");
    const SliceWindow w = resize_window(window, image_size, image_size);
    TrainingSample s;
    s.window = w;
    s.gt = *w.labels;
    s.indicator = w.indicator;
    s.prompt_seed = prompt_seed;
    if (count_foreground(s.gt[1]) == 0) throw InvalidInput("training window has an empty central slice");
    return s;
}

void OptimizerConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("betas must lie in [0,1)");
    if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
}

AdamW::AdamW(const OptimizerConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

void AdamW::step(ParamSet& ps, const Grads& grads) {
    if (m_.empty()) {
        m_.resize(static_cast<std::size_t>(ps.size()));
        v_.resize(static_cast<std::size_t>(ps.size()));
        for (int i = 0; i < ps.size(); ++i)
            if (ps.trainable(i)) {
                m_[static_cast<std::size_t>(i)] = Mat(ps.value(i).rows, ps.value(i).cols);
                v_[static_cast<std::size_t>(i)] = Mat(ps.value(i).rows, ps.value(i).cols);
            }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (int i = 0; i < ps.size(); ++i) {
        if (!ps.trainable(i)) continue;
        auto& p = ps.value(i).v;
        const auto& g = grads.g[static_cast<std::size_t>(i)].v;
        auto& m = m_[static_cast<std::size_t>(i)].v;
        auto& v = v_[static_cast<std::size_t>(i)].v;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * g[k] * g[k];
            const double mh = m[k] / bc1;
            const double vh = v[k] / bc2;
            p[k] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * p[k]);
        }
    }
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.optimizer.lr},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"weight_decay", c.optimizer.weight_decay},
            {"eps", c.optimizer.eps},
            {"epochs", c.optimizer.epochs},
            {"lambda_ce", c.weights.ce},
            {"lambda_dice", c.weights.dice},
            {"steps", c.steps},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"log_every", c.log_every},
            {"point_probability", c.prompts.point_probability},
            {"noise_fraction", c.prompts.noise_fraction},
            {"max_noise", c.prompts.max_noise}};
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

TrainConfig train_config_from_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::object();
    const std::string t = trim(text);
    if (!t.empty() && t.front() == '{') {
        try {
            j = nlohmann::json::parse(t);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad training config: ") + e.what());
        }
    } else {
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            line = trim(line.substr(0, line.find('#')));
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("expected key = value: " + line);
            const std::string key = trim(line.substr(0, eq));
            const std::string val = trim(line.substr(eq + 1));
            try {
                j[key] = nlohmann::json::parse(val);
            } catch (const nlohmann::json::exception&) {
                throw ConfigError("bad value for " + key);
            }
        }
    }
    TrainConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const auto& v = it.value();
        if (!v.is_number()) throw ConfigError("config value for " + k + " must be numeric");
        if (k == "lr") c.optimizer.lr = v.get<double>();
        else if (k == "beta1") c.optimizer.beta1 = v.get<double>();
        else if (k == "beta2") c.optimizer.beta2 = v.get<double>();
        else if (k == "weight_decay") c.optimizer.weight_decay = v.get<double>();
        else if (k == "eps") c.optimizer.eps = v.get<double>();
        else if (k == "epochs") c.optimizer.epochs = v.get<int>();
        else if (k == "lambda_ce") c.weights.ce = v.get<double>();
        else if (k == "lambda_dice") c.weights.dice = v.get<double>();
        else if (k == "steps") c.steps = v.get<int>();
        else if (k == "batch_size") c.batch_size = v.get<int>();
        else if (k == "seed") c.seed = v.get<std::uint64_t>();
        else if (k == "log_every") c.log_every = v.get<int>();
        else if (k == "point_probability") c.prompts.point_probability = v.get<double>();
        else if (k == "noise_fraction") c.prompts.noise_fraction = v.get<double>();
        else if (k == "max_noise") c.prompts.max_noise = v.get<double>();
        else throw ConfigError("unknown training config key: " + k);
    }
    c.optimizer.validate();
    if (c.weights.ce < 0 || c.weights.dice < 0) throw ConfigError("loss weights must be non-negative");
    if (c.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (c.steps < 0) throw ConfigError("steps must be non-negative");
    return c;
}

SampleLoss evaluate_sample(const RawOutputs& out, const TrainingSample& sample, const LossWeights& w) {
    if (out.logits.size() != 3) throw ConfigError("training needs the three-branch decoder");
    const int h = out.height, wd = out.width;
    SampleLoss r;
    std::array<LossAndGrad, 3> seg;
    std::array<SliceStack, 3> stacks;
    for (int j = 0; j < 3; ++j) {
        for (int i = 0; i < 3; ++i) {
            Image2D img(h, wd);
            for (int p = 0; p < h * wd; ++p) img.data[static_cast<std::size_t>(p)] = out.logits[static_cast<std::size_t>(i)](p, j);
            stacks[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = std::move(img);
        }
        const auto ju = static_cast<std::size_t>(j);
        seg[ju] = seg_loss_with_grad(stacks[ju], sample.gt, sample.indicator, w);
        r.seg[ju] = seg[ju].value;
        r.iou[ju] = iou_loss(out.iou.v[ju], stacks[ju], sample.gt, sample.indicator);
        r.total[ju] = r.seg[ju] + r.iou[ju];
    }
    r.head = select_head(r.total);
    const auto k = static_cast<std::size_t>(r.head);
    r.grads.logits.assign(3, Mat(h * wd, 3));
    for (int i = 0; i < 3; ++i)
        for (int p = 0; p < h * wd; ++p)
            r.grads.logits[static_cast<std::size_t>(i)](p, r.head) = seg[k].grad[static_cast<std::size_t>(i)].data[static_cast<std::size_t>(p)];
    r.grads.iou = Mat(1, 3);
    r.grads.iou.v[k] = iou_loss_grad(out.iou.v[k], stacks[k], sample.gt, sample.indicator);
    return r;
}

nlohmann::json to_json(const StepStats& s) {
    return {{"step", s.step}, {"loss", s.loss}, {"heads", s.head_counts}};
}

Grads batch_gradient(const SlideModel& model, const std::vector<const TrainingSample*>& batch,
                     const std::vector<Prompt>& prompts, const LossWeights& w, StepStats* stats) {
    if (batch.empty() || batch.size() != prompts.size()) throw InvalidInput("batch and prompts must be nonempty and aligned");
    const std::size_t n = batch.size();
    std::vector<Grads> grads(n);
    std::vector<SampleLoss> losses(n);
    std::vector<std::exception_ptr> errors(n);

#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(n); ++s) {
        const auto su = static_cast<std::size_t>(s);
        try {
            const auto fwd = model.forward(batch[su]->window, prompts[su]);
            losses[su] = evaluate_sample(fwd.out, *batch[su], w);
            grads[su] = Grads::zeros_like(model.params());
            model.backward(fwd, losses[su].grads, grads[su]);
        } catch (...) {
            errors[su] = std::current_exception();
        }
    }

    for (std::size_t s = 0; s < n; ++s) {
        if (errors[s]) {
            try {
                std::rethrow_exception(errors[s]);
            } catch (const TrainingFault& e) {
                throw TrainingFault("sample " + std::to_string(s) + ": " + e.what());
            }
        }
    }

    Grads total = std::move(grads[0]);
    for (std::size_t s = 1; s < n; ++s) total.add(grads[s]);
    total.scale(1.0 / static_cast<double>(n));

    StepStats st;
    for (std::size_t s = 0; s < n; ++s) {
        st.loss += losses[s].total[static_cast<std::size_t>(losses[s].head)];
        ++st.head_counts[static_cast<std::size_t>(losses[s].head)];
    }
    st.loss /= static_cast<double>(n);
    if (!std::isfinite(st.loss)) throw TrainingFault("non-finite batch loss");
    for (const auto& m : total.g)
        for (double v : m.v)
            if (!std::isfinite(v)) throw TrainingFault("non-finite gradient");
    if (stats) *stats = st;
    return total;
}

StepStats train_step(SlideModel& model, AdamW& opt, const std::vector<const TrainingSample*>& batch,
                     const std::vector<Prompt>& prompts, const LossWeights& w) {
    StepStats st;
    const Grads g = batch_gradient(model, batch, prompts, w, &st);
    opt.step(model.params(), g);
    st.step = opt.steps();
    return st;
}

std::vector<StepStats> train(SlideModel& model, const std::vector<TrainingSample>& samples, const TrainConfig& cfg,
                             const std::function<void(const StepStats&)>& on_step) {
    if (samples.empty()) throw InvalidInput("no training samples");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    long steps = cfg.steps;
    if (steps <= 0) {
        const long per_epoch = (static_cast<long>(samples.size()) + cfg.batch_size - 1) / cfg.batch_size;
        steps = per_epoch * cfg.optimizer.epochs;
    }
    AdamW opt(cfg.optimizer);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    std::vector<StepStats> history;
    history.reserve(static_cast<std::size_t>(steps));
    for (long step = 0; step < steps; ++step) {
        std::vector<const TrainingSample*> batch;
        std::vector<Prompt> prompts;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const TrainingSample& s = samples[pick(rng)];
            std::seed_seq seq{static_cast<std::uint32_t>(s.prompt_seed), static_cast<std::uint32_t>(s.prompt_seed >> 32),
                              static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(b)};
            std::mt19937_64 prng(seq);
            batch.push_back(&s);
            prompts.push_back(simulate_prompt(s.gt[1], prng, cfg.prompts));
        }
        StepStats st;
        try {
            st = train_step(model, opt, batch, prompts, cfg.weights);
        } catch (const TrainingFault& e) {
            throw TrainingFault("step " + std::to_string(step + 1) + ": " + e.what());
        }
        history.push_back(st);
        if (on_step) on_step(st);
    }
    return history;
}

}  // namespace slideseg
