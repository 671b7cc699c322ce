#include "slideseg/inference.hpp"

#include "slideseg/error.hpp"

#include <algorithm>
#include <exception>
#include <set>

namespace slideseg {

std::string_view to_string(Direction d) { return d == Direction::Forward ? "forward" : "backward"; }

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::None: return "none";
        case Termination::EmptyMask: return "empty_mask";
        case Termination::Boundary: return "boundary";
        case Termination::MaxSteps: return "max_steps";
    }
    return "none";
}

void InferenceOptions::validate() const {
    if (max_batch < 1) throw ConfigError("max_batch must be at least 1");
    if (stride < 1 || stride > 2) throw ConfigError("stride must be 1 or 2");
    if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
    if (open_iterations < 0) throw ConfigError("open_iterations must be non-negative");
    if (instance_id == 0) throw ConfigError("instance id 0 is background");
}

namespace {

std::optional<WindowMask> choose(const DecoderOutputs& out, const FilterOptions& filter) {
    auto survivors = filter_predictions(out, filter);
    if (survivors.empty()) return std::nullopt;
    std::size_t best = 0;
    for (std::size_t i = 1; i < survivors.size(); ++i)
        if (survivors[i].score > survivors[best].score) best = i;
    return std::move(survivors[best]);
}

DecoderOutputs resize_outputs(DecoderOutputs out, int height, int width) {
    if (out.height == height && out.width == width) return out;
    for (auto& slice : out.logits)
        for (auto& img : slice) img = resize_bilinear(img, height, width);
    out.height = height;
    out.width = width;
    return out;
}

struct PreparedWindow {
    SliceWindow window;
    int height = 0;
    int width = 0;
};

PreparedWindow prepare(const SlideModel& model, const Volume& volume, Axis axis, int center) {
    const int extent = volume.dim(axis);
    if (center < 1 || center > extent - 2) throw InvalidInput("window centre must leave one slice on each side");
    SliceWindow w = window_at(volume, axis, center);
    const int s = model.config().encoder.image_size;
    PreparedWindow p{{}, w.height, w.width};
    p.window = (w.height == s && w.width == s) ? std::move(w) : resize_window(w, s, s);
    return p;
}

Prompt to_model_space(const SlideModel& model, const Prompt& prompt, int height, int width) {
    const int s = model.config().encoder.image_size;
    return rescale_prompt(prompt, height, width, s, s);
}

void merge_into(std::map<int, Mask2D>& acc, int center, const WindowMask& wm) {
    for (int i = 0; i < 3; ++i) {
        const int idx = center - 1 + i;
        const Mask2D& m = wm.slices[static_cast<std::size_t>(i)];
        auto it = acc.find(idx);
        if (it == acc.end()) {
            acc.emplace(idx, m);
            continue;
        }
        for (std::size_t k = 0; k < m.size(); ++k) it->second.data[k] = it->second.data[k] | m.data[k];
    }
}

void apply_outcome(PropagationState& st, const StepOutcome& o) {
    if (o.terminated) {
        st.terminated = true;
        st.reason = o.reason;
        st.active_prompt.reset();
        return;
    }
    st.frontier_index = o.next_center;
    st.active_prompt = o.prompt;
}

void report_progress(const std::vector<PropagationState*>& states, const InferenceOptions& opt) {
    if (!opt.on_progress) return;
    std::set<int> labeled;
    for (const auto* st : states)
        for (const auto& kv : st->accumulated) labeled.insert(kv.first);
    opt.on_progress(static_cast<int>(labeled.size()));
}

// Advances every state until all terminate. Pending windows of a round are
// predicted in batches; each prediction is independent, so the result does
// not depend on max_batch or the thread count.
int run_propagation(const SlideModel& model, const Volume& volume, Axis axis, std::vector<PropagationState*>& states,
                    const InferenceOptions& opt) {
    const int extent = volume.dim(axis);
    const int max_steps = opt.max_steps > 0 ? opt.max_steps : extent;
    int windows = 0;
    report_progress(states, opt);
    while (true) {
        std::vector<PropagationState*> pending;
        for (auto* st : states) {
            if (st->terminated) continue;
            if (st->steps >= max_steps) {
                st->terminated = true;
                st->reason = Termination::MaxSteps;
                continue;
            }
            pending.push_back(st);
        }
        if (pending.empty()) break;
        std::vector<WindowPrediction> preds(pending.size());
        for (const auto& batch : batch_windows(pending.size(), opt.max_batch)) {
            std::vector<std::exception_ptr> errors(batch.size());
#pragma omp parallel for schedule(dynamic, 1)
            for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch.size()); ++b) {
                const std::size_t i = batch[static_cast<std::size_t>(b)];
                try {
                    preds[i] = predict_window(model, volume, axis, pending[i]->frontier_index, *pending[i]->active_prompt,
                                              opt.filter);
                } catch (...) {
                    errors[static_cast<std::size_t>(b)] = std::current_exception();
                }
            }
            for (const auto& e : errors)
                if (e) std::rethrow_exception(e);
        }
        windows += static_cast<int>(pending.size());
        for (std::size_t i = 0; i < pending.size(); ++i) {
            PropagationState& st = *pending[i];
            const int center = st.frontier_index;
            ++st.steps;
            if (preds[i].chosen) merge_into(st.accumulated, center, *preds[i].chosen);
            apply_outcome(st, propagate_step(preds[i].chosen, st.direction, center, extent, opt));
        }
        report_progress(states, opt);
    }
    return windows;
}

void paint_states(VolumeMask& mask, Axis axis, const std::vector<const PropagationState*>& states, std::uint32_t id,
                  bool keep_existing) {
    for (const auto* st : states)
        for (const auto& [idx, m] : st->accumulated) {
            if (!keep_existing) {
                mask.paint_slice(axis, idx, m, id);
                continue;
            }
            const Mask2D taken = mask.slice(axis, idx, 0);
            Mask2D free = m;
            for (std::size_t k = 0; k < free.size(); ++k) free.data[k] = free.data[k] && !taken.data[k];
            mask.paint_slice(axis, idx, free, id);
        }
    mask.instances()[id] = InstanceInfo{"instance_" + std::to_string(id), LabelSource::Predicted};
}

}  // namespace

DecoderOutputs predict_resized(const SlideModel& model, const SliceWindow& window, const Prompt& prompt) {
    const int s = model.config().encoder.image_size;
    const Prompt p = rescale_prompt(prompt, window.height, window.width, s, s);
    if (window.height == s && window.width == s) return model.predict(window, p);
    return resize_outputs(model.predict(resize_window(window, s, s), p), window.height, window.width);
}

WindowPrediction predict_window(const SlideModel& model, const Volume& volume, Axis axis, int center,
                                const Prompt& prompt, const FilterOptions& filter) {
    const PreparedWindow p = prepare(model, volume, axis, center);
    WindowPrediction r;
    r.outputs = resize_outputs(model.predict(p.window, to_model_space(model, prompt, p.height, p.width)), p.height,
                               p.width);
    r.chosen = choose(r.outputs, filter);
    return r;
}

StepOutcome propagate_step(const std::optional<WindowMask>& chosen, Direction direction, int center, int extent,
                           const InferenceOptions& opt) {
    StepOutcome o;
    const int sign = direction == Direction::Forward ? 1 : -1;
    const int next = center + sign * opt.stride;
    if (next < 1 || next > extent - 2) {
        o.terminated = true;
        o.reason = Termination::Boundary;
        return o;
    }
    if (!chosen) {
        o.terminated = true;
        o.reason = Termination::EmptyMask;
        return o;
    }
    const Mask2D& end = chosen->slices[direction == Direction::Forward ? 2 : 0];
    const auto box = mask_to_bbox(morphological_open(end, opt.open_iterations));
    if (!box) {
        o.terminated = true;
        o.reason = Termination::EmptyMask;
        return o;
    }
    o.next_center = next;
    o.prompt = Prompt::box(*box);
    return o;
}

std::vector<std::vector<std::size_t>> batch_windows(std::size_t pending, int max_batch) {
    if (max_batch < 1) throw InvalidInput("max_batch must be at least 1");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < pending; ++i) {
        if (out.empty() || out.back().size() == static_cast<std::size_t>(max_batch)) out.emplace_back();
        out.back().push_back(i);
    }
    return out;
}

SegmentationResult segment_volume(const SlideModel& model, const Volume& volume, Axis axis, int start_index,
                                  const Prompt& seed_prompt, const InferenceOptions& opt) {
    opt.validate();
    const int extent = volume.dim(axis);
    if (start_index < 1 || start_index > extent - 2)
        throw InvalidInput("start index " + std::to_string(start_index) + " outside [1, " + std::to_string(extent - 2) + "]");
    if (seed_prompt.empty()) throw InvalidInput("seed prompt is empty");

    SegmentationResult r;
    r.mask = VolumeMask::like(volume);
    r.directions[0].direction = Direction::Forward;
    r.directions[1].direction = Direction::Backward;

    const WindowPrediction seed = predict_window(model, volume, axis, start_index, seed_prompt, opt.filter);
    r.windows_run = 1;
    if (!seed.chosen) {
        r.seed_empty = true;
        r.diagnostic = "no hypothesis passed filtering at the seed window";
        for (auto& st : r.directions) {
            st.frontier_index = start_index;
            st.terminated = true;
            st.reason = Termination::EmptyMask;
        }
        return r;
    }

    std::vector<PropagationState*> states;
    for (auto& st : r.directions) {
        st.frontier_index = start_index;
        merge_into(st.accumulated, start_index, *seed.chosen);
        apply_outcome(st, propagate_step(seed.chosen, st.direction, start_index, extent, opt));
        states.push_back(&st);
    }
    r.windows_run += run_propagation(model, volume, axis, states, opt);
    paint_states(r.mask, axis, {&r.directions[0], &r.directions[1]}, opt.instance_id, false);
    return r;
}

std::vector<PointPrompt> sample_uncovered_points(int height, int width, const std::vector<Mask2D>& covered,
                                                 int grid_step) {
    if (grid_step < 1) throw InvalidInput("grid_step must be at least 1");
    for (const auto& m : covered)
        if (m.height != height || m.width != width) throw InvalidInput("coverage mask shape mismatch");
    std::vector<PointPrompt> pts;
    const int off = grid_step / 2;
    for (int y = off; y < height; y += grid_step)
        for (int x = off; x < width; x += grid_step) {
            bool hit = false;
            for (const auto& m : covered)
                if (m.at(y, x)) {
                    hit = true;
                    break;
                }
            if (!hit) pts.push_back({x, y, 1});
        }
    return pts;
}

SegmentationResult segment_everything(const SlideModel& model, const Volume& volume, Axis axis, int index,
                                      const EverythingOptions& opt) {
    opt.inference.validate();
    if (opt.rounds < 1) throw ConfigError("rounds must be at least 1");
    const PreparedWindow p = prepare(model, volume, axis, index);
    const ImageEmbedding emb = model.encode_image(p.window);

    struct Candidate {
        InstanceMask instance;
        WindowMask window;
    };
    std::vector<Candidate> kept;
    SegmentationResult r;
    r.mask = VolumeMask::like(volume);

    for (int round = 0; round < opt.rounds; ++round) {
        std::vector<Mask2D> covered;
        for (const auto& c : kept) covered.push_back(c.instance.mask);
        const auto points = sample_uncovered_points(p.height, p.width, covered, opt.grid_step);
        if (points.empty()) break;

        std::vector<std::optional<WindowMask>> chosen(points.size());
        std::vector<std::exception_ptr> errors(points.size());
#pragma omp parallel for schedule(dynamic, 1)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(points.size()); ++i) {
            const auto iu = static_cast<std::size_t>(i);
            try {
                const Prompt pr = to_model_space(model, Prompt{{points[iu]}, {}, std::nullopt}, p.height, p.width);
                const auto out = resize_outputs(model.decode_masks(emb, model.encode_prompts(pr), p.window), p.height,
                                                p.width);
                chosen[iu] = choose(out, opt.inference.filter);
            } catch (...) {
                errors[iu] = std::current_exception();
            }
        }
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
        r.windows_run += static_cast<int>(points.size());

        std::vector<Candidate> pool = kept;
        for (auto& c : chosen) {
            if (!c || count_foreground(c->slices[1]) == 0) continue;
            pool.push_back({make_instance(c->slices[1], c->score, c->stability, c->hypothesis), *c});
        }
        std::vector<InstanceMask> inst;
        for (const auto& c : pool) inst.push_back(c.instance);
        std::vector<Candidate> next;
        for (std::size_t k : mask_nms_indices(inst, opt.nms_iou)) next.push_back(pool[k]);
        kept = std::move(next);
    }

    const int extent = volume.dim(axis);
    std::vector<PropagationState> states(kept.size() * 2);
    std::vector<PropagationState*> ptrs;
    for (std::size_t k = 0; k < kept.size(); ++k)
        for (int d = 0; d < 2; ++d) {
            auto& st = states[k * 2 + static_cast<std::size_t>(d)];
            st.direction = d == 0 ? Direction::Forward : Direction::Backward;
            st.frontier_index = index;
            merge_into(st.accumulated, index, kept[k].window);
            apply_outcome(st, propagate_step(kept[k].window, st.direction, index, extent, opt.inference));
            ptrs.push_back(&st);
        }
    r.windows_run += run_propagation(model, volume, axis, ptrs, opt.inference);
    for (std::size_t k = 0; k < kept.size(); ++k)
        paint_states(r.mask, axis, {&states[k * 2], &states[k * 2 + 1]}, static_cast<std::uint32_t>(k + 1), true);
    if (kept.empty()) r.diagnostic = "no instance passed filtering";
    return r;
}

}  // namespace slideseg
