#include "slideseg/harness.hpp"

#include "slideseg/error.hpp"
#include "slideseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace slideseg {

int equator_index(const VolumeMask& gt, Axis axis, std::uint32_t id) {
    int best = -1;
    std::size_t best_area = 0;
    for (int i = 0; i < gt.dim(axis); ++i) {
        const std::size_t a = count_foreground(gt.slice(axis, i, id));
        if (a > best_area) {
            best_area = a;
            best = i;
        }
    }
    if (best < 0) throw InvalidInput("instance not present in the mask");
    return best;
}

BBox gt_box(const VolumeMask& gt, Axis axis, int index, std::uint32_t id) {
    const auto b = tight_bbox(gt.slice(axis, index, id));
    if (!b) throw InvalidInput("instance absent on slice " + std::to_string(index));
    return *b;
}

CaseResult evaluate_propagation(const SlideModel& model, const EvalCase& c, Axis axis, const InferenceOptions& opt) {
    const int start = std::clamp(equator_index(c.gt, axis, c.id), 1, c.gt.dim(axis) - 2);
    CaseResult r;
    r.prompts_used = 1;
    r.segmentation = segment_volume(model, c.volume, axis, start, Prompt::box(gt_box(c.gt, axis, start, c.id)), opt);
    r.dice = dice(r.segmentation.mask, c.gt, opt.instance_id, c.id);
    return r;
}

CaseResult evaluate_per_slice(const SlideModel& model, const EvalCase& c, Axis axis, const InferenceOptions& opt) {
    CaseResult r;
    r.segmentation.mask = VolumeMask::like(c.volume);
    for (int i = 1; i + 1 < c.gt.dim(axis); ++i) {
        const auto box = tight_bbox(c.gt.slice(axis, i, c.id));
        if (!box) continue;
        ++r.prompts_used;
        const auto pred = predict_window(model, c.volume, axis, i, Prompt::box(*box), opt.filter);
        ++r.segmentation.windows_run;
        if (pred.chosen) r.segmentation.mask.paint_slice(axis, i, pred.chosen->slices[1], opt.instance_id);
    }
    r.segmentation.mask.instances()[opt.instance_id] = InstanceInfo{"instance", LabelSource::Predicted};
    r.dice = dice(r.segmentation.mask, c.gt, opt.instance_id, c.id);
    return r;
}

int prompt_efficiency(const std::vector<ImageResult>& results, int budget, double dice_min) {
    int remaining = budget, count = 0;
    for (const auto& r : results) {
        if (r.prompts_used < 1) throw InvalidInput("prompts_used must be at least 1");
        if (r.prompts_used > remaining) break;
        remaining -= r.prompts_used;
        if (r.dice > dice_min) ++count;
    }
    return count;
}

int prompt_efficiency_cycled(const std::vector<ImageResult>& results, int budget, double dice_min) {
    if (results.empty()) return 0;
    std::vector<ImageResult> seq;
    int spent = 0;
    for (std::size_t i = 0; spent < budget; i = (i + 1) % results.size()) {
        if (results[i].prompts_used < 1) throw InvalidInput("prompts_used must be at least 1");
        seq.push_back(results[i]);
        spent += results[i].prompts_used;
    }
    return prompt_efficiency(seq, budget, dice_min);
}

EvalCase resample_z(const EvalCase& c, double ratio) {
    if (!(ratio > 0)) throw InvalidInput("resample ratio must be positive");
    const int nz = c.volume.nz();
    const int new_nz = static_cast<int>(std::lround(nz / ratio));
    if (new_nz < 3) throw InvalidInput("resampled depth below 3");
    const int nx = c.volume.nx(), ny = c.volume.ny();
    Spacing sp = c.volume.spacing();
    sp.z *= ratio;
    EvalCase out;
    out.id = c.id;
    out.volume = Volume(nx, ny, new_nz, sp, c.volume.modality(), c.volume.id());
    out.gt = VolumeMask(nx, ny, new_nz);
    out.gt.instances() = c.gt.instances();
    const double step = static_cast<double>(nz) / new_nz;
    for (int k = 0; k < new_nz; ++k) {
        const double zs = std::clamp((k + 0.5) * step - 0.5, 0.0, static_cast<double>(nz - 1));
        const int z0 = static_cast<int>(std::floor(zs));
        const int z1 = std::min(z0 + 1, nz - 1);
        const double t = zs - z0;
        const int zn = std::clamp(static_cast<int>(std::floor((k + 0.5) * step)), 0, nz - 1);
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                const double v = t == 0.0 ? c.volume.at(x, y, z0)
                                          : (1.0 - t) * c.volume.at(x, y, z0) + t * c.volume.at(x, y, z1);
                out.volume.at(x, y, k) = static_cast<float>(v);
                out.gt.at(x, y, k) = c.gt.at(x, y, zn);
            }
    }
    return out;
}

BBox perturb_box(const BBox& box, double translation, double scale, int height, int width) {
    const double cx = (box.x0 + box.x1) / 2.0 + translation * box.width();
    const double cy = (box.y0 + box.y1) / 2.0 + translation * box.height();
    const double hw = scale * box.width() / 2.0, hh = scale * box.height() / 2.0;
    BBox b;
    b.x0 = std::clamp(static_cast<int>(std::lround(cx - hw + 0.5)), 0, width - 1);
    b.x1 = std::clamp(static_cast<int>(std::lround(cx + hw - 0.5)), 0, width - 1);
    b.y0 = std::clamp(static_cast<int>(std::lround(cy - hh + 0.5)), 0, height - 1);
    b.y1 = std::clamp(static_cast<int>(std::lround(cy + hh - 0.5)), 0, height - 1);
    if (b.x1 < b.x0) b.x1 = b.x0;
    if (b.y1 < b.y0) b.y1 = b.y0;
    return b;
}

std::vector<NoisyPromptRow> noisy_prompt_suite(const SlideModel& model, const std::vector<EvalCase>& cases, Axis axis,
                                               const NoisyPromptGrid& grid, const InferenceOptions& opt) {
    if (cases.empty()) throw InvalidInput("noisy prompt suite needs at least one case");
    std::vector<NoisyPromptRow> rows;
    for (double t : grid.translations)
        for (double s : grid.scales) {
            double sum = 0;
            for (const auto& c : cases) {
                const int start = std::clamp(equator_index(c.gt, axis, c.id), 1, c.gt.dim(axis) - 2);
                const Mask2D sl = c.gt.slice(axis, start, c.id);
                const BBox b = perturb_box(gt_box(c.gt, axis, start, c.id), t, s, sl.height, sl.width);
                const auto seg = segment_volume(model, c.volume, axis, start, Prompt::box(b), opt);
                sum += dice(seg.mask, c.gt, opt.instance_id, c.id);
            }
            rows.push_back({t, s, sum / static_cast<double>(cases.size())});
        }
    return rows;
}

std::string config_hash(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_table(std::ostream& out, const std::vector<TableRow>& rows, const std::string& hash) {
    out << "metric,value,config_hash\n";
    for (const auto& r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", r.value);
        out << r.metric << ',' << buf << ',' << hash << '\n';
    }
}

}  // namespace slideseg
