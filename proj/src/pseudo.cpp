#include "slideseg/pseudo.hpp"

#include "slideseg/error.hpp"
#include "slideseg/inference.hpp"
#include "slideseg/slic.hpp"

#include <algorithm>
#include <cmath>

namespace slideseg {

std::vector<TruncationVariant> truncation_variants(const Volume& volume) {
    const auto& v = volume.voxels();
    if (v.empty()) throw InvalidInput("empty volume");
    double sum = 0;
    for (float x : v) sum += x;
    const double mu = sum / static_cast<double>(v.size());
    double ss = 0;
    for (float x : v) ss += (x - mu) * (x - mu);
    const double sd = std::sqrt(ss / static_cast<double>(v.size()));
    if (!(sd > 0)) throw InvalidInput("volume has zero intensity variance");

    std::vector<TruncationVariant> out;
    for (double k : kTruncationMultipliers) {
        TruncationVariant t;
        t.k = k;
        t.lo = mu - k * sd;
        t.hi = mu + k * sd;
        t.rendered = Volume(volume.nx(), volume.ny(), volume.nz(), volume.spacing(), Modality::SYNTH, volume.id());
        auto& dst = t.rendered.voxels();
        const double scale = 255.0 / (t.hi - t.lo);
        for (std::size_t i = 0; i < v.size(); ++i)
            dst[i] = static_cast<float>(std::round((std::clamp<double>(v[i], t.lo, t.hi) - t.lo) * scale));
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

Image2D box_smooth(const Image2D& img) {
    Image2D out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) continue;
                    s += img.at(yy, xx);
                    ++n;
                }
            out.at(y, x) = s / n;
        }
    return out;
}

double otsu_threshold(const Image2D& img) {
    const auto [mn, mx] = std::minmax_element(img.data.begin(), img.data.end());
    const double lo = *mn, hi = *mx;
    if (hi <= lo) return hi;
    constexpr int kBins = 256;
    std::vector<double> hist(kBins, 0);
    for (double v : img.data) hist[std::min(kBins - 1, static_cast<int>((v - lo) / (hi - lo) * kBins))] += 1;
    const double total = static_cast<double>(img.size());
    double sum_all = 0;
    for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
    double w0 = 0, sum0 = 0, best = -1;
    int best_bin = 0;
    for (int b = 0; b < kBins - 1; ++b) {
        w0 += hist[b];
        sum0 += b * hist[b];
        const double w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = b;
        }
    }
    return lo + (best_bin + 1) * (hi - lo) / kBins;
}

DecoderOutputs constant_outputs(int h, int w, const Mask2D& central, double logit, double score) {
    DecoderOutputs d;
    d.height = h;
    d.width = w;
    for (int j = 0; j < 3; ++j) {
        Image2D mid(h, w, -logit);
        for (std::size_t k = 0; k < central.size(); ++k)
            if (central.data[k]) mid.data[k] = logit;
        d.logits[0][j] = Image2D(h, w, -logit);
        d.logits[1][j] = std::move(mid);
        d.logits[2][j] = Image2D(h, w, -logit);
        d.iou[j] = score;
    }
    return d;
}

}  // namespace

Segmenter threshold_segmenter(const ThresholdSegmenterOptions& opt) {
    return [opt](const SliceWindow& window, const Prompt& prompt) {
        const int h = window.height, w = window.width;
        const Image2D sm = box_smooth(window.pixels[1]);
        const double t = otsu_threshold(sm);
        Mask2D fg(h, w);
        double sf = 0, sb = 0;
        std::size_t nf = 0;
        for (std::size_t k = 0; k < sm.size(); ++k) {
            fg.data[k] = sm.data[k] > t;
            (fg.data[k] ? sf : sb) += sm.data[k];
            nf += fg.data[k];
        }
        const std::size_t nb = sm.size() - nf;
        Mask2D none(h, w);
        if (nf == 0 || nb == 0 || sf / nf - sb / nb < opt.min_contrast) return constant_outputs(h, w, none, opt.logit, 0.0);

        const Components cc = connected_components(morphological_open(fg, opt.open_iterations));
        int pick = 0;
        if (!prompt.points.empty()) {
            const auto& p = prompt.points.front();
            pick = cc.labels.at(p.y, p.x);
        } else if (!prompt.boxes.empty()) {
            const BBox& b = prompt.boxes.front();
            std::size_t best = 0;
            for (int y = b.y0; y <= b.y1; ++y)
                for (int x = b.x0; x <= b.x1; ++x) {
                    const int l = cc.labels.at(y, x);
                    if (l > 0 && cc.sizes[static_cast<std::size_t>(l - 1)] > best) {
                        best = cc.sizes[static_cast<std::size_t>(l - 1)];
                        pick = l;
                    }
                }
        }
        if (pick == 0 || static_cast<double>(cc.sizes[static_cast<std::size_t>(pick - 1)]) <
                             opt.min_area_fraction * static_cast<double>(h) * w)
            return constant_outputs(h, w, none, opt.logit, 0.0);
        Mask2D m(h, w);
        for (std::size_t k = 0; k < m.size(); ++k) m.data[k] = cc.labels.data[k] == pick;
        return constant_outputs(h, w, m, opt.logit, opt.score);
    };
}

Segmenter model_segmenter(const SlideModel& model) {
    return [&model](const SliceWindow& window, const Prompt& prompt) { return predict_resized(model, window, prompt); };
}

std::vector<PseudoRecord> generate_pseudo_records(const Segmenter& segmenter, const Volume& volume,
                                                  const PseudoOptions& opt) {
    if (opt.slice_step < 1) throw ConfigError("slice_step must be at least 1");
    const auto variants = truncation_variants(volume);
    const int extent = volume.dim(opt.axis);
    std::vector<int> centers;
    for (int c = 1; c + 1 < extent; c += opt.slice_step) centers.push_back(c);

    struct Candidate {
        InstanceMask instance;
        double k;
        const char* type;
    };
    std::vector<std::vector<PseudoRecord>> per_center(centers.size());
    std::vector<std::exception_ptr> errors(centers.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(centers.size()); ++ci) {
        const auto cu = static_cast<std::size_t>(ci);
        try {
            const int c = centers[cu];
            std::vector<Candidate> cands;
            for (const auto& var : variants) {
                const SliceWindow win = window_at(var.rendered, opt.axis, c);
                for (const auto& sp : superpixel_prompts(win.pixels[1], opt.n_segments, opt.mean_min, opt.compactness)) {
                    const std::array<std::pair<Prompt, const char*>, 2> prompts{
                        std::pair{Prompt{{sp.point}, {}, std::nullopt}, "point"},
                        std::pair{Prompt::box(sp.box), "box"}};
                    for (const auto& [prompt, type] : prompts) {
                        const auto survivors = filter_predictions(segmenter(win, prompt), opt.filter);
                        if (survivors.empty()) continue;
                        const auto best = std::max_element(survivors.begin(), survivors.end(),
                                                           [](const WindowMask& a, const WindowMask& b) { return a.score < b.score; });
                        if (count_foreground(best->slices[1]) == 0) continue;
                        cands.push_back({make_instance(best->slices[1], best->score, best->stability, best->hypothesis), var.k, type});
                    }
                }
            }
            std::vector<InstanceMask> inst;
            for (const auto& cd : cands) inst.push_back(cd.instance);
            for (std::size_t k : mask_nms_indices(inst, opt.nms_iou)) {
                PseudoRecord r;
                r.volume_id = volume.id();
                r.axis = opt.axis;
                r.center = c;
                r.gt = cands[k].instance.mask;
                r.variant_k = cands[k].k;
                r.prompt_type = cands[k].type;
                r.score = cands[k].instance.score;
                per_center[cu].push_back(std::move(r));
            }
        } catch (...) {
            errors[cu] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<PseudoRecord> out;
    for (auto& v : per_center)
        for (auto& r : v) out.push_back(std::move(r));
    return out;
}

}  // namespace slideseg
