#include "slideseg/postprocess.hpp"

#include "slideseg/error.hpp"
#include "slideseg/kernels.hpp"

#include <algorithm>
#include <numeric>

namespace slideseg {

double bbox_iou(const BBox& a, const BBox& b) {
    const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
    const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
    const long long inter = (ix1 < ix0 || iy1 < iy0) ? 0 : static_cast<long long>(ix1 - ix0 + 1) * (iy1 - iy0 + 1);
    const long long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double stability_score(const Image2D& logits, double delta, double tau) {
    const auto high = kernels::count_above(logits.data.data(), logits.size(), tau + delta);
    const auto low = kernels::count_above(logits.data.data(), logits.size(), tau - delta);
    return low == 0 ? 0.0 : static_cast<double>(high) / static_cast<double>(low);
}

double stability_score(const std::array<Image2D, 3>& logits, double delta, double tau) {
    std::size_t high = 0, low = 0;
    for (const auto& l : logits) {
        high += kernels::count_above(l.data.data(), l.size(), tau + delta);
        low += kernels::count_above(l.data.data(), l.size(), tau - delta);
    }
    return low == 0 ? 0.0 : static_cast<double>(high) / static_cast<double>(low);
}

Mask2D binarize(const Image2D& logits, double tau) {
    Mask2D m(logits.height, logits.width);
    for (std::size_t i = 0; i < logits.size(); ++i) m.data[i] = logits.data[i] > tau;
    return m;
}

std::vector<WindowMask> filter_predictions(const DecoderOutputs& out, const FilterOptions& opt) {
    std::vector<WindowMask> kept;
    for (int j = 0; j < 3; ++j) {
        if (out.iou[j] < opt.iou_min) continue;
        const std::array<Image2D, 3> stack{out.logits[0][j], out.logits[1][j], out.logits[2][j]};
        const double stab = stability_score(stack, opt.stability_delta);
        if (stab < opt.stability_min) continue;
        WindowMask w;
        w.hypothesis = j;
        w.score = out.iou[j];
        w.stability = stab;
        for (int i = 0; i < 3; ++i) w.slices[i] = binarize(stack[i]);
        kept.push_back(std::move(w));
    }
    return kept;
}

Components connected_components(const Mask2D& mask) {
    Components cc;
    cc.labels = Grid2<int>(mask.height, mask.width, 0);
    std::vector<int> stack;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c) {
            if (!mask.at(r, c) || cc.labels.at(r, c) != 0) continue;
            const int label = ++cc.count;
            std::size_t size = 0;
            stack.assign(1, r * mask.width + c);
            cc.labels.at(r, c) = label;
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                ++size;
                const int pr = p / mask.width, pc = p % mask.width;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nr = pr + dr, nc = pc + dc;
                        if (nr < 0 || nr >= mask.height || nc < 0 || nc >= mask.width) continue;
                        if (!mask.at(nr, nc) || cc.labels.at(nr, nc) != 0) continue;
                        cc.labels.at(nr, nc) = label;
                        stack.push_back(nr * mask.width + nc);
                    }
            }
            cc.sizes.push_back(size);
        }
    return cc;
}

std::optional<BBox> tight_bbox(const Mask2D& mask) {
    std::optional<BBox> box;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c) {
            if (!mask.at(r, c)) continue;
            if (!box) {
                box = BBox{c, r, c, r};
            } else {
                box->x0 = std::min(box->x0, c);
                box->x1 = std::max(box->x1, c);
                box->y0 = std::min(box->y0, r);
                box->y1 = std::max(box->y1, r);
            }
        }
    return box;
}

std::optional<BBox> mask_to_bbox(const Mask2D& mask, bool largest_component) {
    if (!largest_component) return tight_bbox(mask);
    const Components cc = connected_components(mask);
    if (cc.count == 0) return std::nullopt;
    const auto best = std::max_element(cc.sizes.begin(), cc.sizes.end()) - cc.sizes.begin();
    const int label = static_cast<int>(best) + 1;
    Mask2D only(mask.height, mask.width);
    for (std::size_t i = 0; i < only.size(); ++i) only.data[i] = cc.labels.data[i] == label;
    return tight_bbox(only);
}

InstanceMask make_instance(Mask2D mask, double score, double stability, int hypothesis) {
    const auto box = tight_bbox(mask);
    if (!box) throw InvalidInput("instance mask is empty");
    InstanceMask m;
    m.mask = std::move(mask);
    m.score = score;
    m.bbox = *box;
    m.stability = stability;
    m.hypothesis = hypothesis;
    return m;
}

std::vector<std::size_t> mask_nms_indices(const std::vector<InstanceMask>& masks, double iou_thresh) {
    std::vector<std::size_t> order(masks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return masks[a].score > masks[b].score; });
    std::vector<std::size_t> kept;
    for (auto idx : order) {
        bool suppressed = false;
        for (auto k : kept)
            if (bbox_iou(masks[idx].bbox, masks[k].bbox) > iou_thresh) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

std::vector<InstanceMask> mask_nms(const std::vector<InstanceMask>& masks, double iou_thresh) {
    std::vector<InstanceMask> out;
    for (auto i : mask_nms_indices(masks, iou_thresh)) out.push_back(masks[i]);
    return out;
}

Mask2D morphological_open(const Mask2D& mask, int iterations) {
    Mask2D a = mask, b(mask.height, mask.width);
    for (int i = 0; i < iterations; ++i) {
        kernels::erode3x3(a.data.data(), b.data.data(), mask.height, mask.width);
        std::swap(a, b);
    }
    for (int i = 0; i < iterations; ++i) {
        kernels::dilate3x3(a.data.data(), b.data.data(), mask.height, mask.width);
        std::swap(a, b);
    }
    return a;
}

}  // namespace slideseg
