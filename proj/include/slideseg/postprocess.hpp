#pragma once

#include "slideseg/outputs.hpp"
#include "slideseg/volume.hpp"

#include <array>
#include <optional>
#include <vector>

namespace slideseg {

// Inclusive pixel box.
struct BBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
    long long area() const { return static_cast<long long>(width()) * height(); }
    bool operator==(const BBox&) const = default;
};

double bbox_iou(const BBox& a, const BBox& b);

// A binary 2D mask with its score (predicted IoU), tight bbox and stability.
struct InstanceMask {
    Mask2D mask;
    double score = 0.0;
    BBox bbox;
    double stability = 0.0;
    int hypothesis = 0;
};

// area(logits > tau + delta) / area(logits > tau - delta); 0 when the larger
// area is empty.
double stability_score(const Image2D& logits, double delta = 0.1, double tau = kMaskThreshold);
// Same ratio with the areas summed over several slices.
double stability_score(const std::array<Image2D, 3>& logits, double delta = 0.1, double tau = kMaskThreshold);

Mask2D binarize(const Image2D& logits, double tau = kMaskThreshold);

// A window hypothesis that passed filtering: binarized masks on all three
// slices plus its scores.
struct WindowMask {
    int hypothesis = 0;
    double score = 0.0;
    double stability = 0.0;
    std::array<Mask2D, 3> slices;
};

struct FilterOptions {
    double iou_min = 0.4;
    double stability_min = 0.6;
    double stability_delta = 0.1;
};

// Drops hypotheses with predicted IoU < iou_min or stability < stability_min
// (strict, so values at the thresholds survive); binarizes survivors.
// Stability is measured over the three-slice stack.
std::vector<WindowMask> filter_predictions(const DecoderOutputs& out, const FilterOptions& opt = {});

// 8-connected component labels (0 = background, 1..count), row-major scan order.
struct Components {
    Grid2<int> labels;
    int count = 0;
    std::vector<std::size_t> sizes;  // sizes[k] for label k+1
};
Components connected_components(const Mask2D& mask);

std::optional<BBox> tight_bbox(const Mask2D& mask);
// Tight box of the largest 8-connected component (earliest in scan order on
// ties); with largest_component = false, the box of all foreground.
std::optional<BBox> mask_to_bbox(const Mask2D& mask, bool largest_component = true);

InstanceMask make_instance(Mask2D mask, double score, double stability = 1.0, int hypothesis = 0);

// Greedy NMS on bbox IoU in descending score order (stable for equal
// scores). Returns the indices of the kept masks in that order.
std::vector<std::size_t> mask_nms_indices(const std::vector<InstanceMask>& masks, double iou_thresh = 0.7);
std::vector<InstanceMask> mask_nms(const std::vector<InstanceMask>& masks, double iou_thresh = 0.7);

// Erosion then dilation with a 3x3 square, repeated `iterations` times each.
Mask2D morphological_open(const Mask2D& mask, int iterations = 1);

}  // namespace slideseg
