#pragma once

#include "slideseg/model.hpp"
#include "slideseg/postprocess.hpp"
#include "slideseg/records.hpp"

#include <array>
#include <functional>
#include <vector>

namespace slideseg {

struct TruncationVariant {
    double k = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    Volume rendered;  // clamped to [lo, hi], mapped to [0, 255], rounded
};

constexpr std::array<double, 4> kTruncationMultipliers{3.0, 2.0, 1.0, 0.5};

// One rendering per k in kTruncationMultipliers over [mu - k*sd, mu + k*sd]
// of the raw intensities. Throws InvalidInput when sd is 0.
std::vector<TruncationVariant> truncation_variants(const Volume& volume);

// Segments the central slice of a window (slice resolution) for a prompt.
using Segmenter = std::function<DecoderOutputs(const SliceWindow&, const Prompt&)>;

// Intensity oracle standing in for a pretrained segmenter: smooths the
// central slice, splits it at the Otsu threshold, opens the foreground and
// returns the component under the prompt (the point's component, or the
// largest one overlapping the box). Low-contrast slices and tiny
// components give an empty mask.
struct ThresholdSegmenterOptions {
    double min_contrast = 40.0;
    double min_area_fraction = 0.002;
    int open_iterations = 1;
    double score = 0.9;
    double logit = 8.0;
};
Segmenter threshold_segmenter(const ThresholdSegmenterOptions& opt = {});
Segmenter model_segmenter(const SlideModel& model);

struct PseudoOptions {
    Axis axis = Axis::Z;
    int slice_step = 1;
    int n_segments = 64;
    double compactness = 10.0;
    double mean_min = 20.0;
    FilterOptions filter;
    double nms_iou = 0.7;
};

// For every centre slice, variant and superpixel prompt (point and box),
// segments the central slice, keeps the best filtered hypothesis and
// deduplicates across variants and prompts with mask NMS. Every record has
// indicator (0,1,0).
std::vector<PseudoRecord> generate_pseudo_records(const Segmenter& segmenter, const Volume& volume,
                                                  const PseudoOptions& opt = {});

}  // namespace slideseg
