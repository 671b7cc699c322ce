#pragma once

#include "slideseg/volume.hpp"

#include <array>

namespace slideseg {

// Decoder output for one window: logits[i][j] is slice i under hypothesis j
// (H x W each), iou[j] the predicted IoU of hypothesis j in [0,1].
struct DecoderOutputs {
    int height = 0;
    int width = 0;
    std::array<std::array<Image2D, 3>, 3> logits;
    std::array<double, 3> iou{0, 0, 0};
};

// Logit cutoff used to binarize masks everywhere.
constexpr double kMaskThreshold = 0.0;

}  // namespace slideseg
