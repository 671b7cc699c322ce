#pragma once

#include "slideseg/volume.hpp"

#include <array>
#include <cstdint>

namespace slideseg {

using Indicator = std::array<std::uint8_t, 3>;
using SliceStack = std::array<Image2D, 3>;  // one H x W plane per slice
using MaskStack = std::array<Mask2D, 3>;

struct LossWeights {
    double ce = 20.0;   // lambda_1
    double dice = 1.0;  // lambda_2
};

constexpr double kDiceEps = 1e-6;

int included_slices(const Indicator& ind);

// Soft Dice 1 - (2 sum(p g) + eps) / (sum p + sum g + eps), averaged over
// slices with indicator 1. Returns 0 when no slice is included.
double dice_loss(const SliceStack& probs, const MaskStack& gt, const Indicator& ind);

// Mean binary cross-entropy on logits for one slice.
double bce_with_logits(const Image2D& logits, const Mask2D& gt);

struct LossAndGrad {
    double value = 0.0;
    SliceStack grad;  // d value / d logits; zero planes for excluded slices
};

// lambda_1 * CE + lambda_2 * Dice per slice, averaged over slices with
// indicator 1. Throws InvalidInput on an all-zero indicator.
double seg_loss(const SliceStack& logits, const MaskStack& gt, const Indicator& ind, const LossWeights& w = {});
LossAndGrad seg_loss_with_grad(const SliceStack& logits, const MaskStack& gt, const Indicator& ind,
                               const LossWeights& w = {});

// IoU of the logits binarized at 0 against gt, over all three slices. An
// empty union counts as IoU 1.
double mask_iou(const SliceStack& logits, const MaskStack& gt);

// (U - IoU)^2 when the indicator is (1,1,1); exactly 0 otherwise.
double iou_loss(double predicted_iou, const SliceStack& logits, const MaskStack& gt, const Indicator& ind);
double iou_loss_grad(double predicted_iou, const SliceStack& logits, const MaskStack& gt, const Indicator& ind);

// Index (0-based) of the smallest loss, lowest index on ties. Throws
// TrainingFault if any value is not finite.
int select_head(const std::array<double, 3>& losses);

}  // namespace slideseg
