#pragma once

#include "slideseg/volume.hpp"

#include <cstdint>
#include <vector>

namespace slideseg {

// 2|p & g| / (|p| + |g|), 1 when both are empty. Nonzero bytes count as
// foreground. Throws InvalidInput on a size mismatch.
double dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);
double dice(const Mask2D& pred, const Mask2D& gt);
// Binary foreground of one instance id (0: any) in each mask.
double dice(const VolumeMask& pred, const VolumeMask& gt, std::uint32_t pred_id = 0, std::uint32_t gt_id = 0);

// |p & g| / |p | g|, 1 when both are empty.
double iou(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);
double iou(const Mask2D& pred, const Mask2D& gt);

}  // namespace slideseg
