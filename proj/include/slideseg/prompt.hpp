#pragma once

#include "slideseg/postprocess.hpp"
#include "slideseg/volume.hpp"

#include <array>
#include <optional>
#include <vector>

namespace slideseg {

struct PointPrompt {
    int x = 0;
    int y = 0;
    int label = 1;  // 1 foreground, 0 background

    bool operator==(const PointPrompt&) const = default;
};

// Prompts refer to the middle slice of a window, in pixel coordinates.
struct Prompt {
    std::vector<PointPrompt> points;
    std::vector<BBox> boxes;
    std::optional<std::array<Mask2D, 3>> mask;

    static Prompt point(int x, int y, int label = 1) { return Prompt{{PointPrompt{x, y, label}}, {}, std::nullopt}; }
    static Prompt box(const BBox& b) { return Prompt{{}, {b}, std::nullopt}; }
    bool empty() const { return points.empty() && boxes.empty() && !mask; }
};

// Maps prompt coordinates from a (from_h x from_w) image to (to_h x to_w),
// using pixel centres.
Prompt rescale_prompt(const Prompt& p, int from_h, int from_w, int to_h, int to_w);

}  // namespace slideseg
