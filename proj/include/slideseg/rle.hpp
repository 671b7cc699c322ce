#pragma once

#include "slideseg/volume.hpp"

#include <cstdint>
#include <vector>

#include <json.hpp>

namespace slideseg {

// Alternating background/foreground run lengths over a row-major binary
// mask. The first run is background and may be 0.
struct RleMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint32_t> runs;

    bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const Mask2D& mask);
// Throws CorruptData when the runs do not sum to height * width.
Mask2D rle_decode(const RleMask& rle);

// {"height": H, "width": W, "counts": [...]}
nlohmann::json to_json(const RleMask& rle);
RleMask rle_from_json(const nlohmann::json& j);

}  // namespace slideseg
