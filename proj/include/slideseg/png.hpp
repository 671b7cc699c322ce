#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace slideseg {

struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 1;  // 1 gray, 3 RGB
    std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

std::string encode_png(const PngImage& img);
PngImage decode_png(const std::string& bytes);  // throws CorruptData

}  // namespace slideseg
