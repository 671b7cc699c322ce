#include "slideseg/rle.hpp"

#include "slideseg/error.hpp"

namespace slideseg {

RleMask rle_encode(const Mask2D& mask) {
    RleMask rle{mask.height, mask.width, {}};
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (auto v : mask.data) {
        const std::uint8_t bit = v != 0;
        if (bit != current) {
            rle.runs.push_back(run);
            run = 0;
            current = bit;
        }
        ++run;
    }
    rle.runs.push_back(run);
    return rle;
}

Mask2D rle_decode(const RleMask& rle) {
    if (rle.height < 0 || rle.width < 0) throw CorruptData("negative RLE dimensions");
    const std::size_t total = static_cast<std::size_t>(rle.height) * rle.width;
    std::size_t sum = 0;
    for (auto r : rle.runs) sum += r;
    if (sum != total) throw CorruptData("RLE run sum " + std::to_string(sum) + " != " + std::to_string(total));
    Mask2D out(rle.height, rle.width);
    std::size_t pos = 0;
    std::uint8_t value = 0;
    for (auto r : rle.runs) {
        std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(pos), r, value);
        pos += r;
        value ^= 1;
    }
    return out;
}

nlohmann::json to_json(const RleMask& rle) {
    return {{"height", rle.height}, {"width", rle.width}, {"counts", rle.runs}};
}

RleMask rle_from_json(const nlohmann::json& j) {
    try {
        RleMask r;
        r.height = j.at("height").get<int>();
        r.width = j.at("width").get<int>();
        r.runs = j.at("counts").get<std::vector<std::uint32_t>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptData(std::string("malformed RLE json: ") + e.what());
    }
}

}  // namespace slideseg
