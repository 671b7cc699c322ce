#include "slideseg/records.hpp"

#include "slideseg/error.hpp"

#include <fstream>
#include <sstream>

namespace slideseg {

nlohmann::json records_to_json(const std::string& volume_id, const std::vector<PseudoRecord>& records) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records)
        arr.push_back({{"axis", std::string(to_string(r.axis))},
                       {"center", r.center},
                       {"gt", to_json(rle_encode(r.gt))},
                       {"indicator", r.indicator},
                       {"provenance", {{"variant_k", r.variant_k}, {"prompt_type", r.prompt_type}, {"score", r.score}}}});
    return {{"version", 1}, {"volume_id", volume_id}, {"records", arr}};
}

std::vector<PseudoRecord> records_from_json(const nlohmann::json& j) {
    std::vector<PseudoRecord> out;
    try {
        if (j.at("version").get<int>() != 1) throw CorruptData("unsupported record file version");
        const std::string vid = j.at("volume_id").get<std::string>();
        for (const auto& e : j.at("records")) {
            PseudoRecord r;
            r.volume_id = vid;
            r.axis = parse_axis(e.at("axis").get<std::string>());
            r.center = e.at("center").get<int>();
            r.gt = rle_decode(rle_from_json(e.at("gt")));
            r.indicator = e.at("indicator").get<Indicator>();
            const auto& p = e.at("provenance");
            r.variant_k = p.at("variant_k").get<double>();
            r.prompt_type = p.at("prompt_type").get<std::string>();
            r.score = p.at("score").get<double>();
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptData(std::string("bad record file: ") + e.what());
    } catch (const InvalidInput& e) {
        throw CorruptData(std::string("bad record file: ") + e.what());
    }
    return out;
}

void save_records(const std::string& volume_id, const std::vector<PseudoRecord>& records,
                  const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + file.string());
    out << records_to_json(volume_id, records).dump() << '\n';
}

std::vector<PseudoRecord> load_records(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InvalidInput("cannot read " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw CorruptData(std::string("bad record file: ") + e.what());
    }
    return records_from_json(j);
}

SliceWindow record_window(const Volume& volume, const PseudoRecord& record) {
    SliceWindow w = window_at(volume, record.axis, record.center);
    if (record.gt.height != w.height || record.gt.width != w.width) throw InvalidInput("record mask does not fit the volume");
    std::array<Mask2D, 3> labels{Mask2D(w.height, w.width), record.gt, Mask2D(w.height, w.width)};
    w.labels = labels;
    w.indicator = record.indicator;
    return w;
}

}  // namespace slideseg
