#pragma once

// Pseudo-label record file, one per volume:
//   {"version":1,"volume_id":..., "records":[{"axis","center","gt":{rle},
//    "indicator":[0,1,0],"provenance":{"variant_k","prompt_type","score"}}]}

#include "slideseg/loss.hpp"
#include "slideseg/rle.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace slideseg {

struct PseudoRecord {
    std::string volume_id;
    Axis axis = Axis::Z;
    int center = 1;
    Mask2D gt;  // central slice only
    Indicator indicator{0, 1, 0};
    double variant_k = 0.0;
    std::string prompt_type;  // "point" or "box"
    double score = 0.0;
};

nlohmann::json records_to_json(const std::string& volume_id, const std::vector<PseudoRecord>& records);
std::vector<PseudoRecord> records_from_json(const nlohmann::json& j);  // throws CorruptData
void save_records(const std::string& volume_id, const std::vector<PseudoRecord>& records,
                  const std::filesystem::path& file);
std::vector<PseudoRecord> load_records(const std::filesystem::path& file);

// Window of the (already normalized) volume at the record's centre with
// the record mask on the central channel and empty neighbours.
SliceWindow record_window(const Volume& volume, const PseudoRecord& record);

}  // namespace slideseg
