#pragma once

// Checkpoint layout (little-endian):
//   "SLSGCKPT" | u32 format version | u64 header length | header JSON |
//   float64 payload for every parameter, then every buffer, in header order.
// Header: {"version", "config", "params":[{"name","group","rows","cols"}],
//          "buffers":[{"name","rows","cols"}]}

#include "slideseg/model.hpp"

#include <filesystem>
#include <string>

namespace slideseg {

constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const SlideModel& model);
SlideModel deserialize_checkpoint(const std::string& bytes);  // throws CorruptData / ConfigError

void save_checkpoint(const SlideModel& model, const std::filesystem::path& file);
SlideModel load_checkpoint(const std::filesystem::path& file);

}  // namespace slideseg
