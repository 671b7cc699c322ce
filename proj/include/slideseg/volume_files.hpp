#pragma once

// On-disk and over-the-wire forms of volumes and masks.
//
//   <id>.vol.json      {"version":1,"id","shape":[nx,ny,nz],"spacing":[sx,sy,sz],
//                       "modality","dtype","byte_order":"little"}
//   <id>.vol.raw       voxels, x fastest, little-endian, dtype from sidecar
//   <id>.mask.rle.json {"version":1,"shape":[nx,ny,nz],"instances":[{"id","name",
//                       "source","rle":{"height":ny*nz,"width":nx,"counts":[...]}}]}
//
// The upload container is "SLSGVOL1", a u32 little-endian header length, the
// sidecar JSON, then the raw voxel bytes.

#include "slideseg/volume.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace slideseg {

// dtype names accepted on read: uint8, int16, uint16, int32, float32, float64.
// Writes always use float32.
void save_volume(const Volume& v, const std::filesystem::path& dir);
Volume load_volume(const std::filesystem::path& sidecar_json);

nlohmann::json mask_to_json(const VolumeMask& m);
VolumeMask mask_from_json(const nlohmann::json& j);
void save_mask(const VolumeMask& m, const std::filesystem::path& file);
VolumeMask load_mask(const std::filesystem::path& file);

std::string encode_container(const Volume& v);
// Throws CorruptData on a bad magic, header or byte count.
Volume decode_container(const std::string& bytes);

}  // namespace slideseg
