#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace slideseg {

enum class Modality { CT, MRI, SYNTH };
enum class Axis { X, Y, Z };

std::string_view to_string(Modality m);
std::string_view to_string(Axis a);
Modality parse_modality(std::string_view s);  // throws ConfigError
Axis parse_axis(std::string_view s);          // throws InvalidInput

struct Spacing {
    double x = 1.0;
    double y = 1.0;
    double z = 1.0;
};

// Row-major 2D grid, `at(row, col)`.
template <class T>
struct Grid2 {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid2() = default;
    Grid2(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    T& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
    const T& at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
    std::size_t size() const { return data.size(); }
    bool operator==(const Grid2&) const = default;
};

using Image2D = Grid2<double>;
using Mask2D = Grid2<std::uint8_t>;

std::size_t count_foreground(const Mask2D& m);

// Dense scalar volume, x fastest: index = (z * ny + y) * nx + x.
class Volume {
public:
    Volume() = default;
    Volume(int nx, int ny, int nz, Spacing spacing = {}, Modality modality = Modality::SYNTH,
           std::string id = {});

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    int dim(Axis axis) const;
    const Spacing& spacing() const { return spacing_; }
    void set_spacing(Spacing s);
    Modality modality() const { return modality_; }
    void set_modality(Modality m) { modality_ = m; }
    const std::string& id() const { return id_; }
    void set_id(std::string id) { id_ = std::move(id); }

    float& at(int x, int y, int z) { return voxels_[index(x, y, z)]; }
    float at(int x, int y, int z) const { return voxels_[index(x, y, z)]; }
    std::vector<float>& voxels() { return voxels_; }
    const std::vector<float>& voxels() const { return voxels_; }

    // Slice perpendicular to `axis`. Rows/cols are (y,x) for Z, (z,x) for Y
    // and (z,y) for X.
    Image2D slice(Axis axis, int index) const;

private:
    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * ny_ + y) * nx_ + x;
    }

    int nx_ = 0, ny_ = 0, nz_ = 0;
    Spacing spacing_;
    Modality modality_ = Modality::SYNTH;
    std::string id_;
    std::vector<float> voxels_;
};

enum class LabelSource { GroundTruth, Pseudo, Predicted };
std::string_view to_string(LabelSource s);
LabelSource parse_label_source(std::string_view s);

struct InstanceInfo {
    std::string name;
    LabelSource source = LabelSource::GroundTruth;

    bool operator==(const InstanceInfo&) const = default;
};

// Instance label volume aligned with a Volume. Id 0 is background.
class VolumeMask {
public:
    VolumeMask() = default;
    VolumeMask(int nx, int ny, int nz);
    static VolumeMask like(const Volume& v) { return VolumeMask(v.nx(), v.ny(), v.nz()); }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    int dim(Axis axis) const;
    bool same_shape(const Volume& v) const { return nx_ == v.nx() && ny_ == v.ny() && nz_ == v.nz(); }

    std::uint32_t& at(int x, int y, int z) { return labels_[(static_cast<std::size_t>(z) * ny_ + y) * nx_ + x]; }
    std::uint32_t at(int x, int y, int z) const { return labels_[(static_cast<std::size_t>(z) * ny_ + y) * nx_ + x]; }
    std::vector<std::uint32_t>& labels() { return labels_; }
    const std::vector<std::uint32_t>& labels() const { return labels_; }

    std::map<std::uint32_t, InstanceInfo>& instances() { return instances_; }
    const std::map<std::uint32_t, InstanceInfo>& instances() const { return instances_; }

    // Ids present in the label array (excluding 0), ascending.
    std::vector<std::uint32_t> present_ids() const;

    // Binary slice of one instance (id) or of any foreground (id == 0).
    Mask2D slice(Axis axis, int index, std::uint32_t id = 0) const;
    // Writes `id` wherever `m` is set; other voxels untouched.
    void paint_slice(Axis axis, int index, const Mask2D& m, std::uint32_t id);
    // Binary foreground of one instance (or any, with id == 0), x fastest.
    std::vector<std::uint8_t> binary(std::uint32_t id = 0) const;

    bool operator==(const VolumeMask&) const = default;

private:
    int nx_ = 0, ny_ = 0, nz_ = 0;
    std::vector<std::uint32_t> labels_;
    std::map<std::uint32_t, InstanceInfo> instances_;
};

// Three adjacent slices centred on `center_index`; slice 1 (middle) carries
// the prompts. Pixels are channel-major: pixels[c][row][col].
struct SliceWindow {
    int height = 0;
    int width = 0;
    std::array<Image2D, 3> pixels;
    Axis axis = Axis::Z;
    int center_index = 1;
    std::optional<std::array<Mask2D, 3>> labels;
    std::array<std::uint8_t, 3> indicator{0, 0, 0};
};

// Three consecutive slices (index-1, index, index+1) without labels.
SliceWindow window_at(const Volume& volume, Axis axis, int center_index);

// Clamp to the modality's fixed range and map affinely to [0,255], rounding
// half away from zero. CT: [-200,400], MRI: [0,600]. SYNTH is already in
// display range and is only clamped. The result is tagged SYNTH.
Volume clip_and_normalize(const Volume& volume);

constexpr double kMinCentralAreaFraction = 0.0014;

// One window per (center, instance) whose central-slice area fraction is at
// least kMinCentralAreaFraction. Labels are that instance's binary mask on
// all three slices, indicator (1,1,1).
std::vector<SliceWindow> extract_windows(const Volume& volume, const VolumeMask& mask, Axis axis);

Image2D resize_bilinear(const Image2D& src, int height, int width);
Mask2D resize_nearest(const Mask2D& src, int height, int width);

// Bilinear pixels, nearest-neighbour labels, indicator unchanged.
SliceWindow resize_window(const SliceWindow& window, int height, int width);

}  // namespace slideseg
