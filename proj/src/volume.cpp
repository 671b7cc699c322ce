#include "slideseg/volume.hpp"

#include "slideseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace slideseg {

std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::CT: return "CT";
        case Modality::MRI: return "MRI";
        case Modality::SYNTH: return "SYNTH";
    }
    throw ConfigError("unknown modality");
}

std::string_view to_string(Axis a) {
    switch (a) {
        case Axis::X: return "x";
        case Axis::Y: return "y";
        case Axis::Z: return "z";
    }
    throw InvalidInput("unknown axis");
}

Modality parse_modality(std::string_view s) {
    if (s == "CT" || s == "ct") return Modality::CT;
    if (s == "MRI" || s == "mri") return Modality::MRI;
    if (s == "SYNTH" || s == "synth") return Modality::SYNTH;
    throw ConfigError("unknown modality: " + std::string(s));
}

Axis parse_axis(std::string_view s) {
    if (s == "x" || s == "X") return Axis::X;
    if (s == "y" || s == "Y") return Axis::Y;
    if (s == "z" || s == "Z") return Axis::Z;
    throw InvalidInput("unknown axis: " + std::string(s));
}

std::string_view to_string(LabelSource s) {
    switch (s) {
        case LabelSource::GroundTruth: return "ground-truth";
        case LabelSource::Pseudo: return "pseudo";
        case LabelSource::Predicted: return "predicted";
    }
    return "ground-truth";
}

LabelSource parse_label_source(std::string_view s) {
    if (s == "ground-truth") return LabelSource::GroundTruth;
    if (s == "pseudo") return LabelSource::Pseudo;
    if (s == "predicted") return LabelSource::Predicted;
    throw CorruptData("unknown label source: " + std::string(s));
}

std::size_t count_foreground(const Mask2D& m) {
    return static_cast<std::size_t>(std::count_if(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v != 0; }));
}

Volume::Volume(int nx, int ny, int nz, Spacing spacing, Modality modality, std::string id)
    : nx_(nx), ny_(ny), nz_(nz), modality_(modality), id_(std::move(id)) {
    if (nx < 3 || ny < 3 || nz < 3) throw InvalidInput("volume dimensions must all be >= 3");
    set_spacing(spacing);
    voxels_.assign(static_cast<std::size_t>(nx) * ny * nz, 0.0f);
}

void Volume::set_spacing(Spacing s) {
    if (!(s.x > 0 && s.y > 0 && s.z > 0)) throw InvalidInput("spacing must be strictly positive");
    spacing_ = s;
}

int Volume::dim(Axis axis) const {
    switch (axis) {
        case Axis::X: return nx_;
        case Axis::Y: return ny_;
        case Axis::Z: return nz_;
    }
    return 0;
}

namespace {

// (height, width) of a slice perpendicular to axis.
std::pair<int, int> slice_shape(Axis axis, int nx, int ny, int nz) {
    switch (axis) {
        case Axis::Z: return {ny, nx};
        case Axis::Y: return {nz, nx};
        case Axis::X: return {nz, ny};
    }
    return {0, 0};
}

// Voxel coordinates of (row, col) on slice `index`.
inline void slice_to_voxel(Axis axis, int index, int row, int col, int& x, int& y, int& z) {
    switch (axis) {
        case Axis::Z: x = col, y = row, z = index; break;
        case Axis::Y: x = col, y = index, z = row; break;
        case Axis::X: x = index, y = col, z = row; break;
    }
}

}  // namespace

Image2D Volume::slice(Axis axis, int index) const {
    if (index < 0 || index >= dim(axis)) throw InvalidInput("slice index out of range");
    auto [h, w] = slice_shape(axis, nx_, ny_, nz_);
    Image2D out(h, w);
    int x = 0, y = 0, z = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            slice_to_voxel(axis, index, r, c, x, y, z);
            out.at(r, c) = at(x, y, z);
        }
    return out;
}

VolumeMask::VolumeMask(int nx, int ny, int nz)
    : nx_(nx), ny_(ny), nz_(nz), labels_(static_cast<std::size_t>(nx) * ny * nz, 0u) {
    if (nx < 1 || ny < 1 || nz < 1) throw InvalidInput("mask dimensions must be positive");
}

int VolumeMask::dim(Axis axis) const {
    switch (axis) {
        case Axis::X: return nx_;
        case Axis::Y: return ny_;
        case Axis::Z: return nz_;
    }
    return 0;
}

std::vector<std::uint32_t> VolumeMask::present_ids() const {
    std::set<std::uint32_t> ids;
    for (auto v : labels_)
        if (v != 0) ids.insert(v);
    return {ids.begin(), ids.end()};
}

Mask2D VolumeMask::slice(Axis axis, int index, std::uint32_t id) const {
    if (index < 0 || index >= dim(axis)) throw InvalidInput("slice index out of range");
    auto [h, w] = slice_shape(axis, nx_, ny_, nz_);
    Mask2D out(h, w);
    int x = 0, y = 0, z = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            slice_to_voxel(axis, index, r, c, x, y, z);
            const auto v = at(x, y, z);
            out.at(r, c) = id == 0 ? (v != 0) : (v == id);
        }
    return out;
}

void VolumeMask::paint_slice(Axis axis, int index, const Mask2D& m, std::uint32_t id) {
    auto [h, w] = slice_shape(axis, nx_, ny_, nz_);
    if (index < 0 || index >= dim(axis)) throw InvalidInput("slice index out of range");
    if (m.height != h || m.width != w) throw InvalidInput("slice mask shape mismatch");
    int x = 0, y = 0, z = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!m.at(r, c)) continue;
            slice_to_voxel(axis, index, r, c, x, y, z);
            at(x, y, z) = id;
        }
}

std::vector<std::uint8_t> VolumeMask::binary(std::uint32_t id) const {
    std::vector<std::uint8_t> out(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i)
        out[i] = id == 0 ? (labels_[i] != 0) : (labels_[i] == id);
    return out;
}

SliceWindow window_at(const Volume& volume, Axis axis, int center_index) {
    const int d = volume.dim(axis);
    if (d < 3) throw InvalidInput("axis dimension < 3");
    if (center_index < 1 || center_index > d - 2) throw InvalidInput("window center out of range");
    SliceWindow w;
    w.axis = axis;
    w.center_index = center_index;
    for (int i = 0; i < 3; ++i) w.pixels[i] = volume.slice(axis, center_index - 1 + i);
    w.height = w.pixels[0].height;
    w.width = w.pixels[0].width;
    return w;
}

Volume clip_and_normalize(const Volume& volume) {
    double lo = 0.0, hi = 255.0;
    switch (volume.modality()) {
        case Modality::CT: lo = -200.0, hi = 400.0; break;
        case Modality::MRI: lo = 0.0, hi = 600.0; break;
        case Modality::SYNTH: lo = 0.0, hi = 255.0; break;
        default: throw ConfigError("unknown modality");
    }
    Volume out = volume;
    out.set_modality(Modality::SYNTH);
    const double scale = 255.0 / (hi - lo);
    for (auto& v : out.voxels()) {
        const double clamped = std::clamp(static_cast<double>(v), lo, hi);
        v = static_cast<float>(std::round((clamped - lo) * scale));
    }
    return out;
}

std::vector<SliceWindow> extract_windows(const Volume& volume, const VolumeMask& mask, Axis axis) {
    if (!mask.same_shape(volume)) throw InvalidInput("mask shape does not match volume");
    const int d = volume.dim(axis);
    if (d < 3) throw InvalidInput("axis dimension < 3");
    const auto ids = mask.present_ids();
    std::vector<SliceWindow> out;
    for (int c = 1; c <= d - 2; ++c) {
        std::vector<std::uint32_t> keep;
        for (auto id : ids) {
            const Mask2D central = mask.slice(axis, c, id);
            const double frac = static_cast<double>(count_foreground(central)) / static_cast<double>(central.size());
            if (frac >= kMinCentralAreaFraction) keep.push_back(id);
        }
        if (keep.empty()) continue;
        const SliceWindow base = window_at(volume, axis, c);
        for (auto id : keep) {
            SliceWindow w = base;
            std::array<Mask2D, 3> labels;
            for (int i = 0; i < 3; ++i) labels[i] = mask.slice(axis, c - 1 + i, id);
            w.labels = std::move(labels);
            w.indicator = {1, 1, 1};
            out.push_back(std::move(w));
        }
    }
    return out;
}

Image2D resize_bilinear(const Image2D& src, int height, int width) {
    if (src.height == height && src.width == width) return src;
    Image2D out(height, width);
    const double sy = static_cast<double>(src.height) / height;
    const double sx = static_cast<double>(src.width) / width;
    for (int r = 0; r < height; ++r) {
        double fy = (r + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int c = 0; c < width; ++c) {
            double fx = (c + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            const double top = src.at(y0, x0) * (1 - wx) + src.at(y0, x1) * wx;
            const double bot = src.at(y1, x0) * (1 - wx) + src.at(y1, x1) * wx;
            out.at(r, c) = top * (1 - wy) + bot * wy;
        }
    }
    return out;
}

Mask2D resize_nearest(const Mask2D& src, int height, int width) {
    if (src.height == height && src.width == width) return src;
    Mask2D out(height, width);
    for (int r = 0; r < height; ++r) {
        const int sr = std::min(src.height - 1, static_cast<int>(static_cast<long long>(r) * src.height / height));
        for (int c = 0; c < width; ++c) {
            const int sc = std::min(src.width - 1, static_cast<int>(static_cast<long long>(c) * src.width / width));
            out.at(r, c) = src.at(sr, sc);
        }
    }
    return out;
}

SliceWindow resize_window(const SliceWindow& window, int height, int width) {
    if (height < 16 || width < 16) throw InvalidInput("resize target must be at least 16x16");
    SliceWindow out = window;
    out.height = height;
    out.width = width;
    for (int i = 0; i < 3; ++i) out.pixels[i] = resize_bilinear(window.pixels[i], height, width);
    if (window.labels) {
        for (int i = 0; i < 3; ++i) (*out.labels)[i] = resize_nearest((*window.labels)[i], height, width);
    }
    return out;
}

}  // namespace slideseg
