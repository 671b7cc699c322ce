#pragma once

#include "slideseg/volume.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string_view>

namespace slideseg {

enum class PhantomKind { Sphere, Ellipsoid, Tube, TwoBlob };
std::string_view to_string(PhantomKind k);
PhantomKind parse_phantom_kind(std::string_view s);  // throws InvalidInput

// Geometry in voxel units; zero radii and negative centres are replaced by
// shape-derived defaults in make_phantom.
struct PhantomParams {
    std::array<double, 3> center{-1, -1, -1};  // x, y, z
    std::array<double, 3> radii{0, 0, 0};      // ellipsoid semi-axes; sphere uses radii[0]
    // tube: radius radii[0] around an axis-parallel line through center,
    // spanning `length` voxels along `axis`.
    Axis axis = Axis::Z;
    double length = 0;
    // two_blob: a second sphere
    std::array<double, 3> center2{-1, -1, -1};
    double radius2 = 0;

    double background = 40.0;
    double foreground = 180.0;
    double noise_sigma = 10.0;
    Spacing spacing;
};

struct Phantom {
    PhantomKind kind = PhantomKind::Sphere;
    PhantomParams params;  // with defaults resolved
    Volume volume;
    VolumeMask mask;       // instance 1 (and 2 for two_blob)

    // Analytic membership at a voxel centre: 0 outside, else instance id.
    std::uint32_t label_at(double x, double y, double z) const;
};

// Deterministic in (kind, shape, params, seed). Every dimension must be at
// least 16; the region must be nonempty and span at least 3 slices along
// every axis. Throws InvalidInput otherwise.
Phantom make_phantom(PhantomKind kind, std::array<int, 3> shape, PhantomParams params, std::uint64_t seed);

// Random geometry for a phantom of the given kind that keeps at least
// `margin` voxels between the region and every face of the volume.
PhantomParams random_phantom_params(PhantomKind kind, std::array<int, 3> shape, std::mt19937_64& rng, int margin = 3);

}  // namespace slideseg
