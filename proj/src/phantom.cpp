#include "slideseg/phantom.hpp"

#include "slideseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace slideseg {

std::string_view to_string(PhantomKind k) {
    switch (k) {
        case PhantomKind::Sphere: return "sphere";
        case PhantomKind::Ellipsoid: return "ellipsoid";
        case PhantomKind::Tube: return "tube";
        case PhantomKind::TwoBlob: return "two_blob";
    }
    return "sphere";
}

PhantomKind parse_phantom_kind(std::string_view s) {
    if (s == "sphere") return PhantomKind::Sphere;
    if (s == "ellipsoid") return PhantomKind::Ellipsoid;
    if (s == "tube") return PhantomKind::Tube;
    if (s == "two_blob") return PhantomKind::TwoBlob;
    throw InvalidInput("unknown phantom kind: " + std::string(s));
}

namespace {

bool in_ellipsoid(double x, double y, double z, const std::array<double, 3>& c, const std::array<double, 3>& r) {
    const double dx = (x - c[0]) / r[0], dy = (y - c[1]) / r[1], dz = (z - c[2]) / r[2];
    return dx * dx + dy * dy + dz * dz <= 1.0;
}

void resolve_defaults(PhantomKind kind, const std::array<int, 3>& shape, PhantomParams& p) {
    const double m = *std::min_element(shape.begin(), shape.end());
    for (int a = 0; a < 3; ++a)
        if (p.center[a] < 0) p.center[a] = (shape[a] - 1) / 2.0;
    switch (kind) {
        case PhantomKind::Sphere:
            if (p.radii[0] <= 0) p.radii[0] = 0.28 * m;
            p.radii[1] = p.radii[2] = p.radii[0];
            break;
        case PhantomKind::Ellipsoid:
            if (p.radii[0] <= 0) p.radii = {0.34 * shape[0], 0.24 * shape[1], 0.28 * shape[2]};
            break;
        case PhantomKind::Tube:
            if (p.radii[0] <= 0) p.radii[0] = 0.15 * m;
            if (p.length <= 0) p.length = 0.6 * shape[static_cast<int>(p.axis == Axis::X ? 0 : p.axis == Axis::Y ? 1 : 2)];
            break;
        case PhantomKind::TwoBlob:
            if (p.radii[0] <= 0) p.radii[0] = 0.16 * m;
            p.radii[1] = p.radii[2] = p.radii[0];
            if (p.center2[0] < 0) {
                p.center2 = p.center;
                p.center[0] = 0.28 * (shape[0] - 1);
                p.center2[0] = 0.72 * (shape[0] - 1);
            }
            if (p.radius2 <= 0) p.radius2 = p.radii[0];
            break;
    }
}

}  // namespace

std::uint32_t Phantom::label_at(double x, double y, double z) const {
    const auto& p = params;
    switch (kind) {
        case PhantomKind::Sphere:
        case PhantomKind::Ellipsoid:
            return in_ellipsoid(x, y, z, p.center, p.radii) ? 1u : 0u;
        case PhantomKind::Tube: {
            const std::array<double, 3> v{x, y, z};
            const int a = p.axis == Axis::X ? 0 : p.axis == Axis::Y ? 1 : 2;
            const int u = (a + 1) % 3, w = (a + 2) % 3;
            const double du = v[u] - p.center[u], dw = v[w] - p.center[w];
            const bool radial = du * du + dw * dw <= p.radii[0] * p.radii[0];
            return radial && std::abs(v[a] - p.center[a]) <= p.length / 2.0 ? 1u : 0u;
        }
        case PhantomKind::TwoBlob:
            if (in_ellipsoid(x, y, z, p.center, p.radii)) return 1u;
            return in_ellipsoid(x, y, z, p.center2, {p.radius2, p.radius2, p.radius2}) ? 2u : 0u;
    }
    return 0u;
}

Phantom make_phantom(PhantomKind kind, std::array<int, 3> shape, PhantomParams params, std::uint64_t seed) {
    for (int s : shape)
        if (s < 16) throw InvalidInput("phantom shape must be at least 16 in every dimension");
    resolve_defaults(kind, shape, params);
    if (kind == PhantomKind::TwoBlob) {
        const double dx = params.center[0] - params.center2[0], dy = params.center[1] - params.center2[1],
                     dz = params.center[2] - params.center2[2];
        const double gap = params.radii[0] + params.radius2 + 1.5;
        if (dx * dx + dy * dy + dz * dz <= gap * gap) throw InvalidInput("two_blob spheres must be disjoint");
    }

    Phantom ph;
    ph.kind = kind;
    ph.params = params;
    ph.volume = Volume(shape[0], shape[1], shape[2], params.spacing, Modality::SYNTH, std::string(to_string(kind)));
    ph.mask = VolumeMask(shape[0], shape[1], shape[2]);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, params.noise_sigma > 0 ? params.noise_sigma : 1.0);
    std::array<int, 3> lo{shape[0], shape[1], shape[2]}, hi{-1, -1, -1};
    for (int z = 0; z < shape[2]; ++z)
        for (int y = 0; y < shape[1]; ++y)
            for (int x = 0; x < shape[0]; ++x) {
                const std::uint32_t id = ph.label_at(x, y, z);
                ph.mask.at(x, y, z) = id;
                if (id) {
                    const std::array<int, 3> v{x, y, z};
                    for (int a = 0; a < 3; ++a) {
                        lo[a] = std::min(lo[a], v[a]);
                        hi[a] = std::max(hi[a], v[a]);
                    }
                }
                const double base = id ? params.foreground : params.background;
                const double n = params.noise_sigma > 0 ? noise(rng) : 0.0;
                ph.volume.at(x, y, z) = static_cast<float>(base + n);
            }
    if (hi[0] < 0) throw InvalidInput("phantom region is empty");
    for (int a = 0; a < 3; ++a)
        if (hi[a] - lo[a] + 1 < 3) throw InvalidInput("phantom region spans fewer than 3 slices");
    ph.mask.instances()[1] = InstanceInfo{std::string(to_string(kind)), LabelSource::GroundTruth};
    if (kind == PhantomKind::TwoBlob) ph.mask.instances()[2] = InstanceInfo{"two_blob_2", LabelSource::GroundTruth};
    return ph;
}

PhantomParams random_phantom_params(PhantomKind kind, std::array<int, 3> shape, std::mt19937_64& rng, int margin) {
    auto uni = [&rng](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    const double m = *std::min_element(shape.begin(), shape.end());
    PhantomParams p;
    auto place = [&](const std::array<double, 3>& r) {
        std::array<double, 3> c{};
        for (int a = 0; a < 3; ++a) {
            const double lo = margin + r[a], hi = shape[a] - 1 - margin - r[a];
            if (hi < lo) throw InvalidInput("phantom shape too small for the requested margin");
            c[a] = uni(lo, hi);
        }
        return c;
    };
    switch (kind) {
        case PhantomKind::Sphere: {
            const double r = uni(0.18 * m, 0.32 * m);
            p.radii = {r, r, r};
            p.center = place(p.radii);
            break;
        }
        case PhantomKind::Ellipsoid:
            p.radii = {uni(0.15 * m, 0.36 * m), uni(0.15 * m, 0.36 * m), uni(0.15 * m, 0.36 * m)};
            p.center = place(p.radii);
            break;
        case PhantomKind::Tube: {
            p.axis = static_cast<Axis>(std::uniform_int_distribution<int>(0, 2)(rng));
            const int a = p.axis == Axis::X ? 0 : p.axis == Axis::Y ? 1 : 2;
            const double r = uni(0.1 * m, 0.18 * m);
            p.length = uni(0.4 * shape[a], 0.6 * shape[a]);
            std::array<double, 3> ext{r, r, r};
            ext[a] = p.length / 2.0;
            p.radii = {r, r, r};
            p.center = place(ext);
            break;
        }
        case PhantomKind::TwoBlob: {
            const double r = uni(0.12 * m, 0.17 * m);
            p.radii = {r, r, r};
            p.radius2 = r;
            const double y = uni(margin + r, shape[1] - 1 - margin - r), z = uni(margin + r, shape[2] - 1 - margin - r);
            p.center = {margin + r, y, z};
            const double x2 = shape[0] - 1 - margin - r, ylo = margin + r, yhi = shape[1] - 1 - margin - r;
            const double gap = 2 * r + 1.5, dx = x2 - p.center[0];
            p.center2 = {x2, uni(ylo, yhi), z};
            for (int tries = 0; tries < 64 && dx * dx + (p.center2[1] - y) * (p.center2[1] - y) <= gap * gap; ++tries)
                p.center2[1] = uni(ylo, yhi);
            if (dx * dx + (p.center2[1] - y) * (p.center2[1] - y) <= gap * gap) {
                p.center[1] = ylo;
                p.center2[1] = yhi;
                if (dx * dx + (yhi - ylo) * (yhi - ylo) <= gap * gap)
                    throw InvalidInput("phantom shape too small for two separate blobs");
            }
            break;
        }
    }
    return p;
}

}  // namespace slideseg
