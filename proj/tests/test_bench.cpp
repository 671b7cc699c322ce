#include "slideseg/dataset.hpp"
#include "slideseg/error.hpp"
#include "slideseg/harness.hpp"
#include "slideseg/metrics.hpp"
#include "slideseg/phantom.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace slideseg;
using namespace slideseg::testing;

namespace {

VolumeMask random_mask3(std::mt19937_64& rng, double p) {
    std::bernoulli_distribution d(p);
    VolumeMask m(8, 8, 8);
    for (auto& x : m.labels()) x = d(rng) ? 1 : 0;
    return m;
}

}  // namespace

TEST(Phantom, SphereVolumeMatchesAnalytic) {
    for (double r : {8.0, 9.5, 11.0}) {
        PhantomParams p;
        p.center = {24.3, 23.7, 24.1};
        p.radii = {r, r, r};
        const Phantom ph = make_phantom(PhantomKind::Sphere, {48, 48, 48}, p, 1);
        const double analytic = 4.0 / 3.0 * std::numbers::pi * r * r * r;
        std::size_t n = 0;
        for (auto l : ph.mask.labels()) n += l == 1;
        const double voxels = static_cast<double>(n);
        EXPECT_LE(std::abs(voxels - analytic) / analytic, 0.05) << "r=" << r;
    }
}

TEST(Phantom, DeterministicAndAnalyticMembership) {
    std::mt19937_64 rng(2);
    for (PhantomKind k : {PhantomKind::Sphere, PhantomKind::Ellipsoid, PhantomKind::Tube, PhantomKind::TwoBlob}) {
        const auto params = random_phantom_params(k, {24, 28, 32}, rng);
        const Phantom a = make_phantom(k, {24, 28, 32}, params, 5);
        const Phantom b = make_phantom(k, {24, 28, 32}, params, 5);
        EXPECT_EQ(a.volume.voxels(), b.volume.voxels());
        EXPECT_EQ(a.mask, b.mask);
        EXPECT_NE(make_phantom(k, {24, 28, 32}, params, 6).volume.voxels(), a.volume.voxels());
        for (int z = 0; z < 32; z += 3)
            for (int y = 0; y < 28; y += 2)
                for (int x = 0; x < 24; ++x) EXPECT_EQ(a.mask.at(x, y, z), a.label_at(x, y, z));
        for (Axis ax : {Axis::X, Axis::Y, Axis::Z}) {
            int touched = 0;
            for (int i = 0; i < a.mask.dim(ax); ++i) touched += count_foreground(a.mask.slice(ax, i)) > 0;
            EXPECT_GE(touched, 3);
        }
    }
}

TEST(Phantom, TwoBlobHasTwoComponentsAndBadParamsThrow) {
    PhantomParams p;
    p.center = {8, 8, 12};
    p.radii = {5, 5, 5};
    p.center2 = {18, 18, 12};
    p.radius2 = 4;
    const Phantom ph = make_phantom(PhantomKind::TwoBlob, {28, 28, 24}, p, 1);
    EXPECT_EQ(ph.mask.present_ids(), (std::vector<std::uint32_t>{1, 2}));
    EXPECT_EQ(connected_components(ph.mask.slice(Axis::Z, 12, 0)).count, 2);

    PhantomParams tiny;
    tiny.center = {8, 8, 8};
    tiny.radii = {0.6, 0.6, 0.6};
    EXPECT_THROW(make_phantom(PhantomKind::Sphere, {16, 16, 16}, tiny, 1), InvalidInput);
    EXPECT_THROW(make_phantom(PhantomKind::Sphere, {12, 16, 16}, {}, 1), InvalidInput);
    PhantomParams overlap = p;
    overlap.center2 = {9, 9, 12};
    EXPECT_THROW(make_phantom(PhantomKind::TwoBlob, {28, 28, 24}, overlap, 1), InvalidInput);
}

TEST(Phantom, IntensityDefaults) {
    PhantomParams p;
    p.noise_sigma = 0;
    const Phantom ph = make_phantom(PhantomKind::Sphere, {20, 20, 20}, p, 1);
    EXPECT_EQ(ph.volume.at(0, 0, 0), 40.0f);
    EXPECT_EQ(ph.volume.at(10, 10, 10), 180.0f);
}

TEST(Dice, Examples) {
    std::vector<std::uint8_t> p(10, 0), g(10, 0);
    for (int i = 0; i < 6; ++i) p[static_cast<std::size_t>(i)] = 1;
    for (int i = 3; i < 7; ++i) g[static_cast<std::size_t>(i)] = 1;
    EXPECT_DOUBLE_EQ(dice(p, g), 0.6);
    EXPECT_DOUBLE_EQ(iou(p, g), 3.0 / 7.0);
    EXPECT_DOUBLE_EQ(dice(p, p), 1.0);
    std::vector<std::uint8_t> z(10, 0), q(10, 0);
    q[9] = 1;
    EXPECT_DOUBLE_EQ(dice(z, z), 1.0);
    EXPECT_DOUBLE_EQ(dice(p, q), 0.0);
    EXPECT_THROW(dice(p, std::vector<std::uint8_t>(9)), InvalidInput);
}

TEST(Dice, ExactAgainstCountingOracleOn8CubedMasks) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 500; ++t) {
        const auto a = random_mask3(rng, 0.05 + 0.9 * (rng() % 100) / 100.0);
        const auto b = random_mask3(rng, 0.05 + 0.9 * (rng() % 100) / 100.0);
        long inter = 0, na = 0, nb = 0, uni = 0;
        for (int z = 0; z < 8; ++z)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const bool pa = a.at(x, y, z) == 1, pb = b.at(x, y, z) == 1;
                    inter += pa && pb;
                    na += pa;
                    nb += pb;
                    uni += pa || pb;
                }
        const double want_d = na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
        const double want_i = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        EXPECT_EQ(dice(a, b, 1, 1), want_d);
        EXPECT_EQ(dice(b, a, 1, 1), want_d);
        EXPECT_EQ(iou(a.binary(1), b.binary(1)), want_i);
        EXPECT_EQ(dice(a, a, 1, 1), 1.0);
    }
}

TEST(PromptEfficiency, Examples) {
    EXPECT_EQ(prompt_efficiency(std::vector<ImageResult>(1000, {1, 1.0})), 1000);
    EXPECT_EQ(prompt_efficiency(std::vector<ImageResult>(1000, {1, 0.5})), 0);
    EXPECT_EQ(prompt_efficiency(std::vector<ImageResult>(1000, {5, 0.95})), 200);
    // strict threshold and in-order consumption
    EXPECT_EQ(prompt_efficiency({{400, 0.95}, {400, 0.9}, {400, 0.99}}), 1);
    EXPECT_THROW(prompt_efficiency({{0, 1.0}}), InvalidInput);
    EXPECT_EQ(prompt_efficiency_cycled({{1, 1.0}, {1, 0.5}}), 500);
    EXPECT_EQ(prompt_efficiency_cycled({{20, 1.0}}), 50);
    EXPECT_EQ(prompt_efficiency_cycled({}), 0);
}

TEST(ResampleZ, DepthSpacingAndIdentity) {
    const auto cases = make_test_cases(1, 4, {20, 20, 64});
    const EvalCase& c = cases[0];
    const EvalCase half = resample_z(c, 2.0);
    EXPECT_EQ(half.volume.nz(), 32);
    EXPECT_EQ(half.gt.nz(), 32);
    EXPECT_DOUBLE_EQ(half.volume.spacing().z, c.volume.spacing().z * 2.0);
    const EvalCase same = resample_z(c, 1.0);
    EXPECT_EQ(same.volume.voxels(), c.volume.voxels());
    EXPECT_EQ(same.gt, c.gt);
    EXPECT_EQ(resample_z(c, 3.0).volume.nz(), 21);
    EXPECT_THROW(resample_z(c, 30.0), InvalidInput);
    EXPECT_THROW(resample_z(c, 0.0), InvalidInput);
}

TEST(ResampleZ, NearestLabelsAndRoundTrip) {
    const auto cases = make_test_cases(4, 5, {24, 24, 32});
    for (const auto& c : cases)
        for (double r : {1.5, 2.0, 4.0}) {
            const EvalCase down = resample_z(c, r);
            const int nz = down.gt.nz();
            ASSERT_EQ(nz, static_cast<int>(std::lround(32 / r)));
            // label of slice k comes from the source slice containing its centre
            for (int k = 0; k < nz; ++k) {
                const double centre = (k + 0.5) * 32.0 / nz;
                const int src = std::min(31, static_cast<int>(centre));
                ASSERT_EQ(down.gt.slice(Axis::Z, k), c.gt.slice(Axis::Z, src)) << "ratio " << r << " slice " << k;
            }
            if (r <= 2.0) {
                const EvalCase back = resample_z(down, 1.0 / r);
                ASSERT_EQ(back.gt.nz(), 32);
                EXPECT_GE(dice(back.gt, c.gt, 1, 1), 0.85) << "ratio " << r;
            }
        }
}

TEST(ResampleZ, LinearIntensityInterpolation) {
    EvalCase c;
    c.volume = Volume(3, 3, 4);
    c.gt = VolumeMask(3, 3, 4);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) c.volume.at(x, y, z) = static_cast<float>(10 * z);
    // depth 4 -> 3; sample k sits at (k + 0.5) * 4/3 - 0.5 in source index space
    const EvalCase r = resample_z(c, 4.0 / 3.0);
    ASSERT_EQ(r.volume.nz(), 3);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(r.volume.at(1, 1, k), 10.0 * ((k + 0.5) * 4.0 / 3.0 - 0.5), 1e-5);
}

TEST(NoisyPrompt, PerturbBox) {
    const BBox b{10, 20, 29, 39};  // 20 x 20
    EXPECT_EQ(perturb_box(b, 0.0, 1.0, 64, 64), b);
    EXPECT_EQ(perturb_box(b, 0.1, 1.0, 64, 64), (BBox{12, 22, 31, 41}));
    EXPECT_EQ(perturb_box(b, 0.0, 1.5, 64, 64), (BBox{5, 15, 34, 44}));
    EXPECT_EQ(perturb_box(b, -0.1, 1.0, 64, 64), (BBox{8, 18, 27, 37}));
    const BBox clipped = perturb_box(BBox{0, 0, 9, 9}, -0.1, 1.5, 64, 64);
    EXPECT_EQ(clipped.x0, 0);
    EXPECT_EQ(clipped.y0, 0);
}

TEST(NoisyPrompt, GridShapeAndIdentityCell) {
    const SlideModel m = trained_model();
    const auto cases = make_test_cases(2, 6);
    const auto rows = noisy_prompt_suite(m, cases, Axis::Z);
    ASSERT_EQ(rows.size(), 25u);
    double baseline = 0;
    for (const auto& c : cases) baseline += evaluate_propagation(m, c, Axis::Z).dice;
    baseline /= 2;
    for (const auto& r : rows)
        if (r.translation == 0.0 && r.scale == 1.0) EXPECT_EQ(r.dice, baseline);
}

TEST(Table, CsvWithConfigHash) {
    EXPECT_EQ(config_hash(""), "cbf29ce484222325");
    EXPECT_EQ(config_hash("a"), "af63dc4c8601ec8c");
    std::ostringstream os;
    write_table(os, {{"dice/mean", 0.5}, {"x", 2}}, "abc");
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "metric,value,config_hash");
    std::getline(is, line);
    EXPECT_EQ(line.substr(0, 10), "dice/mean,");
    EXPECT_TRUE(line.ends_with(",abc"));
}

TEST(Harness, EquatorAndGtBox) {
    PhantomParams p;
    p.center = {10, 12, 9};
    p.radii = {5, 5, 5};
    const Phantom ph = make_phantom(PhantomKind::Sphere, {24, 24, 20}, p, 1);
    EXPECT_EQ(equator_index(ph.mask, Axis::Z, 1), 9);
    EXPECT_EQ(gt_box(ph.mask, Axis::Z, 9, 1), (BBox{5, 7, 15, 17}));
    EXPECT_THROW(gt_box(ph.mask, Axis::Z, 0, 1), InvalidInput);
}
