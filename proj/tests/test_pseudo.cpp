#include "slideseg/error.hpp"
#include "slideseg/metrics.hpp"
#include "slideseg/phantom.hpp"
#include "slideseg/pseudo.hpp"
#include "slideseg/records.hpp"
#include "slideseg/slic.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

using namespace slideseg;
using namespace slideseg::testing;

namespace {

double normalized_std(const Volume& v) {
    double s = 0, ss = 0;
    for (float x : v.voxels()) s += x / 255.0;
    const double m = s / static_cast<double>(v.voxels().size());
    for (float x : v.voxels()) ss += (x / 255.0 - m) * (x / 255.0 - m);
    return std::sqrt(ss / static_cast<double>(v.voxels().size()));
}

Image2D square_image(int size, int y0, int y1, int x0, int x1, double fg) {
    Image2D img(size, size);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) img.at(y, x) = fg;
    return img;
}

}  // namespace

TEST(Truncation, RangesFromMeanAndStd) {
    // half the voxels at 50, half at 150: mean 100, population std 50
    Volume v(4, 4, 4);
    for (std::size_t i = 0; i < v.voxels().size(); ++i) v.voxels()[i] = i % 2 ? 150.0f : 50.0f;
    const auto t = truncation_variants(v);
    ASSERT_EQ(t.size(), 4u);
    const std::array<std::pair<double, double>, 4> want{{{-50, 250}, {0, 200}, {50, 150}, {75, 125}}};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(t[i].lo, want[i].first, 1e-9);
        EXPECT_NEAR(t[i].hi, want[i].second, 1e-9);
        for (float x : t[i].rendered.voxels()) {
            EXPECT_GE(x, 0.0f);
            EXPECT_LE(x, 255.0f);
            EXPECT_EQ(x, std::round(x));
        }
    }
    EXPECT_EQ(t[2].rendered.voxels()[0], 0.0f);
    EXPECT_EQ(t[2].rendered.voxels()[1], 255.0f);
}

TEST(Truncation, NarrowRangeHasMoreContrast) {
    Volume v(16, 16, 8);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> d(100, 5);
    for (auto& x : v.voxels()) x = static_cast<float>(d(rng));
    const auto t = truncation_variants(v);
    EXPECT_GT(normalized_std(t[3].rendered), normalized_std(t[0].rendered));
}

TEST(Truncation, ShiftInvariantAndDegenerateThrows) {
    Volume v(8, 8, 8);
    std::mt19937_64 rng(2);
    for (auto& x : v.voxels()) x = static_cast<float>(rng() % 300);
    Volume shifted = v;
    for (auto& x : shifted.voxels()) x += 1000.0f;
    const auto a = truncation_variants(v), b = truncation_variants(shifted);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a[i].rendered.voxels(), b[i].rendered.voxels());
    EXPECT_THROW(truncation_variants(Volume(4, 4, 4)), InvalidInput);
}

TEST(Slic, PartitionCoversImageWithContiguousSegments) {
    std::mt19937_64 rng(3);
    Image2D img(40, 40);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) img.at(y, x) = (x > 20 ? 180 : 40) + std::normal_distribution<double>(0, 10)(rng);
    const Superpixels sp = slic(img, {16, 10, 10});
    EXPECT_GT(sp.count, 1);
    EXPECT_LE(sp.count, 16);
    std::vector<int> seen(static_cast<std::size_t>(sp.count), 0);
    for (int l : sp.labels.data) {
        ASSERT_GE(l, 0);
        ASSERT_LT(l, sp.count);
        seen[static_cast<std::size_t>(l)] = 1;
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    // every label forms a single 4-connected region
    for (int l = 0; l < sp.count; ++l) {
        Mask2D m(40, 40);
        for (std::size_t k = 0; k < m.size(); ++k) m.data[k] = sp.labels.data[k] == l;
        std::vector<int> stack;
        Mask2D vis(40, 40);
        std::size_t start = 0;
        while (!m.data[start]) ++start;
        stack.push_back(static_cast<int>(start));
        vis.data[start] = 1;
        std::size_t reached = 0;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            ++reached;
            const int y = p / 40, x = p % 40;
            const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto& q : nb) {
                if (q[0] < 0 || q[1] < 0 || q[0] >= 40 || q[1] >= 40) continue;
                const std::size_t k = static_cast<std::size_t>(q[0] * 40 + q[1]);
                if (m.data[k] && !vis.data[k]) {
                    vis.data[k] = 1;
                    stack.push_back(static_cast<int>(k));
                }
            }
        }
        EXPECT_EQ(reached, count_foreground(m)) << "label " << l;
    }
}

TEST(SuperpixelPrompts, Examples) {
    EXPECT_TRUE(superpixel_prompts(Image2D(32, 32), 16, 10).empty());
    const Image2D img = square_image(48, 10, 25, 20, 35, 200);
    const auto prompts = superpixel_prompts(img, 9, 20);
    ASSERT_FALSE(prompts.empty());
    EXPECT_LE(prompts.size(), 9u);
    bool contains = false;
    for (const auto& p : prompts) {
        EXPECT_GE(p.mean, 20.0);
        contains = contains || (p.box.x0 <= 27 && p.box.x1 >= 27 && p.box.y0 <= 17 && p.box.y1 >= 17);
        EXPECT_GE(p.point.x, p.box.x0);
        EXPECT_LE(p.point.x, p.box.x1);
    }
    EXPECT_TRUE(contains);
}

TEST(Records, JsonRoundTripAndWindow) {
    Volume v(12, 10, 6, {}, Modality::SYNTH, "vol7");
    for (std::size_t i = 0; i < v.voxels().size(); ++i) v.voxels()[i] = static_cast<float>(i % 200);
    PseudoRecord r;
    r.volume_id = "vol7";
    r.center = 3;
    r.gt = Mask2D(10, 12);
    r.gt.at(4, 5) = r.gt.at(4, 6) = 1;
    r.variant_k = 0.5;
    r.prompt_type = "box";
    r.score = 0.9;
    const auto dir = temp_dir("records");
    save_records("vol7", {r, r}, dir / "vol7.records.json");
    const auto back = load_records(dir / "vol7.records.json");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].gt, r.gt);
    EXPECT_EQ(back[0].indicator, (Indicator{0, 1, 0}));
    EXPECT_DOUBLE_EQ(back[0].variant_k, 0.5);
    EXPECT_EQ(back[1].prompt_type, "box");

    const SliceWindow w = record_window(v, r);
    EXPECT_EQ(w.indicator, (Indicator{0, 1, 0}));
    EXPECT_EQ(count_foreground((*w.labels)[0]), 0u);
    EXPECT_EQ(count_foreground((*w.labels)[2]), 0u);
    EXPECT_EQ((*w.labels)[1], r.gt);

    std::ofstream(dir / "bad.records.json") << R"({"volume_id": "x", "records": [{"center": "nope"}]})";
    EXPECT_THROW(load_records(dir / "bad.records.json"), CorruptData);
}

TEST(PseudoRecords, EmptySegmenterGivesNoRecords) {
    const Phantom ph = make_phantom(PhantomKind::Sphere, {20, 20, 20}, {}, 1);
    const Segmenter nothing = [](const SliceWindow& w, const Prompt&) {
        DecoderOutputs d;
        d.height = w.height;
        d.width = w.width;
        for (auto& s : d.logits)
            for (auto& h : s) h = Image2D(w.height, w.width, -5.0);
        return d;
    };
    EXPECT_TRUE(generate_pseudo_records(nothing, ph.volume).empty());
}

TEST(PseudoRecords, IdenticalMasksAcrossVariantsCollapse) {
    const Phantom ph = make_phantom(PhantomKind::Sphere, {20, 20, 20}, {}, 2);
    const Segmenter same = [](const SliceWindow& w, const Prompt&) {
        DecoderOutputs d;
        d.height = w.height;
        d.width = w.width;
        d.iou = {0.9, 0.9, 0.9};
        for (auto& s : d.logits)
            for (auto& h : s) {
                h = Image2D(w.height, w.width, -5.0);
                for (int y = 4; y < 9; ++y)
                    for (int x = 4; x < 9; ++x) h.at(y, x) = 5.0;
            }
        return d;
    };
    PseudoOptions opt;
    opt.slice_step = 4;
    const auto recs = generate_pseudo_records(same, ph.volume, opt);
    std::set<int> centers;
    for (const auto& r : recs) {
        EXPECT_TRUE(centers.insert(r.center).second) << "two records at centre " << r.center;
        EXPECT_EQ(r.indicator, (Indicator{0, 1, 0}));
    }
    EXPECT_EQ(centers.size(), 5u);  // centres 1, 5, 9, 13, 17
}

TEST(PseudoRecords, ThresholdOracleRecoversPhantomSlices) {
    PhantomParams p;
    p.center = {16, 16, 16};
    p.radii = {9, 9, 9};
    const Phantom ph = make_phantom(PhantomKind::Sphere, {32, 32, 32}, p, 3);
    PseudoOptions opt;
    opt.slice_step = 3;
    const auto recs = generate_pseudo_records(threshold_segmenter(), ph.volume, opt);
    ASSERT_FALSE(recs.empty());
    for (const auto& r : recs) {
        EXPECT_EQ(r.indicator, (Indicator{0, 1, 0}));
        EXPECT_TRUE(r.prompt_type == "point" || r.prompt_type == "box");
        const Mask2D gt = ph.mask.slice(Axis::Z, r.center, 1);
        EXPECT_GT(dice(r.gt, gt), 0.8) << "centre " << r.center;
    }
    // training samples built from records keep the 2D indicator and empty neighbours
    std::mt19937_64 rng(4);
    const auto samples = samples_from_records(clip_and_normalize(ph.volume), recs, 32, rng);
    ASSERT_EQ(samples.size(), recs.size());
    for (const auto& s : samples) {
        EXPECT_EQ(s.indicator, (Indicator{0, 1, 0}));
        EXPECT_EQ(count_foreground(s.gt[0]), 0u);
        EXPECT_EQ(count_foreground(s.gt[2]), 0u);
        EXPECT_EQ(s.source, LabelSource::Pseudo);
    }
}
