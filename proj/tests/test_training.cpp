#include "slideseg/error.hpp"
#include "slideseg/loss.hpp"
#include "slideseg/postprocess.hpp"
#include "slideseg/prompt_sim.hpp"
#include "slideseg/trainer.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace slideseg;
using namespace slideseg::testing;

namespace {

// Hard masks as saturated probabilities: p = 1 on `on` pixels.
SliceStack probs_from(const MaskStack& m) {
    SliceStack p;
    for (std::size_t i = 0; i < 3; ++i) {
        p[i] = Image2D(m[i].height, m[i].width);
        for (std::size_t k = 0; k < m[i].size(); ++k) p[i].data[k] = m[i].data[k];
    }
    return p;
}

SliceStack logits_from(const MaskStack& m, double mag) {
    SliceStack l;
    for (std::size_t i = 0; i < 3; ++i) {
        l[i] = Image2D(m[i].height, m[i].width);
        for (std::size_t k = 0; k < m[i].size(); ++k) l[i].data[k] = m[i].data[k] ? mag : -mag;
    }
    return l;
}

MaskStack stack_of(const Mask2D& m) { return {m, m, m}; }

}  // namespace

TEST(DiceLoss, HandCountedExample) {
    // |p| = 6, |g| = 4, |p and g| = 3 on a 4x4 grid
    Mask2D p(4, 4), g(4, 4);
    for (int i = 0; i < 6; ++i) p.data[static_cast<std::size_t>(i)] = 1;
    for (int i = 3; i < 7; ++i) g.data[static_cast<std::size_t>(i)] = 1;
    const double expect = 1.0 - (2.0 * 3 + kDiceEps) / (6 + 4 + kDiceEps);
    EXPECT_NEAR(dice_loss(probs_from(stack_of(p)), stack_of(g), {0, 1, 0}), expect, 1e-12);
    EXPECT_NEAR(expect, 0.4, 1e-6);
}

TEST(DiceLoss, PerfectAndDisjoint) {
    Mask2D a(6, 6), b(6, 6);
    a.at(1, 1) = a.at(1, 2) = 1;
    b.at(4, 4) = 1;
    EXPECT_NEAR(dice_loss(probs_from(stack_of(a)), stack_of(a), {1, 1, 1}), 0.0, 1e-6);
    EXPECT_NEAR(dice_loss(probs_from(stack_of(a)), stack_of(b), {1, 1, 1}), 1.0, 1e-6);
}

TEST(SegLoss, WeightedSumMatchesComponents) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> d(0, 2);
    MaskStack gt;
    SliceStack logits;
    for (std::size_t i = 0; i < 3; ++i) {
        gt[i] = Mask2D(5, 5);
        logits[i] = Image2D(5, 5);
        for (auto& x : gt[i].data) x = rng() % 2;
        for (auto& x : logits[i].data) x = d(rng);
    }
    for (const Indicator ind : {Indicator{1, 1, 1}, Indicator{0, 1, 0}, Indicator{1, 0, 1}}) {
        double expect = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            if (!ind[i]) continue;
            SliceStack p;
            for (auto& x : p) x = Image2D(5, 5);
            for (std::size_t k = 0; k < 25; ++k) p[i].data[k] = 1.0 / (1.0 + std::exp(-logits[i].data[k]));
            Indicator only{0, 0, 0};
            only[i] = 1;
            expect += 20.0 * bce_with_logits(logits[i], gt[i]) + dice_loss(p, gt, only);
        }
        expect /= included_slices(ind);
        EXPECT_NEAR(seg_loss(logits, gt, ind), expect, 1e-12);
        EXPECT_NEAR(seg_loss_with_grad(logits, gt, ind).value, expect, 1e-12);
    }
    // 20 * 0.1 + 1 * 0.4 per included slice
    EXPECT_DOUBLE_EQ(LossWeights{}.ce * 0.1 + LossWeights{}.dice * 0.4, 2.4);
}

TEST(SegLoss, NonNegativeAndZeroAtSaturatedMatch) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 50; ++t) {
        MaskStack gt;
        SliceStack logits;
        for (std::size_t i = 0; i < 3; ++i) {
            gt[i] = Mask2D(6, 6);
            logits[i] = Image2D(6, 6);
            for (auto& x : gt[i].data) x = rng() % 2;
            for (auto& x : logits[i].data) x = std::normal_distribution<double>(0, 5)(rng);
        }
        EXPECT_GE(seg_loss(logits, gt, {1, 1, 1}), 0.0);
        for (auto& g : gt) g.data[0] = 1;  // keep every slice nonempty
        EXPECT_LT(seg_loss(logits_from(gt, 40.0), gt, {1, 1, 1}), 1e-3);
    }
}

TEST(SegLoss, ExcludedSlicesDoNotMatter) {
    std::mt19937_64 rng(3);
    MaskStack gt;
    SliceStack logits;
    for (std::size_t i = 0; i < 3; ++i) {
        gt[i] = Mask2D(5, 5);
        logits[i] = Image2D(5, 5);
        for (auto& x : gt[i].data) x = rng() % 2;
        for (auto& x : logits[i].data) x = std::normal_distribution<double>(0, 1)(rng);
    }
    const double base = seg_loss(logits, gt, {0, 1, 0});
    SliceStack moved = logits;
    for (std::size_t i : {0u, 2u})
        for (auto& x : moved[i].data) x += 3.0;
    EXPECT_EQ(seg_loss(moved, gt, {0, 1, 0}), base);
    const auto lg = seg_loss_with_grad(logits, gt, {0, 1, 0});
    for (std::size_t i : {0u, 2u})
        for (double g : lg.grad[i].data) EXPECT_EQ(g, 0.0);
    EXPECT_THROW(seg_loss(logits, gt, {0, 0, 0}), InvalidInput);
}

TEST(SegLoss, AnalyticGradientMatchesFiniteDifference) {
    std::mt19937_64 rng(4);
    MaskStack gt;
    SliceStack logits;
    for (std::size_t i = 0; i < 3; ++i) {
        gt[i] = Mask2D(4, 4);
        logits[i] = Image2D(4, 4);
        for (auto& x : gt[i].data) x = rng() % 2;
        for (auto& x : logits[i].data) x = std::normal_distribution<double>(0, 1)(rng);
    }
    const auto lg = seg_loss_with_grad(logits, gt, {1, 0, 1});
    const double h = 1e-6;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 16; ++k) {
            SliceStack a = logits, b = logits;
            a[i].data[k] += h;
            b[i].data[k] -= h;
            const double num = (seg_loss(a, gt, {1, 0, 1}) - seg_loss(b, gt, {1, 0, 1})) / (2 * h);
            EXPECT_NEAR(lg.grad[i].data[k], num, 1e-6);
        }
}

TEST(IouLoss, Examples) {
    Mask2D g(10, 10);
    for (int c = 0; c < 10; ++c) g.at(0, c) = 1;  // 10 px
    Mask2D p(10, 10);
    for (int c = 0; c < 7; ++c) p.at(0, c) = 1;  // IoU 7/10
    const MaskStack gt = stack_of(g);
    const SliceStack logits = logits_from(stack_of(p), 5.0);
    EXPECT_NEAR(mask_iou(logits, gt), 0.7, 1e-12);
    EXPECT_NEAR(iou_loss(0.5, logits, gt, {1, 1, 1}), 0.04, 1e-12);
    EXPECT_NEAR(iou_loss(0.7, logits, gt, {1, 1, 1}), 0.0, 1e-12);
    EXPECT_EQ(iou_loss(0.1, logits, gt, {0, 1, 0}), 0.0);
    EXPECT_EQ(iou_loss_grad(0.1, logits, gt, {0, 1, 0}), 0.0);
    EXPECT_NEAR(iou_loss_grad(0.5, logits, gt, {1, 1, 1}), 2 * (0.5 - 0.7), 1e-12);
}

TEST(SelectHead, ArgminWithLowestIndexTies) {
    EXPECT_EQ(select_head({0.5, 0.2, 0.9}), 1);  // second head
    EXPECT_EQ(select_head({0.3, 0.3, 0.5}), 0);
    EXPECT_EQ(select_head({0.9, 0.2, 0.5}), 1);
    EXPECT_EQ(select_head({0.5, 0.9, 0.2}), 2);
    EXPECT_THROW(select_head({0.1, std::numeric_limits<double>::quiet_NaN(), 0.2}), TrainingFault);
    EXPECT_THROW(select_head({0.1, std::numeric_limits<double>::infinity(), 0.2}), TrainingFault);
}

TEST(SelectHead, PermutationAndShiftInvariance) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(0, 3);
    for (int t = 0; t < 200; ++t) {
        std::array<double, 3> l{d(rng), d(rng), d(rng)};
        const int k = select_head(l);
        std::array<int, 3> perm{0, 1, 2};
        do {
            std::array<double, 3> p{l[perm[0]], l[perm[1]], l[perm[2]]};
            EXPECT_EQ(perm[static_cast<std::size_t>(select_head(p))], k);
        } while (std::next_permutation(perm.begin(), perm.end()));
        const double c = d(rng) * 10;
        EXPECT_EQ(select_head({l[0] + c, l[1] + c, l[2] + c}), k);
    }
}

TEST(PromptSim, PointLiesInForeground) {
    std::mt19937_64 rng(6);
    Mask2D gt(32, 32);
    for (int r = 3; r < 20; ++r)
        for (int c = 10; c < 15; ++c) gt.at(r, c) = 1;
    gt.at(30, 30) = 1;
    PromptSimOptions opt;
    opt.point_probability = 1.0;
    for (int t = 0; t < 2000; ++t) {
        const Prompt p = simulate_prompt(gt, rng, opt);
        ASSERT_EQ(p.points.size(), 1u);
        EXPECT_EQ(gt.at(p.points[0].y, p.points[0].x), 1);
        EXPECT_EQ(p.points[0].label, 1);
    }
    EXPECT_THROW(simulate_prompt(Mask2D(8, 8), rng), InvalidInput);
}

TEST(PromptSim, NoiseSigmaIsTenPercentOfSide) {
    std::mt19937_64 rng(7);
    const int n = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        const double x = box_noise_sample(100, rng);
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    // N(0, 10^2) clamped at +-20 (two sigma):
    // E[X^2] = s^2 (erf(a/sqrt2) - 2a phi(a)) + c^2 P(|Z| > a), a = 2
    const double a = 2.0, phi = std::exp(-a * a / 2) / std::sqrt(2 * M_PI);
    const double inside = std::erf(a / std::sqrt(2.0));
    const double expect = std::sqrt(100.0 * (inside - 2 * a * phi) + 400.0 * (1 - inside));
    EXPECT_NEAR(sd, expect, 0.05);
    EXPECT_NEAR(mean, 0.0, 0.1);
}

TEST(PromptSim, NoiseCappedAtTwentyPixels) {
    std::mt19937_64 rng(8);
    double worst = 0;
    for (int i = 0; i < 100000; ++i) worst = std::max(worst, std::abs(box_noise_sample(300, rng)));
    EXPECT_LE(worst, 20.0);
    EXPECT_EQ(worst, 20.0);  // sigma 30 hits the cap often
}

TEST(PromptSim, BoxesStayInsideAndNonDegenerate) {
    std::mt19937_64 rng(9);
    Mask2D gt(16, 16);
    gt.at(0, 0) = gt.at(0, 1) = 1;
    PromptSimOptions opt;
    opt.point_probability = 0.0;
    for (int t = 0; t < 5000; ++t) {
        const Prompt p = simulate_prompt(gt, rng, opt);
        ASSERT_EQ(p.boxes.size(), 1u);
        const BBox b = p.boxes[0];
        EXPECT_GE(b.x0, 0);
        EXPECT_GE(b.y0, 0);
        EXPECT_LT(b.x1, 16);
        EXPECT_LT(b.y1, 16);
        EXPECT_GE(b.width(), 1);
        EXPECT_GE(b.height(), 1);
    }
}

TEST(Gradients, FullModelMatchesFiniteDifferences) {
    SlideModel m(tiny_config());
    std::mt19937_64 rng(10);
    jitter_trainable(m, rng, 0.05);
    const auto s = box_sample(16, rng, {1, 1, 1}, 4, 10, 3, 11);
    Prompt p = Prompt::box(BBox{3, 4, 10, 9});
    p.points.push_back({5, 6, 1});
    const auto f = m.forward(s.window, p);
    const auto sl = evaluate_sample(f.out, s, {});
    Grads g = Grads::zeros_like(m.params());
    m.backward(f, sl.grads, g);
    auto loss_at = [&](const SlideModel& mm) { return evaluate_sample(mm.forward(s.window, p).out, s, {}).total[static_cast<std::size_t>(sl.head)]; };
    for (int dir = 0; dir < 10; ++dir) {
        const bool adapters_only = dir % 2 == 1;
        std::vector<Mat> d(static_cast<std::size_t>(m.params().size()));
        double analytic = 0;
        for (int i = 0; i < m.params().size(); ++i) {
            if (!m.params().trainable(i)) continue;
            if (adapters_only && m.params()[i].group != ParamGroup::Adapter) continue;
            d[static_cast<std::size_t>(i)] = Mat(m.params().value(i).rows, m.params().value(i).cols);
            fill_normal(d[static_cast<std::size_t>(i)], rng, 1.0);
            analytic += dot(d[static_cast<std::size_t>(i)], g.g[static_cast<std::size_t>(i)]);
        }
        const double h = 1e-5;
        SlideModel a = m, b = m;
        for (int i = 0; i < m.params().size(); ++i)
            for (std::size_t k = 0; k < d[static_cast<std::size_t>(i)].v.size(); ++k) {
                a.params().value(i).v[k] += h * d[static_cast<std::size_t>(i)].v[k];
                b.params().value(i).v[k] -= h * d[static_cast<std::size_t>(i)].v[k];
            }
        const double numeric = (loss_at(a) - loss_at(b)) / (2 * h);
        EXPECT_LE(std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-8), 1e-3)
            << "direction " << dir << " analytic " << analytic << " numeric " << numeric;
    }
}

TEST(Gradients, ExcludedSliceAndUnselectedHeadGradientsVanish) {
    SlideModel m(tiny_config());
    std::mt19937_64 rng(11);
    for (int t = 0; t < 5; ++t) {
        const auto s = box_sample(16, rng, {0, 1, 0}, 3, 12, 4, 9);
        const auto out = m.predict_raw(s.window, Prompt::box(BBox{4, 3, 8, 11}));
        const auto sl = evaluate_sample(out, s, {});
        for (std::size_t b = 0; b < 3; ++b)
            for (int px = 0; px < out.logits[b].rows; ++px)
                for (int j = 0; j < 3; ++j) {
                    const double g = sl.grads.logits[b](px, j);
                    if (b != 1 || j != sl.head) EXPECT_EQ(g, 0.0);
                }
        for (int j = 0; j < 3; ++j) EXPECT_EQ(sl.grads.iou.v[static_cast<std::size_t>(j)], 0.0);
    }
}

TEST(Trainer, ConfigParsingFlagsAndErrors) {
    const TrainConfig a = train_config_from_text("lr = 0.001\nsteps=50\n# comment\nbatch_size = 2\nlambda_ce = 10\n");
    EXPECT_DOUBLE_EQ(a.optimizer.lr, 0.001);
    EXPECT_EQ(a.steps, 50);
    EXPECT_EQ(a.batch_size, 2);
    EXPECT_DOUBLE_EQ(a.weights.ce, 10.0);
    const TrainConfig b = train_config_from_text(R"({"lr": 0.0003, "weight_decay": 0.0, "max_noise": 5})");
    EXPECT_DOUBLE_EQ(b.optimizer.lr, 0.0003);
    EXPECT_DOUBLE_EQ(b.optimizer.weight_decay, 0.0);
    EXPECT_DOUBLE_EQ(b.prompts.max_noise, 5.0);
    EXPECT_THROW(train_config_from_text("lr = -1"), ConfigError);
    EXPECT_THROW(train_config_from_text("bogus = 1"), ConfigError);
    EXPECT_THROW(train_config_from_text("lr 1"), ConfigError);
    EXPECT_EQ(train_config_from_text(to_json(a).dump()).steps, 50);
}

TEST(Trainer, AdamWFirstStepMovesByLearningRate) {
    ParamSet ps;
    const int id = ps.add("w", 1, 2, ParamGroup::Decoder);
    const int frozen = ps.add("f", 1, 1, ParamGroup::Backbone);
    ps.value(id).v = {1.0, -2.0};
    ps.value(frozen).v = {5.0};
    Grads g = Grads::zeros_like(ps);
    g.g[static_cast<std::size_t>(id)].v = {0.5, -3.0};
    OptimizerConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    AdamW opt(cfg);
    opt.step(ps, g);
    // decoupled decay then a unit-magnitude Adam step on the first update
    EXPECT_NEAR(ps.value(id).v[0], 1.0 * (1 - 0.01 * 0.1) - 0.01, 1e-9);
    EXPECT_NEAR(ps.value(id).v[1], -2.0 * (1 - 0.01 * 0.1) + 0.01, 1e-9);
    EXPECT_EQ(ps.value(frozen).v[0], 5.0);
}

TEST(Trainer, DeterministicForFixedSeed) {
    std::mt19937_64 rng(12);
    std::vector<TrainingSample> samples;
    for (int i = 0; i < 4; ++i) samples.push_back(box_sample(16, rng, {1, 1, 1}, 2 + i, 10, 3, 12));
    TrainConfig tc;
    tc.steps = 5;
    tc.batch_size = 2;
    tc.seed = 4;
    SlideModel a(tiny_config()), b(tiny_config());
    const auto sa = train(a, samples, tc);
    const auto sb = train(b, samples, tc);
    ASSERT_EQ(sa.size(), 5u);
    for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].loss, sb[i].loss);
    EXPECT_TRUE(changed_parameters(a.params(), b.params()).empty());
}

TEST(Trainer, SingleSampleOverfitLossDecreases) {
    std::mt19937_64 rng(13);
    const std::vector<TrainingSample> one{box_sample(16, rng, {1, 1, 1}, 4, 11, 3, 12)};
    TrainConfig tc;
    tc.steps = 200;
    tc.batch_size = 1;
    tc.seed = 1;
    tc.optimizer.lr = 1e-3;
    SlideModel m(tiny_config());
    const auto stats = train(m, one, tc);
    ASSERT_EQ(stats.size(), 200u);
    // mean loss over consecutive blocks of 40 steps
    std::vector<double> blocks;
    for (std::size_t b = 0; b < 5; ++b) {
        double s = 0;
        for (std::size_t i = b * 40; i < (b + 1) * 40; ++i) s += stats[i].loss;
        blocks.push_back(s / 40);
    }
    for (std::size_t b = 1; b < blocks.size(); ++b)
        EXPECT_LT(blocks[b], blocks[b - 1]) << "block " << b << ": " << blocks[b] << " after " << blocks[b - 1];
    EXPECT_LT(blocks.back(), 0.5 * blocks.front());
}
