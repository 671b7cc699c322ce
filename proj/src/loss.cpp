#include "slideseg/loss.hpp"

#include "slideseg/error.hpp"

#include <cmath>

namespace slideseg {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_shapes(const SliceStack& a, const MaskStack& gt) {
    for (int i = 0; i < 3; ++i)
        if (a[i].height != gt[i].height || a[i].width != gt[i].width) throw InvalidInput("prediction/gt shape mismatch");
}

}  // namespace

int included_slices(const Indicator& ind) { return (ind[0] != 0) + (ind[1] != 0) + (ind[2] != 0); }

double dice_loss(const SliceStack& probs, const MaskStack& gt, const Indicator& ind) {
    check_shapes(probs, gt);
    const int n = included_slices(ind);
    if (n == 0) return 0.0;
    double total = 0;
    for (int i = 0; i < 3; ++i) {
        if (!ind[i]) continue;
        double inter = 0, ps = 0, gs = 0;
        for (std::size_t k = 0; k < probs[i].size(); ++k) {
            const double p = probs[i].data[k];
            const double g = gt[i].data[k] ? 1.0 : 0.0;
            inter += p * g;
            ps += p;
            gs += g;
        }
        total += 1.0 - (2.0 * inter + kDiceEps) / (ps + gs + kDiceEps);
    }
    return total / n;
}

double bce_with_logits(const Image2D& logits, const Mask2D& gt) {
    double s = 0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        const double l = logits.data[k];
        const double g = gt.data[k] ? 1.0 : 0.0;
        s += std::max(l, 0.0) - l * g + std::log1p(std::exp(-std::abs(l)));
    }
    return s / static_cast<double>(logits.size());
}

LossAndGrad seg_loss_with_grad(const SliceStack& logits, const MaskStack& gt, const Indicator& ind,
                               const LossWeights& w) {
    check_shapes(logits, gt);
    const int n = included_slices(ind);
    if (n == 0) throw InvalidInput("indicator selects no slice");
    LossAndGrad r;
    for (int i = 0; i < 3; ++i) {
        r.grad[i] = Image2D(logits[i].height, logits[i].width);
        if (!ind[i]) continue;
        const std::size_t npx = logits[i].size();
        double inter = 0, ps = 0, gs = 0;
        std::vector<double> p(npx);
        for (std::size_t k = 0; k < npx; ++k) {
            p[k] = sigmoid(logits[i].data[k]);
            const double g = gt[i].data[k] ? 1.0 : 0.0;
            inter += p[k] * g;
            ps += p[k];
            gs += g;
        }
        const double denom = ps + gs + kDiceEps;
        const double numer = 2.0 * inter + kDiceEps;
        const double ce = bce_with_logits(logits[i], gt[i]);
        const double dice = 1.0 - numer / denom;
        r.value += w.ce * ce + w.dice * dice;
        for (std::size_t k = 0; k < npx; ++k) {
            const double g = gt[i].data[k] ? 1.0 : 0.0;
            const double dce = (p[k] - g) / static_cast<double>(npx);
            const double ddice_dp = -(2.0 * g * denom - numer) / (denom * denom);
            r.grad[i].data[k] = (w.ce * dce + w.dice * ddice_dp * p[k] * (1.0 - p[k])) / n;
        }
    }
    r.value /= n;
    return r;
}

double seg_loss(const SliceStack& logits, const MaskStack& gt, const Indicator& ind, const LossWeights& w) {
    check_shapes(logits, gt);
    const int n = included_slices(ind);
    if (n == 0) throw InvalidInput("indicator selects no slice");
    double total = 0;
    for (int i = 0; i < 3; ++i) {
        if (!ind[i]) continue;
        SliceStack probs;
        double inter = 0, ps = 0, gs = 0;
        for (std::size_t k = 0; k < logits[i].size(); ++k) {
            const double p = sigmoid(logits[i].data[k]);
            const double g = gt[i].data[k] ? 1.0 : 0.0;
            inter += p * g;
            ps += p;
            gs += g;
        }
        const double dice = 1.0 - (2.0 * inter + kDiceEps) / (ps + gs + kDiceEps);
        total += w.ce * bce_with_logits(logits[i], gt[i]) + w.dice * dice;
    }
    return total / n;
}

double mask_iou(const SliceStack& logits, const MaskStack& gt) {
    check_shapes(logits, gt);
    std::size_t inter = 0, uni = 0;
    for (int i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < logits[i].size(); ++k) {
            const bool p = logits[i].data[k] > 0.0;
            const bool g = gt[i].data[k] != 0;
            inter += p && g;
            uni += p || g;
        }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double iou_loss(double predicted_iou, const SliceStack& logits, const MaskStack& gt, const Indicator& ind) {
    if (included_slices(ind) != 3) return 0.0;
    const double d = predicted_iou - mask_iou(logits, gt);
    return d * d;
}

double iou_loss_grad(double predicted_iou, const SliceStack& logits, const MaskStack& gt, const Indicator& ind) {
    if (included_slices(ind) != 3) return 0.0;
    return 2.0 * (predicted_iou - mask_iou(logits, gt));
}

int select_head(const std::array<double, 3>& losses) {
    int best = 0;
    for (int j = 0; j < 3; ++j) {
        if (!std::isfinite(losses[j])) throw TrainingFault("non-finite hypothesis loss at head " + std::to_string(j));
        if (losses[j] < losses[best]) best = j;
    }
    return best;
}

}  // namespace slideseg
