#include "slideseg/metrics.hpp"

#include "slideseg/error.hpp"
#include "slideseg/kernels.hpp"

namespace slideseg {

namespace {

kernels::OverlapCounts counts(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw InvalidInput("mask size mismatch");
    return kernels::overlap(a.data(), b.data(), a.size());
}

void check_shape(const Mask2D& a, const Mask2D& b) {
    if (a.height != b.height || a.width != b.width) throw InvalidInput("mask shape mismatch");
}

}  // namespace

double dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    const auto c = counts(pred, gt);
    if (c.a + c.b == 0) return 1.0;
    return 2.0 * static_cast<double>(c.intersection) / static_cast<double>(c.a + c.b);
}

double dice(const Mask2D& pred, const Mask2D& gt) {
    check_shape(pred, gt);
    return dice(pred.data, gt.data);
}

double dice(const VolumeMask& pred, const VolumeMask& gt, std::uint32_t pred_id, std::uint32_t gt_id) {
    if (pred.nx() != gt.nx() || pred.ny() != gt.ny() || pred.nz() != gt.nz()) throw InvalidInput("mask shape mismatch");
    return dice(pred.binary(pred_id), gt.binary(gt_id));
}

double iou(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    const auto c = counts(pred, gt);
    const std::size_t uni = c.a + c.b - c.intersection;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.intersection) / static_cast<double>(uni);
}

double iou(const Mask2D& pred, const Mask2D& gt) {
    check_shape(pred, gt);
    return iou(pred.data, gt.data);
}

}  // namespace slideseg
