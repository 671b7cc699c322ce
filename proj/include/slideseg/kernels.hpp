#pragma once

// Hot loops shared by the model and the mask post-processing.
//
// Every kernel has two implementations with the same signature: the OpenMP
// version in namespace `kernels` and a plain loop in `kernels::serial` kept
// as the reference for tests and the benchmark target. Parallel versions
// only split work over independent output elements, so each output is
// reduced in the same order no matter how many threads run; results do not
// depend on the thread count.

#include <cstddef>
#include <cstdint>

namespace slideseg::kernels {

// C (m x n) = op(A) * op(B), row-major. op(A) is m x k, op(B) is k x n.
// With trans_a, A is stored k x m; with trans_b, B is stored n x k.
// accumulate adds into C instead of overwriting it.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b, bool accumulate);

// 3x3 square structuring element. Pixels outside the image never constrain
// the result (erosion treats them as foreground, dilation as background).
void erode3x3(const std::uint8_t* in, std::uint8_t* out, int height, int width);
void dilate3x3(const std::uint8_t* in, std::uint8_t* out, int height, int width);

// Number of values strictly greater than threshold.
std::size_t count_above(const double* values, std::size_t n, double threshold);

// |a AND b|, |a|, |b| for binary masks.
struct OverlapCounts {
    std::size_t intersection = 0;
    std::size_t a = 0;
    std::size_t b = 0;
};
OverlapCounts overlap(const std::uint8_t* a, const std::uint8_t* b, std::size_t n);

namespace serial {
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b, bool accumulate);
void erode3x3(const std::uint8_t* in, std::uint8_t* out, int height, int width);
void dilate3x3(const std::uint8_t* in, std::uint8_t* out, int height, int width);
std::size_t count_above(const double* values, std::size_t n, double threshold);
OverlapCounts overlap(const std::uint8_t* a, const std::uint8_t* b, std::size_t n);
}  // namespace serial

}  // namespace slideseg::kernels
