#include "slideseg/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <vector>

namespace slideseg::kernels {

namespace {

constexpr std::size_t kParallelWork = 1u << 15;

// Row-major transpose of a rows x cols matrix.
std::vector<double> transposed(const double* src, std::size_t rows, std::size_t cols) {
    std::vector<double> dst(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
    return dst;
}

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b, bool accumulate) {
    std::vector<double> at, bt;
    if (trans_a) {
        at = transposed(a, k, m);
        a = at.data();
    }
    if (trans_b) {
        bt = transposed(b, n, k);
        b = bt.data();
    }
    const bool parallel = m * n * k >= kParallelWork && m > 1;
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (parallel)
    for (std::int64_t i = 0; i < rows; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        const double* arow = a + static_cast<std::size_t>(i) * k;
        if (!accumulate) std::fill(crow, crow + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

namespace {

template <bool Erode>
void morph3x3(const std::uint8_t* in, std::uint8_t* out, int height, int width) {
#pragma omp parallel for schedule(static) if (height * width >= 1 << 14)
    for (int y = 0; y < height; ++y) {
        const int y0 = std::max(0, y - 1), y1 = std::min(height - 1, y + 1);
        for (int x = 0; x < width; ++x) {
            const int x0 = std::max(0, x - 1), x1 = std::min(width - 1, x + 1);
            std::uint8_t v = Erode ? 1 : 0;
            for (int yy = y0; yy <= y1; ++yy)
                for (int xx = x0; xx <= x1; ++xx) {
                    const bool on = in[yy * width + xx] != 0;
                    if (Erode && !on) v = 0;
                    if (!Erode && on) v = 1;
                }
            out[y * width + x] = v;
        }
    }
}

}  // namespace

void erode3x3(const std::uint8_t* in, std::uint8_t* out, int height, int width) {
    morph3x3<true>(in, out, height, width);
}

void dilate3x3(const std::uint8_t* in, std::uint8_t* out, int height, int width) {
    morph3x3<false>(in, out, height, width);
}

std::size_t count_above(const double* values, std::size_t n, double threshold) {
    std::size_t count = 0;
    const auto total = static_cast<std::int64_t>(n);
#pragma omp parallel for reduction(+ : count) schedule(static) if (n >= 1u << 16)
    for (std::int64_t i = 0; i < total; ++i) count += values[i] > threshold ? 1 : 0;
    return count;
}

OverlapCounts overlap(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
    std::size_t inter = 0, na = 0, nb = 0;
    const auto total = static_cast<std::int64_t>(n);
#pragma omp parallel for reduction(+ : inter, na, nb) schedule(static) if (n >= 1u << 16)
    for (std::int64_t i = 0; i < total; ++i) {
        const bool pa = a[i] != 0, pb = b[i] != 0;
        na += pa;
        nb += pb;
        inter += pa && pb;
    }
    return {inter, na, nb};
}

}  // namespace slideseg::kernels
