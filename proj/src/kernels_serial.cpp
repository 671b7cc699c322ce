#include "slideseg/kernels.hpp"

namespace slideseg::kernels::serial {

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = accumulate ? c[i * n + j] : 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = trans_a ? a[p * m + i] : a[i * k + p];
                const double bv = trans_b ? b[j * k + p] : b[p * n + j];
                s += av * bv;
            }
            c[i * n + j] = s;
        }
}

void erode3x3(const std::uint8_t* in, std::uint8_t* out, int height, int width) {
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            std::uint8_t v = 1;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    if (in[yy * width + xx] == 0) v = 0;
                }
            out[y * width + x] = v;
        }
}

void dilate3x3(const std::uint8_t* in, std::uint8_t* out, int height, int width) {
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            std::uint8_t v = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    if (in[yy * width + xx] != 0) v = 1;
                }
            out[y * width + x] = v;
        }
}

std::size_t count_above(const double* values, std::size_t n, double threshold) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (values[i] > threshold) ++count;
    return count;
}

OverlapCounts overlap(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
    OverlapCounts r;
    for (std::size_t i = 0; i < n; ++i) {
        if (a[i]) ++r.a;
        if (b[i]) ++r.b;
        if (a[i] && b[i]) ++r.intersection;
    }
    return r;
}

}  // namespace slideseg::kernels::serial
