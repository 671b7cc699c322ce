#include "slideseg/slic.hpp"

#include "slideseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace slideseg {

namespace {

struct Center {
    double i, x, y;
};

constexpr int kDx[4] = {1, -1, 0, 0};
constexpr int kDy[4] = {0, 0, 1, -1};

// Relabels into 4-connected components in scan order; components smaller
// than min_size join the neighbouring component found first.
Superpixels enforce_connectivity(const Grid2<int>& raw, std::size_t min_size) {
    const int h = raw.height, w = raw.width;
    Superpixels out{Grid2<int>(h, w, -1), 0};
    std::vector<std::pair<int, int>> comp;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            if (out.labels.at(y0, x0) >= 0) continue;
            int adjacent = -1;
            for (int d = 0; d < 4 && adjacent < 0; ++d) {
                const int nx = x0 + kDx[d], ny = y0 + kDy[d];
                if (nx >= 0 && nx < w && ny >= 0 && ny < h && out.labels.at(ny, nx) >= 0) adjacent = out.labels.at(ny, nx);
            }
            const int src = raw.at(y0, x0);
            const int id = out.count;
            comp.assign(1, {x0, y0});
            out.labels.at(y0, x0) = id;
            for (std::size_t k = 0; k < comp.size(); ++k) {
                const auto [cx, cy] = comp[k];
                for (int d = 0; d < 4; ++d) {
                    const int nx = cx + kDx[d], ny = cy + kDy[d];
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    if (out.labels.at(ny, nx) >= 0 || raw.at(ny, nx) != src) continue;
                    out.labels.at(ny, nx) = id;
                    comp.push_back({nx, ny});
                }
            }
            if (comp.size() < min_size && adjacent >= 0) {
                for (const auto& [cx, cy] : comp) out.labels.at(cy, cx) = adjacent;
            } else {
                ++out.count;
            }
        }
    return out;
}

// Merges the smallest superpixel into the neighbour sharing the longest
// border until at most `limit` remain, then compacts the labels.
void cap_count(Superpixels& sp, int limit) {
    const int h = sp.labels.height, w = sp.labels.width;
    while (sp.count > limit) {
        std::vector<std::size_t> size(static_cast<std::size_t>(sp.count), 0);
        for (int v : sp.labels.data) ++size[static_cast<std::size_t>(v)];
        int smallest = 0;
        for (int k = 1; k < sp.count; ++k)
            if (size[static_cast<std::size_t>(k)] < size[static_cast<std::size_t>(smallest)]) smallest = k;
        std::map<int, int> border;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (sp.labels.at(y, x) != smallest) continue;
                for (int d = 0; d < 4; ++d) {
                    const int nx = x + kDx[d], ny = y + kDy[d];
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    const int o = sp.labels.at(ny, nx);
                    if (o != smallest) ++border[o];
                }
            }
        int target = border.begin()->first;
        for (const auto& [lab, n] : border)
            if (n > border[target]) target = lab;
        for (auto& v : sp.labels.data) {
            if (v == smallest) v = target;
            if (v > smallest) --v;
        }
        --sp.count;
    }
}

}  // namespace

Superpixels slic(const Image2D& image, const SlicOptions& opt) {
    const int h = image.height, w = image.width;
    if (h < 1 || w < 1) throw InvalidInput("empty image");
    if (opt.n_segments < 1) throw InvalidInput("n_segments must be at least 1");
    const double n = static_cast<double>(h) * w;
    const double s = std::sqrt(n / opt.n_segments);
    int gx = std::max(1, static_cast<int>(std::lround(w / s)));
    int gy = std::max(1, static_cast<int>(std::lround(h / s)));
    while (gx * gy > opt.n_segments) {
        if (gx >= gy) --gx;
        else --gy;
    }
    std::vector<Center> centers;
    for (int j = 0; j < gy; ++j)
        for (int i = 0; i < gx; ++i) {
            const double cx = (i + 0.5) * w / gx, cy = (j + 0.5) * h / gy;
            const int px = std::min(w - 1, static_cast<int>(cx)), py = std::min(h - 1, static_cast<int>(cy));
            centers.push_back({image.at(py, px), cx, cy});
        }
    const double step = std::max(static_cast<double>(w) / gx, static_cast<double>(h) / gy);
    const double spatial = (opt.compactness / step) * (opt.compactness / step);

    Grid2<int> labels(h, w, 0);
    Image2D dist(h, w);
    for (int it = 0; it < opt.iterations; ++it) {
        std::fill(dist.data.begin(), dist.data.end(), std::numeric_limits<double>::infinity());
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const auto& c = centers[k];
            const int x0 = std::max(0, static_cast<int>(std::floor(c.x - step))), x1 = std::min(w - 1, static_cast<int>(std::ceil(c.x + step)));
            const int y0 = std::max(0, static_cast<int>(std::floor(c.y - step))), y1 = std::min(h - 1, static_cast<int>(std::ceil(c.y + step)));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double di = image.at(y, x) - c.i;
                    const double dx = x - c.x, dy = y - c.y;
                    const double d = di * di + spatial * (dx * dx + dy * dy);
                    if (d < dist.at(y, x)) {
                        dist.at(y, x) = d;
                        labels.at(y, x) = static_cast<int>(k);
                    }
                }
        }
        // Pixels no centre reached keep their previous label.
        std::vector<Center> sum(centers.size(), {0, 0, 0});
        std::vector<std::size_t> cnt(centers.size(), 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto k = static_cast<std::size_t>(labels.at(y, x));
                sum[k].i += image.at(y, x);
                sum[k].x += x;
                sum[k].y += y;
                ++cnt[k];
            }
        for (std::size_t k = 0; k < centers.size(); ++k)
            if (cnt[k]) centers[k] = {sum[k].i / cnt[k], sum[k].x / cnt[k], sum[k].y / cnt[k]};
    }
    const auto min_size = static_cast<std::size_t>(std::max(1.0, n / static_cast<double>(centers.size()) / 4.0));
    Superpixels sp = enforce_connectivity(labels, min_size);
    cap_count(sp, opt.n_segments);
    return sp;
}

std::vector<SuperpixelPrompt> superpixel_prompts(const Image2D& image, int n_segments, double mean_min,
                                                 double compactness) {
    const Superpixels sp = slic(image, SlicOptions{n_segments, compactness, 10});
    const auto n = static_cast<std::size_t>(sp.count);
    std::vector<double> sum(n, 0), sx(n, 0), sy(n, 0);
    std::vector<std::size_t> cnt(n, 0);
    std::vector<BBox> box(n, BBox{image.width, image.height, -1, -1});
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const auto k = static_cast<std::size_t>(sp.labels.at(y, x));
            sum[k] += image.at(y, x);
            sx[k] += x;
            sy[k] += y;
            ++cnt[k];
            box[k].x0 = std::min(box[k].x0, x);
            box[k].y0 = std::min(box[k].y0, y);
            box[k].x1 = std::max(box[k].x1, x);
            box[k].y1 = std::max(box[k].y1, y);
        }
    std::vector<SuperpixelPrompt> out;
    for (std::size_t k = 0; k < n; ++k) {
        if (cnt[k] == 0) continue;
        const double mean = sum[k] / cnt[k];
        if (mean < mean_min) continue;
        const double cx = sx[k] / cnt[k], cy = sy[k] / cnt[k];
        PointPrompt best{0, 0, 1};
        double bd = std::numeric_limits<double>::infinity();
        for (int y = box[k].y0; y <= box[k].y1; ++y)
            for (int x = box[k].x0; x <= box[k].x1; ++x) {
                if (sp.labels.at(y, x) != static_cast<int>(k)) continue;
                const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                if (d < bd) {
                    bd = d;
                    best = {x, y, 1};
                }
            }
        out.push_back({static_cast<int>(k), mean, best, box[k]});
    }
    return out;
}

}  // namespace slideseg
