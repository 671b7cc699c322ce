#include "slideseg/prompt_sim.hpp"

#include "slideseg/error.hpp"

#include <algorithm>
#include <cmath>

namespace slideseg {

double box_noise_sample(int side, std::mt19937_64& rng, const PromptSimOptions& opt) {
    const double sigma = opt.noise_fraction * side;
    if (sigma <= 0.0) return 0.0;
    std::normal_distribution<double> dist(0.0, sigma);
    return std::clamp(dist(rng), -opt.max_noise, opt.max_noise);
}

Prompt simulate_prompt(const Mask2D& gt, std::mt19937_64& rng, const PromptSimOptions& opt) {
    const auto box = tight_bbox(gt);
    if (!box) throw InvalidInput("cannot simulate a prompt on an empty mask");

    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < opt.point_probability) {
        std::vector<std::size_t> fg;
        for (std::size_t i = 0; i < gt.size(); ++i)
            if (gt.data[i]) fg.push_back(i);
        std::uniform_int_distribution<std::size_t> pick(0, fg.size() - 1);
        const std::size_t i = fg[pick(rng)];
        return Prompt::point(static_cast<int>(i % gt.width), static_cast<int>(i / gt.width), 1);
    }

    const int w = box->width();
    const int h = box->height();
    auto jitter = [&](int v, int side, int limit) {
        const int moved = v + static_cast<int>(std::lround(box_noise_sample(side, rng, opt)));
        return std::clamp(moved, 0, limit - 1);
    };
    int x0 = jitter(box->x0, w, gt.width);
    int y0 = jitter(box->y0, h, gt.height);
    int x1 = jitter(box->x1, w, gt.width);
    int y1 = jitter(box->y1, h, gt.height);
    if (x1 < x0) std::swap(x0, x1);
    if (y1 < y0) std::swap(y0, y1);
    return Prompt::box(BBox{x0, y0, x1, y1});
}

}  // namespace slideseg
