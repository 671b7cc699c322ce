#pragma once

#include "slideseg/prompt.hpp"

#include <random>

namespace slideseg {

struct PromptSimOptions {
    double point_probability = 0.5;
    double noise_fraction = 0.1;  // sigma = fraction * side length
    double max_noise = 20.0;      // cap on each noise sample, pixels
};

// One noise sample for a box coordinate: N(0, (fraction*side)^2), clamped
// to [-max_noise, max_noise].
double box_noise_sample(int side, std::mt19937_64& rng, const PromptSimOptions& opt = {});

// Training prompt for a nonempty central-slice mask: a uniformly drawn
// foreground point, or the tight box with per-coordinate noise, clamped to
// the image and at least one pixel on each side. Throws InvalidInput on an
// empty mask.
Prompt simulate_prompt(const Mask2D& gt, std::mt19937_64& rng, const PromptSimOptions& opt = {});

}  // namespace slideseg
