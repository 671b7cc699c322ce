#pragma once

#include "slideseg/postprocess.hpp"
#include "slideseg/prompt.hpp"

#include <vector>

namespace slideseg {

struct SlicOptions {
    int n_segments = 64;
    double compactness = 10.0;
    int iterations = 10;
};

// Partition of an image into 4-connected superpixels labelled 0..count-1.
struct Superpixels {
    Grid2<int> labels;
    int count = 0;
};

// k-means on (intensity, x, y) seeded on a regular grid, followed by a
// connectivity pass that absorbs fragments into a neighbour. Never returns
// more than n_segments superpixels.
Superpixels slic(const Image2D& image, const SlicOptions& opt = {});

struct SuperpixelPrompt {
    int label = 0;
    double mean = 0.0;
    PointPrompt point;  // member pixel closest to the centroid
    BBox box;
};

// One prompt per superpixel whose mean intensity is at least mean_min.
std::vector<SuperpixelPrompt> superpixel_prompts(const Image2D& image, int n_segments = 64, double mean_min = 20.0,
                                                 double compactness = 10.0);

}  // namespace slideseg
