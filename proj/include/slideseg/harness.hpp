#pragma once

#include "slideseg/inference.hpp"
#include "slideseg/model.hpp"

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace slideseg {

struct EvalCase {
    Volume volume;
    VolumeMask gt;
    std::uint32_t id = 1;  // instance to segment
};

// Slice with the largest area of instance `id` (lowest index on ties).
int equator_index(const VolumeMask& gt, Axis axis, std::uint32_t id);
// Tight box of instance `id` on one slice; throws InvalidInput when empty.
BBox gt_box(const VolumeMask& gt, Axis axis, int index, std::uint32_t id);

// One gt box at the equator slice, propagated through the volume.
struct CaseResult {
    double dice = 0.0;
    int prompts_used = 0;
    SegmentationResult segmentation;
};
CaseResult evaluate_propagation(const SlideModel& model, const EvalCase& c, Axis axis,
                                const InferenceOptions& opt = {});
// Baseline without propagation: every slice containing the instance gets
// its own gt box prompt and only the window's central mask is kept.
CaseResult evaluate_per_slice(const SlideModel& model, const EvalCase& c, Axis axis,
                              const InferenceOptions& opt = {});

struct ImageResult {
    int prompts_used = 1;
    double dice = 0.0;
};

// Walks the results in order, charging prompts_used against the budget
// until the next image no longer fits, and counts images with dice >
// dice_min. Throws InvalidInput if any prompts_used < 1.
int prompt_efficiency(const std::vector<ImageResult>& results, int budget = 1000, double dice_min = 0.9);
// Repeats `results` in order as often as the budget allows, then applies
// prompt_efficiency.
int prompt_efficiency_cycled(const std::vector<ImageResult>& results, int budget = 1000, double dice_min = 0.9);

// New depth round(nz / ratio), linear interpolation of intensities and
// nearest labels along z (half-voxel aligned), spacing.z scaled by ratio.
// Throws InvalidInput for ratio <= 0 or a new depth below 3.
EvalCase resample_z(const EvalCase& c, double ratio);

struct NoisyPromptRow {
    double translation = 0.0;  // fraction of the side, applied along x and y
    double scale = 1.0;        // side length factor about the box centre
    double dice = 0.0;         // mean over cases
};
struct NoisyPromptGrid {
    std::vector<double> translations{-0.10, -0.05, 0.0, 0.05, 0.10};
    std::vector<double> scales{0.9, 1.0, 1.1, 1.25, 1.5};
};
// Translated/scaled copy of a box, clamped to a height x width image.
BBox perturb_box(const BBox& box, double translation, double scale, int height, int width);
std::vector<NoisyPromptRow> noisy_prompt_suite(const SlideModel& model, const std::vector<EvalCase>& cases, Axis axis,
                                               const NoisyPromptGrid& grid = {}, const InferenceOptions& opt = {});

// Flat results table: metric,value,config_hash.
struct TableRow {
    std::string metric;
    double value = 0.0;
};
std::string config_hash(const std::string& text);  // 16 hex digits, FNV-1a 64
void write_table(std::ostream& out, const std::vector<TableRow>& rows, const std::string& hash);

}  // namespace slideseg
