#pragma once

#include "slideseg/model.hpp"
#include "slideseg/postprocess.hpp"

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace slideseg {

enum class Direction { Forward, Backward };
enum class Termination { None, EmptyMask, Boundary, MaxSteps };
std::string_view to_string(Direction d);
std::string_view to_string(Termination t);

struct InferenceOptions {
    FilterOptions filter;
    int max_batch = 4;
    int stride = 1;          // 1 or 2 slices between window centres
    int max_steps = 0;       // 0: extent of the volume along the axis
    int open_iterations = 1;
    std::uint32_t instance_id = 1;
    // Called after every propagation round with the number of distinct
    // slices labeled so far (never decreasing).
    std::function<void(int)> on_progress;

    void validate() const;  // throws ConfigError
};

struct PropagationState {
    Direction direction = Direction::Forward;
    int frontier_index = 0;               // centre of the next window
    std::optional<Prompt> active_prompt;  // prompt for that window, slice coordinates
    std::map<int, Mask2D> accumulated;    // slice index -> OR of predicted masks
    bool terminated = false;
    Termination reason = Termination::None;
    int steps = 0;
};

// Filtered prediction of one window at the volume's slice resolution.
struct WindowPrediction {
    DecoderOutputs outputs;
    std::optional<WindowMask> chosen;  // highest predicted IoU among survivors
};

// Model prediction for a window at any resolution: resizes to image_size,
// rescales the prompt, and resizes the logits back.
DecoderOutputs predict_resized(const SlideModel& model, const SliceWindow& window, const Prompt& prompt);

// Runs the model on the window centred at `center` with a prompt given in
// slice pixel coordinates; resizes to the model's image size and back.
WindowPrediction predict_window(const SlideModel& model, const Volume& volume, Axis axis, int center,
                                const Prompt& prompt, const FilterOptions& filter = {});

struct StepOutcome {
    bool terminated = false;
    Termination reason = Termination::None;
    int next_center = 0;
    std::optional<Prompt> prompt;
};

// Takes the end slice of the chosen window mask in the travel direction,
// opens it, and emits its bbox as the box prompt of the window one stride
// further. Terminates at the volume boundary or when the opened mask is
// empty.
StepOutcome propagate_step(const std::optional<WindowMask>& chosen, Direction direction, int center, int extent,
                           const InferenceOptions& opt = {});

// Greedy, order-preserving packing into batches of at most max_batch.
std::vector<std::vector<std::size_t>> batch_windows(std::size_t pending, int max_batch);

struct SegmentationResult {
    VolumeMask mask;
    std::array<PropagationState, 2> directions;  // forward, backward
    int windows_run = 0;
    bool seed_empty = false;
    std::string diagnostic;
};

// One prompt on the central slice of window (start-1, start, start+1),
// propagated in both directions until the end-slice mask is empty.
SegmentationResult segment_volume(const SlideModel& model, const Volume& volume, Axis axis, int start_index,
                                  const Prompt& seed_prompt, const InferenceOptions& opt = {});

// Centred grid with stride grid_step, skipping points inside any covered mask.
std::vector<PointPrompt> sample_uncovered_points(int height, int width, const std::vector<Mask2D>& covered,
                                                 int grid_step);

struct EverythingOptions {
    InferenceOptions inference;
    int grid_step = 8;
    int rounds = 2;
    double nms_iou = 0.7;
};

// Grid-point seeding on one slice, NMS across seeds, then propagation of
// every kept instance. Instances are numbered from 1 in score order; a
// voxel keeps the first instance that claims it.
SegmentationResult segment_everything(const SlideModel& model, const Volume& volume, Axis axis, int index,
                                      const EverythingOptions& opt = {});

}  // namespace slideseg
