#pragma once

#include "slideseg/harness.hpp"
#include "slideseg/phantom.hpp"
#include "slideseg/records.hpp"
#include "slideseg/trainer.hpp"

#include <random>
#include <vector>

namespace slideseg {

// Windows of every labeled instance along the given axes, indicator (1,1,1).
// The volume must already be normalized.
std::vector<TrainingSample> samples_from_volume(const Volume& normalized, const VolumeMask& mask,
                                                const std::vector<Axis>& axes, int image_size, std::mt19937_64& rng);
std::vector<TrainingSample> samples_from_records(const Volume& normalized, const std::vector<PseudoRecord>& records,
                                                 int image_size, std::mt19937_64& rng);

// Toy model sized for a single CPU core: 32x32 windows, 4x4 patches.
ModelConfig desk_model_config(std::uint64_t seed = 0);

struct DeskDatasetOptions {
    int total = 500;
    int pseudo = 150;  // 0 for a 3D-only set
    std::array<int, 3> shape{32, 32, 32};
    std::uint64_t seed = 11;
    int image_size = 32;
};
struct DeskDataset {
    std::vector<TrainingSample> samples;
    int labeled = 0;
    int pseudo = 0;
};
// Mix of 3D-labeled windows (all four phantom kinds, three axes) and
// pseudo-labeled windows from separate unlabeled phantoms (threshold
// segmenter), shuffled.
DeskDataset make_desk_dataset(const DeskDatasetOptions& opt = {});

// Held-out sphere and ellipsoid phantoms, alternating, normalized.
std::vector<EvalCase> make_test_cases(int count, std::uint64_t seed, std::array<int, 3> shape = {32, 32, 32});

}  // namespace slideseg
