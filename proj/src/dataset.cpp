#include "slideseg/dataset.hpp"

#include "slideseg/pseudo.hpp"

#include <algorithm>

namespace slideseg {

std::vector<TrainingSample> samples_from_volume(const Volume& normalized, const VolumeMask& mask,
                                                const std::vector<Axis>& axes, int image_size, std::mt19937_64& rng) {
    std::vector<TrainingSample> out;
    for (Axis ax : axes)
        for (const auto& w : extract_windows(normalized, mask, ax)) out.push_back(make_training_sample(w, image_size, rng()));
    return out;
}

std::vector<TrainingSample> samples_from_records(const Volume& normalized, const std::vector<PseudoRecord>& records,
                                                 int image_size, std::mt19937_64& rng) {
    std::vector<TrainingSample> out;
    for (const auto& r : records) {
        TrainingSample s = make_training_sample(record_window(normalized, r), image_size, rng());
        s.source = LabelSource::Pseudo;
        out.push_back(std::move(s));
    }
    return out;
}

ModelConfig desk_model_config(std::uint64_t seed) {
    ModelConfig c;
    c.encoder.image_size = 32;
    c.encoder.patch_size = 4;
    c.encoder.embed_dim = 32;
    c.encoder.depth = 2;
    c.encoder.heads = 4;
    c.decoder.depth = 1;
    c.decoder.heads = 4;
    c.seed = seed;
    return c;
}

DeskDataset make_desk_dataset(const DeskDatasetOptions& opt) {
    constexpr std::array<PhantomKind, 4> kinds{PhantomKind::Sphere, PhantomKind::Ellipsoid, PhantomKind::Tube,
                                               PhantomKind::TwoBlob};
    std::mt19937_64 rng(opt.seed);
    const int n_pseudo = std::clamp(opt.pseudo, 0, opt.total);
    const int n_labeled = opt.total - n_pseudo;

    std::vector<TrainingSample> labeled;
    for (int i = 0; static_cast<int>(labeled.size()) < n_labeled; ++i) {
        const PhantomKind k = kinds[static_cast<std::size_t>(i) % kinds.size()];
        const Phantom ph = make_phantom(k, opt.shape, random_phantom_params(k, opt.shape, rng), rng());
        auto s = samples_from_volume(clip_and_normalize(ph.volume), ph.mask, {Axis::Z, Axis::Y, Axis::X},
                                     opt.image_size, rng);
        labeled.insert(labeled.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    std::vector<TrainingSample> pseudo;
    const Segmenter seg = threshold_segmenter();
    for (int i = 0; static_cast<int>(pseudo.size()) < n_pseudo; ++i) {
        const PhantomKind k = kinds[static_cast<std::size_t>(i) % kinds.size()];
        const Phantom ph = make_phantom(k, opt.shape, random_phantom_params(k, opt.shape, rng), rng());
        auto s = samples_from_records(clip_and_normalize(ph.volume), generate_pseudo_records(seg, ph.volume),
                                      opt.image_size, rng);
        pseudo.insert(pseudo.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    std::shuffle(labeled.begin(), labeled.end(), rng);
    std::shuffle(pseudo.begin(), pseudo.end(), rng);

    DeskDataset d;
    d.labeled = n_labeled;
    d.pseudo = n_pseudo;
    d.samples.assign(std::make_move_iterator(labeled.begin()), std::make_move_iterator(labeled.begin() + n_labeled));
    d.samples.insert(d.samples.end(), std::make_move_iterator(pseudo.begin()),
                     std::make_move_iterator(pseudo.begin() + n_pseudo));
    std::shuffle(d.samples.begin(), d.samples.end(), rng);
    return d;
}

std::vector<EvalCase> make_test_cases(int count, std::uint64_t seed, std::array<int, 3> shape) {
    std::mt19937_64 rng(seed);
    std::vector<EvalCase> cases;
    for (int i = 0; i < count; ++i) {
        const PhantomKind k = i % 2 ? PhantomKind::Ellipsoid : PhantomKind::Sphere;
        const Phantom ph = make_phantom(k, shape, random_phantom_params(k, shape, rng), rng());
        cases.push_back({clip_and_normalize(ph.volume), ph.mask, 1});
    }
    return cases;
}

}  // namespace slideseg
