// slideseg: command-line entry point for every pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime fault.

#include "slideseg/checkpoint.hpp"
#include "slideseg/dataset.hpp"
#include "slideseg/error.hpp"
#include "slideseg/harness.hpp"
#include "slideseg/inference.hpp"
#include "slideseg/metrics.hpp"
#include "slideseg/phantom.hpp"
#include "slideseg/pseudo.hpp"
#include "slideseg/records.hpp"
#include "slideseg/service.hpp"
#include "slideseg/volume_files.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <atomic>
#include <csignal>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace slideseg;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const std::string& require_file(const std::string& p) {
    if (!p.empty() && !fs::is_regular_file(p)) throw MissingFile("no such file: " + p);
    return p;
}

std::uint64_t env_seed() {
    const char* s = std::getenv("SLIDESEG_SEED");
    if (!s || !*s) return 0;
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw UsageError("SLIDESEG_SEED must be an unsigned integer");
    }
}

int env_jobs() {
    const char* s = std::getenv("SLIDESEG_JOBS");
    if (!s || !*s) return 1;
    try {
        return std::max(1, std::stoi(s));
    } catch (const std::exception&) {
        throw UsageError("SLIDESEG_JOBS must be an integer");
    }
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MissingFile("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::array<int, 3> parse_shape(const std::string& s) {
    std::array<int, 3> out{};
    std::stringstream ss(s);
    std::string part;
    std::vector<int> v;
    while (std::getline(ss, part, ',')) v.push_back(std::stoi(part));
    if (v.size() == 1) return {v[0], v[0], v[0]};
    if (v.size() != 3) throw UsageError("--shape takes N or NX,NY,NZ");
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

Prompt parse_prompt_flag(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw UsageError("--prompt must be box:x0,y0,x1,y1 or point:x,y");
    const std::string kind = s.substr(0, colon);
    std::vector<int> v;
    std::stringstream ss(s.substr(colon + 1));
    std::string part;
    try {
        while (std::getline(ss, part, ',')) v.push_back(std::stoi(part));
    } catch (const std::exception&) {
        throw UsageError("--prompt coordinates must be integers");
    }
    if (kind == "box" && v.size() == 4) return Prompt::box(BBox{v[0], v[1], v[2], v[3]});
    if (kind == "point" && v.size() == 2) return Prompt::point(v[0], v[1]);
    throw UsageError("--prompt must be box:x0,y0,x1,y1 or point:x,y");
}

// Mask file next to a volume sidecar "<dir>/<id>.vol.json", if present.
fs::path mask_for(const fs::path& sidecar) {
    std::string name = sidecar.filename().string();
    const std::string suffix = ".vol.json";
    if (name.size() > suffix.size() && name.ends_with(suffix)) name = name.substr(0, name.size() - suffix.size());
    return sidecar.parent_path() / (name + ".mask.rle.json");
}

std::vector<fs::path> files_with_suffix(const fs::path& dir, const std::string& suffix) {
    if (!fs::is_directory(dir)) throw MissingFile("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename().string().ends_with(suffix)) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path);
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"slideseg: sliding-window promptable volume segmentation"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    int jobs = 1;
    bool seed_given = false;

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic phantom volume and its mask");
    std::string kind = "sphere", shape_s = "32", out_dir = ".", synth_id;
    bool synth_random = false;
    int synth_count = 1;
    synth->add_option("--kind", kind, "sphere|ellipsoid|tube|two_blob");
    synth->add_option("--shape", shape_s, "N or NX,NY,NZ");
    synth->add_option("--out", out_dir, "Output directory");
    synth->add_option("--id", synth_id, "Volume id (default <kind>_<seed>)");
    synth->add_flag("--random", synth_random, "Random geometry instead of the centred default");
    synth->add_option("--count", synth_count, "Number of phantoms (seeds seed..seed+count-1)")->check(CLI::PositiveNumber);

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "Clip and normalize a volume to [0,255]");
    std::string prep_in, prep_out = ".";
    prep->add_option("--in", prep_in, "Volume sidecar (.vol.json)")->required();
    prep->add_option("--out", prep_out, "Output directory");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the toy model");
    std::string train_data, train_out = "model.ckpt", train_config, train_init, train_metrics;
    std::vector<std::string> train_axes{"z"};
    int steps = 0, batch = 0, image_size = 32, patch = 4, dim = 32, depth = 2, heads = 4, dec_depth = 1;
    int max_samples = 0;
    double lr = 0;
    bool desk = false;
    train_cmd->add_option("--data", train_data, "Directory of volumes with masks and *.records.json files");
    train_cmd->add_flag("--desk", desk, "Train on the generated desk-scale phantom mix instead of --data");
    train_cmd->add_option("--out", train_out, "Checkpoint to write");
    train_cmd->add_option("--config", train_config, "Training config (JSON or key = value lines)");
    train_cmd->add_option("--init", train_init, "Start from this checkpoint");
    train_cmd->add_option("--metrics", train_metrics, "Line-delimited JSON metrics file");
    train_cmd->add_option("--axes", train_axes, "Slice axes for 3D windows")->delimiter(',');
    train_cmd->add_option("--max-samples", max_samples, "Random subset of at most this many samples");
    auto* steps_opt = train_cmd->add_option("--steps", steps, "Optimization steps");
    auto* batch_opt = train_cmd->add_option("--batch-size", batch, "Samples per step");
    auto* lr_opt = train_cmd->add_option("--lr", lr, "Learning rate");
    train_cmd->add_option("--image-size", image_size);
    train_cmd->add_option("--patch-size", patch);
    train_cmd->add_option("--embed-dim", dim);
    train_cmd->add_option("--depth", depth);
    train_cmd->add_option("--heads", heads);
    train_cmd->add_option("--decoder-depth", dec_depth);

    // pseudo
    auto* pseudo_cmd = app.add_subcommand("pseudo", "Generate pseudo-label records for a volume");
    std::string pseudo_in, pseudo_out, pseudo_ckpt, pseudo_axis = "z";
    int slice_step = 1;
    pseudo_cmd->add_option("--in", pseudo_in, "Volume sidecar (.vol.json)")->required();
    pseudo_cmd->add_option("--out", pseudo_out, "Record file (default <id>.records.json next to the volume)");
    pseudo_cmd->add_option("--checkpoint", pseudo_ckpt, "Use the model as segmenter instead of the threshold oracle");
    pseudo_cmd->add_option("--axis", pseudo_axis);
    pseudo_cmd->add_option("--slice-step", slice_step)->check(CLI::PositiveNumber);

    // infer
    auto* infer = app.add_subcommand("infer", "Segment a volume from one prompt");
    std::string infer_vol, infer_ckpt, infer_axis = "z", infer_prompt, infer_out = "prediction.mask.rle.json";
    int start_index = -1, max_batch = 4, grid_step = 8;
    bool everything = false;
    infer->add_option("--volume", infer_vol, "Volume sidecar (.vol.json)")->required();
    infer->add_option("--checkpoint", infer_ckpt)->required();
    infer->add_option("--axis", infer_axis);
    infer->add_option("--start-index", start_index, "Centre slice of the seed window");
    infer->add_option("--prompt", infer_prompt, "box:x0,y0,x1,y1 or point:x,y");
    infer->add_flag("--everything", everything, "Grid-point seeding on the start slice");
    infer->add_option("--grid-step", grid_step);
    infer->add_option("--max-batch", max_batch);
    infer->add_option("--out", infer_out);

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluation tables on held-out phantoms");
    std::string suite = "dice", eval_ckpt, eval_out = "-";
    int eval_count = 10;
    eval->add_option("--suite", suite, "dice|noisy|zspacing|efficiency")->required();
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--count", eval_count, "Number of test phantoms")->check(CLI::PositiveNumber);
    eval->add_option("--out", eval_out, "CSV output (default stdout)");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the annotation service");
    std::string serve_data = "slideseg-data", serve_ckpt, host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--data", serve_data, "Storage directory");
    serve->add_option("--checkpoint", serve_ckpt)->required();
    serve->add_option("--host", host);
    serve->add_option("--port", port);

    for (auto* sub : {synth, prep, train_cmd, pseudo_cmd, infer, eval, serve}) {
        sub->add_option("--seed", seed, "Random seed (env SLIDESEG_SEED)")->each([&](const std::string&) { seed_given = true; });
        sub->add_option("--jobs", jobs, "Worker threads (env SLIDESEG_JOBS)")->check(CLI::PositiveNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (!seed_given) seed = env_seed();
        bool jobs_given = false;
        for (auto* sub : app.get_subcommands()) jobs_given = jobs_given || sub->count("--jobs") > 0;
        if (!jobs_given) jobs = env_jobs();
        omp_set_num_threads(jobs);

        if (*synth) {
            const PhantomKind k = parse_phantom_kind(kind);
            const auto shape = parse_shape(shape_s);
            fs::create_directories(out_dir);
            for (int i = 0; i < synth_count; ++i) {
                const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
                PhantomParams params;
                if (synth_random) {
                    std::mt19937_64 rng(s);
                    params = random_phantom_params(k, shape, rng);
                }
                Phantom ph = make_phantom(k, shape, params, s);
                std::string id = synth_id.empty() ? std::string(to_string(k)) + "_" + std::to_string(s) : synth_id;
                if (!synth_id.empty() && synth_count > 1) id += "_" + std::to_string(i);
                ph.volume.set_id(id);
                save_volume(ph.volume, out_dir);
                save_mask(ph.mask, fs::path(out_dir) / (id + ".mask.rle.json"));
                std::cout << id << '\n';
            }
        } else if (*prep) {
            Volume v = clip_and_normalize(load_volume(require_file(prep_in)));
            fs::create_directories(prep_out);
            save_volume(v, prep_out);
            const fs::path m = mask_for(prep_in);
            if (fs::exists(m)) save_mask(load_mask(m), fs::path(prep_out) / m.filename());
            std::cout << v.id() << '\n';
        } else if (*train_cmd) {
            TrainConfig tc;
            if (!train_config.empty()) tc = train_config_from_text(read_file(train_config));
            if (steps_opt->count()) tc.steps = steps;
            if (batch_opt->count()) tc.batch_size = batch;
            if (lr_opt->count()) tc.optimizer.lr = lr;
            tc.seed = seed;
            if (tc.steps <= 0 && tc.optimizer.epochs <= 0) throw UsageError("nothing to train: steps and epochs are 0");

            ModelConfig mc = desk_model_config(seed);
            mc.encoder.image_size = image_size;
            mc.encoder.patch_size = patch;
            mc.encoder.embed_dim = dim;
            mc.encoder.depth = depth;
            mc.encoder.heads = heads;
            mc.decoder.depth = dec_depth;
            mc.decoder.heads = heads;
            SlideModel model = train_init.empty() ? SlideModel(mc) : load_checkpoint(require_file(train_init));
            const int s = model.config().encoder.image_size;

            std::mt19937_64 rng(seed);
            std::vector<TrainingSample> samples;
            if (desk) {
                DeskDatasetOptions dopt;
                dopt.seed = seed;
                dopt.image_size = s;
                samples = make_desk_dataset(dopt).samples;
            } else {
                if (train_data.empty()) throw UsageError("train needs --data or --desk");
                std::vector<Axis> axes;
                for (const auto& a : train_axes) axes.push_back(parse_axis(a));
                std::map<std::string, Volume> by_id;
                for (const auto& f : files_with_suffix(train_data, ".vol.json")) {
                    Volume v = clip_and_normalize(load_volume(f));
                    const fs::path m = mask_for(f);
                    if (fs::exists(m)) {
                        auto more = samples_from_volume(v, load_mask(m), axes, s, rng);
                        samples.insert(samples.end(), more.begin(), more.end());
                    }
                    by_id.emplace(v.id(), std::move(v));
                }
                for (const auto& f : files_with_suffix(train_data, ".records.json")) {
                    const auto recs = load_records(f);
                    if (recs.empty()) continue;
                    auto it = by_id.find(recs.front().volume_id);
                    if (it == by_id.end()) throw InvalidInput("records reference unknown volume " + recs.front().volume_id);
                    auto more = samples_from_records(it->second, recs, s, rng);
                    samples.insert(samples.end(), more.begin(), more.end());
                }
            }
            if (max_samples > 0 && static_cast<int>(samples.size()) > max_samples) {
                std::shuffle(samples.begin(), samples.end(), rng);
                samples.resize(static_cast<std::size_t>(max_samples));
            }
            if (samples.empty()) throw InvalidInput("no training samples found");
            std::cerr << "training on " << samples.size() << " samples\n";

            std::ofstream metrics;
            if (!train_metrics.empty()) metrics.open(train_metrics, std::ios::binary);
            train(model, samples, tc, [&](const StepStats& st) {
                if (metrics.is_open()) metrics << to_json(st).dump() << '\n';
                if (tc.log_every > 0 && st.step % tc.log_every == 0)
                    std::cerr << "step " << st.step << " loss " << st.loss << '\n';
            });
            save_checkpoint(model, train_out);
        } else if (*pseudo_cmd) {
            Volume v = load_volume(require_file(pseudo_in));
            PseudoOptions po;
            po.axis = parse_axis(pseudo_axis);
            po.slice_step = slice_step;
            std::unique_ptr<SlideModel> model;
            Segmenter seg = threshold_segmenter();
            if (!pseudo_ckpt.empty()) {
                model = std::make_unique<SlideModel>(load_checkpoint(require_file(pseudo_ckpt)));
                seg = model_segmenter(*model);
            }
            const auto recs = generate_pseudo_records(seg, v, po);
            const fs::path out = pseudo_out.empty() ? fs::path(pseudo_in).parent_path() / (v.id() + ".records.json")
                                                    : fs::path(pseudo_out);
            save_records(v.id(), recs, out);
            std::cout << recs.size() << " records\n";
        } else if (*infer) {
            const Axis axis = parse_axis(infer_axis);
            const Volume v = clip_and_normalize(load_volume(require_file(infer_vol)));
            const SlideModel model = load_checkpoint(require_file(infer_ckpt));
            const int extent = v.dim(axis);
            if (start_index < 1 || start_index > extent - 2)
                throw UsageError("--start-index must lie in [1, " + std::to_string(extent - 2) + "]");
            InferenceOptions io;
            io.max_batch = max_batch;
            SegmentationResult r;
            if (everything) {
                EverythingOptions eo;
                eo.inference = io;
                eo.grid_step = grid_step;
                r = segment_everything(model, v, axis, start_index, eo);
            } else {
                if (infer_prompt.empty()) throw UsageError("infer needs --prompt or --everything");
                r = segment_volume(model, v, axis, start_index, parse_prompt_flag(infer_prompt), io);
                std::cerr << "forward: " << to_string(r.directions[0].reason)
                          << ", backward: " << to_string(r.directions[1].reason) << '\n';
            }
            if (!r.diagnostic.empty()) std::cerr << r.diagnostic << '\n';
            save_mask(r.mask, infer_out);
        } else if (*eval) {
            const SlideModel model = load_checkpoint(require_file(eval_ckpt));
            const auto cases = make_test_cases(eval_count, seed);
            std::vector<TableRow> rows;
            if (suite == "dice") {
                double sum = 0;
                for (std::size_t i = 0; i < cases.size(); ++i) {
                    const double d = evaluate_propagation(model, cases[i], Axis::Z).dice;
                    rows.push_back({"dice/case" + std::to_string(i), d});
                    sum += d;
                }
                rows.push_back({"dice/mean", sum / static_cast<double>(cases.size())});
            } else if (suite == "noisy") {
                char name[64];
                for (const auto& r : noisy_prompt_suite(model, cases, Axis::Z)) {
                    std::snprintf(name, sizeof name, "noisy/t=%+.2f/s=%.2f", r.translation, r.scale);
                    rows.push_back({name, r.dice});
                }
            } else if (suite == "zspacing") {
                for (double ratio : {1.0, 2.0, 4.0}) {
                    double sum = 0;
                    for (const auto& c : cases) sum += evaluate_propagation(model, resample_z(c, ratio), Axis::Z).dice;
                    char name[64];
                    std::snprintf(name, sizeof name, "zspacing/ratio=%.1f", ratio);
                    rows.push_back({name, sum / static_cast<double>(cases.size())});
                }
            } else if (suite == "efficiency") {
                std::vector<ImageResult> prop, base;
                for (const auto& c : cases) {
                    const auto p = evaluate_propagation(model, c, Axis::Z);
                    const auto b = evaluate_per_slice(model, c, Axis::Z);
                    prop.push_back({p.prompts_used, p.dice});
                    base.push_back({b.prompts_used, b.dice});
                }
                rows.push_back({"efficiency/propagation", static_cast<double>(prompt_efficiency_cycled(prop))});
                rows.push_back({"efficiency/per_slice", static_cast<double>(prompt_efficiency_cycled(base))});
            } else {
                throw UsageError("unknown suite " + suite);
            }
            std::ostringstream os;
            write_table(os, rows, config_hash(to_json(model.config()).dump() + suite + std::to_string(seed)));
            write_text(eval_out, os.str());
        } else if (*serve) {
            auto model = std::make_shared<const SlideModel>(load_checkpoint(require_file(serve_ckpt)));
            ServiceOptions so;
            so.data_dir = serve_data;
            so.workers = jobs;
            AnnotationService svc(model, so);
            const int bound = svc.start(host, port);
            std::cerr << "listening on " << host << ':' << bound << '\n';
            static std::atomic<bool> stop{false};
            std::signal(SIGINT, [](int) { stop = true; });
            std::signal(SIGTERM, [](int) { stop = true; });
            while (!stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
            svc.stop();
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return 1;
    } catch (const MissingFile& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const CorruptData& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "fault: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
