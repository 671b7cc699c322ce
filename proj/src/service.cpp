#include "slideseg/service.hpp"

#include "slideseg/error.hpp"
#include "slideseg/png.hpp"
#include "slideseg/rle.hpp"
#include "slideseg/volume_files.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace slideseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(JobStatus s) {
    switch (s) {
        case JobStatus::Queued: return "queued";
        case JobStatus::Running: return "running";
        case JobStatus::Done: return "done";
        case JobStatus::Failed: return "failed";
    }
    return "failed";
}

namespace {

JobStatus parse_job_status(const std::string& s) {
    if (s == "queued") return JobStatus::Queued;
    if (s == "running") return JobStatus::Running;
    if (s == "done") return JobStatus::Done;
    if (s == "failed") return JobStatus::Failed;
    throw CorruptData("unknown job status " + s);
}

std::pair<int, int> slice_dims(int nx, int ny, int nz, Axis axis) {
    switch (axis) {
        case Axis::Z: return {ny, nx};
        case Axis::Y: return {nz, nx};
        case Axis::X: return {nz, ny};
    }
    return {ny, nx};
}

std::string make_id(char prefix, long n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%06ld", prefix, n);
    return buf;
}

Axis axis_or_422(const json& body) {
    if (!body.contains("axis")) return Axis::Z;
    if (!body["axis"].is_string()) throw HttpError(422, "axis must be a string");
    try {
        return parse_axis(body["axis"].get<std::string>());
    } catch (const InvalidInput& e) {
        throw HttpError(422, e.what());
    }
}

int slice_or_422(const json& body, int extent) {
    if (!body.contains("slice") || !body["slice"].is_number_integer()) throw HttpError(422, "slice must be an integer");
    const long s = body["slice"].get<long>();
    if (s < 1 || s > extent - 2)
        throw HttpError(422, "slice must lie in [1, " + std::to_string(extent - 2) + "]");
    return static_cast<int>(s);
}

std::array<std::uint8_t, 3> palette(std::uint32_t id) {
    static const std::array<std::array<std::uint8_t, 3>, 6> colors{{{255, 64, 64}, {64, 200, 64}, {64, 128, 255},
                                                                     {255, 200, 0}, {200, 64, 255}, {0, 220, 220}}};
    return colors[(id - 1) % colors.size()];
}

}  // namespace

Prompt parse_prompt_json(const json& j, int height, int width) {
    if (!j.is_object()) throw InvalidInput("prompt must be an object");
    if (!j.contains("type") || !j["type"].is_string()) throw InvalidInput("prompt type missing");
    if (!j.contains("coords") || !j["coords"].is_array()) throw InvalidInput("prompt coords missing");
    std::vector<int> c;
    for (const auto& v : j["coords"]) {
        if (!v.is_number_integer()) throw InvalidInput("prompt coords must be integers");
        c.push_back(v.get<int>());
    }
    const std::string type = j["type"].get<std::string>();
    auto inside = [&](int x, int y) { return x >= 0 && x < width && y >= 0 && y < height; };
    if (type == "box") {
        if (c.size() != 4) throw InvalidInput("box prompt needs 4 coords");
        if (!inside(c[0], c[1]) || !inside(c[2], c[3]) || c[2] < c[0] || c[3] < c[1])
            throw InvalidInput("box outside the slice or inverted");
        return Prompt::box(BBox{c[0], c[1], c[2], c[3]});
    }
    if (type == "point") {
        if (c.size() != 2) throw InvalidInput("point prompt needs 2 coords");
        if (!inside(c[0], c[1])) throw InvalidInput("point outside the slice");
        int label = 1;
        if (j.contains("label")) {
            if (!j["label"].is_number_integer()) throw InvalidInput("label must be 0 or 1");
            label = j["label"].get<int>();
            if (label != 0 && label != 1) throw InvalidInput("label must be 0 or 1");
        }
        return Prompt::point(c[0], c[1], label);
    }
    throw InvalidInput("unknown prompt type " + type);
}

AnnotationService::AnnotationService(std::shared_ptr<const SlideModel> model, ServiceOptions opt)
    : model_(std::move(model)), opt_(std::move(opt)) {
    if (!model_) throw ConfigError("service needs a model");
    if (opt_.workers < 1) throw ConfigError("workers must be at least 1");
    opt_.inference.validate();
    fs::create_directories(opt_.data_dir / "volumes");
    fs::create_directories(opt_.data_dir / "jobs");
    load_index();
    for (int i = 0; i < opt_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

AnnotationService::~AnnotationService() {
    stop();
    {
        std::lock_guard lk(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
}

fs::path AnnotationService::mask_path(const std::string& job_id) const {
    return opt_.data_dir / "jobs" / (job_id + ".mask.rle.json");
}

void AnnotationService::persist_index() {
    json jobs = json::array();
    for (const auto& [id, j] : jobs_) jobs.push_back(job_to_json(j, false));
    const json idx{{"version", 1}, {"next_volume", next_volume_}, {"next_job", next_job_}, {"volumes", volumes_},
                   {"jobs", jobs}};
    const fs::path tmp = opt_.data_dir / "index.json.tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << idx.dump(1) << '\n';
    }
    fs::rename(tmp, opt_.data_dir / "index.json");
}

void AnnotationService::load_index() {
    const fs::path file = opt_.data_dir / "index.json";
    if (!fs::exists(file)) return;
    std::ifstream in(file, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        const json idx = json::parse(ss.str());
        next_volume_ = idx.at("next_volume").get<long>();
        next_job_ = idx.at("next_job").get<long>();
        volumes_ = idx.at("volumes").get<std::vector<std::string>>();
        for (const auto& e : idx.at("jobs")) {
            Job j;
            j.id = e.at("id").get<std::string>();
            j.volume_id = e.at("volume_id").get<std::string>();
            j.parent = e.at("parent").is_null() ? std::string() : e.at("parent").get<std::string>();
            j.axis = parse_axis(e.at("axis").get<std::string>());
            j.slice = e.at("slice").get<int>();
            j.prompt = e.at("prompt");
            j.status = parse_job_status(e.at("status").get<std::string>());
            j.labeled = e.at("progress").at("labeled").get<int>();
            j.total = e.at("progress").at("total").get<int>();
            j.error = e.value("error", std::string());
            if (e.contains("termination"))
                j.termination = {e["termination"].at("forward").get<std::string>(),
                                 e["termination"].at("backward").get<std::string>()};
            if (j.status == JobStatus::Done) {
                try {
                    j.result = std::make_shared<const VolumeMask>(load_mask(mask_path(j.id)));
                } catch (const std::exception& ex) {
                    j.status = JobStatus::Failed;
                    j.error = std::string("stored result unreadable: ") + ex.what();
                }
            } else if (j.status != JobStatus::Failed) {
                j.status = JobStatus::Failed;
                j.error = "interrupted by service restart";
            }
            jobs_[j.id] = std::move(j);
        }
    } catch (const json::exception& e) {
        throw CorruptData(std::string("service index unreadable: ") + e.what());
    }
}

std::shared_ptr<const Volume> AnnotationService::raw_volume(const std::string& id) {
    {
        std::lock_guard lk(mu_);
        if (std::find(volumes_.begin(), volumes_.end(), id) == volumes_.end()) throw HttpError(404, "unknown volume " + id);
    }
    return std::make_shared<const Volume>(load_volume(opt_.data_dir / "volumes" / (id + ".vol.json")));
}

std::shared_ptr<const Volume> AnnotationService::normalized(const std::string& id) {
    {
        std::lock_guard lk(mu_);
        auto it = normalized_.find(id);
        if (it != normalized_.end()) return it->second;
    }
    auto v = std::make_shared<const Volume>(clip_and_normalize(*raw_volume(id)));
    std::lock_guard lk(mu_);
    return normalized_.emplace(id, std::move(v)).first->second;
}

std::string AnnotationService::create_volume(const std::string& container) {
    if (container.size() > opt_.max_upload_bytes) throw HttpError(413, "volume exceeds the upload limit");
    Volume v;
    try {
        v = decode_container(container);
    } catch (const CorruptData& e) {
        throw HttpError(400, e.what());
    } catch (const InvalidInput& e) {
        throw HttpError(400, e.what());
    } catch (const ConfigError& e) {
        throw HttpError(400, e.what());
    }
    std::lock_guard lk(mu_);
    const std::string id = make_id('v', next_volume_++);
    v.set_id(id);
    save_volume(v, opt_.data_dir / "volumes");
    volumes_.push_back(id);
    persist_index();
    return id;
}

json AnnotationService::volume_info(const std::string& id) {
    const auto v = raw_volume(id);
    return {{"id", id},
            {"shape", {v->nx(), v->ny(), v->nz()}},
            {"spacing", {v->spacing().x, v->spacing().y, v->spacing().z}},
            {"modality", std::string(to_string(v->modality()))}};
}

std::string AnnotationService::render_slice(const std::string& id, const std::string& axis_name, long index,
                                            const std::string& overlay_job) {
    Axis axis;
    try {
        axis = parse_axis(axis_name);
    } catch (const InvalidInput& e) {
        throw HttpError(400, e.what());
    }
    const auto vol = normalized(id);
    if (index < 0 || index >= vol->dim(axis)) throw HttpError(416, "slice index out of range");
    const Image2D img = vol->slice(axis, static_cast<int>(index));

    std::shared_ptr<const VolumeMask> overlay;
    if (!overlay_job.empty()) {
        std::lock_guard lk(mu_);
        auto it = jobs_.find(overlay_job);
        if (it == jobs_.end() || it->second.volume_id != id) throw HttpError(404, "unknown job " + overlay_job);
        overlay = it->second.result;
    }

    PngImage gray{img.width, img.height, 1, std::vector<std::uint8_t>(img.size())};
    for (std::size_t k = 0; k < img.size(); ++k)
        gray.pixels[k] = static_cast<std::uint8_t>(std::clamp(std::lround(img.data[k]), 0L, 255L));

    if (overlay) {
        bool any = false;
        std::vector<std::uint32_t> labels(img.size(), 0);
        for (const auto& [iid, info] : overlay->instances()) {
            const Mask2D m = overlay->slice(axis, static_cast<int>(index), iid);
            for (std::size_t k = 0; k < m.size(); ++k)
                if (m.data[k] && !labels[k]) {
                    labels[k] = iid;
                    any = true;
                }
        }
        if (any) {
            PngImage rgb{img.width, img.height, 3, std::vector<std::uint8_t>(img.size() * 3)};
            for (std::size_t k = 0; k < img.size(); ++k)
                for (int c = 0; c < 3; ++c) {
                    const int g = gray.pixels[k];
                    rgb.pixels[k * 3 + static_cast<std::size_t>(c)] =
                        labels[k] ? static_cast<std::uint8_t>((g + palette(labels[k])[static_cast<std::size_t>(c)] + 1) / 2)
                                  : static_cast<std::uint8_t>(g);
                }
            return encode_png(rgb);
        }
    }
    return encode_png(gray);
}

std::string AnnotationService::enqueue(Job job) {
    std::lock_guard lk(mu_);
    for (const auto& [id, j] : jobs_)
        if (j.volume_id == job.volume_id && (j.status == JobStatus::Queued || j.status == JobStatus::Running))
            throw HttpError(409, "annotation in progress on volume " + job.volume_id);
    job.id = make_id('j', next_job_++);
    const std::string id = job.id;
    jobs_[id] = std::move(job);
    queue_.push_back(id);
    persist_index();
    cv_.notify_one();
    return id;
}

json AnnotationService::create_job(const std::string& volume_id, const json& body) {
    if (!body.is_object()) throw HttpError(400, "job body must be a JSON object");
    const auto vol = raw_volume(volume_id);
    Job j;
    j.volume_id = volume_id;
    j.axis = axis_or_422(body);
    j.total = vol->dim(j.axis);
    j.slice = slice_or_422(body, j.total);
    if (!body.contains("prompt")) throw HttpError(422, "prompt missing");
    const auto [h, w] = slice_dims(vol->nx(), vol->ny(), vol->nz(), j.axis);
    try {
        parse_prompt_json(body["prompt"], h, w);
    } catch (const InvalidInput& e) {
        throw HttpError(422, e.what());
    }
    j.prompt = body["prompt"];
    const std::string id = enqueue(std::move(j));
    return job_json(id);
}

json AnnotationService::refine_job(const std::string& job_id, const json& body) {
    if (!body.is_object()) throw HttpError(400, "refine body must be a JSON object");
    Job parent;
    {
        std::lock_guard lk(mu_);
        auto it = jobs_.find(job_id);
        if (it == jobs_.end()) throw HttpError(404, "unknown job " + job_id);
        parent = it->second;
    }
    if (parent.status != JobStatus::Done) throw HttpError(409, "only finished jobs can be refined");
    const auto vol = raw_volume(parent.volume_id);
    Job j;
    j.volume_id = parent.volume_id;
    j.parent = parent.id;
    j.axis = parent.axis;
    j.total = parent.total;
    j.slice = slice_or_422(body, j.total);
    if (!body.contains("prompt")) throw HttpError(422, "prompt missing");
    const auto [h, w] = slice_dims(vol->nx(), vol->ny(), vol->nz(), j.axis);
    try {
        parse_prompt_json(body["prompt"], h, w);
    } catch (const InvalidInput& e) {
        throw HttpError(422, e.what());
    }
    j.prompt = body["prompt"];
    const std::string id = enqueue(std::move(j));
    return job_json(id);
}

json AnnotationService::job_to_json(const Job& j, bool with_masks) const {
    json out{{"id", j.id},
             {"volume_id", j.volume_id},
             {"status", std::string(to_string(j.status))},
             {"axis", std::string(to_string(j.axis))},
             {"slice", j.slice},
             {"prompt", j.prompt},
             {"parent", j.parent.empty() ? json(nullptr) : json(j.parent)},
             {"progress", {{"labeled", j.labeled}, {"total", j.total}}},
             {"termination", {{"forward", j.termination[0]}, {"backward", j.termination[1]}}}};
    if (!j.error.empty()) out["error"] = j.error;
    if (with_masks) {
        json masks = json::array();
        if (j.result)
            for (int i = 0; i < j.result->dim(j.axis); ++i) {
                const Mask2D m = j.result->slice(j.axis, i, 0);
                if (count_foreground(m) == 0) continue;
                masks.push_back({{"index", i}, {"rle", to_json(rle_encode(m))}});
            }
        out["masks"] = masks;
    }
    return out;
}

json AnnotationService::job_json(const std::string& job_id) const {
    std::lock_guard lk(mu_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw HttpError(404, "unknown job " + job_id);
    return job_to_json(it->second, true);
}

VolumeMask AnnotationService::job_mask(const std::string& job_id) const {
    std::lock_guard lk(mu_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw HttpError(404, "unknown job " + job_id);
    if (!it->second.result) throw HttpError(409, "job has no result");
    return *it->second.result;
}

void AnnotationService::wait_idle() {
    std::unique_lock lk(mu_);
    idle_cv_.wait(lk, [this] { return queue_.empty() && active_ == 0; });
}

void AnnotationService::worker_loop() {
    while (true) {
        std::string id;
        {
            std::unique_lock lk(mu_);
            cv_.wait(lk, [this] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = queue_.front();
            queue_.erase(queue_.begin());
            ++active_;
            jobs_[id].status = JobStatus::Running;
            persist_index();
        }
        run_job(id);
        {
            std::lock_guard lk(mu_);
            --active_;
        }
        idle_cv_.notify_all();
    }
}

void AnnotationService::run_job(const std::string& id) {
    Job job;
    std::shared_ptr<const VolumeMask> parent_mask;
    {
        std::lock_guard lk(mu_);
        job = jobs_[id];
        if (!job.parent.empty()) parent_mask = jobs_[job.parent].result;
    }
    try {
        const auto vol = normalized(job.volume_id);
        const auto [h, w] = slice_dims(vol->nx(), vol->ny(), vol->nz(), job.axis);
        const Prompt prompt = parse_prompt_json(job.prompt, h, w);
        InferenceOptions io = opt_.inference;
        io.on_progress = [this, id](int n) {
            std::lock_guard lk(mu_);
            auto& j = jobs_[id];
            j.labeled = std::max(j.labeled, n);
        };
        SegmentationResult seg = segment_volume(*model_, *vol, job.axis, job.slice, prompt, io);
        VolumeMask mask = std::move(seg.mask);
        if (parent_mask) {
            auto& dst = mask.labels();
            const auto& src = parent_mask->labels();
            for (std::size_t k = 0; k < dst.size(); ++k)
                if (!dst[k] && src[k]) dst[k] = src[k];
            for (const auto& [iid, info] : parent_mask->instances()) mask.instances().emplace(iid, info);
        }
        if (mask.instances().empty())
            mask.instances()[opt_.inference.instance_id] =
                InstanceInfo{"instance_" + std::to_string(opt_.inference.instance_id), LabelSource::Predicted};
        save_mask(mask, mask_path(id));
        std::lock_guard lk(mu_);
        auto& j = jobs_[id];
        int nonempty = 0;
        for (int i = 0; i < mask.dim(j.axis); ++i) nonempty += count_foreground(mask.slice(j.axis, i, 0)) > 0;
        j.labeled = std::max(j.labeled, nonempty);
        j.termination = {std::string(to_string(seg.directions[0].reason)), std::string(to_string(seg.directions[1].reason))};
        if (seg.seed_empty) j.error = seg.diagnostic;
        j.result = std::make_shared<const VolumeMask>(std::move(mask));
        j.status = JobStatus::Done;
        persist_index();
    } catch (const std::exception& e) {
        std::lock_guard lk(mu_);
        auto& j = jobs_[id];
        j.status = JobStatus::Failed;
        j.error = e.what();
        persist_index();
    }
}

void AnnotationService::install_routes(httplib::Server& server) {
    auto guarded = [](auto fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const HttpError& e) {
                res.status = e.status();
                res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            } catch (const json::exception& e) {
                res.status = 400;
                res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 500;
                res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            }
        };
    };
    auto send_json = [](httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };

    server.Post("/v1/volumes", guarded([this, send_json](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 201, {{"id", create_volume(req.body)}});
    }));
    server.Get(R"(/v1/volumes/([^/]+))", guarded([this, send_json](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, volume_info(req.matches[1]));
    }));
    server.Get(R"(/v1/volumes/([^/]+)/slices/([^/]+)/(-?[0-9]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                   long index = 0;
                   try {
                       index = std::stol(req.matches[3]);
                   } catch (const std::out_of_range&) {
                       throw HttpError(416, "slice index out of range");
                   }
                   const std::string overlay = req.has_param("overlay") ? req.get_param_value("overlay") : "";
                   res.set_content(render_slice(req.matches[1], req.matches[2], index, overlay), "image/png");
               }));
    server.Post(R"(/v1/volumes/([^/]+)/jobs)", guarded([this, send_json](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 201, create_job(req.matches[1], json::parse(req.body)));
    }));
    server.Get(R"(/v1/jobs/([^/]+))", guarded([this, send_json](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, job_json(req.matches[1]));
    }));
    server.Post(R"(/v1/jobs/([^/]+)/refine)", guarded([this, send_json](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 201, refine_job(req.matches[1], json::parse(req.body)));
    }));
    server.set_payload_max_length(opt_.max_upload_bytes);
}

int AnnotationService::start(const std::string& host, int port) {
    if (server_) throw std::runtime_error("service already started");
    server_ = std::make_unique<httplib::Server>();
    install_routes(*server_);
    int bound = port;
    if (port == 0) {
        bound = server_->bind_to_any_port(host);
    } else if (!server_->bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound <= 0) {
        server_.reset();
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void AnnotationService::stop() {
    if (!server_) return;
    server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
    server_.reset();
}

}  // namespace slideseg
