#pragma once

// Annotation workflow over HTTP (all routes under /v1):
//   POST /v1/volumes                          container body -> 201 {"id"}
//   GET  /v1/volumes/{id}                     shape, spacing, modality
//   GET  /v1/volumes/{id}/slices/{axis}/{i}   PNG, optional ?overlay={job}
//   POST /v1/volumes/{id}/jobs                {"axis","slice","prompt"} -> 201 job
//   GET  /v1/jobs/{id}                        job state and per-slice RLE masks
//   POST /v1/jobs/{id}/refine                 {"slice","prompt"} -> 201 child job
// Prompt: {"type":"box","coords":[x0,y0,x1,y1]} or
//         {"type":"point","coords":[x,y],"label":0|1}

#include "slideseg/inference.hpp"
#include "slideseg/model.hpp"

#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace httplib {
class Server;
}

namespace slideseg {

class HttpError : public std::runtime_error {
public:
    HttpError(int status, const std::string& msg) : std::runtime_error(msg), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

enum class JobStatus { Queued, Running, Done, Failed };
std::string_view to_string(JobStatus s);

// Throws InvalidInput for an unknown type, wrong coordinate count, a label
// other than 0/1, or coordinates outside a height x width slice.
Prompt parse_prompt_json(const nlohmann::json& j, int height, int width);

struct ServiceOptions {
    std::filesystem::path data_dir;
    int workers = 1;
    std::size_t max_upload_bytes = std::size_t{256} << 20;
    InferenceOptions inference;
};

class AnnotationService {
public:
    AnnotationService(std::shared_ptr<const SlideModel> model, ServiceOptions opt);
    ~AnnotationService();
    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    // Endpoint logic; failures throw HttpError with the response status.
    std::string create_volume(const std::string& container);
    nlohmann::json volume_info(const std::string& id);
    std::string render_slice(const std::string& id, const std::string& axis, long index, const std::string& overlay_job);
    nlohmann::json create_job(const std::string& volume_id, const nlohmann::json& body);
    nlohmann::json job_json(const std::string& job_id) const;
    nlohmann::json refine_job(const std::string& job_id, const nlohmann::json& body);
    // Final mask of a finished job (throws HttpError 404/409 otherwise).
    VolumeMask job_mask(const std::string& job_id) const;

    // Blocks until no job is queued or running.
    void wait_idle();

    void install_routes(httplib::Server& server);
    // Binds (port 0 picks a free port), serves on a background thread and
    // returns the bound port. Throws std::runtime_error when binding fails.
    int start(const std::string& host, int port);
    void stop();

private:
    struct Job {
        std::string id;
        std::string volume_id;
        std::string parent;
        Axis axis = Axis::Z;
        int slice = 1;
        nlohmann::json prompt;
        JobStatus status = JobStatus::Queued;
        int labeled = 0;
        int total = 0;
        std::string error;
        std::array<std::string, 2> termination{"none", "none"};
        std::shared_ptr<const VolumeMask> result;
    };

    std::shared_ptr<const Volume> normalized(const std::string& id);
    std::shared_ptr<const Volume> raw_volume(const std::string& id);
    std::string enqueue(Job job);
    void worker_loop();
    void run_job(const std::string& id);
    void persist_index();
    void load_index();
    nlohmann::json job_to_json(const Job& j, bool with_masks) const;
    std::filesystem::path mask_path(const std::string& job_id) const;

    std::shared_ptr<const SlideModel> model_;
    ServiceOptions opt_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable idle_cv_;
    std::vector<std::string> volumes_;
    std::map<std::string, std::shared_ptr<const Volume>> normalized_;
    std::map<std::string, Job> jobs_;
    std::vector<std::string> queue_;
    int active_ = 0;
    long next_volume_ = 1;
    long next_job_ = 1;
    bool stopping_ = false;
    std::vector<std::thread> workers_;

    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
};

}  // namespace slideseg
