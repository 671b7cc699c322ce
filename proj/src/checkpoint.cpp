#include "slideseg/checkpoint.hpp"

#include "slideseg/error.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace slideseg {

namespace {
constexpr char kMagic[8] = {'S', 'L', 'S', 'G', 'C', 'K', 'P', 'T'};

void append_mat(std::string& out, const Mat& m) {
    out.append(reinterpret_cast<const char*>(m.v.data()), m.v.size() * sizeof(double));
}
}  // namespace

std::string serialize_checkpoint(const SlideModel& model) {
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["config"] = to_json(model.config());
    auto& plist = header["params"] = nlohmann::json::array();
    for (const auto& p : model.params())
        plist.push_back({{"name", p.name}, {"group", to_string(p.group)}, {"rows", p.value.rows}, {"cols", p.value.cols}});
    header["buffers"] = nlohmann::json::array(
        {{{"name", "pe_gaussian"}, {"rows", model.pe_gaussian().rows}, {"cols", model.pe_gaussian().cols}}});
    const std::string hs = header.dump();
    std::string out(kMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = hs.size();
    out.append(reinterpret_cast<const char*>(&version), 4);
    out.append(reinterpret_cast<const char*>(&len), 8);
    out += hs;
    for (const auto& p : model.params()) append_mat(out, p.value);
    append_mat(out, model.pe_gaussian());
    return out;
}

SlideModel deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw CorruptData("not a checkpoint");
    std::uint32_t version;
    std::uint64_t len;
    std::memcpy(&version, bytes.data() + 8, 4);
    std::memcpy(&len, bytes.data() + 12, 8);
    if (version != kCheckpointVersion) throw CorruptData("unsupported checkpoint version " + std::to_string(version));
    if (bytes.size() < 20 + len) throw CorruptData("truncated checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(20, len));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptData(std::string("checkpoint header is not JSON: ") + e.what());
    }
    SlideModel model(model_config_from_json(header.at("config")));
    std::size_t off = 20 + len;
    auto read_mat = [&](Mat& m, int rows, int cols, const std::string& name) {
        if (rows != m.rows || cols != m.cols) throw ConfigError("incompatible weights for " + name);
        const std::size_t n = m.v.size() * sizeof(double);
        if (off + n > bytes.size()) throw CorruptData("truncated checkpoint payload at " + name);
        std::memcpy(m.v.data(), bytes.data() + off, n);
        off += n;
    };
    try {
        const auto& plist = header.at("params");
        if (static_cast<int>(plist.size()) != model.params().size())
            throw ConfigError("checkpoint parameter count does not match its config");
        for (int i = 0; i < model.params().size(); ++i) {
            const auto& e = plist.at(static_cast<std::size_t>(i));
            const auto name = e.at("name").get<std::string>();
            if (name != model.params()[i].name) throw ConfigError("unexpected parameter " + name);
            if (parse_param_group(e.at("group").get<std::string>()) != model.params()[i].group)
                throw ConfigError("parameter group mismatch for " + name);
            read_mat(model.params().value(i), e.at("rows").get<int>(), e.at("cols").get<int>(), name);
        }
        Mat pe = model.pe_gaussian();
        const auto& b = header.at("buffers").at(0);
        read_mat(pe, b.at("rows").get<int>(), b.at("cols").get<int>(), "pe_gaussian");
        model.set_pe_gaussian(pe);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptData(std::string("malformed checkpoint header: ") + e.what());
    }
    if (off != bytes.size()) throw CorruptData("trailing bytes after checkpoint payload");
    return model;
}

void save_checkpoint(const SlideModel& model, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    const std::string bytes = serialize_checkpoint(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InvalidInput("failed writing checkpoint " + file.string());
}

SlideModel load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InvalidInput("cannot open checkpoint " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace slideseg
