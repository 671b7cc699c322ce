#include "slideseg/volume_files.hpp"

#include "slideseg/error.hpp"
#include "slideseg/rle.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace slideseg {

static_assert(std::endian::native == std::endian::little, "raw volume I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'L', 'S', 'G', 'V', 'O', 'L', '1'};

nlohmann::json sidecar(const Volume& v) {
    return {{"version", 1},
            {"id", v.id()},
            {"shape", {v.nx(), v.ny(), v.nz()}},
            {"spacing", {v.spacing().x, v.spacing().y, v.spacing().z}},
            {"modality", std::string(to_string(v.modality()))},
            {"dtype", "float32"},
            {"byte_order", "little"}};
}

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "uint8") return 1;
    if (dtype == "int16" || dtype == "uint16") return 2;
    if (dtype == "int32" || dtype == "float32") return 4;
    if (dtype == "float64") return 8;
    throw CorruptData("unsupported dtype: " + dtype);
}

template <class T>
float read_as(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<float>(v);
}

Volume volume_from(const nlohmann::json& h, const char* data, std::size_t bytes) {
    try {
        if (h.at("version").get<int>() != 1) throw CorruptData("unsupported volume version");
        const auto shape = h.at("shape").get<std::vector<int>>();
        const auto spacing = h.at("spacing").get<std::vector<double>>();
        if (shape.size() != 3 || spacing.size() != 3) throw CorruptData("shape/spacing must have 3 entries");
        if (h.value("byte_order", std::string("little")) != "little") throw CorruptData("only little-endian volumes");
        const auto dtype = h.at("dtype").get<std::string>();
        const std::size_t es = dtype_size(dtype);
        Volume v(shape[0], shape[1], shape[2], Spacing{spacing[0], spacing[1], spacing[2]},
                 parse_modality(h.at("modality").get<std::string>()), h.value("id", std::string{}));
        const std::size_t n = v.voxels().size();
        if (bytes != n * es)
            throw CorruptData("voxel payload has " + std::to_string(bytes) + " bytes, expected " + std::to_string(n * es));
        auto& out = v.voxels();
        for (std::size_t i = 0; i < n; ++i) {
            const char* p = data + i * es;
            if (dtype == "uint8") out[i] = read_as<std::uint8_t>(p);
            else if (dtype == "int16") out[i] = read_as<std::int16_t>(p);
            else if (dtype == "uint16") out[i] = read_as<std::uint16_t>(p);
            else if (dtype == "int32") out[i] = read_as<std::int32_t>(p);
            else if (dtype == "float32") out[i] = read_as<float>(p);
            else out[i] = read_as<double>(p);
        }
        return v;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptData(std::string("malformed volume header: ") + e.what());
    } catch (const InvalidInput& e) {
        throw CorruptData(std::string("invalid volume header: ") + e.what());
    } catch (const ConfigError& e) {
        throw CorruptData(std::string("invalid volume header: ") + e.what());
    }
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void save_volume(const Volume& v, const std::filesystem::path& dir) {
    if (v.id().empty()) throw InvalidInput("volume id must be set before saving");
    std::filesystem::create_directories(dir);
    {
        std::ofstream raw(dir / (v.id() + ".vol.raw"), std::ios::binary);
        raw.write(reinterpret_cast<const char*>(v.voxels().data()),
                  static_cast<std::streamsize>(v.voxels().size() * sizeof(float)));
        if (!raw) throw InvalidInput("failed writing raw volume");
    }
    std::ofstream js(dir / (v.id() + ".vol.json"));
    js << sidecar(v).dump(2) << "\n";
}

Volume load_volume(const std::filesystem::path& sidecar_json) {
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(read_file(sidecar_json));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptData(std::string("volume sidecar is not JSON: ") + e.what());
    }
    auto raw_path = sidecar_json;
    std::string name = raw_path.filename().string();
    const std::string suffix = ".vol.json";
    if (name.size() > suffix.size() && name.ends_with(suffix))
        name = name.substr(0, name.size() - suffix.size());
    raw_path.replace_filename(name + ".vol.raw");
    const std::string raw = read_file(raw_path);
    return volume_from(h, raw.data(), raw.size());
}

nlohmann::json mask_to_json(const VolumeMask& m) {
    nlohmann::json inst = nlohmann::json::array();
    std::vector<std::uint32_t> ids;
    for (auto& [id, _] : m.instances()) ids.push_back(id);
    for (auto id : m.present_ids())
        if (!m.instances().contains(id)) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (auto id : ids) {
        Mask2D flat(m.ny() * m.nz(), m.nx());
        flat.data = m.binary(id);
        const auto it = m.instances().find(id);
        const InstanceInfo info = it == m.instances().end() ? InstanceInfo{} : it->second;
        inst.push_back({{"id", id},
                        {"name", info.name},
                        {"source", std::string(to_string(info.source))},
                        {"rle", to_json(rle_encode(flat))}});
    }
    return {{"version", 1}, {"shape", {m.nx(), m.ny(), m.nz()}}, {"instances", inst}};
}

VolumeMask mask_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != 1) throw CorruptData("unsupported mask version");
        const auto shape = j.at("shape").get<std::vector<int>>();
        if (shape.size() != 3) throw CorruptData("mask shape must have 3 entries");
        VolumeMask m(shape[0], shape[1], shape[2]);
        for (const auto& e : j.at("instances")) {
            const auto id = e.at("id").get<std::uint32_t>();
            if (id == 0) throw CorruptData("instance id 0 is reserved for background");
            const RleMask rle = rle_from_json(e.at("rle"));
            if (rle.width != m.nx() || rle.height != m.ny() * m.nz()) throw CorruptData("instance RLE shape mismatch");
            const Mask2D flat = rle_decode(rle);
            for (std::size_t i = 0; i < flat.data.size(); ++i)
                if (flat.data[i]) m.labels()[i] = id;
            m.instances()[id] = {e.value("name", std::string{}), parse_label_source(e.value("source", std::string("ground-truth")))};
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptData(std::string("malformed mask json: ") + e.what());
    } catch (const InvalidInput& e) {
        throw CorruptData(std::string("invalid mask json: ") + e.what());
    }
}

void save_mask(const VolumeMask& m, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    out << mask_to_json(m).dump() << "\n";
    if (!out) throw InvalidInput("failed writing " + file.string());
}

VolumeMask load_mask(const std::filesystem::path& file) {
    try {
        return mask_from_json(nlohmann::json::parse(read_file(file)));
    } catch (const nlohmann::json::parse_error& e) {
        throw CorruptData(std::string("mask file is not JSON: ") + e.what());
    }
}

std::string encode_container(const Volume& v) {
    const std::string header = sidecar(v).dump();
    std::string out(kMagic, sizeof(kMagic));
    const auto len = static_cast<std::uint32_t>(header.size());
    out.append(reinterpret_cast<const char*>(&len), 4);
    out += header;
    out.append(reinterpret_cast<const char*>(v.voxels().data()), v.voxels().size() * sizeof(float));
    return out;
}

Volume decode_container(const std::string& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw CorruptData("not a volume container");
    std::uint32_t len;
    std::memcpy(&len, bytes.data() + 8, 4);
    if (bytes.size() < 12ull + len) throw CorruptData("truncated container header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.substr(12, len));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptData(std::string("container header is not JSON: ") + e.what());
    }
    const std::size_t off = 12ull + len;
    return volume_from(h, bytes.data() + off, bytes.size() - off);
}

}  // namespace slideseg
