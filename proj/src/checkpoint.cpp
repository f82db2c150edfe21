#include "tinyseg/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace tinyseg {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'N', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kAlign = 64;

std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

std::string skip_mode_str(SkipMode m) {
    return m == SkipMode::resize ? "resize" : "center_crop";
}

SkipMode skip_mode_from(const std::string& s) {
    if (s == "resize") return SkipMode::resize;
    if (s == "center_crop") return SkipMode::center_crop;
    throw FormatError("checkpoint: unknown skip_mode '" + s + "'");
}

struct DirEntry {
    std::string name;
    Shape shape;
    std::size_t offset;  // relative to payload base
};

}  // namespace

void to_json(nlohmann::json& j, const UNetConfig& cfg) {
    j = nlohmann::json{{"in_channels", cfg.in_channels},
                       {"base_channels", cfg.base_channels},
                       {"depth", cfg.depth},
                       {"skip_mode", skip_mode_str(cfg.skip_mode)},
                       {"out_channels", cfg.out_channels}};
}

void from_json(const nlohmann::json& j, UNetConfig& cfg) {
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.depth = j.at("depth").get<int>();
    cfg.skip_mode = skip_mode_from(j.at("skip_mode").get<std::string>());
    cfg.out_channels = j.at("out_channels").get<int>();
}

void save_checkpoint(const std::string& path, const UNetModel& model, const CheckpointMeta& meta,
                     const AdamState* optim) {
    // Directory in a fixed order: schema params first, then optimizer
    // moments for every trainable param that has state.
    std::vector<std::pair<std::string, const Tensor*>> entries;
    for (const auto& [name, shape] : unet_param_schema(model.config)) {
        (void)shape;
        entries.emplace_back(name, &model.params.at(name));
    }
    if (optim) {
        for (const auto& [name, t] : optim->m) entries.emplace_back(name + ".adam_m", &t);
        for (const auto& [name, t] : optim->v) entries.emplace_back(name + ".adam_v", &t);
    }

    nlohmann::json dir = nlohmann::json::object();
    std::size_t offset = 0;
    for (const auto& [name, t] : entries) {
        offset = align_up(offset);
        dir[name] = {{"dtype", "f32"}, {"shape", t->shape}, {"offset", offset}};
        offset += t->data.size() * sizeof(float);
    }

    nlohmann::json header;
    header["config"] = model.config;
    header["meta"] = {{"epoch", meta.epoch}, {"image_size", meta.image_size}};
    if (optim)
        header["optim"] = {{"t", optim->t},
                           {"beta1", optim->beta1},
                           {"beta2", optim->beta2},
                           {"eps", optim->eps}};
    else
        header["optim"] = nullptr;
    header["tensors"] = std::move(dir);
    const std::string header_bytes = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("checkpoint: cannot open '" + tmp + "' for writing");
        out.write(kMagic, 4);
        const std::uint32_t version = kVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        const std::uint64_t hlen = header_bytes.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
        const std::size_t payload_base = align_up(16 + header_bytes.size());
        std::vector<char> pad(payload_base - (16 + header_bytes.size()), 0);
        out.write(pad.data(), static_cast<std::streamsize>(pad.size()));
        std::size_t pos = 0;
        for (const auto& [name, t] : entries) {
            (void)name;
            const std::size_t aligned = align_up(pos);
            std::vector<char> gap(aligned - pos, 0);
            out.write(gap.data(), static_cast<std::streamsize>(gap.size()));
            out.write(reinterpret_cast<const char*>(t->data.data()),
                      static_cast<std::streamsize>(t->data.size() * sizeof(float)));
            pos = aligned + t->data.size() * sizeof(float);
        }
        if (!out) throw DataError("checkpoint: write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound("checkpoint: cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw FormatError("checkpoint: file too short");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic bytes");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 4, sizeof(version));
    if (version != kVersion)
        throw VersionUnsupported("checkpoint: version " + std::to_string(version) +
                                 " unsupported (expected " + std::to_string(kVersion) + ")");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, sizeof(hlen));
    if (16 + hlen > bytes.size()) throw FormatError("checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16,
                                       bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.model.config = header.at("config").get<UNetConfig>();
        ckpt.meta.epoch = header.at("meta").at("epoch").get<int>();
        ckpt.meta.image_size = header.at("meta").at("image_size").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }

    const std::size_t payload_base = align_up(16 + hlen);
    auto read_tensor = [&](const std::string& name, const nlohmann::json& entry) {
        if (entry.at("dtype").get<std::string>() != "f32")
            throw FormatError("checkpoint: tensor '" + name + "' has unsupported dtype");
        Shape shape = entry.at("shape").get<Shape>();
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        const std::size_t n = static_cast<std::size_t>(shape_numel(shape));
        const std::size_t begin = payload_base + offset;
        if (begin + n * sizeof(float) > bytes.size())
            throw FormatError("checkpoint: truncated payload for tensor '" + name + "'");
        std::vector<float> data(n);
        std::memcpy(data.data(), bytes.data() + begin, n * sizeof(float));
        return Tensor(std::move(shape), std::move(data));
    };

    const auto& dir = header.at("tensors");
    std::optional<AdamState> optim;
    if (!header.at("optim").is_null()) {
        optim.emplace();
        optim->t = header["optim"].at("t").get<std::int64_t>();
        optim->beta1 = header["optim"].at("beta1").get<float>();
        optim->beta2 = header["optim"].at("beta2").get<float>();
        optim->eps = header["optim"].at("eps").get<float>();
    }
    for (auto it = dir.begin(); it != dir.end(); ++it) {
        const std::string& name = it.key();
        Tensor t = read_tensor(name, it.value());
        if (name.ends_with(".adam_m")) {
            if (!optim) throw FormatError("checkpoint: moment tensor without optimizer header");
            optim->m.emplace(name.substr(0, name.size() - 7), std::move(t));
        } else if (name.ends_with(".adam_v")) {
            if (!optim) throw FormatError("checkpoint: moment tensor without optimizer header");
            optim->v.emplace(name.substr(0, name.size() - 7), std::move(t));
        } else {
            ckpt.model.params.emplace(name, std::move(t));
        }
    }
    ckpt.optim = std::move(optim);

    // The model must carry exactly the schema's tensors.
    for (const auto& [name, shape] : unet_param_schema(ckpt.model.config)) {
        auto it = ckpt.model.params.find(name);
        if (it == ckpt.model.params.end())
            throw ShapeMismatch("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape != shape)
            throw ShapeMismatch("checkpoint: tensor '" + name + "' has shape " +
                                shape_str(it->second.shape) + ", expected " + shape_str(shape));
    }
    if (ckpt.model.params.size() != unet_param_schema(ckpt.model.config).size()) {
        const auto names = unet_param_names(ckpt.model.config);
        for (const auto& [name, t] : ckpt.model.params) {
            (void)t;
            if (std::find(names.begin(), names.end(), name) == names.end())
                throw ShapeMismatch("checkpoint: unexpected tensor '" + name + "'");
        }
    }
    return ckpt;
}

UNetModel load_weights(const std::string& path, const UNetConfig& expected_config) {
    Checkpoint ckpt = load_checkpoint(path);
    const auto expected = unet_param_schema(expected_config);
    for (const auto& [name, shape] : expected) {
        auto it = ckpt.model.params.find(name);
        if (it == ckpt.model.params.end())
            throw ShapeMismatch("load_weights: missing tensor '" + name + "'");
        if (it->second.shape != shape)
            throw ShapeMismatch("load_weights: tensor '" + name + "' has shape " +
                                shape_str(it->second.shape) + ", expected " + shape_str(shape));
    }
    if (ckpt.model.params.size() != expected.size())
        throw ShapeMismatch("load_weights: checkpoint has " +
                            std::to_string(ckpt.model.params.size()) + " tensors, expected " +
                            std::to_string(expected.size()));
    ckpt.model.config = expected_config;
    return std::move(ckpt.model);
}

}  // namespace tinyseg
