#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfr/model.hpp"
#include "cfr/optim.hpp"

namespace cfr {

struct TrainProgress {
    std::int64_t epoch = 0;
    std::int64_t step = 0;
};

namespace ckpt_detail {

inline void put_f32(std::ofstream& out, double v) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    char b[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8), static_cast<char>(bits >> 16),
                 static_cast<char>(bits >> 24)};
    out.write(b, 4);
}

inline double get_f32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                         (static_cast<std::uint32_t>(b[2]) << 16) |
                         (static_cast<std::uint32_t>(b[3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
}

}  // namespace ckpt_detail

// Checkpoint file: magic "CKR1", little-endian u64 manifest length, JSON
// manifest (config hash, counters, parameter names/shapes), then f32
// buffers in manifest order: parameters, Adam m, Adam v, state buffers.
inline void save_checkpoint(const std::string& path, ConformerRModel& model, const OptState& opt,
                            const TrainProgress& progress) {
    nlohmann::ordered_json manifest;
    manifest["config_hash"] = model.config_hash();
    manifest["epoch"] = progress.epoch;
    manifest["step"] = progress.step;
    manifest["adam_step"] = opt.step;
    manifest["dropout_counter"] = model.dropout_rng().counter;
    auto params = nlohmann::ordered_json::array();
    for (const auto& [name, t] : model.params().items())
        params.push_back({{"name", name}, {"shape", t.shape()}});
    manifest["params"] = params;
    auto state = nlohmann::ordered_json::array();
    for (const auto& [name, buf] : model.state_buffers())
        state.push_back({{"name", name}, {"len", buf->size()}});
    manifest["state"] = state;
    std::string js = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint: " + path);
    out.write("CKR1", 4);
    std::uint64_t len = js.size();
    char lb[8];
    for (int i = 0; i < 8; ++i) lb[i] = static_cast<char>(len >> (8 * i));
    out.write(lb, 8);
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (const auto& [name, t] : model.params().items())
        for (double v : t.data()) ckpt_detail::put_f32(out, v);
    for (double v : opt.m) ckpt_detail::put_f32(out, v);
    for (double v : opt.v) ckpt_detail::put_f32(out, v);
    for (const auto& [name, buf] : model.state_buffers())
        for (double v : *buf) ckpt_detail::put_f32(out, v);
}

inline nlohmann::json read_checkpoint_manifest(std::ifstream& in, const std::string& path) {
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, "CKR1", 4) != 0) throw FormatError(path + ": bad checkpoint magic");
    unsigned char lb[8];
    in.read(reinterpret_cast<char*>(lb), 8);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lb[i]) << (8 * i);
    std::string js(len, '\0');
    in.read(js.data(), static_cast<std::streamsize>(len));
    if (!in) throw FormatError(path + ": truncated checkpoint manifest");
    return nlohmann::json::parse(js);
}

// Loads parameters, moments, and state. Refuses on config-hash mismatch
// unless force is set.
inline TrainProgress load_checkpoint(const std::string& path, ConformerRModel& model, OptState& opt,
                                     bool force = false) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path);
    auto manifest = read_checkpoint_manifest(in, path);
    std::uint64_t saved_hash = manifest.at("config_hash").get<std::uint64_t>();
    if (saved_hash != model.config_hash() && !force)
        throw ConfigError("checkpoint config hash " + std::to_string(saved_hash) +
                          " does not match model config hash " + std::to_string(model.config_hash()) +
                          " (use --force to override)");
    auto params = manifest.at("params");
    if (params.size() != model.params().size())
        throw FormatError(path + ": parameter count mismatch");
    std::size_t idx = 0;
    for (auto& [name, t] : model.params().items()) {
        const auto& entry = params.at(idx++);
        if (entry.at("name").get<std::string>() != name)
            throw FormatError(path + ": parameter name mismatch at " + name);
        Shape shape = entry.at("shape").get<Shape>();
        if (shape != t.shape()) throw FormatError(path + ": shape mismatch for " + name);
    }
    for (auto& [name, t] : model.params().items())
        for (auto& v : t.data()) v = ckpt_detail::get_f32(in);
    opt = OptState(model.params().total_numel());
    opt.step = manifest.at("adam_step").get<std::int64_t>();
    for (auto& v : opt.m) v = ckpt_detail::get_f32(in);
    for (auto& v : opt.v) v = ckpt_detail::get_f32(in);
    for (auto& [name, buf] : model.state_buffers())
        for (auto& v : *buf) v = ckpt_detail::get_f32(in);
    if (!in) throw FormatError(path + ": truncated checkpoint buffers");
    model.dropout_rng().counter = manifest.at("dropout_counter").get<std::uint64_t>();
    TrainProgress p;
    p.epoch = manifest.at("epoch").get<std::int64_t>();
    p.step = manifest.at("step").get<std::int64_t>();
    return p;
}

}  // namespace cfr
