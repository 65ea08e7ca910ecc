#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfr/decoder.hpp"
#include "cfr/frontend.hpp"
#include "cfr/model.hpp"
#include "cfr/train.hpp"

namespace cfr {

// Fully resolved experiment configuration. JSON sections mirror the module
// configs; unknown keys anywhere are rejected.
struct RunConfig {
    std::string experiment;
    std::uint64_t seed = 1;
    FrontendConfig frontend;
    ModelConfig model;
    TrainConfig train;
    std::int64_t max_steps = -1;

    void validate() const {
        frontend.validate();
        model.validate();
        train.validate();
        if (frontend.n_mels != model.encoder.n_mels)
            throw ConfigError("frontend n_mels must equal encoder n_mels");
        if (experiment.empty()) throw ConfigError("experiment name must not be empty");
    }
};

namespace config_detail {

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known,
                           const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("unknown config key '" + it.key() + "' in " + where);
}

template <typename T>
inline T get_or(const nlohmann::json& obj, const std::string& key, T fallback) {
    if (obj.contains(key)) return obj.at(key).get<T>();
    return fallback;
}

inline const nlohmann::json& require(const nlohmann::json& obj, const std::string& key,
                                     const std::string& where) {
    if (!obj.contains(key)) throw ConfigError("missing config field: " + where + key);
    return obj.at(key);
}

}  // namespace config_detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using namespace config_detail;
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown(j, {"experiment", "seed", "frontend", "model", "loss", "schedule", "batching",
                       "training"},
                   "config root");
    RunConfig cfg;
    cfg.experiment = require(j, "experiment", "").get<std::string>();
    cfg.seed = require(j, "seed", "").get<std::uint64_t>();

    if (j.contains("frontend")) {
        const auto& f = j.at("frontend");
        reject_unknown(f, {"sample_rate_hz", "window_ms", "hop_ms", "n_fft", "n_mels", "fmin_hz",
                           "fmax_hz", "log_floor", "preemphasis"},
                       "frontend");
        cfg.frontend.sample_rate_hz = get_or(f, "sample_rate_hz", cfg.frontend.sample_rate_hz);
        cfg.frontend.window_ms = get_or(f, "window_ms", cfg.frontend.window_ms);
        cfg.frontend.hop_ms = get_or(f, "hop_ms", cfg.frontend.hop_ms);
        cfg.frontend.n_fft = get_or(f, "n_fft", cfg.frontend.n_fft);
        cfg.frontend.n_mels = get_or(f, "n_mels", cfg.frontend.n_mels);
        cfg.frontend.fmin_hz = get_or(f, "fmin_hz", cfg.frontend.fmin_hz);
        cfg.frontend.fmax_hz = get_or(f, "fmax_hz", cfg.frontend.fmax_hz);
        cfg.frontend.log_floor = get_or(f, "log_floor", cfg.frontend.log_floor);
        cfg.frontend.preemphasis = get_or(f, "preemphasis", cfg.frontend.preemphasis);
    }

    const auto& m = require(j, "model", "");
    reject_unknown(m, {"d_model", "n_heads", "encoder_blocks", "decoder_layers", "ff_expansion",
                       "depthwise_kernel", "dropout", "subsample_channels", "vocab"},
                   "model");
    auto& enc = cfg.model.encoder;
    auto& dec = cfg.model.decoder;
    enc.d_model = dec.d_model = get_or<std::int64_t>(m, "d_model", 64);
    enc.n_heads = dec.n_heads = get_or<std::int64_t>(m, "n_heads", 4);
    enc.n_blocks = get_or<std::int64_t>(m, "encoder_blocks", 2);
    dec.n_layers = get_or<std::int64_t>(m, "decoder_layers", 2);
    enc.ff_expansion = dec.ff_expansion = get_or<std::int64_t>(m, "ff_expansion", 4);
    enc.depthwise_kernel = get_or<std::int64_t>(m, "depthwise_kernel", 15);
    enc.dropout_p = dec.dropout_p = get_or(m, "dropout", 0.1);
    enc.subsample_channels = get_or<std::int64_t>(m, "subsample_channels", 8);
    enc.n_mels = cfg.frontend.n_mels;
    std::string vocab = require(m, "vocab", "model.").get<std::string>();
    cfg.model.vocab_chars = Vocabulary::split_utf8(vocab);

    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        reject_unknown(l, {"alpha", "beta", "smoothing", "rdrop", "merge_form"}, "loss");
        cfg.train.weights.alpha = get_or(l, "alpha", 0.3);
        cfg.train.weights.beta = get_or(l, "beta", 0.7);
        cfg.train.weights.smoothing = get_or(l, "smoothing", 0.1);
        cfg.train.rdrop = get_or(l, "rdrop", true);
        std::string form = get_or<std::string>(l, "merge_form", "convex");
        if (form != "convex" && form != "additive")
            throw ConfigError("loss.merge_form must be 'convex' or 'additive'");
        cfg.train.convex_merge = form == "convex";
    }

    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        reject_unknown(s, {"k", "d_m", "warmup_steps"}, "schedule");
        cfg.train.schedule.k = get_or(s, "k", 1.0);
        cfg.train.schedule.d_m = get_or<std::int64_t>(s, "d_m", enc.d_model);
        cfg.train.schedule.warmup_steps = get_or<std::int64_t>(s, "warmup_steps", 200);
    } else {
        cfg.train.schedule.d_m = enc.d_model;
    }

    if (j.contains("batching")) {
        const auto& b = j.at("batching");
        reject_unknown(b, {"batch_bins", "accum_steps"}, "batching");
        cfg.train.batch_bins = get_or<std::int64_t>(b, "batch_bins", 4000);
        cfg.train.accum_steps = get_or<std::int64_t>(b, "accum_steps", 1);
    }

    if (j.contains("training")) {
        const auto& t = j.at("training");
        reject_unknown(t, {"epochs", "max_steps"}, "training");
        cfg.train.epochs = get_or<std::int64_t>(t, "epochs", 1);
        cfg.max_steps = get_or<std::int64_t>(t, "max_steps", -1);
    }
    cfg.train.shuffle_seed = cfg.seed;
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

// Round-trippable snapshot of a resolved config.
inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["experiment"] = cfg.experiment;
    j["seed"] = cfg.seed;
    j["frontend"] = {{"sample_rate_hz", cfg.frontend.sample_rate_hz},
                     {"window_ms", cfg.frontend.window_ms},
                     {"hop_ms", cfg.frontend.hop_ms},
                     {"n_fft", cfg.frontend.n_fft},
                     {"n_mels", cfg.frontend.n_mels},
                     {"fmin_hz", cfg.frontend.fmin_hz},
                     {"fmax_hz", cfg.frontend.fmax_hz},
                     {"log_floor", cfg.frontend.log_floor},
                     {"preemphasis", cfg.frontend.preemphasis}};
    std::string vocab;
    for (const auto& c : cfg.model.vocab_chars) vocab += c;
    j["model"] = {{"d_model", cfg.model.encoder.d_model},
                  {"n_heads", cfg.model.encoder.n_heads},
                  {"encoder_blocks", cfg.model.encoder.n_blocks},
                  {"decoder_layers", cfg.model.decoder.n_layers},
                  {"ff_expansion", cfg.model.encoder.ff_expansion},
                  {"depthwise_kernel", cfg.model.encoder.depthwise_kernel},
                  {"dropout", cfg.model.encoder.dropout_p},
                  {"subsample_channels", cfg.model.encoder.subsample_channels},
                  {"vocab", vocab}};
    j["loss"] = {{"alpha", cfg.train.weights.alpha},
                 {"beta", cfg.train.weights.beta},
                 {"smoothing", cfg.train.weights.smoothing},
                 {"rdrop", cfg.train.rdrop},
                 {"merge_form", cfg.train.convex_merge ? "convex" : "additive"}};
    j["schedule"] = {{"k", cfg.train.schedule.k},
                     {"d_m", cfg.train.schedule.d_m},
                     {"warmup_steps", cfg.train.schedule.warmup_steps}};
    j["batching"] = {{"batch_bins", cfg.train.batch_bins}, {"accum_steps", cfg.train.accum_steps}};
    j["training"] = {{"epochs", cfg.train.epochs}, {"max_steps", cfg.max_steps}};
    return j;
}

// ---- manifests (line-delimited JSON) ----

struct ManifestRow {
    std::string utt_id;
    std::string audio;  // one of audio / feats is set
    std::string feats;
    std::int64_t frames = 0;
    std::string text;
};

inline std::vector<ManifestRow> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest: " + path);
    std::vector<ManifestRow> rows;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
        }
        config_detail::reject_unknown(j, {"utt_id", "audio", "feats", "frames", "text"},
                                      path + ":" + std::to_string(line_no));
        ManifestRow r;
        r.utt_id = config_detail::require(j, "utt_id", "manifest row ").get<std::string>();
        r.audio = config_detail::get_or<std::string>(j, "audio", "");
        r.feats = config_detail::get_or<std::string>(j, "feats", "");
        r.frames = config_detail::get_or<std::int64_t>(j, "frames", 0);
        r.text = config_detail::get_or<std::string>(j, "text", "");
        if (!seen.insert(r.utt_id).second)
            throw FormatError(path + ": duplicate utt_id " + r.utt_id);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write manifest: " + path);
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["utt_id"] = r.utt_id;
        if (!r.audio.empty()) j["audio"] = r.audio;
        if (!r.feats.empty()) {
            j["feats"] = r.feats;
            j["frames"] = r.frames;
        }
        j["text"] = r.text;
        out << j.dump() << '\n';
    }
}

// Counts transcript characters outside the vocabulary, keyed by character.
inline std::map<std::string, std::int64_t> unknown_char_counts(const std::vector<ManifestRow>& rows,
                                                               const Vocabulary& vocab) {
    std::map<std::string, std::int64_t> unknown;
    for (const auto& r : rows)
        for (const auto& c : Vocabulary::split_utf8(r.text))
            if (!vocab.contains(c)) ++unknown[c];
    return unknown;
}

}  // namespace cfr
