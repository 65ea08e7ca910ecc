#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfr/config.hpp"
#include "cfr/frontend.hpp"
#include "cfr/rng.hpp"

namespace cfr {

// Deterministic tone corpus: each vocabulary character maps to a fixed pure
// tone, utterances are concatenations of per-character segments. The mapping
// is written alongside the corpus so features stay interpretable.
struct SynthConfig {
    std::vector<std::string> vocab_chars;
    std::int64_t n_utterances = 20;
    std::int64_t min_len = 2;
    std::int64_t max_len = 8;
    double segment_sec = 0.2;
    double amplitude = 0.35;
    double noise_level = 0.0;  // stddev of additive white noise
    int sample_rate_hz = 16000;
    std::uint64_t seed = 1;

    void validate() const {
        if (vocab_chars.size() < 2) throw ConfigError("synth vocab needs at least 2 characters");
        if (n_utterances <= 0) throw ConfigError("synth n_utterances must be positive");
        if (min_len <= 0 || max_len < min_len)
            throw ConfigError("synth utterance length range is invalid");
        if (segment_sec <= 0) throw ConfigError("synth segment_sec must be positive");
        if (noise_level < 0) throw ConfigError("synth noise_level must be >= 0");
    }
};

// Tones are spaced evenly so neighbouring characters land in distinct mel bins.
inline double tone_frequency_hz(std::int64_t char_index, std::int64_t vocab_size,
                                int sample_rate_hz) {
    double lo = 400.0;
    double hi = std::min(3600.0, sample_rate_hz / 2.0 - 400.0);
    if (vocab_size == 1) return lo;
    return lo + (hi - lo) * static_cast<double>(char_index) /
                    static_cast<double>(vocab_size - 1);
}

inline std::vector<double> synth_waveform(const std::string& text, const SynthConfig& cfg,
                                          RngState& rng) {
    auto chars = Vocabulary::split_utf8(text);
    auto seg = static_cast<std::int64_t>(cfg.segment_sec * cfg.sample_rate_hz + 0.5);
    std::vector<double> wave;
    wave.reserve(static_cast<std::size_t>(seg) * chars.size());
    std::int64_t vs = static_cast<std::int64_t>(cfg.vocab_chars.size());
    for (const auto& c : chars) {
        std::int64_t idx = -1;
        for (std::int64_t i = 0; i < vs; ++i)
            if (cfg.vocab_chars[static_cast<std::size_t>(i)] == c) idx = i;
        if (idx < 0) throw ValueError("synth text contains character outside vocab: " + c);
        double freq = tone_frequency_hz(idx, vs, cfg.sample_rate_hz);
        for (std::int64_t n = 0; n < seg; ++n) {
            double t = static_cast<double>(n) / cfg.sample_rate_hz;
            // short fade at segment edges avoids clicks between tones
            double env = std::min(1.0, std::min(n, seg - 1 - n) / (0.005 * cfg.sample_rate_hz));
            wave.push_back(cfg.amplitude * env * std::sin(2.0 * M_PI * freq * t));
        }
    }
    if (cfg.noise_level > 0) {
        std::uint64_t ctr = rng.next_counter();
        for (std::size_t i = 0; i < wave.size(); ++i)
            wave[i] += cfg.noise_level * rng_normal(rng.seed, ctr, i);
    }
    return wave;
}

inline std::string synth_text(const SynthConfig& cfg, RngState& rng) {
    std::uint64_t ctr = rng.next_counter();
    std::int64_t span = cfg.max_len - cfg.min_len + 1;
    auto len = cfg.min_len +
               static_cast<std::int64_t>(rng_bits(rng.seed, ctr, 0) % static_cast<std::uint64_t>(span));
    std::string text;
    for (std::int64_t i = 0; i < len; ++i) {
        auto pick = rng_bits(rng.seed, ctr, static_cast<std::uint64_t>(i + 1)) %
                    cfg.vocab_chars.size();
        text += cfg.vocab_chars[static_cast<std::size_t>(pick)];
    }
    return text;
}

// Writes wav files, a manifest, and the tone map. Returns the manifest rows.
inline std::vector<ManifestRow> synth_corpus(const SynthConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "wav");
    RngState rng{cfg.seed, 0};
    std::vector<ManifestRow> rows;
    for (std::int64_t i = 0; i < cfg.n_utterances; ++i) {
        ManifestRow r;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "utt%04lld", static_cast<long long>(i));
        r.utt_id = buf;
        r.text = synth_text(cfg, rng);
        auto wave = synth_waveform(r.text, cfg, rng);
        r.audio = (fs::path(out_dir) / "wav" / (r.utt_id + ".wav")).string();
        write_pcm_wav(r.audio, wave, cfg.sample_rate_hz);
        rows.push_back(std::move(r));
    }
    write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), rows);

    nlohmann::ordered_json tone_map;
    std::int64_t vs = static_cast<std::int64_t>(cfg.vocab_chars.size());
    for (std::int64_t i = 0; i < vs; ++i)
        tone_map[cfg.vocab_chars[static_cast<std::size_t>(i)]] =
            tone_frequency_hz(i, vs, cfg.sample_rate_hz);
    std::ofstream tm((fs::path(out_dir) / "tone_map.json").string());
    tm << tone_map.dump(2) << '\n';
    return rows;
}

}  // namespace cfr
