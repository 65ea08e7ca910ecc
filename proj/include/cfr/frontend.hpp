#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cfr/error.hpp"

namespace cfr {

struct FrontendConfig {
    int sample_rate_hz = 16000;
    double window_ms = 25.0;
    double hop_ms = 10.0;
    int n_fft = 512;
    int n_mels = 80;
    double fmin_hz = 20.0;
    double fmax_hz = 7600.0;
    double log_floor = 1e-10;
    double preemphasis = 0.97;

    int window_samples() const {
        return static_cast<int>(window_ms * sample_rate_hz / 1000.0 + 0.5);
    }
    int hop_samples() const { return static_cast<int>(hop_ms * sample_rate_hz / 1000.0 + 0.5); }

    void validate() const {
        if (!(fmin_hz < fmax_hz && fmax_hz <= sample_rate_hz / 2.0))
            throw ConfigError("frontend: need fmin < fmax <= sample_rate/2");
        if (n_mels < 1 || n_fft < 2 || (n_fft & (n_fft - 1)) != 0)
            throw ConfigError("frontend: n_fft must be a power of two and n_mels positive");
        if (window_samples() > n_fft) throw ConfigError("frontend: window longer than n_fft");
    }
};

struct FeatureMatrix {
    std::int64_t frames = 0;
    std::int64_t dims = 0;
    std::vector<double> data;  // frames x dims, row-major
    std::string utt_id;

    double at(std::int64_t f, std::int64_t d) const {
        return data[static_cast<std::size_t>(f * dims + d)];
    }
};

// ---- WAV (RIFF, PCM16, mono) ----

inline std::pair<std::vector<double>, int> load_pcm_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open WAV file: " + path);
    auto read_u32 = [&in]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    auto read_u16 = [&in]() {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    };
    char tag[4];
    in.read(tag, 4);
    if (std::memcmp(tag, "RIFF", 4) != 0) throw FormatError(path + ": missing RIFF tag");
    read_u32();  // riff size
    in.read(tag, 4);
    if (std::memcmp(tag, "WAVE", 4) != 0) throw FormatError(path + ": missing WAVE tag");
    int rate = 0, channels = 0, bits = 0, format = 0;
    std::vector<double> samples;
    bool have_fmt = false, have_data = false;
    while (in.read(tag, 4)) {
        std::uint32_t chunk = read_u32();
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            format = read_u16();
            channels = read_u16();
            rate = static_cast<int>(read_u32());
            read_u32();  // byte rate
            read_u16();  // block align
            bits = read_u16();
            if (chunk > 16) in.seekg(chunk - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw FormatError(path + ": data chunk before fmt chunk");
            if (format != 1) throw FormatError(path + ": audio format " + std::to_string(format) + " is not PCM");
            if (channels != 1) throw FormatError(path + ": " + std::to_string(channels) + " channels, need mono");
            if (bits != 16) throw FormatError(path + ": " + std::to_string(bits) + " bits per sample, need 16");
            std::size_t n = chunk / 2;
            samples.resize(n);
            std::vector<char> raw(chunk);
            in.read(raw.data(), static_cast<std::streamsize>(chunk));
            if (in.gcount() != static_cast<std::streamsize>(chunk))
                throw FormatError(path + ": truncated data chunk");
            for (std::size_t i = 0; i < n; ++i) {
                std::int16_t s = static_cast<std::int16_t>(
                    static_cast<unsigned char>(raw[2 * i]) |
                    (static_cast<unsigned char>(raw[2 * i + 1]) << 8));
                samples[i] = static_cast<double>(s) / 32767.0;
            }
            have_data = true;
        } else {
            in.seekg(chunk + (chunk & 1), std::ios::cur);
        }
    }
    if (!have_fmt || !have_data) throw FormatError(path + ": missing fmt or data chunk");
    return {std::move(samples), rate};
}

inline void write_pcm_wav(const std::string& path, const std::vector<double>& samples, int rate) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write WAV file: " + path);
    auto put_u32 = [&out](std::uint32_t v) {
        char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
        out.write(b, 4);
    };
    auto put_u16 = [&out](std::uint16_t v) {
        char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
        out.write(b, 2);
    };
    std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    out.write("RIFF", 4);
    put_u32(36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(16);
    put_u16(1);  // PCM
    put_u16(1);  // mono
    put_u32(static_cast<std::uint32_t>(rate));
    put_u32(static_cast<std::uint32_t>(rate * 2));
    put_u16(2);
    put_u16(16);
    out.write("data", 4);
    put_u32(data_bytes);
    for (double s : samples) {
        double c = s < -1.0 ? -1.0 : (s > 1.0 ? 1.0 : s);
        auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
        put_u16(static_cast<std::uint16_t>(q));
    }
}

// ---- FFT (iterative radix-2) ----

inline void fft_inplace(std::vector<std::complex<double>>& a) {
    std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                auto u = a[i + j], v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// ---- mel filterbank (HTK scale) ----

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters on FFT bins 0..n_fft/2; rows are mel channels.
inline std::vector<std::vector<double>> mel_filterbank(const FrontendConfig& cfg) {
    int n_bins = cfg.n_fft / 2 + 1;
    double mel_lo = hz_to_mel(cfg.fmin_hz), mel_hi = hz_to_mel(cfg.fmax_hz);
    std::vector<double> centers(static_cast<std::size_t>(cfg.n_mels) + 2);
    for (int m = 0; m < cfg.n_mels + 2; ++m)
        centers[static_cast<std::size_t>(m)] =
            mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (cfg.n_mels + 1));
    std::vector<std::vector<double>> fb(static_cast<std::size_t>(cfg.n_mels),
                                        std::vector<double>(static_cast<std::size_t>(n_bins), 0.0));
    for (int m = 0; m < cfg.n_mels; ++m) {
        double lo = centers[static_cast<std::size_t>(m)];
        double mid = centers[static_cast<std::size_t>(m + 1)];
        double hi = centers[static_cast<std::size_t>(m + 2)];
        for (int b = 0; b < n_bins; ++b) {
            double hz = static_cast<double>(b) * cfg.sample_rate_hz / cfg.n_fft;
            double w = 0.0;
            if (hz > lo && hz < mid)
                w = (hz - lo) / (mid - lo);
            else if (hz >= mid && hz < hi)
                w = (hi - hz) / (hi - mid);
            fb[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)] = w;
        }
    }
    return fb;
}

// Center frequency of mel channel m (for the tone-detection oracle).
inline double mel_center_hz(const FrontendConfig& cfg, int m) {
    double mel_lo = hz_to_mel(cfg.fmin_hz), mel_hi = hz_to_mel(cfg.fmax_hz);
    return mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (cfg.n_mels + 1));
}

inline std::int64_t fbank_frame_count(std::size_t n_samples, const FrontendConfig& cfg) {
    int win = cfg.window_samples(), hop = cfg.hop_samples();
    if (n_samples < static_cast<std::size_t>(win)) return 0;
    return 1 + static_cast<std::int64_t>((n_samples - static_cast<std::size_t>(win)) / hop);
}

// Pre-emphasis -> Hamming window -> |FFT|^2 -> mel filterbank -> log with floor.
inline FeatureMatrix compute_fbank(const std::vector<double>& samples, const FrontendConfig& cfg,
                                   const std::string& utt_id = "") {
    cfg.validate();
    int win = cfg.window_samples(), hop = cfg.hop_samples();
    std::int64_t frames = fbank_frame_count(samples.size(), cfg);
    if (frames < 1)
        throw ValueError("compute_fbank: signal of " + std::to_string(samples.size()) +
                         " samples is shorter than one window (" + std::to_string(win) + " samples)");
    auto fb = mel_filterbank(cfg);
    std::vector<double> hamming(static_cast<std::size_t>(win));
    for (int i = 0; i < win; ++i)
        hamming[static_cast<std::size_t>(i)] =
            0.54 - 0.46 * std::cos(2.0 * 3.14159265358979323846 * i / (win - 1));
    FeatureMatrix out;
    out.frames = frames;
    out.dims = cfg.n_mels;
    out.utt_id = utt_id;
    out.data.resize(static_cast<std::size_t>(frames * cfg.n_mels));
    int n_bins = cfg.n_fft / 2 + 1;
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.n_fft));
    for (std::int64_t f = 0; f < frames; ++f) {
        std::size_t base = static_cast<std::size_t>(f) * static_cast<std::size_t>(hop);
        for (int i = 0; i < win; ++i) {
            double x = samples[base + static_cast<std::size_t>(i)];
            double prev = (base + i) > 0 ? samples[base + static_cast<std::size_t>(i) - 1] : 0.0;
            buf[static_cast<std::size_t>(i)] = (x - cfg.preemphasis * prev) * hamming[static_cast<std::size_t>(i)];
        }
        for (int i = win; i < cfg.n_fft; ++i) buf[static_cast<std::size_t>(i)] = 0.0;
        fft_inplace(buf);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double e = 0.0;
            for (int b = 0; b < n_bins; ++b) {
                double w = fb[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)];
                if (w == 0.0) continue;
                e += w * std::norm(buf[static_cast<std::size_t>(b)]);
            }
            out.data[static_cast<std::size_t>(f * cfg.n_mels + m)] =
                std::log(e > cfg.log_floor ? e : cfg.log_floor);
        }
    }
    return out;
}

// Mean-only per-utterance normalization: each dimension gets zero mean
// across frames; variance is left unscaled.
inline FeatureMatrix utterance_cmvn(const FeatureMatrix& f) {
    if (f.frames < 1) throw ValueError("utterance_cmvn: empty feature matrix");
    FeatureMatrix out = f;
    for (std::int64_t d = 0; d < f.dims; ++d) {
        double mu = 0.0;
        for (std::int64_t t = 0; t < f.frames; ++t) mu += f.at(t, d);
        mu /= static_cast<double>(f.frames);
        for (std::int64_t t = 0; t < f.frames; ++t)
            out.data[static_cast<std::size_t>(t * f.dims + d)] -= mu;
    }
    return out;
}

// ---- FBK1 feature files ----
// magic "FBK1", u32 frames, u32 dims, frames*dims f32 values, u16 utt_id
// length, utt_id bytes; all little-endian.

inline void write_fbk(const std::string& path, const FeatureMatrix& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write feature file: " + path);
    out.write("FBK1", 4);
    auto put_u32 = [&out](std::uint32_t v) {
        char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
        out.write(b, 4);
    };
    put_u32(static_cast<std::uint32_t>(f.frames));
    put_u32(static_cast<std::uint32_t>(f.dims));
    for (double v : f.data) {
        float fv = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &fv, 4);
        put_u32(bits);
    }
    std::uint16_t len = static_cast<std::uint16_t>(f.utt_id.size());
    char lb[2] = {static_cast<char>(len), static_cast<char>(len >> 8)};
    out.write(lb, 2);
    out.write(f.utt_id.data(), static_cast<std::streamsize>(f.utt_id.size()));
}

inline FeatureMatrix read_fbk(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open feature file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, "FBK1", 4) != 0) throw FormatError(path + ": bad magic, expected FBK1");
    auto get_u32 = [&in]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    FeatureMatrix f;
    f.frames = get_u32();
    f.dims = get_u32();
    f.data.resize(static_cast<std::size_t>(f.frames * f.dims));
    for (auto& v : f.data) {
        std::uint32_t bits = get_u32();
        float fv;
        std::memcpy(&fv, &bits, 4);
        v = static_cast<double>(fv);
    }
    unsigned char lb[2];
    in.read(reinterpret_cast<char*>(lb), 2);
    std::uint16_t len = static_cast<std::uint16_t>(lb[0] | (lb[1] << 8));
    f.utt_id.resize(len);
    in.read(f.utt_id.data(), len);
    if (!in) throw FormatError(path + ": truncated feature file");
    return f;
}

}  // namespace cfr
