#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "cfr/frontend.hpp"
#include "cfr/synth.hpp"

using namespace cfr;

namespace {
std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("frame count law") {
    FrontendConfig cfg;
    // 1 second at 16 kHz, 25 ms window, 10 ms hop: 1 + (16000-400)/160 = 98
    CHECK(fbank_frame_count(16000, cfg) == 98);
    CHECK(fbank_frame_count(400, cfg) == 1);
    CHECK(fbank_frame_count(399, cfg) == 0);
    CHECK(fbank_frame_count(560, cfg) == 2);
}

TEST_CASE("too short a signal raises") {
    FrontendConfig cfg;
    std::vector<double> s(100, 0.0);
    CHECK_THROWS_AS(compute_fbank(s, cfg), ValueError);
}

TEST_CASE("config validation") {
    FrontendConfig cfg;
    cfg.fmax_hz = 9000;  // above Nyquist
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = FrontendConfig{};
    cfg.n_fft = 300;  // not a power of two
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("doubling amplitude adds log 4 to energies") {
    FrontendConfig cfg;
    RngState rng{3, 0};
    std::vector<double> s(8000);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = 0.1 * rng_normal(3, 0, i);
    std::vector<double> s2(s);
    for (auto& v : s2) v *= 2.0;
    auto a = compute_fbank(s, cfg);
    auto b = compute_fbank(s2, cfg);
    REQUIRE(a.frames == b.frames);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        CHECK(b.data[i] - a.data[i] == Catch::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("pure tone peaks in the nearest mel channel") {
    FrontendConfig cfg;
    for (double freq : {500.0, 1000.0, 2000.0, 3000.0}) {
        std::vector<double> s(8000);
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = 0.5 * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / cfg.sample_rate_hz);
        auto f = compute_fbank(s, cfg);
        // expected channel: the one whose center is closest to the tone
        int expect = 0;
        double best = 1e18;
        for (int m = 0; m < cfg.n_mels; ++m) {
            double d = std::abs(mel_center_hz(cfg, m) - freq);
            if (d < best) {
                best = d;
                expect = m;
            }
        }
        std::int64_t mid = f.frames / 2;
        int got = 0;
        for (int m = 1; m < cfg.n_mels; ++m)
            if (f.at(mid, m) > f.at(mid, got)) got = m;
        INFO("freq " << freq << " expect ch " << expect << " got " << got);
        CHECK(std::abs(got - expect) <= 1);
    }
}

TEST_CASE("silence hits the log floor") {
    FrontendConfig cfg;
    std::vector<double> s(1600, 0.0);
    auto f = compute_fbank(s, cfg);
    for (double v : f.data) CHECK(v == Catch::Approx(std::log(cfg.log_floor)));
}

TEST_CASE("cmvn zeroes per-dim means") {
    FrontendConfig cfg;
    std::vector<double> s(4800);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = 0.2 * rng_normal(11, 0, i);
    auto f = utterance_cmvn(compute_fbank(s, cfg));
    for (std::int64_t d = 0; d < f.dims; ++d) {
        double m = 0;
        for (std::int64_t t = 0; t < f.frames; ++t) m += f.at(t, d);
        CHECK(m / static_cast<double>(f.frames) == Catch::Approx(0.0).margin(1e-10));
    }
    CHECK_THROWS_AS(utterance_cmvn(FeatureMatrix{}), ValueError);
}

TEST_CASE("wav round trip and error reporting") {
    std::vector<double> s(2000);
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = 0.7 * std::sin(2.0 * M_PI * 440.0 * static_cast<double>(i) / 16000.0);
    auto path = tmp_path("cfr_rt.wav");
    write_pcm_wav(path, s, 16000);
    auto [r, rate] = load_pcm_wav(path);
    CHECK(rate == 16000);
    REQUIRE(r.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        CHECK(r[i] == Catch::Approx(s[i]).margin(1.0 / 32767.0));

    auto bad = tmp_path("cfr_bad.wav");
    {
        std::ofstream out(bad, std::ios::binary);
        out << "not a riff file at all";
    }
    CHECK_THROWS_AS(load_pcm_wav(bad), FormatError);
    CHECK_THROWS_AS(load_pcm_wav(tmp_path("does_not_exist.wav")), FormatError);
}

TEST_CASE("fbk round trip preserves header, utt id and f32 data") {
    FeatureMatrix f;
    f.frames = 3;
    f.dims = 4;
    f.utt_id = "utt_x";
    for (int i = 0; i < 12; ++i) f.data.push_back(0.37 * i - 1.1);
    auto path = tmp_path("cfr_rt.fbk");
    write_fbk(path, f);
    auto g = read_fbk(path);
    CHECK(g.frames == 3);
    CHECK(g.dims == 4);
    CHECK(g.utt_id == "utt_x");
    for (int i = 0; i < 12; ++i)
        CHECK(g.data[static_cast<std::size_t>(i)] ==
              static_cast<double>(static_cast<float>(f.data[static_cast<std::size_t>(i)])));

    auto bad = tmp_path("cfr_bad.fbk");
    {
        std::ofstream out(bad, std::ios::binary);
        out << "XXXX";
    }
    CHECK_THROWS_AS(read_fbk(bad), FormatError);
}

TEST_CASE("synthetic tones land in their designated mel channels") {
    SynthConfig sc;
    sc.vocab_chars = {"a", "b", "c", "d", "e"};
    sc.seed = 5;
    FrontendConfig cfg;
    RngState rng{5, 0};
    for (std::int64_t i = 0; i < 5; ++i) {
        std::string c = sc.vocab_chars[static_cast<std::size_t>(i)];
        auto wave = synth_waveform(c + c, sc, rng);
        auto f = compute_fbank(wave, cfg);
        double freq = tone_frequency_hz(i, 5, cfg.sample_rate_hz);
        int expect = 0;
        double best = 1e18;
        for (int m = 0; m < cfg.n_mels; ++m) {
            double d = std::abs(mel_center_hz(cfg, m) - freq);
            if (d < best) {
                best = d;
                expect = m;
            }
        }
        std::int64_t mid = f.frames / 2;
        int got = 0;
        for (int m = 1; m < cfg.n_mels; ++m)
            if (f.at(mid, m) > f.at(mid, got)) got = m;
        CHECK(std::abs(got - expect) <= 1);
    }
}
