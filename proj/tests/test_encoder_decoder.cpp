#include <catch2/catch_amalgamated.hpp>

#include "cfr/decoder.hpp"
#include "cfr/encoder.hpp"

using namespace cfr;

namespace {

ConformerConfig tiny_cfg() {
    ConformerConfig cfg;
    cfg.n_blocks = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.ff_expansion = 2;
    cfg.depthwise_kernel = 3;
    cfg.dropout_p = 0.0;
    cfg.subsample_channels = 2;
    cfg.n_mels = 12;
    return cfg;
}

Tensor random_feats(std::int64_t T, std::int64_t F, std::uint64_t seed, bool grad = false) {
    std::vector<double> v(static_cast<std::size_t>(T * F));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.5 * rng_normal(seed, 0, i);
    return Tensor::from_data({T, F}, std::move(v), grad);
}

}  // namespace

TEST_CASE("subsampling length law") {
    // two stride-2 valid 3x3 convs: n -> floor((n-3)/2)+1, twice
    CHECK(conv_out_len(16) == 7);
    CHECK(conv_out_len(7) == 3);
    CHECK(subsample_out_len(16) == 3);
    CHECK(subsample_out_len(7) == 1);
    CHECK(min_subsample_frames() == 7);
    CHECK(subsample_out_len(100) == 24);
}

TEST_CASE("config validation rejects bad shapes") {
    auto cfg = tiny_cfg();
    cfg.depthwise_kernel = 4;  // must be odd for symmetric padding
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_cfg();
    cfg.d_model = 9;  // not divisible by heads
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("encoder output shape follows the length law") {
    auto cfg = tiny_cfg();
    ParamRegistry reg;
    RngState init{1, 0};
    auto params = make_encoder_params(reg, cfg, init);
    RngState drop{2, 0};
    for (std::int64_t T : {7, 16, 31}) {
        auto [h, t_out] = encoder_forward(random_feats(T, cfg.n_mels, 10 + static_cast<std::uint64_t>(T)),
                                          params, cfg, Mode::Eval, drop);
        CHECK(t_out == subsample_out_len(T));
        CHECK(h.dim(0) == t_out);
        CHECK(h.dim(1) == cfg.d_model);
    }
    // too few frames for the conv stack
    CHECK_THROWS_AS(encoder_forward(random_feats(5, cfg.n_mels, 3), params, cfg, Mode::Eval, drop),
                    ShapeError);
}

TEST_CASE("block with zeroed output projections is layer norm of its input") {
    auto cfg = tiny_cfg();
    ParamRegistry reg;
    RngState init{4, 0};
    auto params = make_encoder_params(reg, cfg, init);
    auto& b = params.blocks[0];
    // zero every path's output projection; residuals then pass x through
    for (Tensor t : {b.ffn1.w2, b.ffn2.w2, b.mhsa.w_o, b.conv.pw_out_w})
        std::fill(t.data().begin(), t.data().end(), 0.0);
    auto x = random_feats(5, cfg.d_model, 21);
    RngState drop{5, 0};
    auto y = conformer_block(x, b, Mode::Eval, cfg.dropout_p, drop);
    auto ref = layer_norm(x, b.final_ln_g, b.final_ln_b);
    for (std::size_t i = 0; i < y.data().size(); ++i)
        CHECK(y.data()[i] == Catch::Approx(ref.data()[i]).margin(1e-12));
}

TEST_CASE("eval mode is idempotent and dropout-free") {
    auto cfg = tiny_cfg();
    ParamRegistry reg;
    RngState init{6, 0};
    auto params = make_encoder_params(reg, cfg, init);
    auto x = random_feats(10, cfg.n_mels, 30);
    RngState d1{7, 0}, d2{99, 5};
    auto [y1, t1] = encoder_forward(x, params, cfg, Mode::Eval, d1);
    auto [y2, t2] = encoder_forward(x, params, cfg, Mode::Eval, d2);
    CHECK(d1.counter == 0);
    for (std::size_t i = 0; i < y1.data().size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("encoder gradient check on a sample of parameters") {
    auto cfg = tiny_cfg();
    ParamRegistry reg;
    RngState init{8, 0};
    auto params = make_encoder_params(reg, cfg, init);
    auto x = random_feats(7, cfg.n_mels, 31, true);
    RngState drop{9, 0};
    auto forward = [&]() {
        auto [h, t] = encoder_forward(x, params, cfg, Mode::Eval, drop);
        return sum(mul(h, h));
    };
    backward(forward());
    auto f = [&forward]() { return forward().item(); };
    std::vector<Tensor> leaves = {x, params.subsample.conv1_k, params.blocks[0].mhsa.w_q,
                                  params.blocks[0].conv.dw, params.blocks[0].ffn1.w1};
    for (auto& leaf : leaves) {
        std::size_t stride = std::max<std::size_t>(1, leaf.data().size() / 6);
        for (std::size_t i = 0; i < leaf.data().size(); i += stride) {
            double numeric = finite_difference(f, leaf.data(), i);
            double analytic = leaf.grad()[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-5});
            INFO("leaf comp " << i);
            CHECK(std::abs(numeric - analytic) / denom < 2e-4);
        }
    }
    reg.zero_grad();
}

TEST_CASE("vocabulary layout and round trip") {
    Vocabulary v(Vocabulary::split_utf8("abc"));
    CHECK(v.size() == 5);
    CHECK(v.blank_id() == 0);
    CHECK(v.sos_eos_id() == 4);
    auto ids = v.encode("cab");
    REQUIRE(ids.size() == 3);
    CHECK(ids[0] == 3);
    CHECK(ids[1] == 1);
    CHECK(ids[2] == 2);
    CHECK(v.decode(ids) == "cab");
    CHECK_THROWS_AS(v.encode("axb"), VocabError);

    auto multi = Vocabulary::split_utf8("a\xc3\xa9z");
    REQUIRE(multi.size() == 3);
    CHECK(multi[1] == "\xc3\xa9");
}

TEST_CASE("decoder logits shape and token range errors") {
    DecoderConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.ff_expansion = 2;
    cfg.dropout_p = 0.0;
    std::int64_t V = 6;
    ParamRegistry reg;
    RngState init{12, 0};
    auto p = make_decoder_params(reg, cfg, V, init);
    auto enc = random_feats(4, cfg.d_model, 40);
    RngState drop{13, 0};
    auto logits = decoder_forward({5, 1, 2}, enc, p, cfg, Mode::Eval, drop);
    CHECK(logits.dim(0) == 3);
    CHECK(logits.dim(1) == V);
    CHECK_THROWS_WITH(decoder_forward({5, 9}, enc, p, cfg, Mode::Eval, drop),
                      Catch::Matchers::ContainsSubstring("position 1"));
}

TEST_CASE("decoder is causal in its token prefix") {
    DecoderConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.ff_expansion = 2;
    cfg.dropout_p = 0.0;
    std::int64_t V = 6;
    ParamRegistry reg;
    RngState init{14, 0};
    auto p = make_decoder_params(reg, cfg, V, init);
    auto enc = random_feats(4, cfg.d_model, 41);
    RngState drop{15, 0};
    auto l1 = decoder_forward({5, 1, 2, 3}, enc, p, cfg, Mode::Eval, drop);
    auto l2 = decoder_forward({5, 1, 4, 4}, enc, p, cfg, Mode::Eval, drop);
    // positions 0..1 share the prefix so their logits match exactly
    for (std::int64_t r = 0; r < 2; ++r)
        for (std::int64_t c = 0; c < V; ++c)
            CHECK(l1.at(r, c) == Catch::Approx(l2.at(r, c)).margin(1e-12));
    bool differs = false;
    for (std::int64_t c = 0; c < V; ++c)
        if (std::abs(l1.at(2, c) - l2.at(2, c)) > 1e-9) differs = true;
    CHECK(differs);
}

TEST_CASE("greedy decode stops at the end symbol") {
    DecoderConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.ff_expansion = 2;
    cfg.dropout_p = 0.0;
    std::int64_t V = 6;
    ParamRegistry reg;
    RngState init{16, 0};
    auto p = make_decoder_params(reg, cfg, V, init);
    auto enc = random_feats(3, cfg.d_model, 42);
    auto out = greedy_ar_decode(enc, p, cfg, V - 1, 10);
    CHECK(out.size() <= 10);
    for (auto id : out) CHECK(id != V - 1);
    CHECK_THROWS_AS(greedy_ar_decode(enc, p, cfg, V - 1, 0), ValueError);
}

TEST_CASE("batch norm statistics and modes") {
    std::int64_t C = 3;
    BatchNormStats stats(C);
    auto g = Tensor::from_data({C}, {1, 1, 1}, false);
    auto b = Tensor::from_data({C}, {0, 0, 0}, false);
    auto x = Tensor::from_data({4, C}, {1, 10, -1, 2, 20, -2, 3, 30, -3, 4, 40, -4});
    auto y = batch_norm(x, g, b, stats, Mode::Train);
    // train mode normalizes with batch stats: each column has mean 0
    for (std::int64_t c = 0; c < C; ++c) {
        double m = 0;
        for (std::int64_t t = 0; t < 4; ++t) m += y.at(t, c);
        CHECK(m == Catch::Approx(0.0).margin(1e-10));
    }
    // running stats moved toward the batch mean by the momentum
    CHECK(stats.running_mean[0] == Catch::Approx(0.1 * 2.5));
    CHECK(stats.running_mean[1] == Catch::Approx(0.1 * 25.0));

    // eval mode uses running stats, so a constant input maps deterministically
    auto z1 = batch_norm(x, g, b, stats, Mode::Eval);
    auto z2 = batch_norm(x, g, b, stats, Mode::Eval);
    for (std::size_t i = 0; i < z1.data().size(); ++i) CHECK(z1.data()[i] == z2.data()[i]);
}
