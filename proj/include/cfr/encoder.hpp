#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cfr/attention.hpp"
#include "cfr/nn_ops.hpp"
#include "cfr/params.hpp"
#include "cfr/tensor.hpp"

namespace cfr {

struct ConformerConfig {
    std::int64_t n_blocks = 2;         // 8 at full scale
    std::int64_t d_model = 64;         // 512 at full scale
    std::int64_t n_heads = 4;
    std::int64_t ff_expansion = 4;
    std::int64_t depthwise_kernel = 15;
    double dropout_p = 0.1;
    std::int64_t subsample_channels = 8;
    std::int64_t n_mels = 80;

    void validate() const {
        if (n_blocks < 1 || d_model < 1 || n_heads < 1 || ff_expansion < 1)
            throw ConfigError("encoder: all size fields must be positive");
        if (d_model % n_heads != 0) throw ConfigError("encoder: d_model must be divisible by n_heads");
        if (depthwise_kernel % 2 == 0)
            throw ConfigError("encoder: depthwise_kernel must be odd, got " +
                              std::to_string(depthwise_kernel));
        if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("encoder: dropout_p must be in [0,1)");
    }
};

// Output length of one 3x3 stride-2 valid convolution.
inline std::int64_t conv_out_len(std::int64_t n, std::int64_t k = 3, std::int64_t stride = 2) {
    return (n - k) / stride + 1;
}

inline std::int64_t subsample_out_len(std::int64_t frames) {
    return conv_out_len(conv_out_len(frames));
}

inline std::int64_t min_subsample_frames() {
    // two valid 3x3 stride-2 convolutions need at least 7 input frames
    return 7;
}

struct SubsampleParams {
    Tensor conv1_k, conv1_b;  // [C x 1 x 3 x 3], [C]
    Tensor conv2_k, conv2_b;  // [C x C x 3 x 3], [C]
    Tensor proj_w, proj_b;    // [(C * F'') x d_model], [d_model]
};

struct FeedForwardParams {
    Tensor ln_g, ln_b;
    Tensor w1, b1;  // [d x d*exp]
    Tensor w2, b2;  // [d*exp x d]
};

// Gated linear unit: value path (w, b) times sigmoid gate (v, c),
// then depthwise conv, batch norm, swish, pointwise out.
struct ConvModuleParams {
    Tensor ln_g, ln_b;
    Tensor pw_in_w, pw_in_b;  // value path
    Tensor gate_w, gate_b;    // gate path
    Tensor dw;                // [K x d]
    Tensor bn_g, bn_b;
    std::shared_ptr<BatchNormStats> bn_stats;
    Tensor pw_out_w, pw_out_b;
};

struct ConformerBlockParams {
    FeedForwardParams ffn1;
    Tensor mhsa_ln_g, mhsa_ln_b;
    RelMhsaParams mhsa;
    ConvModuleParams conv;
    FeedForwardParams ffn2;
    Tensor final_ln_g, final_ln_b;
};

struct EncoderParams {
    SubsampleParams subsample;
    std::vector<ConformerBlockParams> blocks;
};

inline FeedForwardParams make_ffn_params(ParamRegistry& reg, const std::string& prefix,
                                         std::int64_t d, std::int64_t expansion, RngState& rng) {
    FeedForwardParams p;
    p.ln_g = reg.ones(prefix + ".ln.g", {d});
    p.ln_b = reg.zeros(prefix + ".ln.b", {d});
    p.w1 = reg.xavier(prefix + ".w1", {d, d * expansion}, rng);
    p.b1 = reg.zeros(prefix + ".b1", {d * expansion});
    p.w2 = reg.xavier(prefix + ".w2", {d * expansion, d}, rng);
    p.b2 = reg.zeros(prefix + ".b2", {d});
    return p;
}

inline RelMhsaParams make_rel_mhsa_params(ParamRegistry& reg, const std::string& prefix,
                                          std::int64_t d, std::int64_t n_heads, RngState& rng) {
    RelMhsaParams p;
    p.n_heads = n_heads;
    p.w_q = reg.xavier(prefix + ".w_q", {d, d}, rng);
    p.b_q = reg.zeros(prefix + ".b_q", {d});
    p.w_ke = reg.xavier(prefix + ".w_ke", {d, d}, rng);
    p.w_kr = reg.xavier(prefix + ".w_kr", {d, d}, rng);
    p.w_v = reg.xavier(prefix + ".w_v", {d, d}, rng);
    p.b_v = reg.zeros(prefix + ".b_v", {d});
    p.w_o = reg.xavier(prefix + ".w_o", {d, d}, rng);
    p.b_o = reg.zeros(prefix + ".b_o", {d});
    p.u = reg.zeros(prefix + ".u", {d});
    p.v = reg.zeros(prefix + ".v", {d});
    return p;
}

inline ConvModuleParams make_conv_module_params(ParamRegistry& reg, const std::string& prefix,
                                                const ConformerConfig& cfg, RngState& rng) {
    std::int64_t d = cfg.d_model;
    ConvModuleParams p;
    p.ln_g = reg.ones(prefix + ".ln.g", {d});
    p.ln_b = reg.zeros(prefix + ".ln.b", {d});
    p.pw_in_w = reg.xavier(prefix + ".pw_in.w", {d, d}, rng);
    p.pw_in_b = reg.zeros(prefix + ".pw_in.b", {d});
    p.gate_w = reg.xavier(prefix + ".gate.w", {d, d}, rng);
    p.gate_b = reg.zeros(prefix + ".gate.b", {d});
    p.dw = reg.xavier(prefix + ".dw", {cfg.depthwise_kernel, d}, rng);
    p.bn_g = reg.ones(prefix + ".bn.g", {d});
    p.bn_b = reg.zeros(prefix + ".bn.b", {d});
    p.bn_stats = std::make_shared<BatchNormStats>(d);
    p.pw_out_w = reg.xavier(prefix + ".pw_out.w", {d, d}, rng);
    p.pw_out_b = reg.zeros(prefix + ".pw_out.b", {d});
    return p;
}

inline EncoderParams make_encoder_params(ParamRegistry& reg, const ConformerConfig& cfg,
                                         RngState& rng) {
    cfg.validate();
    EncoderParams p;
    std::int64_t C = cfg.subsample_channels;
    std::int64_t f2 = conv_out_len(conv_out_len(cfg.n_mels));
    p.subsample.conv1_k = reg.xavier("enc.sub.conv1.k", {C, 1, 3, 3}, rng);
    p.subsample.conv1_b = reg.zeros("enc.sub.conv1.b", {C});
    p.subsample.conv2_k = reg.xavier("enc.sub.conv2.k", {C, C, 3, 3}, rng);
    p.subsample.conv2_b = reg.zeros("enc.sub.conv2.b", {C});
    p.subsample.proj_w = reg.xavier("enc.sub.proj.w", {C * f2, cfg.d_model}, rng);
    p.subsample.proj_b = reg.zeros("enc.sub.proj.b", {cfg.d_model});
    for (std::int64_t b = 0; b < cfg.n_blocks; ++b) {
        std::string pre = "enc.block" + std::to_string(b);
        ConformerBlockParams bp;
        bp.ffn1 = make_ffn_params(reg, pre + ".ffn1", cfg.d_model, cfg.ff_expansion, rng);
        bp.mhsa_ln_g = reg.ones(pre + ".mhsa.ln.g", {cfg.d_model});
        bp.mhsa_ln_b = reg.zeros(pre + ".mhsa.ln.b", {cfg.d_model});
        bp.mhsa = make_rel_mhsa_params(reg, pre + ".mhsa", cfg.d_model, cfg.n_heads, rng);
        bp.conv = make_conv_module_params(reg, pre + ".conv", cfg, rng);
        bp.ffn2 = make_ffn_params(reg, pre + ".ffn2", cfg.d_model, cfg.ff_expansion, rng);
        bp.final_ln_g = reg.ones(pre + ".ln.g", {cfg.d_model});
        bp.final_ln_b = reg.zeros(pre + ".ln.b", {cfg.d_model});
        p.blocks.push_back(std::move(bp));
    }
    return p;
}

// [C x T x F] conv stack output flattened to [T x C*F] rows for the linear
// projection.
inline Tensor channels_to_rows(const Tensor& x) {
    if (x.ndim() != 3) throw ShapeError("channels_to_rows expects 3-D, got " + shape_str(x.shape()));
    std::int64_t C = x.dim(0), T = x.dim(1), F = x.dim(2);
    std::vector<double> v(static_cast<std::size_t>(T * C * F));
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t f = 0; f < F; ++f)
                v[static_cast<std::size_t>(t * C * F + c * F + f)] =
                    x.data()[static_cast<std::size_t>((c * T + t) * F + f)];
    return detail::make_op({T, C * F}, std::move(v), {x}, [C, T, F](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t f = 0; f < F; ++f)
                    p.grad[static_cast<std::size_t>((c * T + t) * F + f)] +=
                        out.grad[static_cast<std::size_t>(t * C * F + c * F + f)];
    });
}

// [T x F] features viewed as a one-channel image [1 x T x F].
inline Tensor as_image(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("as_image expects 2-D");
    std::int64_t T = x.dim(0), F = x.dim(1);
    std::vector<double> v(x.data());
    return detail::make_op({1, T, F}, std::move(v), {x}, [](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) p.grad[i] += out.grad[i];
    });
}

// Two 3x3 stride-2 convolutions with swish, then linear projection to
// d_model. Returns the encoding and the exact subsampled length T'.
inline std::pair<Tensor, std::int64_t> conv_subsample(const Tensor& feats, const SubsampleParams& p) {
    std::int64_t T = feats.dim(0);
    if (T < min_subsample_frames())
        throw ShapeError("conv_subsample: need at least " + std::to_string(min_subsample_frames()) +
                         " frames, got " + std::to_string(T));
    Tensor h = swish(conv2d(as_image(feats), p.conv1_k, p.conv1_b, 2));
    h = swish(conv2d(h, p.conv2_k, p.conv2_b, 2));
    Tensor rows = channels_to_rows(h);
    Tensor out = add_row(matmul(rows, p.proj_w), p.proj_b);
    return {out, out.dim(0)};
}

// GLU gate: (x w + b) elementwise-times sigmoid(x v + c).
inline Tensor glu_gate(const Tensor& x, const Tensor& w, const Tensor& b, const Tensor& v,
                       const Tensor& c) {
    Tensor value = add_row(matmul(x, w), b);
    Tensor gate = sigmoid(add_row(matmul(x, v), c));
    return mul(value, gate);
}

// layer_norm -> pointwise(+gate GLU) -> depthwise conv -> batch norm ->
// swish -> pointwise -> dropout. Residual is added by the caller.
inline Tensor convolution_module(const Tensor& x, const ConvModuleParams& p, Mode mode,
                                 double dropout_p, RngState& rng) {
    Tensor h = layer_norm(x, p.ln_g, p.ln_b);
    h = glu_gate(h, p.pw_in_w, p.pw_in_b, p.gate_w, p.gate_b);
    h = conv1d_depthwise(h, p.dw);
    h = batch_norm(h, p.bn_g, p.bn_b, *p.bn_stats, mode);
    h = swish(h);
    h = add_row(matmul(h, p.pw_out_w), p.pw_out_b);
    return dropout(h, dropout_p, rng, mode);
}

// layer_norm -> linear (x expansion) -> swish -> dropout -> linear -> dropout.
// Caller adds the half-step residual.
inline Tensor feed_forward_module(const Tensor& x, const FeedForwardParams& p, Mode mode,
                                  double dropout_p, RngState& rng) {
    Tensor h = layer_norm(x, p.ln_g, p.ln_b);
    h = swish(add_row(matmul(h, p.w1), p.b1));
    h = dropout(h, dropout_p, rng, mode);
    h = add_row(matmul(h, p.w2), p.b2);
    return dropout(h, dropout_p, rng, mode);
}

// Macaron sandwich with half-step feed-forward residuals and a final norm:
//   x1 = x + 0.5 FFN(x); x2 = x1 + MHSA(x1); x3 = x2 + Conv(x2);
//   y = LayerNorm(x3 + 0.5 FFN(x3)).
inline Tensor conformer_block(const Tensor& x, const ConformerBlockParams& p, Mode mode,
                              double dropout_p, RngState& rng) {
    Tensor x1 = add(x, scale(feed_forward_module(x, p.ffn1, mode, dropout_p, rng), 0.5));
    Tensor attn_in = layer_norm(x1, p.mhsa_ln_g, p.mhsa_ln_b);
    Tensor attn = dropout(rel_multi_head_attention(attn_in, p.mhsa), dropout_p, rng, mode);
    Tensor x2 = add(x1, attn);
    Tensor x3 = add(x2, convolution_module(x2, p.conv, mode, dropout_p, rng));
    Tensor x4 = add(x3, scale(feed_forward_module(x3, p.ffn2, mode, dropout_p, rng), 0.5));
    return layer_norm(x4, p.final_ln_g, p.final_ln_b);
}

inline std::pair<Tensor, std::int64_t> encoder_forward(const Tensor& feats, const EncoderParams& p,
                                                       const ConformerConfig& cfg, Mode mode,
                                                       RngState& rng) {
    auto [h, t_out] = conv_subsample(feats, p.subsample);
    for (const auto& block : p.blocks) h = conformer_block(h, block, mode, cfg.dropout_p, rng);
    return {h, t_out};
}

}  // namespace cfr
