#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cfr/nn_ops.hpp"
#include "cfr/tensor.hpp"

namespace cfr {

// Count of attention rows that had every key masked out (degraded to a
// uniform distribution instead of NaN).
inline std::atomic<std::uint64_t>& fully_masked_row_count() {
    static std::atomic<std::uint64_t> n{0};
    return n;
}

// Bias used for masked positions; large but finite so gradients stay finite.
inline constexpr double kMaskBias = -1e30;

// Lower-triangular causal mask: mask[i][j] == 1 iff j <= i (position j visible
// from position i).
inline Tensor causal_mask(std::int64_t T) {
    if (T < 1) throw ValueError("causal_mask: T must be >= 1");
    std::vector<double> v(static_cast<std::size_t>(T * T), 0.0);
    for (std::int64_t i = 0; i < T; ++i)
        for (std::int64_t j = 0; j <= i; ++j) v[static_cast<std::size_t>(i * T + j)] = 1.0;
    return Tensor::from_data({T, T}, std::move(v));
}

// softmax(Q K^T / sqrt(d_k) + mask_bias) V. A fully-masked row comes out
// uniform over all keys (max-subtraction in softmax) and bumps the warning
// counter.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const Tensor* mask = nullptr) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2 || q.dim(1) != k.dim(1) ||
        k.dim(0) != v.dim(0))
        throw ShapeError("scaled_dot_attention: Q" + shape_str(q.shape()) + " K" +
                         shape_str(k.shape()) + " V" + shape_str(v.shape()));
    std::int64_t Tq = q.dim(0), Tk = k.dim(0), dk = q.dim(1);
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
    if (mask) {
        if (mask->ndim() != 2 || mask->dim(0) != Tq || mask->dim(1) != Tk)
            throw ShapeError("scaled_dot_attention: mask " + shape_str(mask->shape()) +
                             " does not match [" + std::to_string(Tq) + "x" + std::to_string(Tk) + "]");
        std::vector<double> bias(static_cast<std::size_t>(Tq * Tk), 0.0);
        for (std::int64_t i = 0; i < Tq; ++i) {
            bool any = false;
            for (std::int64_t j = 0; j < Tk; ++j) {
                if (mask->at(i, j) != 0.0)
                    any = true;
                else
                    bias[static_cast<std::size_t>(i * Tk + j)] = kMaskBias;
            }
            if (!any) ++fully_masked_row_count();
        }
        scores = add(scores, Tensor::from_data({Tq, Tk}, std::move(bias)));
    }
    return matmul(softmax(scores), v);
}

struct MhaParams {
    std::int64_t n_heads = 1;
    Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;  // all [d x d] / [d]
};

// Standard multi-head attention: shared projections sliced per head, each
// head runs scaled dot-product attention, heads concatenated, then the
// output projection.
inline Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p,
                                   const Tensor* mask = nullptr) {
    std::int64_t d = p.w_q.dim(1);
    if (x_q.dim(1) != p.w_q.dim(0) || x_kv.dim(1) != p.w_k.dim(0))
        throw ShapeError("multi_head_attention: input width mismatch");
    if (d % p.n_heads != 0) throw ConfigError("multi_head_attention: d_model not divisible by n_heads");
    std::int64_t dk = d / p.n_heads;
    Tensor q = add_row(matmul(x_q, p.w_q), p.b_q);
    Tensor k = add_row(matmul(x_kv, p.w_k), p.b_k);
    Tensor v = add_row(matmul(x_kv, p.w_v), p.b_v);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(p.n_heads));
    for (std::int64_t h = 0; h < p.n_heads; ++h) {
        Tensor qh = slice_cols(q, h * dk, (h + 1) * dk);
        Tensor kh = slice_cols(k, h * dk, (h + 1) * dk);
        Tensor vh = slice_cols(v, h * dk, (h + 1) * dk);
        heads.push_back(scaled_dot_attention(qh, kh, vh, mask));
    }
    return add_row(matmul(concat_cols(heads), p.w_o), p.b_o);
}

// Sinusoidal encodings for (possibly negative) positions, row r for
// positions[r], width d. Even columns sine, odd columns cosine.
inline Tensor sinusoid_encodings(const std::vector<double>& positions, std::int64_t d) {
    std::int64_t n = static_cast<std::int64_t>(positions.size());
    std::vector<double> v(static_cast<std::size_t>(n * d));
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t j = 0; j < d; ++j) {
            double freq = std::pow(10000.0, -2.0 * static_cast<double>(j / 2) / static_cast<double>(d));
            double a = positions[static_cast<std::size_t>(r)] * freq;
            v[static_cast<std::size_t>(r * d + j)] = (j % 2 == 0) ? std::sin(a) : std::cos(a);
        }
    return Tensor::from_data({n, d}, std::move(v));
}

// Absolute positional table p_0 .. p_{T-1} (decoder side).
inline Tensor abs_pos_table(std::int64_t T, std::int64_t d) {
    std::vector<double> pos(static_cast<std::size_t>(T));
    for (std::int64_t i = 0; i < T; ++i) pos[static_cast<std::size_t>(i)] = static_cast<double>(i);
    return sinusoid_encodings(pos, d);
}

// Relative table r_{i-l} for i-l in [-(T-1), T-1]; row (i-l)+T-1. Sized
// lazily per sequence length. Row T-1 is the standard sinusoid at 0.
inline Tensor rel_pos_table(std::int64_t T, std::int64_t d) {
    std::vector<double> pos(static_cast<std::size_t>(2 * T - 1));
    for (std::int64_t i = 0; i < 2 * T - 1; ++i)
        pos[static_cast<std::size_t>(i)] = static_cast<double>(i - (T - 1));
    return sinusoid_encodings(pos, d);
}

// Parameters for the Transformer-XL style relative-position score. Content
// embeddings are projected by w_q / w_ke; the sinusoidal relative table is
// projected by w_kr; u and v are the learned position-free query offsets.
struct RelPosParams {
    Tensor w_q;   // [d_in x d]
    Tensor w_ke;  // [d_in x d]
    Tensor w_kr;  // [d_r x d]
    Tensor u;     // [d]
    Tensor v;     // [d]
};

// Unscaled relative-position attention scores over content embeddings E:
//   A[i][l] = (e_i W^Q)(W^{K,E} e_l) + (e_i W^Q)(W^{K,r} r_{i-l})
//           + u.(W^{K,E} e_l)        + v.(W^{K,r} r_{i-l})
// grouped as (Q+u) K^T + gather(Q+v, R W^{K,r}). Caller scales by 1/sqrt(d_k)
// and softmaxes.
inline Tensor rel_attention_scores(const Tensor& e, const RelPosParams& p) {
    std::int64_t T = e.dim(0);
    Tensor q = matmul(e, p.w_q);
    Tensor k = matmul(e, p.w_ke);
    Tensor rel = matmul(rel_pos_table(T, p.w_kr.dim(0)), p.w_kr);
    Tensor content = matmul(add_row(q, p.u), transpose(k));
    Tensor positional = rel_gather_scores(add_row(q, p.v), rel);
    return add(content, positional);
}

struct RelMhsaParams {
    std::int64_t n_heads = 1;
    Tensor w_q, b_q;  // [d x d], [d]
    Tensor w_ke;      // [d x d] content key (no bias)
    Tensor w_kr;      // [d x d] position key (no bias)
    Tensor w_v, b_v;
    Tensor w_o, b_o;
    Tensor u, v;  // [d], sliced per head
};

// Multi-head self-attention with relative positional scoring, used by the
// Conformer block. Per head h: softmax(((Q_h+u_h)K_h^T + gather(Q_h+v_h, R_h)) / sqrt(d_k)) V_h.
inline Tensor rel_multi_head_attention(const Tensor& x, const RelMhsaParams& p) {
    std::int64_t T = x.dim(0), d = p.w_q.dim(1);
    if (d % p.n_heads != 0) throw ConfigError("rel_multi_head_attention: d_model not divisible by n_heads");
    std::int64_t dk = d / p.n_heads;
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    Tensor q = add_row(matmul(x, p.w_q), p.b_q);
    Tensor k = matmul(x, p.w_ke);
    Tensor v = add_row(matmul(x, p.w_v), p.b_v);
    Tensor rel = matmul(rel_pos_table(T, d), p.w_kr);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(p.n_heads));
    for (std::int64_t h = 0; h < p.n_heads; ++h) {
        Tensor qh = slice_cols(q, h * dk, (h + 1) * dk);
        Tensor kh = slice_cols(k, h * dk, (h + 1) * dk);
        Tensor vh = slice_cols(v, h * dk, (h + 1) * dk);
        Tensor relh = slice_cols(rel, h * dk, (h + 1) * dk);
        Tensor u_slice = slice_cols_vec(p.u, h * dk, (h + 1) * dk);
        Tensor v_slice = slice_cols_vec(p.v, h * dk, (h + 1) * dk);
        Tensor content = matmul(add_row(qh, u_slice), transpose(kh));
        Tensor positional = rel_gather_scores(add_row(qh, v_slice), relh);
        Tensor scores = scale(add(content, positional), inv_sqrt_dk);
        heads.push_back(matmul(softmax(scores), vh));
    }
    return add_row(matmul(concat_cols(heads), p.w_o), p.b_o);
}

}  // namespace cfr
