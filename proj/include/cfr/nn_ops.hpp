#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cfr/tensor.hpp"

namespace cfr {

// Running statistics for batch normalization. Updated only in train mode.
struct BatchNormStats {
    std::vector<double> running_mean;  // per channel
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormStats(std::int64_t channels = 0, double momentum_ = 0.1, double eps_ = 1e-5)
        : running_mean(static_cast<std::size_t>(channels), 0.0),
          running_var(static_cast<std::size_t>(channels), 1.0),
          momentum(momentum_),
          eps(eps_) {}
};

// Normalizes each channel of x [T x C] over the T axis. Train mode uses the
// batch statistics and folds them into the running stats
// (new = (1-momentum)*old + momentum*batch); eval mode uses the stored stats.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         BatchNormStats& stats, Mode mode) {
    if (x.ndim() != 2) throw ShapeError("batch_norm expects [T x C], got " + shape_str(x.shape()));
    std::int64_t T = x.dim(0), C = x.dim(1);
    if (static_cast<std::int64_t>(stats.running_mean.size()) != C)
        throw ShapeError("batch_norm: stats channel count mismatch");
    if (T < 1) throw ShapeError("batch_norm: empty batch");
    std::vector<double> mean(static_cast<std::size_t>(C)), var(static_cast<std::size_t>(C));
    if (mode == Mode::Train) {
        for (std::int64_t c = 0; c < C; ++c) {
            double mu = 0.0;
            for (std::int64_t t = 0; t < T; ++t) mu += x.at(t, c);
            mu /= static_cast<double>(T);
            double vv = 0.0;
            for (std::int64_t t = 0; t < T; ++t) vv += (x.at(t, c) - mu) * (x.at(t, c) - mu);
            vv /= static_cast<double>(T);
            mean[static_cast<std::size_t>(c)] = mu;
            var[static_cast<std::size_t>(c)] = vv;
            stats.running_mean[static_cast<std::size_t>(c)] =
                (1.0 - stats.momentum) * stats.running_mean[static_cast<std::size_t>(c)] + stats.momentum * mu;
            stats.running_var[static_cast<std::size_t>(c)] =
                (1.0 - stats.momentum) * stats.running_var[static_cast<std::size_t>(c)] + stats.momentum * vv;
        }
    } else {
        mean = stats.running_mean;
        var = stats.running_var;
    }
    double eps = stats.eps;
    std::vector<double> v(x.data().size());
    std::vector<double> xhat(x.data().size());
    std::vector<double> inv_std(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c)
        inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps);
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t c = 0; c < C; ++c) {
            double xh = (x.at(t, c) - mean[static_cast<std::size_t>(c)]) * inv_std[static_cast<std::size_t>(c)];
            xhat[static_cast<std::size_t>(t * C + c)] = xh;
            v[static_cast<std::size_t>(t * C + c)] = gamma.at(c) * xh + beta.at(c);
        }
    bool use_batch_stats = (mode == Mode::Train);
    return detail::make_op(
        x.shape(), std::move(v), {x, gamma, beta},
        [T, C, xhat = std::move(xhat), inv_std = std::move(inv_std), use_batch_stats](const detail::Node& out) {
            auto& px = *out.parents[0];
            auto& pg = *out.parents[1];
            auto& pb = *out.parents[2];
            const auto& G = out.grad;
            if (pg.requires_grad) {
                pg.ensure_grad();
                for (std::int64_t t = 0; t < T; ++t)
                    for (std::int64_t c = 0; c < C; ++c)
                        pg.grad[static_cast<std::size_t>(c)] +=
                            G[static_cast<std::size_t>(t * C + c)] * xhat[static_cast<std::size_t>(t * C + c)];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::int64_t t = 0; t < T; ++t)
                    for (std::int64_t c = 0; c < C; ++c)
                        pb.grad[static_cast<std::size_t>(c)] += G[static_cast<std::size_t>(t * C + c)];
            }
            if (px.requires_grad) {
                px.ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) {
                    double is = inv_std[static_cast<std::size_t>(c)];
                    double g = pg.value[static_cast<std::size_t>(c)];
                    if (use_batch_stats) {
                        double sum_g = 0.0, sum_gx = 0.0;
                        for (std::int64_t t = 0; t < T; ++t) {
                            double gy = G[static_cast<std::size_t>(t * C + c)];
                            sum_g += gy;
                            sum_gx += gy * xhat[static_cast<std::size_t>(t * C + c)];
                        }
                        double invT = 1.0 / static_cast<double>(T);
                        for (std::int64_t t = 0; t < T; ++t) {
                            double gy = G[static_cast<std::size_t>(t * C + c)];
                            double xh = xhat[static_cast<std::size_t>(t * C + c)];
                            px.grad[static_cast<std::size_t>(t * C + c)] +=
                                g * is * (gy - invT * sum_g - xh * invT * sum_gx);
                        }
                    } else {
                        for (std::int64_t t = 0; t < T; ++t)
                            px.grad[static_cast<std::size_t>(t * C + c)] +=
                                g * is * G[static_cast<std::size_t>(t * C + c)];
                    }
                }
            }
        });
}

// Depthwise 1-D convolution over time: channel c of the output is channel c
// of the input convolved with kernel column c; zero padding keeps length T.
// Kernel is [K x C] with K odd.
inline Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel) {
    if (x.ndim() != 2 || kernel.ndim() != 2 || x.dim(1) != kernel.dim(1))
        throw ShapeError("conv1d_depthwise: " + shape_str(x.shape()) + " with kernel " +
                         shape_str(kernel.shape()));
    std::int64_t T = x.dim(0), C = x.dim(1), K = kernel.dim(0);
    if (K % 2 == 0) throw ConfigError("conv1d_depthwise: kernel size must be odd, got " + std::to_string(K));
    std::int64_t half = K / 2;
    std::vector<double> v(static_cast<std::size_t>(T * C), 0.0);
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t k = 0; k < K; ++k) {
            std::int64_t src = t + k - half;
            if (src < 0 || src >= T) continue;
            for (std::int64_t c = 0; c < C; ++c)
                v[static_cast<std::size_t>(t * C + c)] += x.at(src, c) * kernel.at(k, c);
        }
    return detail::make_op({T, C}, std::move(v), {x, kernel}, [T, C, K, half](const detail::Node& out) {
        auto& px = *out.parents[0];
        auto& pk = *out.parents[1];
        const auto& G = out.grad;
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t k = 0; k < K; ++k) {
                    std::int64_t src = t + k - half;
                    if (src < 0 || src >= T) continue;
                    for (std::int64_t c = 0; c < C; ++c)
                        px.grad[static_cast<std::size_t>(src * C + c)] +=
                            G[static_cast<std::size_t>(t * C + c)] * pk.value[static_cast<std::size_t>(k * C + c)];
                }
        }
        if (pk.requires_grad) {
            pk.ensure_grad();
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t k = 0; k < K; ++k) {
                    std::int64_t src = t + k - half;
                    if (src < 0 || src >= T) continue;
                    for (std::int64_t c = 0; c < C; ++c)
                        pk.grad[static_cast<std::size_t>(k * C + c)] +=
                            G[static_cast<std::size_t>(t * C + c)] * px.value[static_cast<std::size_t>(src * C + c)];
                }
        }
    });
}

// Strided 2-D cross-correlation, no padding. x is [Cin x H x W], kernels are
// [Cout x Cin x K x K], bias is [Cout]; output [Cout x H' x W'] with
// H' = floor((H-K)/stride) + 1.
inline Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::int64_t stride) {
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    if (x.ndim() != 3 || kernels.ndim() != 4 || x.dim(0) != kernels.dim(1))
        throw ShapeError("conv2d: " + shape_str(x.shape()) + " with kernels " + shape_str(kernels.shape()));
    std::int64_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    std::int64_t Cout = kernels.dim(0), K = kernels.dim(2);
    if (H < K || W < K)
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel " +
                         std::to_string(K) + "x" + std::to_string(K));
    std::int64_t Ho = (H - K) / stride + 1, Wo = (W - K) / stride + 1;
    auto xat = [&](std::int64_t c, std::int64_t i, std::int64_t j) {
        return x.data()[static_cast<std::size_t>((c * H + i) * W + j)];
    };
    auto kat = [&](std::int64_t o, std::int64_t c, std::int64_t a, std::int64_t b) {
        return kernels.data()[static_cast<std::size_t>(((o * Cin + c) * K + a) * K + b)];
    };
    std::vector<double> v(static_cast<std::size_t>(Cout * Ho * Wo));
    for (std::int64_t o = 0; o < Cout; ++o)
        for (std::int64_t i = 0; i < Ho; ++i)
            for (std::int64_t j = 0; j < Wo; ++j) {
                double acc = bias.at(o);
                for (std::int64_t c = 0; c < Cin; ++c)
                    for (std::int64_t a = 0; a < K; ++a)
                        for (std::int64_t b = 0; b < K; ++b)
                            acc += xat(c, i * stride + a, j * stride + b) * kat(o, c, a, b);
                v[static_cast<std::size_t>((o * Ho + i) * Wo + j)] = acc;
            }
    return detail::make_op(
        {Cout, Ho, Wo}, std::move(v), {x, kernels, bias},
        [Cin, H, W, Cout, K, Ho, Wo, stride](const detail::Node& out) {
            auto& px = *out.parents[0];
            auto& pk = *out.parents[1];
            auto& pb = *out.parents[2];
            const auto& G = out.grad;
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::int64_t o = 0; o < Cout; ++o)
                    for (std::int64_t i = 0; i < Ho; ++i)
                        for (std::int64_t j = 0; j < Wo; ++j)
                            pb.grad[static_cast<std::size_t>(o)] += G[static_cast<std::size_t>((o * Ho + i) * Wo + j)];
            }
            if (px.requires_grad) px.ensure_grad();
            if (pk.requires_grad) pk.ensure_grad();
            for (std::int64_t o = 0; o < Cout; ++o)
                for (std::int64_t i = 0; i < Ho; ++i)
                    for (std::int64_t j = 0; j < Wo; ++j) {
                        double g = G[static_cast<std::size_t>((o * Ho + i) * Wo + j)];
                        if (g == 0.0) continue;
                        for (std::int64_t c = 0; c < Cin; ++c)
                            for (std::int64_t a = 0; a < K; ++a)
                                for (std::int64_t b = 0; b < K; ++b) {
                                    std::size_t xi = static_cast<std::size_t>(
                                        (c * H + i * stride + a) * W + j * stride + b);
                                    std::size_t ki =
                                        static_cast<std::size_t>(((o * Cin + c) * K + a) * K + b);
                                    if (px.requires_grad) px.grad[xi] += g * pk.value[ki];
                                    if (pk.requires_grad) pk.grad[ki] += g * px.value[xi];
                                }
                    }
        });
}

// Row gather: out[t] = table[ids[t]]. Gradient scatters into the table.
inline Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids) {
    if (table.ndim() != 2) throw ShapeError("embedding table must be 2-D");
    std::int64_t V = table.dim(0), d = table.dim(1);
    for (std::size_t t = 0; t < ids.size(); ++t)
        if (ids[t] < 0 || ids[t] >= V)
            throw VocabError("token id " + std::to_string(ids[t]) + " out of range at position " +
                             std::to_string(t));
    std::int64_t L = static_cast<std::int64_t>(ids.size());
    std::vector<double> v(static_cast<std::size_t>(L * d));
    for (std::int64_t t = 0; t < L; ++t)
        for (std::int64_t j = 0; j < d; ++j)
            v[static_cast<std::size_t>(t * d + j)] = table.at(ids[static_cast<std::size_t>(t)], j);
    return detail::make_op({L, d}, std::move(v), {table}, [ids, d, L](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::int64_t t = 0; t < L; ++t)
            for (std::int64_t j = 0; j < d; ++j)
                p.grad[static_cast<std::size_t>(ids[static_cast<std::size_t>(t)] * d + j)] +=
                    out.grad[static_cast<std::size_t>(t * d + j)];
    });
}

// Relative-position score gather: given Q [T x d] and a projected relative
// table R [(2T-1) x d] indexed so row (i-l) + T-1 holds r_{i-l}, produces
// S [T x T] with S[i][l] = dot(Q[i], R[i-l+T-1]).
inline Tensor rel_gather_scores(const Tensor& q, const Tensor& rel) {
    if (q.ndim() != 2 || rel.ndim() != 2 || q.dim(1) != rel.dim(1))
        throw ShapeError("rel_gather_scores: " + shape_str(q.shape()) + " vs " + shape_str(rel.shape()));
    std::int64_t T = q.dim(0), d = q.dim(1);
    if (rel.dim(0) != 2 * T - 1)
        throw ShapeError("rel_gather_scores: table rows " + std::to_string(rel.dim(0)) +
                         " != 2T-1 for T=" + std::to_string(T));
    std::vector<double> v(static_cast<std::size_t>(T * T));
    for (std::int64_t i = 0; i < T; ++i)
        for (std::int64_t l = 0; l < T; ++l) {
            double acc = 0.0;
            std::int64_t r = i - l + T - 1;
            for (std::int64_t j = 0; j < d; ++j) acc += q.at(i, j) * rel.at(r, j);
            v[static_cast<std::size_t>(i * T + l)] = acc;
        }
    return detail::make_op({T, T}, std::move(v), {q, rel}, [T, d](const detail::Node& out) {
        auto& pq = *out.parents[0];
        auto& pr = *out.parents[1];
        const auto& G = out.grad;
        if (pq.requires_grad) pq.ensure_grad();
        if (pr.requires_grad) pr.ensure_grad();
        for (std::int64_t i = 0; i < T; ++i)
            for (std::int64_t l = 0; l < T; ++l) {
                double g = G[static_cast<std::size_t>(i * T + l)];
                if (g == 0.0) continue;
                std::int64_t r = i - l + T - 1;
                for (std::int64_t j = 0; j < d; ++j) {
                    if (pq.requires_grad)
                        pq.grad[static_cast<std::size_t>(i * d + j)] +=
                            g * pr.value[static_cast<std::size_t>(r * d + j)];
                    if (pr.requires_grad)
                        pr.grad[static_cast<std::size_t>(r * d + j)] +=
                            g * pq.value[static_cast<std::size_t>(i * d + j)];
                }
            }
    });
}

}  // namespace cfr
