#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "cfr/tensor.hpp"

namespace cfr {

struct LossWeights {
    double alpha = 0.3;     // KL weight in the convex merge
    double beta = 0.7;      // AED weight in the hybrid loss
    double smoothing = 0.1; // label-smoothing mass

    void validate() const {
        if (alpha < 0.0) throw ConfigError("loss: alpha must be >= 0");
        if (beta < 0.0 || beta > 1.0) throw ConfigError("loss: beta must be in [0,1]");
        if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("loss: smoothing must be in [0,1)");
    }
};

namespace ctc_detail {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
    if (a == kLogZero) return b;
    if (b == kLogZero) return a;
    double m = a > b ? a : b;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace ctc_detail

// Minimum frame count that admits any alignment: |target| plus one blank
// separator per adjacent repeat.
inline std::int64_t ctc_min_frames(const std::vector<std::int64_t>& target) {
    std::int64_t repeats = 0;
    for (std::size_t i = 1; i < target.size(); ++i)
        if (target[i] == target[i - 1]) ++repeats;
    return static_cast<std::int64_t>(target.size()) + repeats;
}

// -log P(target | logits) via the log-space forward recursion over the
// blank-interleaved label sequence. The gradient is the analytic
// forward-backward result: d/dz[t][k] = p[t][k] - gamma[t][k] with gamma the
// per-frame label posterior.
inline Tensor ctc_loss(const Tensor& logits, const std::vector<std::int64_t>& target,
                       std::int64_t blank_id) {
    using ctc_detail::kLogZero;
    using ctc_detail::log_add;
    if (logits.ndim() != 2) throw ShapeError("ctc_loss: logits must be [T x V]");
    std::int64_t T = logits.dim(0), V = logits.dim(1);
    if (blank_id < 0 || blank_id >= V) throw ValueError("ctc_loss: blank_id out of range");
    for (auto id : target)
        if (id < 0 || id >= V || id == blank_id)
            throw VocabError("ctc_loss: invalid target id " + std::to_string(id));
    if (T < ctc_min_frames(target))
        throw CtcInfeasibleError("ctc_loss: target needs at least " +
                                 std::to_string(ctc_min_frames(target)) + " frames, have " +
                                 std::to_string(T));

    // extended labels: blank, y1, blank, y2, ..., blank
    std::int64_t L = static_cast<std::int64_t>(target.size());
    std::int64_t S = 2 * L + 1;
    std::vector<std::int64_t> ext(static_cast<std::size_t>(S), blank_id);
    for (std::int64_t s = 0; s < L; ++s) ext[static_cast<std::size_t>(2 * s + 1)] = target[static_cast<std::size_t>(s)];

    // per-frame log-softmax
    std::vector<double> lp(static_cast<std::size_t>(T * V));
    for (std::int64_t t = 0; t < T; ++t) {
        const double* in = logits.data().data() + t * V;
        double mx = *std::max_element(in, in + V);
        double z = 0.0;
        for (std::int64_t k = 0; k < V; ++k) z += std::exp(in[k] - mx);
        double lz = mx + std::log(z);
        for (std::int64_t k = 0; k < V; ++k) lp[static_cast<std::size_t>(t * V + k)] = in[k] - lz;
    }
    auto lpat = [&](std::int64_t t, std::int64_t k) { return lp[static_cast<std::size_t>(t * V + k)]; };

    auto can_skip = [&](std::int64_t s) {
        return ext[static_cast<std::size_t>(s)] != blank_id && s >= 2 &&
               ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)];
    };

    std::vector<double> alpha(static_cast<std::size_t>(T * S), kLogZero);
    alpha[0] = lpat(0, ext[0]);
    if (S > 1) alpha[1] = lpat(0, ext[1]);
    for (std::int64_t t = 1; t < T; ++t)
        for (std::int64_t s = 0; s < S; ++s) {
            double a = alpha[static_cast<std::size_t>((t - 1) * S + s)];
            if (s >= 1) a = log_add(a, alpha[static_cast<std::size_t>((t - 1) * S + s - 1)]);
            if (can_skip(s)) a = log_add(a, alpha[static_cast<std::size_t>((t - 1) * S + s - 2)]);
            alpha[static_cast<std::size_t>(t * S + s)] =
                a == kLogZero ? kLogZero : a + lpat(t, ext[static_cast<std::size_t>(s)]);
        }
    double log_p = alpha[static_cast<std::size_t>((T - 1) * S + S - 1)];
    if (S > 1) log_p = log_add(log_p, alpha[static_cast<std::size_t>((T - 1) * S + S - 2)]);
    if (log_p == kLogZero)
        throw CtcInfeasibleError("ctc_loss: no feasible alignment (probability underflow)");
    double loss = -log_p;

    // backward recursion for the gradient
    std::vector<double> beta(static_cast<std::size_t>(T * S), kLogZero);
    beta[static_cast<std::size_t>((T - 1) * S + S - 1)] = lpat(T - 1, ext[static_cast<std::size_t>(S - 1)]);
    if (S > 1)
        beta[static_cast<std::size_t>((T - 1) * S + S - 2)] = lpat(T - 1, ext[static_cast<std::size_t>(S - 2)]);
    for (std::int64_t t = T - 2; t >= 0; --t)
        for (std::int64_t s = S - 1; s >= 0; --s) {
            double b = beta[static_cast<std::size_t>((t + 1) * S + s)];
            if (s + 1 < S) b = log_add(b, beta[static_cast<std::size_t>((t + 1) * S + s + 1)]);
            if (s + 2 < S && can_skip(s + 2))
                b = log_add(b, beta[static_cast<std::size_t>((t + 1) * S + s + 2)]);
            beta[static_cast<std::size_t>(t * S + s)] =
                b == kLogZero ? kLogZero : b + lpat(t, ext[static_cast<std::size_t>(s)]);
        }

    // d(-logP)/dz[t][k] = p[t][k] * sum_j gamma[t][j] - gamma[t][k]
    std::vector<double> grad(static_cast<std::size_t>(T * V), 0.0);
    for (std::int64_t t = 0; t < T; ++t) {
        std::vector<double> lg(static_cast<std::size_t>(V), kLogZero);
        for (std::int64_t s = 0; s < S; ++s) {
            double ab = alpha[static_cast<std::size_t>(t * S + s)] + beta[static_cast<std::size_t>(t * S + s)];
            if (ab == kLogZero || std::isnan(ab)) continue;
            std::int64_t k = ext[static_cast<std::size_t>(s)];
            lg[static_cast<std::size_t>(k)] =
                log_add(lg[static_cast<std::size_t>(k)], ab - lpat(t, k));
        }
        double row_sum = 0.0;
        for (std::int64_t k = 0; k < V; ++k)
            if (lg[static_cast<std::size_t>(k)] != kLogZero)
                row_sum += std::exp(lg[static_cast<std::size_t>(k)] - log_p);
        for (std::int64_t k = 0; k < V; ++k) {
            double gamma = lg[static_cast<std::size_t>(k)] == kLogZero
                               ? 0.0
                               : std::exp(lg[static_cast<std::size_t>(k)] - log_p);
            grad[static_cast<std::size_t>(t * V + k)] =
                std::exp(lp[static_cast<std::size_t>(t * V + k)]) * row_sum - gamma;
        }
    }
    return detail::make_op({}, {loss}, {logits}, [grad = std::move(grad)](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        double g = out.grad[0];
        for (std::size_t i = 0; i < grad.size(); ++i) p.grad[i] += g * grad[i];
    });
}

// 0.5 [KL(P1||P2) + KL(P2||P1)] between per-frame softmax rows, summed over
// frames and divided by the frame count. Implemented as one op with the
// analytic gradient so identical branch logits yield an exactly-zero
// gradient contribution.
inline Tensor kl_bidirectional(const Tensor& logits1, const Tensor& logits2) {
    check_same_shape(logits1, logits2, "kl_bidirectional");
    std::int64_t T = logits1.ndim() == 2 ? logits1.dim(0) : 1;
    std::int64_t V = logits1.ndim() == 2 ? logits1.dim(1) : logits1.numel();
    std::vector<double> lp1(static_cast<std::size_t>(T * V)), lp2(static_cast<std::size_t>(T * V));
    auto fill_lp = [V, T](const Tensor& z, std::vector<double>& lp) {
        for (std::int64_t t = 0; t < T; ++t) {
            const double* in = z.data().data() + t * V;
            double mx = *std::max_element(in, in + V);
            double s = 0.0;
            for (std::int64_t k = 0; k < V; ++k) s += std::exp(in[k] - mx);
            double lz = mx + std::log(s);
            for (std::int64_t k = 0; k < V; ++k) lp[static_cast<std::size_t>(t * V + k)] = in[k] - lz;
        }
    };
    fill_lp(logits1, lp1);
    fill_lp(logits2, lp2);
    double acc = 0.0;
    for (std::size_t i = 0; i < lp1.size(); ++i) {
        double p1 = std::exp(lp1[i]), p2 = std::exp(lp2[i]);
        double d = lp1[i] - lp2[i];
        acc += p1 * d - p2 * d;
    }
    double value = acc / (2.0 * static_cast<double>(T));
    return detail::make_op(
        {}, {value}, {logits1, logits2},
        [T, V, lp1 = std::move(lp1), lp2 = std::move(lp2)](const detail::Node& out) {
            auto& z1 = *out.parents[0];
            auto& z2 = *out.parents[1];
            double g = out.grad[0] / (2.0 * static_cast<double>(T));
            for (std::int64_t t = 0; t < T; ++t) {
                double dot1 = 0.0, dot2 = 0.0;
                for (std::int64_t k = 0; k < V; ++k) {
                    std::size_t i = static_cast<std::size_t>(t * V + k);
                    double d = lp1[i] - lp2[i];
                    dot1 += std::exp(lp1[i]) * d;
                    dot2 += std::exp(lp2[i]) * (-d);
                }
                for (std::int64_t k = 0; k < V; ++k) {
                    std::size_t i = static_cast<std::size_t>(t * V + k);
                    double p1 = std::exp(lp1[i]), p2 = std::exp(lp2[i]);
                    double d = lp1[i] - lp2[i];
                    if (z1.requires_grad) {
                        z1.ensure_grad();
                        z1.grad[i] += g * (p1 * d - p1 * dot1 + (p1 - p2));
                    }
                    if (z2.requires_grad) {
                        z2.ensure_grad();
                        z2.grad[i] += g * (p2 * (-d) - p2 * dot2 + (p2 - p1));
                    }
                }
            }
        });
}

// Sum of the two branches' negative log-likelihoods (both branch CTC losses
// for the CTC head).
inline Tensor rdrop_ce(const Tensor& p1_logits, const Tensor& p2_logits,
                       const std::vector<std::int64_t>& target, std::int64_t blank_id) {
    return add(ctc_loss(p1_logits, target, blank_id), ctc_loss(p2_logits, target, blank_id));
}

// Convex merge: (1-alpha) L_merge + alpha L_KL.
inline Tensor rdrop_merge_ctc(const Tensor& l_merge, const Tensor& l_kl, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw ConfigError("rdrop_merge_ctc: alpha must be in [0,1], got " + std::to_string(alpha));
    return add(scale(l_merge, 1.0 - alpha), scale(l_kl, alpha));
}

// Additive form: L_CE + alpha L_KL.
inline Tensor rdrop_generic(const Tensor& l_ce, const Tensor& l_kl, double alpha) {
    if (alpha < 0.0) throw ConfigError("rdrop_generic: alpha must be >= 0");
    return add(l_ce, scale(l_kl, alpha));
}

// Label-smoothed cross-entropy against target (with trailing eos): correct
// class gets 1-smoothing, the rest share smoothing uniformly; mean over
// positions.
inline Tensor aed_ce_loss(const Tensor& logits, const std::vector<std::int64_t>& target,
                          double smoothing) {
    if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("aed_ce_loss: smoothing must be in [0,1)");
    if (logits.ndim() != 2) throw ShapeError("aed_ce_loss: logits must be [L x V]");
    std::int64_t L = logits.dim(0), V = logits.dim(1);
    if (static_cast<std::int64_t>(target.size()) != L)
        throw ShapeError("aed_ce_loss: target length " + std::to_string(target.size()) +
                         " != logit rows " + std::to_string(L));
    for (auto id : target)
        if (id < 0 || id >= V) throw VocabError("aed_ce_loss: target id out of range");
    std::vector<double> lp(static_cast<std::size_t>(L * V));
    for (std::int64_t t = 0; t < L; ++t) {
        const double* in = logits.data().data() + t * V;
        double mx = *std::max_element(in, in + V);
        double s = 0.0;
        for (std::int64_t k = 0; k < V; ++k) s += std::exp(in[k] - mx);
        double lz = mx + std::log(s);
        for (std::int64_t k = 0; k < V; ++k) lp[static_cast<std::size_t>(t * V + k)] = in[k] - lz;
    }
    double off = smoothing / static_cast<double>(V - 1);
    double on = 1.0 - smoothing;
    double acc = 0.0;
    for (std::int64_t t = 0; t < L; ++t)
        for (std::int64_t k = 0; k < V; ++k) {
            double q = (k == target[static_cast<std::size_t>(t)]) ? on : off;
            acc -= q * lp[static_cast<std::size_t>(t * V + k)];
        }
    double value = acc / static_cast<double>(L);
    return detail::make_op({}, {value}, {logits},
                           [L, V, off, on, target, lp = std::move(lp)](const detail::Node& out) {
                               auto& z = *out.parents[0];
                               z.ensure_grad();
                               double g = out.grad[0] / static_cast<double>(L);
                               for (std::int64_t t = 0; t < L; ++t)
                                   for (std::int64_t k = 0; k < V; ++k) {
                                       std::size_t i = static_cast<std::size_t>(t * V + k);
                                       double q = (k == target[static_cast<std::size_t>(t)]) ? on : off;
                                       z.grad[i] += g * (std::exp(lp[i]) - q);
                                   }
                           });
}

// Hybrid CTC/AED weighting: (1-beta) L_CTC + beta L_AED.
inline Tensor total_loss(const Tensor& l_ctc, const Tensor& l_aed, double beta) {
    if (beta < 0.0 || beta > 1.0) throw ConfigError("total_loss: beta must be in [0,1]");
    return add(scale(l_ctc, 1.0 - beta), scale(l_aed, beta));
}

}  // namespace cfr
