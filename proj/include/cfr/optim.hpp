#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cfr/error.hpp"
#include "cfr/params.hpp"
#include "cfr/rng.hpp"

namespace cfr {

struct ScheduleConfig {
    double k = 1.0;
    std::int64_t d_m = 512;
    std::int64_t warmup_steps = 200;  // 12000 at full scale

    void validate() const {
        if (k <= 0.0 || d_m < 1 || warmup_steps < 1)
            throw ConfigError("schedule: k, d_m and warmup_steps must be positive");
    }
};

// lr = k * d_m^-0.5 * min(step^-0.5, step * warmup^-1.5); rises until the
// warmup step, then decays as step^-0.5.
inline double lr_at(std::int64_t step, const ScheduleConfig& cfg) {
    if (step < 1) throw ValueError("lr_at: step must be >= 1");
    double s = static_cast<double>(step);
    double w = static_cast<double>(cfg.warmup_steps);
    return cfg.k / std::sqrt(static_cast<double>(cfg.d_m)) *
           std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

// Adam with bias correction; moments are stored flat in registry order.
struct OptState {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    std::int64_t step = 0;
    std::vector<double> m, v;

    explicit OptState(std::int64_t n_params = 0)
        : m(static_cast<std::size_t>(n_params), 0.0), v(static_cast<std::size_t>(n_params), 0.0) {}
};

inline void adam_step(ParamRegistry& reg, const std::vector<double>& grads, OptState& opt, double lr) {
    if (lr <= 0.0) throw ValueError("adam_step: lr must be positive");
    if (static_cast<std::int64_t>(grads.size()) != reg.total_numel() ||
        grads.size() != opt.m.size())
        throw ShapeError("adam_step: gradient/moment size mismatch");
    std::size_t off = 0;
    for (auto& [name, t] : reg.items())
        for (std::int64_t i = 0; i < t.numel(); ++i, ++off)
            if (std::isnan(grads[off]))
                throw ValueError("adam_step: NaN gradient in parameter " + name);
    ++opt.step;
    double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    off = 0;
    for (auto& [name, t] : reg.items()) {
        auto& data = t.data();
        for (std::size_t i = 0; i < data.size(); ++i, ++off) {
            double g = grads[off];
            opt.m[off] = opt.beta1 * opt.m[off] + (1.0 - opt.beta1) * g;
            opt.v[off] = opt.beta2 * opt.v[off] + (1.0 - opt.beta2) * g * g;
            double mhat = opt.m[off] / bc1;
            double vhat = opt.v[off] / bc2;
            data[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

struct BatchPlan {
    std::vector<std::vector<std::string>> batches;  // utterance ids
    std::vector<std::string> oversized;             // singleton batches over budget
};

// Deterministic shuffle by seed, then greedy fill under the frame budget.
// An utterance larger than batch_bins becomes a flagged singleton batch.
inline BatchPlan plan_batches(const std::vector<std::pair<std::string, std::int64_t>>& manifest,
                              std::int64_t batch_bins, std::uint64_t shuffle_seed) {
    if (manifest.empty()) throw ValueError("plan_batches: empty manifest");
    if (batch_bins < 1) throw ConfigError("plan_batches: batch_bins must be positive");
    std::vector<std::size_t> order(manifest.size());
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates driven by the counter-based stream
    for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng_bits(shuffle_seed, 0, i) % i);
        std::swap(order[i - 1], order[j]);
    }
    BatchPlan plan;
    std::vector<std::string> cur;
    std::int64_t cur_frames = 0;
    for (std::size_t idx : order) {
        const auto& [id, frames] = manifest[idx];
        if (frames > batch_bins) {
            if (!cur.empty()) {
                plan.batches.push_back(std::move(cur));
                cur.clear();
                cur_frames = 0;
            }
            plan.batches.push_back({id});
            plan.oversized.push_back(id);
            continue;
        }
        if (cur_frames + frames > batch_bins && !cur.empty()) {
            plan.batches.push_back(std::move(cur));
            cur.clear();
            cur_frames = 0;
        }
        cur.push_back(id);
        cur_frames += frames;
    }
    if (!cur.empty()) plan.batches.push_back(std::move(cur));
    return plan;
}

}  // namespace cfr
