#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cfr/rng.hpp"
#include "cfr/tensor.hpp"

namespace cfr {

// Named trainable tensors in creation order. Checkpoints and optimizer
// state follow this order, so construction must be deterministic.
class ParamRegistry {
public:
    Tensor add(const std::string& name, Tensor t) {
        items_.emplace_back(name, t);
        return t;
    }

    // Xavier-uniform init; consumes one rng counter per parameter.
    Tensor xavier(const std::string& name, Shape shape, RngState& rng) {
        std::int64_t fan_in = shape.size() >= 1 ? shape[0] : 1;
        std::int64_t fan_out = shape.size() >= 2 ? shape[1] : shape[0];
        if (shape.size() == 4)  // conv kernels [Cout x Cin x K x K]
        {
            fan_out = shape[0] * shape[2] * shape[3];
            fan_in = shape[1] * shape[2] * shape[3];
        }
        double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uint64_t ctr = rng.next_counter();
        std::int64_t n = shape_numel(shape);
        std::vector<double> v(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i)
            v[static_cast<std::size_t>(i)] =
                (2.0 * rng_uniform(rng.seed, ctr, static_cast<std::uint64_t>(i)) - 1.0) * bound;
        return add(name, Tensor::from_data(std::move(shape), std::move(v), true));
    }

    Tensor zeros(const std::string& name, Shape shape) {
        return add(name, Tensor::zeros(std::move(shape), true));
    }

    Tensor ones(const std::string& name, Shape shape) {
        return add(name, Tensor::full(std::move(shape), 1.0, true));
    }

    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    std::int64_t total_numel() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

    std::vector<double> snapshot_grads() const {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(total_numel()));
        for (const auto& [name, t] : items_) {
            const auto& g = t.node()->grad;
            if (g.empty())
                out.insert(out.end(), static_cast<std::size_t>(t.numel()), 0.0);
            else
                out.insert(out.end(), g.begin(), g.end());
        }
        return out;
    }

    void load_grads(const std::vector<double>& flat) {
        std::size_t off = 0;
        for (auto& [name, t] : items_) {
            auto& g = t.grad();
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                      flat.begin() + static_cast<std::ptrdiff_t>(off + g.size()), g.begin());
            off += g.size();
        }
    }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace cfr
