#include <catch2/catch_amalgamated.hpp>

#include "cfr/losses.hpp"
#include "cfr/rng.hpp"

using namespace cfr;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, double scale = 1.0, bool grad = false) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = scale * rng_normal(seed, 0, i);
    return Tensor::from_data(std::move(shape), std::move(v), grad);
}

// Collapses repeats then removes blanks.
std::vector<std::int64_t> collapse(const std::vector<std::int64_t>& path, std::int64_t blank) {
    std::vector<std::int64_t> out;
    std::int64_t prev = -1;
    for (auto id : path) {
        if (id != prev && id != blank) out.push_back(id);
        prev = id;
    }
    return out;
}

// Brute-force oracle: sum path probabilities over all V^T alignments that
// collapse to the target.
double ctc_brute_force(const Tensor& logits, const std::vector<std::int64_t>& target,
                       std::int64_t blank) {
    std::int64_t T = logits.dim(0), V = logits.dim(1);
    std::vector<std::vector<double>> p(static_cast<std::size_t>(T),
                                       std::vector<double>(static_cast<std::size_t>(V)));
    for (std::int64_t t = 0; t < T; ++t) {
        double mx = logits.at(t, 0);
        for (std::int64_t k = 1; k < V; ++k) mx = std::max(mx, logits.at(t, k));
        double z = 0;
        for (std::int64_t k = 0; k < V; ++k) z += std::exp(logits.at(t, k) - mx);
        for (std::int64_t k = 0; k < V; ++k)
            p[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
                std::exp(logits.at(t, k) - mx) / z;
    }
    double total = 0.0;
    std::vector<std::int64_t> path(static_cast<std::size_t>(T), 0);
    std::int64_t count = 1;
    for (std::int64_t t = 0; t < T; ++t) count *= V;
    for (std::int64_t n = 0; n < count; ++n) {
        std::int64_t x = n;
        double prob = 1.0;
        for (std::int64_t t = 0; t < T; ++t) {
            path[static_cast<std::size_t>(t)] = x % V;
            prob *= p[static_cast<std::size_t>(t)][static_cast<std::size_t>(x % V)];
            x /= V;
        }
        if (collapse(path, blank) == target) total += prob;
    }
    return -std::log(total);
}

}  // namespace

TEST_CASE("ctc hand-checked uniform cases") {
    // uniform logits over V=2 (blank + one label), T=2:
    // P(“a”) covers paths (a,a),(a,-),(-,a) = 3/4
    auto z = Tensor::zeros({2, 2});
    CHECK(ctc_loss(z, {1}, 0).item() == Catch::Approx(-std::log(0.75)));
    // T=1: single path, p = 1/2
    auto z1 = Tensor::zeros({1, 2});
    CHECK(ctc_loss(z1, {1}, 0).item() == Catch::Approx(-std::log(0.5)));
    // target "aa" needs a separating blank: T=3 uniform, only path (a,-,a), p=1/8
    auto z3 = Tensor::zeros({3, 2});
    CHECK(ctc_loss(z3, {1, 1}, 0).item() == Catch::Approx(-std::log(0.125)));
}

TEST_CASE("ctc matches the exhaustive oracle on random logits") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto z = randn({4, 3}, seed);
        for (const auto& target : std::vector<std::vector<std::int64_t>>{
                 {1}, {2}, {1, 2}, {2, 1}, {1, 1}, {1, 2, 1}}) {
            INFO("seed " << seed << " target size " << target.size());
            CHECK(ctc_loss(z, target, 0).item() ==
                  Catch::Approx(ctc_brute_force(z, target, 0)).epsilon(1e-10));
        }
    }
}

TEST_CASE("ctc feasibility and validation errors") {
    auto z = Tensor::zeros({2, 3});
    CHECK(ctc_min_frames({1, 2}) == 2);
    CHECK(ctc_min_frames({1, 1}) == 3);
    CHECK(ctc_min_frames({1, 1, 2, 2}) == 6);
    CHECK_THROWS_AS(ctc_loss(z, {1, 1}, 0), CtcInfeasibleError);
    CHECK_THROWS_AS(ctc_loss(z, {0}, 0), VocabError);   // blank in target
    CHECK_THROWS_AS(ctc_loss(z, {7}, 0), VocabError);   // out of range
    CHECK_THROWS_AS(ctc_loss(z, {1}, 9), ValueError);   // bad blank id
}

TEST_CASE("ctc gradient matches finite differences") {
    auto z = randn({4, 3}, 17, 1.0, true);
    std::vector<std::int64_t> target = {1, 2};
    backward(ctc_loss(z, target, 0));
    auto f = [&]() { return ctc_loss(z, target, 0).item(); };
    for (std::size_t i = 0; i < z.data().size(); ++i) {
        double numeric = finite_difference(f, z.data(), i);
        double denom = std::max({std::abs(numeric), std::abs(z.grad()[i]), 1e-6});
        CHECK(std::abs(numeric - z.grad()[i]) / denom < 1e-5);
    }
}

TEST_CASE("bidirectional kl hand-checked value") {
    // rows (0.9,0.1) vs (0.5,0.5): 0.5[KL(p||q)+KL(q||p)]
    auto to_logits = [](double p) { return Tensor::from_data({1, 2}, {std::log(p), std::log(1 - p)}); };
    auto z1 = to_logits(0.9), z2 = to_logits(0.5);
    double klpq = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    double klqp = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    double expect = 0.5 * (klpq + klqp);
    CHECK(kl_bidirectional(z1, z2).item() == Catch::Approx(expect));
    CHECK(expect == Catch::Approx(0.439445).epsilon(1e-4));
    // symmetry and self-distance zero
    CHECK(kl_bidirectional(z2, z1).item() == Catch::Approx(expect));
    CHECK(kl_bidirectional(z1, z1).item() == 0.0);
}

TEST_CASE("kl gradient is exactly zero for identical branches") {
    auto z1 = randn({3, 4}, 23, 1.0, true);
    auto z2 = Tensor::from_data({3, 4}, z1.data(), true);
    backward(kl_bidirectional(z1, z2));
    for (std::size_t i = 0; i < z1.data().size(); ++i) {
        CHECK(z1.grad()[i] == 0.0);
        CHECK(z2.grad()[i] == 0.0);
    }
}

TEST_CASE("kl gradient matches finite differences") {
    auto z1 = randn({2, 3}, 29, 1.0, true);
    auto z2 = randn({2, 3}, 31, 1.0, true);
    backward(kl_bidirectional(z1, z2));
    auto f = [&]() { return kl_bidirectional(z1, z2).item(); };
    for (auto* leaf : {&z1, &z2})
        for (std::size_t i = 0; i < leaf->data().size(); ++i) {
            double numeric = finite_difference(f, leaf->data(), i);
            double denom = std::max({std::abs(numeric), std::abs(leaf->grad()[i]), 1e-6});
            CHECK(std::abs(numeric - leaf->grad()[i]) / denom < 1e-5);
        }
}

TEST_CASE("kl is frame-averaged") {
    auto z1 = randn({1, 3}, 37);
    auto z2 = randn({1, 3}, 41);
    double one = kl_bidirectional(z1, z2).item();
    // stacking the same row twice keeps the mean unchanged
    std::vector<double> d1(z1.data()), d2(z2.data());
    d1.insert(d1.end(), z1.data().begin(), z1.data().end());
    d2.insert(d2.end(), z2.data().begin(), z2.data().end());
    auto s1 = Tensor::from_data({2, 3}, d1);
    auto s2 = Tensor::from_data({2, 3}, d2);
    CHECK(kl_bidirectional(s1, s2).item() == Catch::Approx(one));
}

TEST_CASE("smoothed cross entropy values and gradient") {
    // uniform logits over V=4: loss is ln 4 regardless of smoothing
    auto z = Tensor::zeros({2, 4});
    CHECK(aed_ce_loss(z, {1, 3}, 0.0).item() == Catch::Approx(std::log(4.0)));
    CHECK(aed_ce_loss(z, {1, 3}, 0.1).item() == Catch::Approx(std::log(4.0)));

    auto zr = randn({3, 4}, 43, 1.0, true);
    std::vector<std::int64_t> target = {0, 2, 3};
    backward(aed_ce_loss(zr, target, 0.1));
    auto f = [&]() { return aed_ce_loss(zr, target, 0.1).item(); };
    for (std::size_t i = 0; i < zr.data().size(); ++i) {
        double numeric = finite_difference(f, zr.data(), i);
        double denom = std::max({std::abs(numeric), std::abs(zr.grad()[i]), 1e-6});
        CHECK(std::abs(numeric - zr.grad()[i]) / denom < 1e-5);
    }

    CHECK_THROWS_AS(aed_ce_loss(z, {1}, 0.1), ShapeError);
    CHECK_THROWS_AS(aed_ce_loss(z, {1, 9}, 0.1), VocabError);
    CHECK_THROWS_AS(aed_ce_loss(z, {1, 3}, 1.0), ConfigError);
}

TEST_CASE("merge and hybrid weighting arithmetic") {
    auto a = Tensor::scalar(2.0);
    auto b = Tensor::scalar(4.0);
    CHECK(rdrop_merge_ctc(a, b, 0.25).item() == Catch::Approx(0.75 * 2 + 0.25 * 4));
    CHECK(rdrop_merge_ctc(a, b, 0.0).item() == Catch::Approx(2.0));
    CHECK(rdrop_generic(a, b, 2.0).item() == Catch::Approx(2 + 2 * 4));
    CHECK(total_loss(a, b, 0.7).item() == Catch::Approx(0.3 * 2 + 0.7 * 4));
    CHECK_THROWS_AS(rdrop_merge_ctc(a, b, 1.5), ConfigError);
    CHECK_THROWS_AS(rdrop_generic(a, b, -0.1), ConfigError);
    CHECK_THROWS_AS(total_loss(a, b, 1.5), ConfigError);

    LossWeights w;
    w.beta = 1.2;
    CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("rdrop ce sums both branch ctc losses") {
    auto z1 = randn({4, 3}, 47);
    auto z2 = randn({4, 3}, 53);
    std::vector<std::int64_t> target = {1, 2};
    double expect = ctc_loss(z1, target, 0).item() + ctc_loss(z2, target, 0).item();
    CHECK(rdrop_ce(z1, z2, target, 0).item() == Catch::Approx(expect));
}
