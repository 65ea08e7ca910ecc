#include <catch2/catch_amalgamated.hpp>

#include "cfr/tensor.hpp"

using namespace cfr;

namespace {

// Compares analytic leaf gradients against central differences of a
// freshly rebuilt forward pass.
void check_gradients(std::vector<Tensor>& leaves, const std::function<Tensor()>& forward,
                     double tol = 1e-4) {
    Tensor loss = forward();
    backward(loss);
    auto f = [&forward]() { return forward().item(); };
    for (auto& leaf : leaves) {
        for (std::size_t i = 0; i < leaf.data().size(); ++i) {
            double numeric = finite_difference(f, leaf.data(), i);
            double analytic = leaf.grad()[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            INFO("component " << i << " numeric " << numeric << " analytic " << analytic);
            CHECK(std::abs(numeric - analytic) / denom < tol);
        }
        leaf.zero_grad();
    }
}

}  // namespace

TEST_CASE("elementwise arithmetic values and gradients") {
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    auto b = Tensor::from_data({2, 2}, {5, 6, 7, 8}, true);
    auto s = sum(mul(add(a, b), sub(a, b)));
    // sum((a+b)(a-b)) = sum(a^2 - b^2)
    CHECK(s.item() == Catch::Approx(1 + 4 + 9 + 16 - 25 - 36 - 49 - 64));
    backward(s);
    CHECK(a.grad()[0] == Catch::Approx(2.0));
    CHECK(a.grad()[3] == Catch::Approx(8.0));
    CHECK(b.grad()[0] == Catch::Approx(-10.0));
}

TEST_CASE("shape mismatch raises") {
    auto a = Tensor::zeros({2, 2});
    auto b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(b, b), ShapeError);
    CHECK_THROWS_AS(backward(Tensor::zeros({2, 1}, true)), ShapeError);
}

TEST_CASE("matmul value and gradient") {
    auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12}, true);
    auto c = matmul(a, b);
    CHECK(c.at(0, 0) == Catch::Approx(58));
    CHECK(c.at(1, 1) == Catch::Approx(154));
    std::vector<Tensor> leaves = {a, b};
    check_gradients(leaves, [&]() { return sum(mul(matmul(a, b), matmul(a, b))); });
}

TEST_CASE("gradient accumulates across backward calls until zero_grad") {
    auto x = Tensor::from_data({1, 1}, {3.0}, true);
    auto l1 = mul(x, x);
    backward(l1);
    CHECK(x.grad()[0] == Catch::Approx(6.0));
    auto l2 = mul(x, x);
    backward(l2);
    CHECK(x.grad()[0] == Catch::Approx(12.0));
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("weighted backward seed scales gradients") {
    auto x = Tensor::from_data({1, 1}, {2.0}, true);
    backward(mul(x, x), 0.5);
    CHECK(x.grad()[0] == Catch::Approx(2.0));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 1000, 1001, 1002}, true);
    auto p = softmax(x);
    for (int r = 0; r < 2; ++r) {
        double s = p.at(r, 0) + p.at(r, 1) + p.at(r, 2);
        CHECK(s == Catch::Approx(1.0));
    }
    // both rows are shifts of (1,2,3) so probabilities match
    for (int c = 0; c < 3; ++c) CHECK(p.at(0, c) == Catch::Approx(p.at(1, c)));
    auto lp = log_softmax(x);
    CHECK(std::exp(lp.at(1, 2)) == Catch::Approx(p.at(1, 2)));
}

TEST_CASE("softmax and log_softmax gradients") {
    auto x = Tensor::from_data({2, 4}, {0.4, -1.2, 0.7, 0.1, 2.0, -0.5, 0.3, 1.1}, true);
    auto w = Tensor::from_data({2, 4}, {1, -2, 0.5, 3, -1, 2, 0.25, -0.75});
    std::vector<Tensor> leaves = {x};
    check_gradients(leaves, [&]() { return sum(mul(softmax(x), w)); });
    check_gradients(leaves, [&]() { return sum(mul(log_softmax(x), w)); });
}

TEST_CASE("layer_norm normalizes rows and matches finite differences") {
    auto x = Tensor::from_data({2, 4}, {1, 2, 3, 4, -2, 0, 2, 6}, true);
    auto gamma = Tensor::from_data({1, 4}, {1, 1, 1, 1}, true);
    auto beta = Tensor::from_data({1, 4}, {0, 0, 0, 0}, true);
    auto y = layer_norm(x, gamma, beta);
    for (int r = 0; r < 2; ++r) {
        double m = 0, v = 0;
        for (int c = 0; c < 4; ++c) m += y.at(r, c) / 4;
        for (int c = 0; c < 4; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 4;
        CHECK(m == Catch::Approx(0.0).margin(1e-12));
        CHECK(v == Catch::Approx(1.0).epsilon(1e-4));
    }
    auto g2 = Tensor::from_data({1, 4}, {0.5, 1.5, -1.0, 2.0}, true);
    auto b2 = Tensor::from_data({1, 4}, {0.1, -0.2, 0.3, 0.0}, true);
    auto w = Tensor::from_data({2, 4}, {1, -1, 2, 0.5, -0.5, 1, 0, 2});
    std::vector<Tensor> leaves = {x, g2, b2};
    check_gradients(leaves, [&]() { return sum(mul(layer_norm(x, g2, b2), w)); });
}

TEST_CASE("activation gradients match finite differences") {
    auto x = Tensor::from_data({1, 5}, {-2, -0.5, 0.3, 0.5, 2}, true);
    auto w = Tensor::from_data({1, 5}, {1, -1, 2, -2, 0.5});
    std::vector<Tensor> leaves = {x};
    check_gradients(leaves, [&]() { return sum(mul(sigmoid(x), w)); });
    check_gradients(leaves, [&]() { return sum(mul(swish(x), w)); });
    // relu is checked away from the kink
    check_gradients(leaves, [&]() { return sum(mul(relu(x), w)); });
    check_gradients(leaves, [&]() { return sum(mul(elementwise(x, Elementwise::Exp), w)); });
}

TEST_CASE("slicing, concat and transpose round trips with gradients") {
    auto x = Tensor::from_data({2, 6}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, true);
    auto left = slice_cols(x, 0, 3);
    auto right = slice_cols(x, 3, 6);
    auto re = concat_cols({left, right});
    for (std::size_t i = 0; i < 12; ++i) CHECK(re.data()[i] == x.data()[i]);
    CHECK(transpose(x).at(3, 1) == Catch::Approx(10));
    auto w = Tensor::from_data({2, 6}, {1, 0, -1, 2, 0.5, 1, -2, 1, 0, 3, 1, -1});
    std::vector<Tensor> leaves = {x};
    check_gradients(leaves, [&]() {
        return sum(mul(concat_cols({slice_cols(x, 3, 6), slice_cols(x, 0, 3)}),
                       w));
    });
    check_gradients(leaves, [&]() { return sum(mul(transpose(x), transpose(w))); });
    check_gradients(leaves, [&]() { return sum(slice_rows(x, 1, 2)); });
}

TEST_CASE("add_row broadcasts and accumulates bias gradient") {
    auto x = Tensor::zeros({3, 2}, true);
    auto b = Tensor::from_data({2}, {1.0, -2.0}, true);
    auto y = add_row(x, b);
    CHECK(y.at(2, 0) == Catch::Approx(1.0));
    backward(sum(y));
    CHECK(b.grad()[0] == Catch::Approx(3.0));
    CHECK(b.grad()[1] == Catch::Approx(3.0));
}

TEST_CASE("mean equals sum divided by count") {
    auto x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    CHECK(mean(x).item() == Catch::Approx(2.5));
    backward(mean(x));
    CHECK(x.grad()[0] == Catch::Approx(0.25));
}

TEST_CASE("dropout train/eval semantics") {
    auto x = Tensor::full({1, 1000}, 1.0, true);
    RngState rng{42, 0};
    auto y_eval = dropout(x, 0.5, rng, Mode::Eval);
    for (double v : y_eval.data()) CHECK(v == 1.0);
    CHECK(rng.counter == 0);

    auto y = dropout(x, 0.5, rng, Mode::Train);
    CHECK(rng.counter == 1);
    std::int64_t kept = 0;
    for (double v : y.data()) {
        CHECK((v == 0.0 || v == Catch::Approx(2.0)));
        if (v != 0.0) ++kept;
    }
    CHECK(kept > 400);
    CHECK(kept < 600);

    // same (seed, counter) reproduces the mask exactly
    RngState rng2{42, 0};
    auto y2 = dropout(x, 0.5, rng2, Mode::Train);
    for (std::size_t i = 0; i < y.data().size(); ++i) CHECK(y.data()[i] == y2.data()[i]);

    backward(sum(y));
    for (std::size_t i = 0; i < y.data().size(); ++i)
        CHECK(x.grad()[i] == Catch::Approx(y.data()[i] == 0.0 ? 0.0 : 2.0));
}

TEST_CASE("randomized deep composition gradient check") {
    RngState rng{7, 0};
    std::uint64_t ctr = rng.next_counter();
    std::vector<double> xd(12), wd(12);
    for (std::size_t i = 0; i < 12; ++i) {
        xd[i] = rng_normal(7, ctr, i) * 0.5;
        wd[i] = rng_normal(7, ctr, 100 + i) * 0.5;
    }
    auto x = Tensor::from_data({3, 4}, xd, true);
    auto w = Tensor::from_data({4, 3}, wd, true);
    auto g = Tensor::from_data({1, 3}, {1.0, 0.9, 1.1}, true);
    auto b = Tensor::from_data({1, 3}, {0.0, 0.1, -0.1}, true);
    std::vector<Tensor> leaves = {x, w, g, b};
    check_gradients(leaves, [&]() {
        auto h = swish(matmul(x, w));
        auto n = layer_norm(h, g, b);
        return mean(mul(softmax(n), n));
    });
}
