#include <catch2/catch_amalgamated.hpp>

#include "cfr/attention.hpp"
#include "cfr/nn_ops.hpp"

using namespace cfr;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, double scale = 0.5, bool grad = false) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = scale * rng_normal(seed, 0, i);
    return Tensor::from_data(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST_CASE("scaled dot attention scalar oracle") {
    // single query over two keys, d_k = 1: weights are a softmax over q*k
    auto q = Tensor::from_data({1, 1}, {2.0});
    auto k = Tensor::from_data({2, 1}, {1.0, 3.0});
    auto v = Tensor::from_data({2, 1}, {10.0, 20.0});
    auto out = scaled_dot_attention(q, k, v);
    double w1 = std::exp(2.0) / (std::exp(2.0) + std::exp(6.0));
    CHECK(out.item() == Catch::Approx(10.0 * w1 + 20.0 * (1 - w1)));
}

TEST_CASE("uniform scores average the values") {
    auto q = Tensor::zeros({2, 2});
    auto k = randn({3, 2}, 9);
    auto v = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    auto out = scaled_dot_attention(q, k, v);
    // zero query -> all scores zero -> exact mean of values
    for (int c = 0; c < 2; ++c) {
        CHECK(out.at(0, c) == Catch::Approx((v.at(0, c) + v.at(1, c) + v.at(2, c)) / 3.0));
        CHECK(out.at(1, c) == out.at(0, c));
    }
}

TEST_CASE("causal mask blocks the future") {
    auto m = causal_mask(4);
    std::int64_t allowed = 0;
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 4; ++j) {
            if (m.at(i, j) != 0.0) ++allowed;
            CHECK(m.at(i, j) == ((j <= i) ? 1.0 : 0.0));
        }
    CHECK(allowed == 10);

    // with a causal mask, row 0 may only see value 0
    auto q = randn({3, 2}, 1);
    auto k = randn({3, 2}, 2);
    auto v = randn({3, 2}, 3);
    auto mask = causal_mask(3);
    auto out = scaled_dot_attention(q, k, v, &mask);
    CHECK(out.at(0, 0) == Catch::Approx(v.at(0, 0)));
    CHECK(out.at(0, 1) == Catch::Approx(v.at(0, 1)));
}

TEST_CASE("fully masked rows are counted") {
    auto q = randn({2, 2}, 4);
    auto k = randn({2, 2}, 5);
    auto v = randn({2, 2}, 6);
    auto mask = Tensor::zeros({2, 2});
    mask.data()[0] = 1.0;  // row 1 sees nothing
    auto before = fully_masked_row_count().load();
    scaled_dot_attention(q, k, v, &mask);
    CHECK(fully_masked_row_count().load() == before + 1);
}

TEST_CASE("multi head attention reduces to single head") {
    std::int64_t d = 4;
    MhaParams p;
    p.n_heads = 1;
    p.w_q = randn({d, d}, 10);
    p.b_q = Tensor::zeros({d});
    p.w_k = randn({d, d}, 11);
    p.b_k = Tensor::zeros({d});
    p.w_v = randn({d, d}, 12);
    p.b_v = Tensor::zeros({d});
    // identity output projection
    std::vector<double> eye(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < d; ++i) eye[static_cast<std::size_t>(i * d + i)] = 1.0;
    p.w_o = Tensor::from_data({d, d}, eye);
    p.b_o = Tensor::zeros({d});

    auto x = randn({3, d}, 13);
    auto direct = scaled_dot_attention(add_row(matmul(x, p.w_q), p.b_q),
                                       add_row(matmul(x, p.w_k), p.b_k),
                                       add_row(matmul(x, p.w_v), p.b_v));
    auto mha = multi_head_attention(x, x, p);
    for (std::size_t i = 0; i < mha.data().size(); ++i)
        CHECK(mha.data()[i] == Catch::Approx(direct.data()[i]));
}

TEST_CASE("head count must divide the model width") {
    MhaParams p;
    p.n_heads = 3;
    p.w_q = p.w_k = p.w_v = p.w_o = Tensor::zeros({4, 4});
    p.b_q = p.b_k = p.b_v = p.b_o = Tensor::zeros({4});
    CHECK_THROWS_AS(multi_head_attention(Tensor::zeros({2, 4}), Tensor::zeros({2, 4}), p),
                    ConfigError);
}

TEST_CASE("sinusoid table structure") {
    auto t = abs_pos_table(4, 6);
    // position 0 row: sin(0)=0 on even dims, cos(0)=1 on odd dims
    for (int j = 0; j < 6; j += 2) CHECK(t.at(0, j) == Catch::Approx(0.0));
    for (int j = 1; j < 6; j += 2) CHECK(t.at(0, j) == Catch::Approx(1.0));
    CHECK(t.at(2, 0) == Catch::Approx(std::sin(2.0)));
    CHECK(t.at(2, 1) == Catch::Approx(std::cos(2.0)));
    double freq = std::pow(10000.0, -2.0 / 6.0);
    CHECK(t.at(3, 2) == Catch::Approx(std::sin(3.0 * freq)));

    // relative table spans offsets -(T-1)..T-1
    auto r = rel_pos_table(3, 4);
    CHECK(r.dim(0) == 5);
    CHECK(r.at(0, 0) == Catch::Approx(std::sin(-2.0)));
    CHECK(r.at(4, 0) == Catch::Approx(std::sin(2.0)));
    CHECK(r.at(2, 0) == Catch::Approx(0.0));
}

TEST_CASE("relative gather indexes the offset table") {
    // with q rows one-hot and rel rows distinct, S[i][l] picks rel[i-l+T-1]
    std::int64_t T = 3, d = 1;
    auto q = Tensor::full({T, d}, 1.0);
    std::vector<double> reld(5);
    for (int i = 0; i < 5; ++i) reld[static_cast<std::size_t>(i)] = 10.0 * i;
    auto rel = Tensor::from_data({2 * T - 1, d}, reld);
    auto s = rel_gather_scores(q, rel);
    for (std::int64_t i = 0; i < T; ++i)
        for (std::int64_t l = 0; l < T; ++l)
            CHECK(s.at(i, l) == Catch::Approx(10.0 * static_cast<double>(i - l + T - 1)));
}

TEST_CASE("relative scores equal the four-term expansion") {
    std::int64_t T = 3, d = 4;
    RelPosParams p;
    p.w_q = randn({d, d}, 21);
    p.w_ke = randn({d, d}, 22);
    p.w_kr = randn({d, d}, 23);
    p.u = randn({d}, 24);
    p.v = randn({d}, 25);
    auto e = randn({T, d}, 26);
    auto s = rel_attention_scores(e, p);

    // direct evaluation: (q_i + u)k_j + (q_i + v)r_{i-j}
    auto q = matmul(e, p.w_q);
    auto k = matmul(e, p.w_ke);
    auto rel = matmul(rel_pos_table(T, d), p.w_kr);
    for (std::int64_t i = 0; i < T; ++i)
        for (std::int64_t j = 0; j < T; ++j) {
            double ac = 0, bd = 0;
            for (std::int64_t c = 0; c < d; ++c) {
                ac += (q.at(i, c) + p.u.at(c)) * k.at(j, c);
                bd += (q.at(i, c) + p.v.at(c)) * rel.at(i - j + T - 1, c);
            }
            CHECK(s.at(i, j) == Catch::Approx(ac + bd));
        }
}

TEST_CASE("relative multi head attention gradients check out") {
    std::int64_t T = 3, d = 4;
    RelMhsaParams p;
    p.n_heads = 2;
    p.w_q = randn({d, d}, 31, 0.5, true);
    p.b_q = randn({d}, 32, 0.1, true);
    p.w_ke = randn({d, d}, 33, 0.5, true);
    p.w_kr = randn({d, d}, 34, 0.5, true);
    p.w_v = randn({d, d}, 35, 0.5, true);
    p.b_v = randn({d}, 36, 0.1, true);
    p.w_o = randn({d, d}, 37, 0.5, true);
    p.b_o = randn({d}, 38, 0.1, true);
    p.u = randn({d}, 39, 0.1, true);
    p.v = randn({d}, 40, 0.1, true);
    auto x = randn({T, d}, 41, 0.5, true);

    auto forward = [&]() { return sum(mul(rel_multi_head_attention(x, p), x)); };
    backward(forward());
    auto f = [&forward]() { return forward().item(); };
    std::vector<Tensor> leaves = {x, p.w_q, p.w_kr, p.u, p.v, p.w_o};
    for (auto& leaf : leaves)
        for (std::size_t i = 0; i < leaf.data().size(); i += 3) {
            double numeric = finite_difference(f, leaf.data(), i);
            double analytic = leaf.grad()[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            CHECK(std::abs(numeric - analytic) / denom < 1e-4);
        }
}
