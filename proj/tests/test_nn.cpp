#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ctxsent/error.hpp"
#include "ctxsent/nn.hpp"
#include "ctxsent/rng.hpp"
#include "ctxsent/tensor.hpp"

using namespace ctxsent;

namespace {

constexpr double kH = 1e-6;      // central-difference step
constexpr double kTol = 5e-6;    // max absolute error allowed per element

Tensor random_tensor(Rng& rng, std::vector<int> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
    return t;
}

// Scalar objective: sum(out .* r) for a fixed random weighting r, so every
// output element contributes to the gradient.
double weighted_sum(const Tensor& out, const Tensor& r) {
    REQUIRE(out.same_shape(r));
    double s = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
    return s;
}

// Central finite difference of `loss` w.r.t. every element of `x`.
Tensor numeric_grad(Tensor& x, const std::function<double()>& loss) {
    Tensor g = Tensor::zeros_like(x);
    for (int64_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + kH;
        double up = loss();
        x[i] = keep - kH;
        double down = loss();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * kH);
    }
    return g;
}

void check_close(const Tensor& analytic, const Tensor& numeric, double tol = kTol) {
    REQUIRE(analytic.same_shape(numeric));
    double worst = 0.0;
    for (int64_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
    CHECK(worst < tol);
}

} // namespace

TEST_SUITE("nn") {

TEST_CASE("matmul forward against a hand computation") {
    Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    Tensor b = Tensor::from_rows({{5, 6, 7}, {8, 9, 10}});
    Tensor c = nn::matmul(a, b);
    CHECK(c(0, 0) == doctest::Approx(21));
    CHECK(c(0, 1) == doctest::Approx(24));
    CHECK(c(0, 2) == doctest::Approx(27));
    CHECK(c(1, 0) == doctest::Approx(47));
    CHECK(c(1, 1) == doctest::Approx(54));
    CHECK(c(1, 2) == doctest::Approx(61));
}

TEST_CASE("matmul gradients match finite differences over many seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        Tensor a = random_tensor(rng, {3, 4});
        Tensor b = random_tensor(rng, {4, 2});
        Tensor r = random_tensor(rng, {3, 2});

        Tensor da = Tensor::zeros_like(a), db = Tensor::zeros_like(b);
        nn::matmul_backward(a, b, r, da, db);

        auto loss = [&] { return weighted_sum(nn::matmul(a, b), r); };
        check_close(da, numeric_grad(a, loss));
        check_close(db, numeric_grad(b, loss));
    }
}

TEST_CASE("layer norm forward normalizes each row") {
    Rng rng(3);
    Tensor x = random_tensor(rng, {4, 8}, 2.0);
    Tensor g(8), b(8);
    g.fill(1.0);
    b.zero();
    Tensor y = nn::layer_norm(x, g, b, 1e-5);
    for (int i = 0; i < 4; ++i) {
        double mean = 0, var = 0;
        for (int j = 0; j < 8; ++j) mean += y(i, j);
        mean /= 8;
        for (int j = 0; j < 8; ++j) var += (y(i, j) - mean) * (y(i, j) - mean);
        var /= 8;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("layer norm gradients match finite differences over many seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 31);
        Tensor x = random_tensor(rng, {3, 6});
        Tensor g = random_tensor(rng, {6}, 0.5);
        Tensor b = random_tensor(rng, {6}, 0.5);
        Tensor r = random_tensor(rng, {3, 6});
        for (int64_t i = 0; i < g.size(); ++i) g[i] += 1.0;

        nn::LayerNormCache cache;
        nn::layer_norm(x, g, b, 1e-5, &cache);
        Tensor dx = Tensor::zeros_like(x), dg = Tensor::zeros_like(g), db = Tensor::zeros_like(b);
        nn::layer_norm_backward(cache, g, r, dx, dg, db);

        auto loss = [&] { return weighted_sum(nn::layer_norm(x, g, b, 1e-5), r); };
        check_close(dx, numeric_grad(x, loss), 2e-5);
        check_close(dg, numeric_grad(g, loss), 2e-5);
        check_close(db, numeric_grad(b, loss), 2e-5);
    }
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(11);
    Tensor x = random_tensor(rng, {3, 5}, 3.0);
    Tensor p = nn::softmax_rows(x);
    for (int i = 0; i < 3; ++i) {
        double s = 0;
        for (int j = 0; j < 5; ++j) {
            CHECK(p(i, j) > 0.0);
            s += p(i, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor shifted = x;
    for (int64_t i = 0; i < shifted.size(); ++i) shifted[i] += 100.0;
    Tensor p2 = nn::softmax_rows(shifted);
    for (int64_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(p2[i]).epsilon(1e-12));
}

TEST_CASE("softmax gradients match finite differences over many seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 97);
        Tensor x = random_tensor(rng, {2, 4});
        Tensor r = random_tensor(rng, {2, 4});

        Tensor p = nn::softmax_rows(x);
        Tensor dx = Tensor::zeros_like(x);
        nn::softmax_backward(p, r, dx);

        auto loss = [&] { return weighted_sum(nn::softmax_rows(x), r); };
        check_close(dx, numeric_grad(x, loss));
    }
}

TEST_CASE("gelu matches the tanh approximation formula") {
    Tensor x = Tensor::from_rows({{-3.0, -1.0, 0.0, 0.5, 2.0}});
    Tensor y = nn::gelu(x);
    for (int j = 0; j < 5; ++j) {
        double v = x(0, j);
        double ref = 0.5 * v *
                     (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
        CHECK(y(0, j) == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("gelu gradients match finite differences over many seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 7 + 1);
        Tensor x = random_tensor(rng, {3, 5}, 2.0);
        Tensor r = random_tensor(rng, {3, 5});

        Tensor dx = Tensor::zeros_like(x);
        nn::gelu_backward(x, r, dx);

        auto loss = [&] { return weighted_sum(nn::gelu(x), r); };
        check_close(dx, numeric_grad(x, loss));
    }
}

TEST_CASE("attention with a mask gives zero weight to padded keys") {
    Rng rng(5);
    int d = 8, T = 5;
    nn::AttentionParams p;
    p.n_heads = 2;
    p.wq = random_tensor(rng, {d, d}, 0.3);
    p.bq = random_tensor(rng, {d}, 0.1);
    p.wk = random_tensor(rng, {d, d}, 0.3);
    p.bk = random_tensor(rng, {d}, 0.1);
    p.wv = random_tensor(rng, {d, d}, 0.3);
    p.bv = random_tensor(rng, {d}, 0.1);
    p.wo = random_tensor(rng, {d, d}, 0.3);
    p.bo = random_tensor(rng, {d}, 0.1);

    Tensor x = random_tensor(rng, {T, d});
    std::vector<int> mask = {1, 1, 1, 0, 0};
    nn::AttentionCache cache;
    nn::multi_head_attention(x, x, mask, p, &cache);
    for (const auto& head : cache.attn)
        for (int i = 0; i < head.rows(); ++i) {
            double s = 0;
            for (int j = 0; j < head.cols(); ++j) {
                if (mask[static_cast<size_t>(j)] == 0) CHECK(head(i, j) == 0.0);
                s += head(i, j);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("attention gradients match finite differences over many seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 131 + 5);
        int d = 4, T = 3;
        nn::AttentionParams p;
        p.n_heads = 2;
        p.wq = random_tensor(rng, {d, d}, 0.4);
        p.bq = random_tensor(rng, {d}, 0.2);
        p.wk = random_tensor(rng, {d, d}, 0.4);
        p.bk = random_tensor(rng, {d}, 0.2);
        p.wv = random_tensor(rng, {d, d}, 0.4);
        p.bv = random_tensor(rng, {d}, 0.2);
        p.wo = random_tensor(rng, {d, d}, 0.4);
        p.bo = random_tensor(rng, {d}, 0.2);

        Tensor x = random_tensor(rng, {T, d});
        std::vector<int> mask = {1, 1, 0};
        Tensor r = random_tensor(rng, {T, d});

        nn::AttentionCache cache;
        nn::multi_head_attention(x, x, mask, p, &cache);
        Tensor dq_in = Tensor::zeros_like(x), dkv_in = Tensor::zeros_like(x);
        nn::AttentionGrads grads(p);
        nn::multi_head_attention_backward(cache, mask, p, r, dq_in, dkv_in, grads);

        // Self-attention: the input feeds both the query and the key/value
        // paths, so the total input gradient is the sum.
        Tensor dx_total = dq_in;
        dx_total.add_(dkv_in);

        auto loss = [&] { return weighted_sum(nn::multi_head_attention(x, x, mask, p), r); };
        check_close(dx_total, numeric_grad(x, loss), 2e-5);
        check_close(grads.wq, numeric_grad(p.wq, loss), 2e-5);
        check_close(grads.bq, numeric_grad(p.bq, loss), 2e-5);
        check_close(grads.wk, numeric_grad(p.wk, loss), 2e-5);
        check_close(grads.bk, numeric_grad(p.bk, loss), 2e-5);
        check_close(grads.wv, numeric_grad(p.wv, loss), 2e-5);
        check_close(grads.bv, numeric_grad(p.bv, loss), 2e-5);
        check_close(grads.wo, numeric_grad(p.wo, loss), 2e-5);
        check_close(grads.bo, numeric_grad(p.bo, loss), 2e-5);
    }
}

TEST_CASE("weighted cross entropy value and gradient") {
    // Hand oracle on a 2x3 batch.
    Tensor logits = Tensor::from_rows({{1.0, 2.0, 0.5}, {0.0, 0.0, 0.0}});
    std::vector<int> labels = {1, 2};
    std::vector<double> w = {1.0, 0.5, 2.0};

    auto nll = [&](int row, int y) {
        double m = std::max({logits(row, 0), logits(row, 1), logits(row, 2)});
        double z = 0;
        for (int j = 0; j < 3; ++j) z += std::exp(logits(row, j) - m);
        return -(logits(row, y) - m - std::log(z));
    };
    double expected = (w[1] * nll(0, 1) + w[2] * nll(1, 2)) / 2.0;

    auto res = nn::weighted_cross_entropy(logits, labels, w);
    CHECK(res.loss == doctest::Approx(expected).epsilon(1e-12));

    // Gradient against finite differences.
    auto loss = [&] { return nn::weighted_cross_entropy(logits, labels, w).loss; };
    check_close(res.dlogits, numeric_grad(logits, loss));
}

TEST_CASE("weighted cross entropy gradient over many seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 13);
        Tensor logits = random_tensor(rng, {4, 3}, 2.0);
        std::vector<int> labels;
        std::vector<double> w = {1.009, 0.604, 2.834};
        for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.uniform_index(3)));

        auto res = nn::weighted_cross_entropy(logits, labels, w);
        auto loss = [&] { return nn::weighted_cross_entropy(logits, labels, w).loss; };
        check_close(res.dlogits, numeric_grad(logits, loss));
    }
}

TEST_CASE("uniform weights reduce to plain cross entropy") {
    Rng rng(99);
    Tensor logits = random_tensor(rng, {3, 3}, 1.5);
    std::vector<int> labels = {0, 1, 2};
    auto weighted = nn::weighted_cross_entropy(logits, labels, {1.0, 1.0, 1.0});
    double plain = 0;
    for (int i = 0; i < 3; ++i) {
        double m = std::max({logits(i, 0), logits(i, 1), logits(i, 2)});
        double z = 0;
        for (int j = 0; j < 3; ++j) z += std::exp(logits(i, j) - m);
        plain += -(logits(i, labels[static_cast<size_t>(i)]) - m - std::log(z));
    }
    plain /= 3.0;
    CHECK(weighted.loss == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("adamw first step matches the closed form") {
    // With m=v=0, t=1: m_hat = g, v_hat = g^2, so the update is
    // -lr * (g/ (|g| + eps) + wd * theta), i.e. about -lr*sign(g) for eps<<|g|.
    Parameter p("p", Tensor::from_rows({{1.0, -2.0}}));
    p.grad = Tensor::from_rows({{0.5, -0.25}});
    nn::AdamState st(p.value);
    nn::AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    nn::adamw_step(p, st, cfg);
    CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.1 * (0.5 / (0.5 + 1e-8))).epsilon(1e-10));
    CHECK(p.value(0, 1) == doctest::Approx(-2.0 - 0.1 * (-0.25 / (0.25 + 1e-8))).epsilon(1e-10));
    CHECK(st.step == 1);
}

TEST_CASE("adamw decoupled weight decay shrinks parameters independently") {
    Parameter p("p", Tensor::from_rows({{2.0}}));
    p.grad = Tensor::from_rows({{0.0}});
    nn::AdamState st(p.value);
    nn::AdamConfig cfg;
    cfg.lr = 0.5;
    cfg.weight_decay = 0.1;
    nn::adamw_step(p, st, cfg);
    // Zero gradient: only the decay term -lr * wd * theta applies.
    CHECK(p.value(0, 0) == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0).epsilon(1e-12));
}

TEST_CASE("adamw multi-step trajectory matches a scalar reference") {
    // Independent scalar re-implementation, run for 5 steps.
    double theta = 1.5, g = 0.3, m = 0, v = 0;
    nn::AdamConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.05;

    Parameter p("p", Tensor::from_rows({{1.5}}));
    nn::AdamState st(p.value);
    for (int t = 1; t <= 5; ++t) {
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        double mh = m / (1 - std::pow(cfg.beta1, t));
        double vh = v / (1 - std::pow(cfg.beta2, t));
        theta -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * theta);

        p.grad = Tensor::from_rows({{g}});
        nn::adamw_step(p, st, cfg);
    }
    CHECK(p.value(0, 0) == doctest::Approx(theta).epsilon(1e-12));
}

TEST_CASE("adamw rejects non-finite gradients by parameter name") {
    Parameter p("layer0.attn.wq", Tensor::from_rows({{1.0}}));
    p.grad = Tensor::from_rows({{std::numeric_limits<double>::quiet_NaN()}});
    nn::AdamState st(p.value);
    nn::AdamConfig cfg;
    try {
        nn::adamw_step(p, st, cfg);
        FAIL_CHECK("expected RuntimeFailure");
    } catch (const RuntimeFailure& e) {
        CHECK(std::string(e.what()).find("layer0.attn.wq") != std::string::npos);
    }
}

TEST_CASE("cross entropy rejects non-finite logits") {
    Tensor logits = Tensor::from_rows({{1.0, std::numeric_limits<double>::infinity(), 0.0}});
    CHECK_THROWS_AS(nn::weighted_cross_entropy(logits, {0}, {1, 1, 1}), RuntimeFailure);
}

} // TEST_SUITE
