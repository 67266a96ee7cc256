#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <vector>

#include "refedit/gradcheck.hpp"
#include "refedit/optim.hpp"
#include "refedit/rng.hpp"
#include "refedit/tensor.hpp"

using refedit::AdamW;
using refedit::ParamMap;
using refedit::Rng;
using refedit::Tensor;

namespace {

// naive triple-loop product, the independent reference for matmul
template <typename T>
std::vector<T> matmul_oracle(const std::vector<T>& a, const std::vector<T>& b, size_t m, size_t k,
                             size_t n) {
    std::vector<T> c(m * n, T(0));
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            for (size_t l = 0; l < k; ++l) {
                c[i * n + j] += a[i * k + l] * b[l * n + j];
            }
        }
    }
    return c;
}

}  // namespace

TEST_CASE("tensor construction and shape checks") {
    Tensor<float> t({2, 3}, 1.5f);
    REQUIRE(t.numel() == 6);
    REQUIRE(t.rows() == 2);
    REQUIRE(t.cols() == 3);
    REQUIRE(t.data()[5] == 1.5f);

    REQUIRE_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
    REQUIRE_THROWS_AS(Tensor<float>({2, 3}).item(), std::invalid_argument);

    Tensor<float> empty({0, 4});
    REQUIRE(empty.numel() == 0);
}

TEST_CASE("matmul identity and hand cases") {
    Tensor<float> eye({2, 2}, {1, 0, 0, 1});
    Tensor<float> a({2, 2}, {1, 2, 3, 4});
    Tensor<float> out = matmul(eye, a);
    REQUIRE(out.values() == a.values());

    Tensor<float> ones({2, 1}, {1, 1});
    Tensor<float> prod = matmul(a, ones);
    REQUIRE(prod.data()[0] == 3.0f);
    REQUIRE(prod.data()[1] == 7.0f);

    REQUIRE_THROWS_AS(matmul(a, Tensor<float>({3, 2})), std::invalid_argument);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng(41);
    // the fixed 5x7 * 7x3 case, then a sweep of random sizes up to 32x32
    std::vector<std::array<size_t, 3>> sizes = {{5, 7, 3}};
    for (int i = 0; i < 8; ++i) {
        sizes.push_back({1 + rng.below(32), 1 + rng.below(32), 1 + rng.below(32)});
    }
    for (auto [m, k, n] : sizes) {
        Tensor<double> a = Tensor<double>::randn({m, k}, rng);
        Tensor<double> b = Tensor<double>::randn({k, n}, rng);
        Tensor<double> c = matmul(a, b);
        std::vector<double> ref = matmul_oracle(a.values(), b.values(), m, k, n);
        double worst = 0.0;
        for (size_t i = 0; i < ref.size(); ++i) {
            worst = std::max(worst, std::abs(ref[i] - c.data()[i]));
        }
        REQUIRE(worst < 1e-6);
    }
}

TEST_CASE("float matmul stays within accumulation roundoff of the oracle") {
    // 32-bit sums may be reordered, so the bound scales with the inner length
    Rng rng(42);
    for (auto [m, k, n] : std::vector<std::array<size_t, 3>>{{5, 7, 3}, {32, 32, 32}}) {
        Tensor<float> a = Tensor<float>::randn({m, k}, rng);
        Tensor<float> b = Tensor<float>::randn({k, n}, rng);
        Tensor<float> c = matmul(a, b);
        std::vector<float> ref = matmul_oracle(a.values(), b.values(), m, k, n);
        float worst = 0.0f;
        for (size_t i = 0; i < ref.size(); ++i) {
            worst = std::max(worst, std::abs(ref[i] - c.data()[i]));
        }
        REQUIRE(worst < 1e-6f * static_cast<float>(k));
    }
}

TEST_CASE("matmul with a zero-extent inner dimension yields zeros") {
    Tensor<float> a({3, 0});
    Tensor<float> b({0, 2});
    Tensor<float> c = matmul(a, b);
    REQUIRE(c.shape() == std::vector<size_t>{3, 2});
    for (float v : c.values()) {
        REQUIRE(v == 0.0f);
    }
}

TEST_CASE("softmax symmetry, stabilization, and normalization") {
    Tensor<double> flat({1, 3}, {0, 0, 0});
    Tensor<double> p = softmax_rows(flat);
    for (double v : p.values()) {
        REQUIRE(v == Catch::Approx(1.0 / 3.0).margin(1e-12));
    }

    Tensor<double> big({1, 2}, {1000, 0});
    Tensor<double> q = softmax_rows(big);
    REQUIRE(q.data()[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(q.data()[1] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(std::isfinite(q.data()[0]));

    Rng rng(7);
    Tensor<double> x = Tensor<double>::randn({6, 9}, rng, 3.0);
    Tensor<double> y = softmax_rows(x);
    for (size_t i = 0; i < y.rows(); ++i) {
        double sum = 0;
        for (size_t j = 0; j < y.cols(); ++j) sum += y.data()[i * 9 + j];
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("backward populates analytic gradients") {
    SECTION("sum gives all-ones") {
        Rng rng(3);
        Tensor<float> x = Tensor<float>::randn({3, 4}, rng);
        x.set_requires_grad(true);
        backward(sum_all(x));
        for (float g : x.grad()) {
            REQUIRE(g == 1.0f);
        }
    }
    SECTION("sum of squares") {
        Tensor<float> x({2}, {1, 2});
        x.set_requires_grad(true);
        backward(sum_all(mul(x, x)));
        REQUIRE(x.grad()[0] == Catch::Approx(2.0f));
        REQUIRE(x.grad()[1] == Catch::Approx(4.0f));
    }
    SECTION("non-scalar loss is rejected") {
        Tensor<float> x({2}, {1, 2});
        x.set_requires_grad(true);
        REQUIRE_THROWS_AS(backward(x), std::invalid_argument);
    }
    SECTION("repeated backward accumulates") {
        Tensor<float> x({2}, {1, 2});
        x.set_requires_grad(true);
        Tensor<float> loss = sum_all(mul(x, x));
        backward(loss);
        loss.zero_grad();
        backward(loss);
        REQUIRE(x.grad()[0] == Catch::Approx(4.0f));
        REQUIRE(x.grad()[1] == Catch::Approx(8.0f));
    }
}

TEST_CASE("finite differences confirm each building-block gradient") {
    Rng rng(11);
    auto check = [&](auto&& fn, std::vector<size_t> shape, double tol) {
        Tensor<double> x = Tensor<double>::randn(shape, rng);
        auto loss = [&] { return fn(x); };
        auto report = refedit::finite_diff_check(loss, x);
        INFO("worst " << report.worst_param << "[" << report.worst_index << "] analytic "
                      << report.worst_analytic << " numeric " << report.worst_numeric);
        REQUIRE(report.max_rel_err < tol);
    };

    check([](Tensor<double>& x) { return sum_all(x); }, {3, 3}, 1e-10);
    check([](Tensor<double>& x) { return mean_all(mul(x, x)); }, {4, 2}, 1e-8);
    check([](Tensor<double>& x) { return sum_all(gelu(x)); }, {3, 5}, 1e-7);
    check([](Tensor<double>& x) { return sum_all(mul(softmax_rows(x), x)); }, {2, 6}, 1e-7);
    check([](Tensor<double>& x) { return sum_all(mul(transpose(x), transpose(x))); }, {3, 4},
          1e-8);
    check(
        [](Tensor<double>& x) {
            return sum_all(mul(concat_cols(slice_rows(x, 0, 2), slice_rows(x, 2, 2)),
                               concat_cols(slice_rows(x, 2, 2), slice_rows(x, 0, 2))));
        },
        {4, 3}, 1e-8);

    Tensor<double> w = Tensor<double>::randn({5, 4}, rng);
    Tensor<double> b = Tensor<double>::randn({4}, rng);
    Tensor<double> gain = Tensor<double>::full({4}, 1.2);
    Tensor<double> bias = Tensor<double>::full({4}, -0.1);
    ParamMap<double> params{{"w", w}, {"b", b}, {"gain", gain}, {"bias", bias}};
    Tensor<double> input = Tensor<double>::randn({3, 5}, rng);
    auto loss = [&] {
        Tensor<double> h = linear(input, w, b);
        return sum_all(mul(layer_norm_rows(h, gain, bias), h));
    };
    auto report = refedit::finite_diff_check(loss, params);
    REQUIRE(report.max_rel_err < 1e-7);
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
    Rng rng(13);
    Tensor<double> logits = Tensor<double>::randn({1, 5}, rng);
    const size_t target = 2;
    auto loss = [&] {
        Tensor<double> lp = log_op(softmax_rows(logits));
        return scale(sum_all(slice_cols(lp, target, 1)), -1.0);
    };
    auto report = refedit::finite_diff_check(loss, logits);
    REQUIRE(report.max_rel_err < 1e-6);
}

TEST_CASE("gradient checker flags a deliberately wrong backward rule") {
    Tensor<double> x({3}, {0.5, -1.0, 2.0});
    // forward doubles, but the registered rule claims the derivative is 3
    auto loss = [&] {
        Tensor<double> y(x.shape());
        for (size_t i = 0; i < x.numel(); ++i) y.data()[i] = 2.0 * x.data()[i];
        refedit::detail::attach<double>(y, {x.node}, [xn = x.node](refedit::TensorNode<double>& o) {
            xn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += 3.0 * o.grad[i];
        });
        return sum_all(y);
    };
    auto report = refedit::finite_diff_check(loss, x);
    REQUIRE(report.max_rel_err > 1e-2);
}

TEST_CASE("adamw leaves parameters untouched under zero gradient and zero decay") {
    AdamW<float>::Config cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.0f;
    AdamW<float> opt(cfg);
    ParamMap<float> params{{"w", Tensor<float>({2, 2}, {1, 2, 3, 4})}};
    params["w"].zero_grad();
    opt.step(params);
    REQUIRE(params["w"].values() == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("adamw skips parameters whose gradients were never populated") {
    AdamW<float>::Config cfg;
    cfg.lr = 0.1f;
    AdamW<float> opt(cfg);
    ParamMap<float> params{{"w", Tensor<float>({2}, {1, 2})}};
    opt.step(params);
    REQUIRE(params["w"].values() == std::vector<float>{1, 2});
}

TEST_CASE("one adamw step on w^2 moves toward zero") {
    AdamW<float>::Config cfg;
    cfg.lr = 0.01f;
    AdamW<float> opt(cfg);
    ParamMap<float> params{{"w", Tensor<float>::scalar(1.0f)}};
    Tensor<float> w = params["w"];
    w.set_requires_grad(true);
    w.zero_grad();
    backward(mul(w, w));
    opt.step(params);
    REQUIRE(std::abs(w.item()) < 1.0f);
}

TEST_CASE("adamw drives a 2-d quadratic below 1e-3 of its initial loss") {
    AdamW<float>::Config cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.0f;
    AdamW<float> opt(cfg);
    ParamMap<float> params{{"w", Tensor<float>({2}, {0, 0})}};
    Tensor<float> w = params["w"];
    w.set_requires_grad(true);
    Tensor<float> target({2}, {3.0f, -2.0f});
    auto eval = [&] { return sum_all(mul(sub(w, target), sub(w, target))); };
    float initial = eval().item();
    for (int step = 0; step < 200; ++step) {
        AdamW<float>::zero_grad(params);
        backward(eval());
        opt.step(params);
    }
    REQUIRE(eval().item() < 1e-3f * initial);
}

TEST_CASE("rng reproduces the same stream for the same seed") {
    Rng a(123), b(123), c(124);
    std::vector<uint64_t> sa, sb;
    bool differs = false;
    for (int i = 0; i < 64; ++i) {
        uint64_t va = a.next_u64();
        uint64_t vb = b.next_u64();
        REQUIRE(va == vb);
        differs |= (va != c.next_u64());
    }
    REQUIRE(differs);

    Rng base(9);
    Rng f1 = base.fork(1), f1b = base.fork(1), f2 = base.fork(2);
    REQUIRE(f1.next_u64() == f1b.next_u64());
    REQUIRE(f1.next_u64() != f2.next_u64());
}

TEST_CASE("rng draws land in range with sane moments") {
    Rng rng(2024);
    double mean = 0, var = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        double z = rng.normal();
        mean += z;
        var += z * z;
        REQUIRE(rng.below(10) < 10);
    }
    mean /= n;
    var = var / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.03);
    REQUIRE(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("ops are bitwise deterministic across repeated runs") {
    auto run = [] {
        Rng rng(555);
        Tensor<float> a = Tensor<float>::randn({16, 16}, rng);
        Tensor<float> b = Tensor<float>::randn({16, 16}, rng);
        return softmax_rows(matmul(a, b)).values();
    };
    REQUIRE(run() == run());
}
