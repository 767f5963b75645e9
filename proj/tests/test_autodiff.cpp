#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "posediff/autodiff.hpp"
#include "posediff/rng.hpp"

using namespace posediff;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, scale);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
    return t;
}

/// Finite-difference check of a scalar-valued graph builder against the
/// tape's gradient at the given point.
double fd_error(const std::function<Var(Tape&, Var)>& build, const Tensor& point,
                double step = 1e-5) {
    Tape tape;
    Var x = tape.leaf(point);
    Var y = build(tape, x);
    Tensor analytic = tape.grad_one(y, x);
    auto f = [&](const Tensor& p) {
        Tape t2;
        Var x2 = t2.leaf(p);
        return t2.value(build(t2, x2)).item();
    };
    return finite_diff_check(f, point, analytic, step);
}

}  // namespace

TEST_CASE("matmul against identity leaves the input unchanged") {
    Tape tape;
    Var a = tape.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
    Var eye = tape.constant(Tensor::from({2, 2}, {1, 0, 0, 1}));
    const Tensor& out = tape.value(matmul(a, eye));
    CHECK(out[0] == doctest::Approx(1));
    CHECK(out[1] == doctest::Approx(2));
    CHECK(out[2] == doctest::Approx(3));
    CHECK(out[3] == doctest::Approx(4));
}

TEST_CASE("softmax of a constant row is uniform and rows sum to one") {
    Tape tape;
    Var v = tape.leaf(Tensor::from({3}, {0, 0, 0}));
    const Tensor& y = tape.value(softmax_last(v));
    for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    auto rng = make_rng(7);
    Tensor r = random_tensor({5, 9}, rng, 3.0);
    Tape t2;
    const Tensor& s = t2.value(softmax_last(t2.leaf(r)));
    for (int row = 0; row < 5; ++row) {
        double sum = 0;
        for (int i = 0; i < 9; ++i) sum += s[row * 9 + i];
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("layer_norm of a constant vector is zero before the affine terms") {
    Tape tape;
    Var x = tape.leaf(Tensor::full({6}, 4.2));
    Var g = tape.constant(Tensor::full({6}, 1.0));
    Var b = tape.constant(Tensor::zeros({6}));
    const Tensor& y = tape.value(layer_norm(x, g, b));
    for (int i = 0; i < 6; ++i) CHECK(y[i] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("layer_norm output rows have near-zero mean pre-affine") {
    auto rng = make_rng(11);
    Tensor x = random_tensor({4, 16}, rng, 2.0);
    Tape tape;
    Var g = tape.constant(Tensor::full({16}, 1.0));
    Var b = tape.constant(Tensor::zeros({16}));
    const Tensor& y = tape.value(layer_norm(tape.leaf(x), g, b));
    for (int r = 0; r < 4; ++r) {
        double mean = 0;
        for (int i = 0; i < 16; ++i) mean += y[r * 16 + i];
        mean /= 16;
        CHECK(std::abs(mean) <= 1e-10);
    }
}

TEST_CASE("d/dx of x squared at x=3 is 6") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    Var y = sum_squares(x);
    CHECK(tape.value(y).item() == doctest::Approx(9.0));
    CHECK(tape.grad_one(y, x).item() == doctest::Approx(6.0));
}

TEST_CASE("gradient of sum(softmax(v)) vanishes") {
    auto rng = make_rng(3);
    Tensor v = random_tensor({8}, rng);
    Tape tape;
    Var x = tape.leaf(v);
    Tensor g = tape.grad_one(reduce_sum(softmax_last(x)), x);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(std::abs(g[i]) <= 1e-12);
}

TEST_CASE("leaves off the path get zero gradients of their own shape") {
    Tape tape;
    Var used = tape.leaf(Tensor::from({2}, {1, 2}));
    Var unused = tape.leaf(Tensor::from({3}, {1, 2, 3}));
    Var y = sum_squares(used);
    std::vector<Var> wrt{used, unused};
    auto grads = tape.grad(y, wrt);
    CHECK(grads[1].shape() == std::vector<int64_t>{3});
    for (int i = 0; i < 3; ++i) CHECK(grads[1][i] == 0.0);
}

TEST_CASE("backward of a non-scalar output is rejected") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({2}, {1, 2}));
    Var y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.grad_one(y, x), std::invalid_argument);
}

TEST_CASE("shape mismatches name the op and shapes") {
    Tape tape;
    Var a = tape.leaf(Tensor::zeros({2, 3}));
    Var b = tape.leaf(Tensor::zeros({4, 5}));
    try {
        matmul(a, b);
        FAIL("expected a shape error");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("tape replay is bit-identical") {
    auto rng = make_rng(13);
    Tensor point = random_tensor({4, 6}, rng);
    auto run = [&](Tensor& grad_out) {
        Tape tape;
        Var x = tape.leaf(point);
        Var w = tape.constant(Tensor::from({6, 2}, std::vector<double>(12, 0.3)));
        Var y = mean_square(gelu(matmul(x, w)));
        grad_out = tape.grad_one(y, x);
        return tape.value(y).item();
    };
    Tensor g1, g2;
    double v1 = run(g1);
    double v2 = run(g2);
    CHECK(v1 == v2);
    for (int64_t i = 0; i < g1.numel(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("finite_diff_check on x*x at 2 and on a constant") {
    auto f = [](const Tensor& x) { return x[0] * x[0]; };
    Tensor p = Tensor::scalar(2.0);
    Tensor g = Tensor::scalar(4.0);
    CHECK(finite_diff_check(f, p, g, 1e-5) <= 1e-8);

    auto c = [](const Tensor&) { return 5.0; };
    Tensor zero = Tensor::scalar(0.0);
    CHECK(finite_diff_check(c, Tensor::scalar(1.0), zero, 1e-5) == 0.0);
}

TEST_CASE("finite_diff_check rejects non-finite function values") {
    auto f = [](const Tensor&) { return std::numeric_limits<double>::infinity(); };
    CHECK_THROWS_AS(finite_diff_check(f, Tensor::scalar(1.0), Tensor::scalar(0.0), 1e-5),
                    std::runtime_error);
}

TEST_CASE("every exposed op matches central finite differences") {
    auto rng = make_rng(42);
    int points = 0;

    auto check = [&](const char* name, const std::function<Var(Tape&, Var)>& build,
                     std::vector<int64_t> shape, int trials) {
        for (int k = 0; k < trials; ++k) {
            Tensor p = random_tensor(shape, rng);
            double err = fd_error(build, p);
            INFO(name << " trial " << k);
            CHECK(err <= 1e-4);
            ++points;
        }
    };

    check("add", [](Tape& t, Var x) {
        Var b = t.constant(Tensor::full({8}, 0.25));
        return mean_square(add(x, b));
    }, {4, 8}, 8);
    check("sub_scale", [](Tape& t, Var x) {
        Var b = t.constant(Tensor::full({3, 5}, 0.5));
        return sum_squares(sub(scale(x, 1.7), b));
    }, {3, 5}, 8);
    check("cmul", [](Tape&, Var x) {
        Tensor c = Tensor::full({6}, -0.8);
        c[2] = 2.0;
        return mean_square(cmul(x, c));
    }, {6}, 8);
    check("matmul_shared", [](Tape& t, Var x) {
        Var w = t.constant(Tensor::from({4, 3}, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8, 0.9,
                                                 -1.0, 1.1, 1.2}));
        return mean_square(matmul(x, w));
    }, {2, 5, 4}, 8);
    check("matmul_batched_tb", [](Tape&, Var x) {
        auto parts = split_last(x, 2);
        return mean_square(matmul(parts[0], parts[1], /*transpose_b=*/true));
    }, {2, 3, 8}, 8);
    check("softmax", [](Tape& t, Var x) {
        Tensor w = Tensor::from({7}, {1, 2, 3, 4, 5, 6, 7});
        Tensor wide({3, 7});
        for (int r = 0; r < 3; ++r) {
            for (int i = 0; i < 7; ++i) wide[r * 7 + i] = w[i];
        }
        return reduce_sum(cmul(softmax_last(x), wide));
    }, {3, 7}, 8);
    check("layer_norm", [](Tape& t, Var x) {
        Var g = t.leaf(Tensor::full({9}, 1.3));
        Var b = t.leaf(Tensor::full({9}, -0.1));
        Tensor w = Tensor::from({9}, {1, -1, 2, -2, 3, -3, 4, -4, 5});
        return reduce_sum(cmul(layer_norm(x, g, b), w));
    }, {9}, 8);
    check("gelu", [](Tape&, Var x) { return mean_square(gelu(x)); }, {5, 6}, 8);
    check("split_concat", [](Tape&, Var x) {
        auto parts = split_last(x, 3);
        std::vector<Var> reordered{parts[2], parts[0], parts[1]};
        return sum_squares(concat_last(reordered));
    }, {2, 9}, 8);
    check("tile_mid", [](Tape&, Var x) { return mean_square(tile_mid(x, 4)); }, {3, 5}, 8);
    check("lookup_rows", [](Tape&, Var x) {
        return sum_squares(lookup_rows(x, {0, 2, 2, 1}));
    }, {4, 6}, 8);
    check("composite", [](Tape& t, Var x) {
        Var w1 = t.constant(Tensor::full({8, 8}, 0.11));
        Var g = t.constant(Tensor::full({8}, 1.0));
        Var b = t.constant(Tensor::zeros({8}));
        Var h = layer_norm(gelu(matmul(x, w1)), g, b);
        return mean_square(softmax_last(h));
    }, {2, 4, 8}, 12);

    CHECK(points >= 100);
}

TEST_CASE("two-layer perceptron MSE gradient passes the fd oracle") {
    auto rng = make_rng(99);
    Tensor w1 = random_tensor({6, 10}, rng, 0.4);
    Tensor b1 = random_tensor({10}, rng, 0.1);
    Tensor w2 = random_tensor({10, 2}, rng, 0.4);
    Tensor target = random_tensor({4, 2}, rng);
    auto build = [&](Tape& t, Var x) {
        Var h = gelu(add(matmul(x, t.constant(w1)), t.constant(b1)));
        Var y = matmul(h, t.constant(w2));
        return mean_square(sub(y, t.constant(target)));
    };
    Tensor point = random_tensor({4, 6}, rng);
    CHECK(fd_error(build, point) <= 1e-4);
}
