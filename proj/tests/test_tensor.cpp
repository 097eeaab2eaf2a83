#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "poq/optim.hpp"
#include "poq/tensor.hpp"

using namespace poq;
using poqtest::gradcheck;
using poqtest::random_tensor;

namespace {

// naive triple-loop reference for matmul
template <typename T>
std::vector<T> matmul_ref(const std::vector<T>& a, const std::vector<T>& b, std::size_t m,
                          std::size_t k, std::size_t n) {
    std::vector<T> c(m * n, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

} // namespace

TEST_CASE("matmul identity and hand products") {
    auto eye = Tensor<float>::from_values({2, 2}, {1, 0, 0, 1});
    auto m = Tensor<float>::from_values({2, 2}, {1, 2, 3, 4});
    auto prod = matmul(eye, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(prod->value[i] == doctest::Approx(m->value[i]));

    auto row = Tensor<float>::from_values({1, 2}, {1, 2});
    auto col = Tensor<float>::from_values({2, 1}, {3, 4});
    CHECK(matmul(row, col)->value[0] == doctest::Approx(11.0f));
}

TEST_CASE("matmul agrees with the triple-loop oracle") {
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t m = 5, k = 4, n = 3;
        if (trial >= 5) { // a couple of larger shapes
            m = 64;
            k = 33;
            n = 17;
        }
        auto a = Tensor<float>::create({m, k});
        auto b = Tensor<float>::create({k, n});
        for (auto& v : a->value) v = static_cast<float>(rng.uniform(-1, 1));
        for (auto& v : b->value) v = static_cast<float>(rng.uniform(-1, 1));
        auto c = matmul(a, b);
        auto ref = matmul_ref(a->value, b->value, m, k, n);
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(std::abs(c->value[i] - ref[i]) <= 1e-6 * std::max(1.0f, std::abs(ref[i])));
    }
}

TEST_CASE("matmul associativity with identity") {
    Rng rng(7);
    auto a = Tensor<float>::create({6, 6});
    auto b = Tensor<float>::create({6, 6});
    auto eye = Tensor<float>::create({6, 6});
    for (std::size_t i = 0; i < 6; ++i) eye->at(i, i) = 1.0f;
    for (auto& v : a->value) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : b->value) v = static_cast<float>(rng.uniform(-1, 1));
    auto left = matmul(matmul(a, eye), b);
    auto right = matmul(a, matmul(eye, b));
    auto direct = matmul(a, b);
    for (std::size_t i = 0; i < direct->value.size(); ++i) {
        CHECK(left->value[i] == doctest::Approx(direct->value[i]).epsilon(1e-6));
        CHECK(right->value[i] == doctest::Approx(direct->value[i]).epsilon(1e-6));
    }
}

TEST_CASE("matmul rejects mismatched shapes with both shapes in the message") {
    auto a = Tensor<float>::create({2, 3});
    auto b = Tensor<float>::create({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("softmax of a zero row is uniform") {
    auto x = Tensor<float>::from_values({1, 3}, {0, 0, 0});
    auto s = softmax_rows(x);
    for (int i = 0; i < 3; ++i) CHECK(s->value[i] == doctest::Approx(1.0 / 3));
}

TEST_CASE("softmax is shift invariant") {
    Rng rng(3);
    auto x = Tensor<double>::create({4, 6});
    for (auto& v : x->value) v = rng.uniform(-2, 2);
    auto shifted = Tensor<double>::create({4, 6});
    for (std::size_t r = 0; r < 4; ++r) {
        double c = rng.uniform(-5, 5);
        for (std::size_t j = 0; j < 6; ++j) shifted->at(r, j) = x->at(r, j) + c;
    }
    auto s1 = softmax_rows(x), s2 = softmax_rows(shifted);
    for (std::size_t i = 0; i < s1->value.size(); ++i)
        CHECK(s1->value[i] == doctest::Approx(s2->value[i]).epsilon(1e-9));
}

TEST_CASE("softmax [1,0] matches the scalar definition") {
    auto x = Tensor<double>::from_values({1, 2}, {1, 0});
    auto s = softmax_rows(x);
    double e = std::exp(1.0);
    CHECK(s->value[0] == doctest::Approx(e / (e + 1)).epsilon(1e-9)); // 0.7311
    CHECK(s->value[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-9)); // 0.2689
}

TEST_CASE("softmax rows sum to one and stay within [0,1]") {
    Rng rng(11);
    auto x = Tensor<float>::create({8, 5});
    for (auto& v : x->value) v = static_cast<float>(rng.uniform(-30, 30));
    auto s = softmax_rows(x);
    for (std::size_t r = 0; r < 8; ++r) {
        double sum = 0;
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(s->at(r, j) >= 0.0f);
            CHECK(s->at(r, j) <= 1.0f);
            sum += s->at(r, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("softmax rejects non-finite input") {
    auto x = Tensor<float>::from_values({1, 2}, {std::nanf(""), 0.0f});
    CHECK_THROWS_AS(softmax_rows(x), DataError);
}

TEST_CASE("layer_norm maps a constant row to zero") {
    auto x = Tensor<float>::from_values({1, 4}, {5, 5, 5, 5});
    auto gain = Tensor<float>::from_values({4}, {1, 1, 1, 1});
    auto bias = Tensor<float>::from_values({4}, {0, 0, 0, 0});
    auto y = layer_norm(x, gain, bias);
    for (auto v : y->value) CHECK(v == doctest::Approx(0.0f).epsilon(1e-6));
}

TEST_CASE("layer_norm of [1,-1] is [1,-1] up to epsilon") {
    auto x = Tensor<double>::from_values({1, 2}, {1, -1});
    auto gain = Tensor<double>::from_values({2}, {1, 1});
    auto bias = Tensor<double>::from_values({2}, {0, 0});
    auto y = layer_norm(x, gain, bias);
    CHECK(std::abs(y->value[0] - 1.0) < 1e-4);
    CHECK(std::abs(y->value[1] + 1.0) < 1e-4);
}

TEST_CASE("layer_norm with zero gain gives the bias") {
    auto x = Tensor<float>::from_values({2, 3}, {1, 2, 3, -4, 0, 9});
    auto gain = Tensor<float>::from_values({3}, {0, 0, 0});
    auto bias = Tensor<float>::from_values({3}, {0.5, -1, 2});
    auto y = layer_norm(x, gain, bias);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t j = 0; j < 3; ++j) CHECK(y->at(r, j) == doctest::Approx(bias->value[j]));
}

TEST_CASE("layer_norm rejects single-column input") {
    auto x = Tensor<float>::create({3, 1});
    auto gain = Tensor<float>::create({1});
    auto bias = Tensor<float>::create({1});
    CHECK_THROWS_AS(layer_norm(x, gain, bias), ShapeError);
}

TEST_CASE("backward of sum gives ones") {
    auto w = Tensor<float>::from_values({2, 2}, {1, -2, 3, 4}, true);
    auto loss = sum_all(w);
    backward(loss);
    for (auto g : w->grad) CHECK(g == doctest::Approx(1.0f));
}

TEST_CASE("backward of sum of squares gives 2w") {
    auto w = Tensor<float>::from_values({3}, {1, -2, 0.5}, true);
    auto loss = sum_all(hadamard(w, w));
    backward(loss);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w->grad[i] == doctest::Approx(2 * w->value[i]));
}

TEST_CASE("backward rejects non-scalar losses") {
    auto w = Tensor<float>::from_values({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(relu(w)), ShapeError);
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
    auto w = Tensor<float>::from_values({2}, {1, 2}, true);
    auto loss = sum_all(w);
    backward(loss);
    auto loss2 = sum_all(w);
    backward(loss2);
    for (auto g : w->grad) CHECK(g == doctest::Approx(2.0f));
    w->zero_grad();
    auto loss3 = sum_all(w);
    backward(loss3);
    for (auto g : w->grad) CHECK(g == doctest::Approx(1.0f));
}

TEST_CASE("finite differences confirm every op, 20 seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({4, 5}, rng);
        auto same = random_tensor({3, 4}, rng);
        auto vec = random_tensor({4}, rng);
        auto gain = random_tensor({4}, rng, true, 0.5, 1.5);
        auto bias = random_tensor({4}, rng);
        auto nt = random_tensor({5, 4}, rng);

        // keep relu inputs away from the kink
        auto shifted = random_tensor({3, 4}, rng);
        for (auto& v : shifted->value)
            if (std::abs(v) < 0.05) v = v < 0 ? v - 0.1 : v + 0.1;

        std::vector<double> targets(3 * 4);
        for (auto& t : targets) t = rng.uniform(0, 1);

        CHECK(gradcheck([&] { return sum_all(matmul(a, b)); }, {a, b}) < 1e-4);
        CHECK(gradcheck([&] { return sum_all(matmul_nt(a, nt)); }, {a, nt}) < 1e-4);
        CHECK(gradcheck([&] { return sum_all(hadamard(add(a, same), a)); }, {a, same}) < 1e-4);
        CHECK(gradcheck([&] { return sum_all(hadamard(add_rowvec(a, vec), a)); }, {a, vec}) < 1e-4);
        CHECK(gradcheck([&] { return sum_all(hadamard(scale(a, 2.5), same)); }, {a, same}) < 1e-4);
        CHECK(gradcheck([&] { return sum_all(hadamard(relu(shifted), same)); }, {shifted, same}) <
              1e-4);
        CHECK(gradcheck([&] { return sum_all(hadamard(softmax_rows(a), same)); }, {a, same}) <
              1e-4);
        CHECK(gradcheck([&] { return sum_all(hadamard(layer_norm(a, gain, bias), same)); },
                        {a, gain, bias, same}) < 1e-4);
        CHECK(gradcheck([&] { return sum_all(hadamard(slice_cols(a, 1, 3), slice_cols(same, 0, 2))); },
                        {a, same}) < 1e-4);
        CHECK(gradcheck(
                  [&] {
                      std::vector<TensorPtr<double>> parts{slice_cols(a, 0, 2),
                                                           slice_cols(a, 2, 4)};
                      return sum_all(hadamard(concat_cols(parts), same));
                  },
                  {a, same}) < 1e-4);
        CHECK(gradcheck([&] { return cross_entropy_rows(a, targets, 1.0 / 3); }, {a}) < 1e-4);
    }
}

TEST_CASE("finite differences confirm a composite graph") {
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
        Rng rng(seed);
        auto x = random_tensor({4, 6}, rng);
        auto w1 = random_tensor({6, 8}, rng);
        auto b1 = random_tensor({8}, rng);
        auto w2 = random_tensor({8, 3}, rng);
        auto gain = random_tensor({3}, rng, true, 0.5, 1.5);
        auto bias = random_tensor({3}, rng);
        std::vector<double> targets(4 * 3);
        for (auto& t : targets) t = rng.uniform(0, 1);
        auto build = [&] {
            auto h = relu(add_rowvec(matmul(x, w1), b1));
            auto y = layer_norm(matmul(h, w2), gain, bias);
            return cross_entropy_rows(softmax_rows(y), targets, 0.25);
        };
        CHECK(gradcheck(build, {x, w1, b1, w2, gain, bias}) < 1e-4);
    }
}

TEST_CASE("sgd step without momentum") {
    auto w = Tensor<float>::from_values({1}, {1.0f}, true);
    w->ensure_grad();
    w->grad[0] = 1.0f;
    std::vector<Param<float>> params{{"w", w}};
    SgdMomentum<float> sgd(0.1f, 0.0f);
    sgd.step(params);
    CHECK(w->value[0] == doctest::Approx(0.9f));
    CHECK(sgd.step_count() == 1);
}

TEST_CASE("sgd zero gradient leaves parameters unchanged") {
    auto w = Tensor<float>::from_values({3}, {1, 2, 3}, true);
    w->ensure_grad();
    std::vector<Param<float>> params{{"w", w}};
    SgdMomentum<float> sgd(0.1f, 0.0f);
    sgd.step(params);
    CHECK(w->value[0] == doctest::Approx(1.0f));
    CHECK(w->value[1] == doctest::Approx(2.0f));
    CHECK(w->value[2] == doctest::Approx(3.0f));
}

TEST_CASE("sgd momentum accumulates velocity") {
    auto w = Tensor<float>::from_values({1}, {0.0f}, true);
    w->ensure_grad();
    std::vector<Param<float>> params{{"w", w}};
    SgdMomentum<float> sgd(1.0f, 0.9f);
    w->grad[0] = 1.0f;
    sgd.step(params); // v=1, w=-1
    w->grad[0] = 1.0f;
    sgd.step(params); // v=1.9, w=-2.9
    CHECK(w->value[0] == doctest::Approx(-2.9f));
}

TEST_CASE("adam first step moves by roughly the learning rate") {
    auto w = Tensor<double>::from_values({2}, {1.0, -2.0}, true);
    w->ensure_grad();
    w->grad[0] = 0.3;
    w->grad[1] = -7.0;
    std::vector<Param<double>> params{{"w", w}};
    Adam<double> adam(1e-3);
    adam.step(params);
    // bias-corrected first step: lr·g/(|g|+eps) = ±lr
    CHECK(w->value[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
    CHECK(w->value[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
}

TEST_CASE("adam second step follows the hand-computed recurrence") {
    auto w = Tensor<double>::from_values({1}, {0.5}, true);
    w->ensure_grad();
    std::vector<Param<double>> params{{"w", w}};
    double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Adam<double> adam(lr);
    double g = 2.0, wv = 0.5, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
        w->grad[0] = g;
        adam.step(params);
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mhat = m / (1 - std::pow(b1, t));
        double vhat = v / (1 - std::pow(b2, t));
        wv -= lr * mhat / (std::sqrt(vhat) + eps);
        w->grad[0] = 0; // grads zeroed between steps in this hand recurrence
    }
    CHECK(w->value[0] == doctest::Approx(wv).epsilon(1e-12));
}

TEST_CASE("optimizers report the missing-gradient parameter by name") {
    auto w = Tensor<float>::from_values({1}, {1.0f}, true);
    std::vector<Param<float>> params{{"encoder.0.w_q", w}};
    SgdMomentum<float> sgd(0.1f, 0.9f);
    try {
        sgd.step(params);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("encoder.0.w_q") != std::string::npos);
    }
}

TEST_CASE("learning rates must be positive") {
    CHECK_THROWS_AS(SgdMomentum<float>(0.0f, 0.9f), ConfigError);
    CHECK_THROWS_AS(Adam<float>(-1e-4f), ConfigError);
}

TEST_CASE("identical seeds give bit-identical parameters after N steps") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        auto w = Tensor<float>::create({4, 4}, true);
        xavier_uniform(*w, rng);
        auto x = Tensor<float>::create({4, 4});
        for (auto& v : x->value) v = static_cast<float>(rng.uniform(-1, 1));
        std::vector<Param<float>> params{{"w", w}};
        Adam<float> adam(1e-2f);
        for (int step = 0; step < 25; ++step) {
            zero_grads(params);
            auto loss = sum_all(hadamard(matmul(x, w), matmul(x, w)));
            backward(loss);
            adam.step(params);
        }
        return w->value;
    };
    auto a = run(123), b = run(123), c = run(124);
    CHECK(a == b); // bitwise
    CHECK(a != c);
}
