#include <doctest.h>

#include <cmath>

#include "snpforge/tensor.hpp"

using namespace snpforge;

TEST_CASE("conv1d same-padding arithmetic") {
    Rng rng(1);
    auto x = Tensorf::randn({1, 3, 8}, rng);
    auto w = Tensorf::randn({4, 3, 3}, rng);
    auto b = Tensorf::zeros({4});
    auto y = conv1d(x, w, b, 1, 1);
    CHECK(y.shape() == Shape{1, 4, 8});

    auto y2 = conv1d(x, w, b, 2, 1);
    CHECK(y2.shape() == Shape{1, 4, 4});
}

TEST_CASE("conv1d then transposed conv1d restores the spatial length") {
    Rng rng(2);
    auto x = Tensorf::randn({2, 4, 16}, rng);
    auto wd = Tensorf::randn({8, 4, 3}, rng);
    auto wu = Tensorf::randn({8, 4, 4}, rng);
    auto h = conv1d(x, wd, {}, 2, 1);
    CHECK(h.dim(2) == 8);
    auto y = conv_transpose1d(h, wu, {}, 2, 1);
    CHECK(y.dim(2) == 16);
}

TEST_CASE("softmax of a constant row is uniform") {
    auto x = Tensorf::from_vector({1, 3}, {0.f, 0.f, 0.f});
    auto y = softmax(x, -1);
    for (const auto v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
    Rng rng(3);
    auto x = Tensorf::randn({5, 7}, rng, 3.f);
    auto y = softmax(x, -1);
    for (int64_t i = 0; i < 5; ++i) {
        double s = 0;
        for (int64_t j = 0; j < 7; ++j) {
            const auto v = y.at({i, j});
            CHECK(v >= 0.f);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("reparameterize with unit noise and zero statistics") {
    auto mu = Tensorf::zeros({1});
    auto logvar = Tensorf::zeros({1});
    auto noise = Tensorf::from_vector({1}, {1.5f});
    auto z = reparameterize(mu, logvar, noise);
    CHECK(z.item() == doctest::Approx(1.5f));
}

TEST_CASE("backward of sum(x*x) gives 2x") {
    auto x = Tensorf::from_vector({2}, {1.f, 2.f}).set_requires_grad(true);
    Tapef tape;
    auto loss = sum_all(mul(x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.f));
    CHECK(x.grad()[1] == doctest::Approx(4.f));
}

TEST_CASE("backward of mean distributes 1/n") {
    auto x = Tensorf::zeros({4}).set_requires_grad(true);
    Tapef tape;
    tape.backward(mean_all(x));
    for (const auto g : x.impl()->grad) CHECK(g == doctest::Approx(0.25f));
}

TEST_CASE("fan-out accumulates additively") {
    auto x = Tensorf::from_vector({3}, {1.f, -2.f, 0.5f}).set_requires_grad(true);
    Tapef tape;
    auto y = add(x, x);
    tape.backward(sum_all(y));
    for (const auto g : x.impl()->grad) CHECK(g == doctest::Approx(2.f));
}

TEST_CASE("backward requires a scalar loss") {
    auto x = Tensorf::zeros({2, 2}).set_requires_grad(true);
    Tapef tape;
    auto y = add(x, x);
    CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("scalar"), std::invalid_argument);
}

TEST_CASE("shape mismatch errors name the op and shapes") {
    auto a = Tensorf::zeros({2, 3});
    auto b = Tensorf::zeros({4, 5});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    auto x = Tensorf::zeros({1, 2, 8});
    auto w = Tensorf::zeros({4, 3, 3});
    CHECK_THROWS_WITH_AS(conv1d(x, w, {}, 1, 1), doctest::Contains("conv1d"),
                         std::invalid_argument);
}

TEST_CASE("broadcast add against channel bias") {
    auto x = Tensorf::from_vector({1, 2, 3}, {0, 1, 2, 3, 4, 5});
    auto bias = Tensorf::from_vector({1, 2, 1}, {10, 20});
    auto y = add(x, bias);
    CHECK(y.at({0, 0, 0}) == doctest::Approx(10));
    CHECK(y.at({0, 1, 2}) == doctest::Approx(25));
}

TEST_CASE("slice and concat round trip") {
    Rng rng(4);
    auto x = Tensorf::randn({2, 5, 3}, rng);
    auto a = slice(x, 1, 0, 2);
    auto b = slice(x, 1, 2, 3);
    auto back = concat<float>({a, b}, 1);
    CHECK(back.shape() == x.shape());
    for (size_t i = 0; i < x.data().size(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("clamp bounds values and passes gradient inside the window") {
    auto x = Tensorf::from_vector({3}, {-5.f, 0.5f, 9.f}).set_requires_grad(true);
    Tapef tape;
    auto y = clamp(x, -1.f, 1.f);
    CHECK(y.data()[0] == doctest::Approx(-1.f));
    CHECK(y.data()[1] == doctest::Approx(0.5f));
    CHECK(y.data()[2] == doctest::Approx(1.f));
    tape.backward(sum_all(y));
    CHECK(x.grad()[0] == 0.f);
    CHECK(x.grad()[1] == doctest::Approx(1.f));
    CHECK(x.grad()[2] == 0.f);
}

TEST_CASE("attention shape and permutation consistency") {
    Rng rng(7);
    auto q = Tensorf::randn({2, 4, 8}, rng);
    auto k = Tensorf::randn({2, 6, 8}, rng);
    auto v = Tensorf::randn({2, 6, 8}, rng);
    auto out = attention(q, k, v);
    CHECK(out.shape() == Shape{2, 4, 8});
}

TEST_CASE("sinusoidal embedding is deterministic in t") {
    auto e1 = sinusoidal_embedding<float>({0.0, 10.0}, 16);
    auto e2 = sinusoidal_embedding<float>({0.0, 10.0}, 16);
    CHECK(e1.shape() == Shape{2, 16});
    for (size_t i = 0; i < e1.data().size(); ++i) CHECK(e1.data()[i] == e2.data()[i]);
    // t = 0 embeds as all cos(0)=1 / sin(0)=0
    for (int j = 0; j < 8; ++j) {
        CHECK(e1.at({0, j}) == doctest::Approx(1.f));
        CHECK(e1.at({0, 8 + j}) == doctest::Approx(0.f));
    }
}
