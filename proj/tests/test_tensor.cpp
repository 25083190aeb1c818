#include <doctest.h>

#include "fd_oracle.hpp"
#include "wstereo/param_store.hpp"
#include "wstereo/tensor.hpp"

using namespace ws;

TEST_CASE("conv2d 1x1 kernel scales the input") {
    Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<float> w({1, 1, 1, 1}, {2});
    Tensor<float> b({1}, {0});
    auto y = conv2d(x, w, b, 1, 0);
    CHECK(y.data() == std::vector<float>{2, 4, 6, 8});
}

TEST_CASE("conv2d 3x3 identity kernel with pad 1 is the identity") {
    Rng rng(1);
    auto x = Tensor<float>::randu({2, 3, 5, 7}, rng, -1, 1);
    Tensor<float> w = Tensor<float>::zeros({3, 3, 3, 3});
    for (int c = 0; c < 3; ++c) w.mutable_data()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0f;
    auto y = conv2d(x, w, Tensor<float>(), 1, 1);
    for (long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d Sobel-x on a horizontal ramp gives 8 in the interior") {
    const int H = 5, W = 8;
    Tensor<float> x = Tensor<float>::zeros({1, 1, H, W});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) x.mutable_data()[i * W + j] = static_cast<float>(j);
    Tensor<float> w({1, 1, 3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
    auto y = conv2d(x, w, Tensor<float>(), 1, 0);
    for (long i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(8.0f));
}

TEST_CASE("conv2d geometry") {
    Tensor<float> x = Tensor<float>::zeros({1, 1, 5, 5});
    SUBCASE("floor semantics drop the trailing row/column") {
        Tensor<float> w = Tensor<float>::zeros({1, 1, 2, 2});
        auto y = conv2d(x, w, Tensor<float>(), 2, 0);
        CHECK(y.shape() == std::vector<int>({1, 1, 2, 2}));
    }
    SUBCASE("kernel larger than the padded input") {
        Tensor<float> w = Tensor<float>::zeros({1, 1, 7, 7});
        CHECK_THROWS_AS(conv2d(x, w, Tensor<float>(), 1, 0), DimensionError);
    }
    SUBCASE("channel mismatch") {
        Tensor<float> w2 = Tensor<float>::zeros({1, 2, 3, 3});
        CHECK_THROWS_AS(conv2d(x, w2, Tensor<float>(), 1, 1), DimensionError);
    }
}

TEST_CASE("elementwise basics") {
    Tensor<float> z({1}, {0});
    CHECK(sigmoid(z).item() == doctest::Approx(0.5));
    CHECK(tanh_op(z).item() == doctest::Approx(0.0));
    CHECK(relu(Tensor<float>({1}, {-3})).item() == 0.0f);
    Tensor<float> a({3}, {1, 2, 3}), b({3}, {4, 5, 6});
    CHECK(mul(a, b).data() == std::vector<float>{4, 10, 18});
    Tensor<float> bad({2}, {1, 2});
    CHECK_THROWS_AS(add(a, bad), DimensionError);
}

TEST_CASE("activation ranges on random inputs") {
    Rng rng(7);
    // +-8 keeps float sigmoid/tanh strictly inside their open ranges.
    auto x = Tensor<float>::randu({1, 2, 8, 8}, rng, -8, 8);
    auto s = sigmoid(x), t = tanh_op(x), r = relu(x);
    for (long i = 0; i < x.numel(); ++i) {
        CHECK(s.data()[i] > 0.0f);
        CHECK(s.data()[i] < 1.0f);
        CHECK(t.data()[i] > -1.0f);
        CHECK(t.data()[i] < 1.0f);
        CHECK(r.data()[i] >= 0.0f);
    }
}

TEST_CASE("global pooling") {
    Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(global_pool(PoolKind::Avg, PoolAxis::Spatial, x).item() == doctest::Approx(2.5));
    CHECK(global_pool(PoolKind::Max, PoolAxis::Spatial, x).item() == doctest::Approx(4));
    Tensor<float> c({1, 2, 1, 1}, {1, 5});
    CHECK(global_pool(PoolKind::Max, PoolAxis::Channel, c).item() == doctest::Approx(5));
    Tensor<float> avg = global_pool(PoolKind::Avg, PoolAxis::Channel, c);
    CHECK(avg.item() == doctest::Approx(3));
}

TEST_CASE("resize_bilinear") {
    SUBCASE("constant stays constant") {
        auto x = Tensor<float>::full({1, 1, 4, 4}, 3.25f);
        auto y = resize_bilinear(x, 1.75);
        for (float v : y.data()) CHECK(v == doctest::Approx(3.25f));
    }
    SUBCASE("scale 1 is the identity") {
        Rng rng(2);
        auto x = Tensor<float>::randu({1, 2, 3, 5}, rng, -1, 1);
        auto y = resize_bilinear(x, 1.0);
        CHECK(y.data() == x.data());
    }
    SUBCASE("hand-evaluated x2 on a 1x2 row") {
        Tensor<float> x({1, 1, 1, 2}, {0, 2});
        auto y = resize_bilinear(x, 2.0);
        CHECK(y.dim(2) == 2);
        CHECK(y.dim(3) == 4);
        for (int r = 0; r < 2; ++r) {
            CHECK(y.data()[r * 4 + 0] == doctest::Approx(0.0f));
            CHECK(y.data()[r * 4 + 1] == doctest::Approx(0.5f));
            CHECK(y.data()[r * 4 + 2] == doctest::Approx(1.5f));
            CHECK(y.data()[r * 4 + 3] == doctest::Approx(2.0f));
        }
    }
    SUBCASE("zero output dim rejected") {
        auto x = Tensor<float>::zeros({1, 1, 4, 4});
        CHECK_THROWS_AS(resize_bilinear(x, 0.01), DimensionError);
    }
}

TEST_CASE("backward on sum of squares") {
    Tensor<double> x({2}, {1, 2}, true);
    auto l = sum(mul(x, x));
    backward(l);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward error paths") {
    Tensor<double> x({2}, {1, 2}, true);
    auto y = mul(x, x);
    CHECK_THROWS_AS(backward(y), DimensionError); // non-scalar
    auto l = sum(y);
    backward(l);
    CHECK_THROWS_AS(backward(l), GraphError); // second call without reset
    Tensor<double> c({1}, {3});               // untracked
    CHECK_THROWS_AS(backward(sum(mul(c, c))), GraphError);
}

TEST_CASE("untracked subgraph contributes zero gradient") {
    Tensor<double> x({2}, {1, 2}, true);
    Tensor<double> c({2}, {10, 20});
    auto l = sum(add(mul(x, x), mul(c, c)));
    backward(l);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("sigmoid(Wx) gradients match finite differences") {
    Rng rng(11);
    auto w = Tensor<double>::randu({1, 3, 1, 1}, rng, -0.5, 0.5);
    auto x = Tensor<double>::randu({1, 3, 2, 2}, rng, -0.5, 0.5);
    w.set_requires_grad(true);
    x.set_requires_grad(true);
    auto rep = wstest::check_gradients(
        {w, x}, [&] { return sum(sigmoid(conv2d(x, w, Tensor<double>(), 1, 0))); });
    CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("per-op gradients vs central finite differences, 100 trials") {
    Rng rng(13);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto x = Tensor<double>::randu({1, 2, 4, 6}, rng, -1, 1);
        auto w = Tensor<double>::randu({2, 2, 3, 3}, rng, -1, 1);
        auto b = Tensor<double>::randu({2}, rng, -1, 1);
        x.set_requires_grad(true);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        const int which = trial % 5;
        auto loss_fn = [&]() -> Tensor<double> {
            switch (which) {
            case 0: return sum(tanh_op(conv2d(x, w, b, 1, 1)));
            case 1: return sum(sigmoid(resize_bilinear(x, 1.5)));
            case 2: return sum(mul(relu(x), tanh_op(x)));
            case 3: return sum(global_pool(PoolKind::Avg, PoolAxis::Spatial, mul(x, x)));
            case 4:
            default:
                return sum(global_pool(PoolKind::Max, PoolAxis::Channel,
                                       conv2d(x, w, b, 2, 1)));
            }
        };
        auto rep = wstest::check_gradients({x, w, b}, loss_fn);
        worst = std::max(worst, rep.max_rel_err);
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(5);
    auto x = Tensor<double>::randu({1, 1, 3, 3}, rng, -1, 1);
    x.set_requires_grad(true);

    auto grad_of = [&](double a, double b) {
        x.zero_grad();
        auto l1 = sum(mul(x, x));
        auto l2 = sum(tanh_op(x));
        auto l = add(scale(l1, a), scale(l2, b));
        backward(l);
        return x.grad();
    };
    auto g1 = grad_of(1, 0);
    auto g2 = grad_of(0, 1);
    auto gc = grad_of(2.5, -1.5);
    for (size_t i = 0; i < gc.size(); ++i)
        CHECK(gc[i] == doctest::Approx(2.5 * g1[i] - 1.5 * g2[i]).epsilon(1e-10));
}

TEST_CASE("broadcast over size-1 axes with gradients") {
    Rng rng(3);
    auto a = Tensor<double>::randu({1, 3, 1, 1}, rng, -1, 1);
    auto b = Tensor<double>::randu({1, 3, 2, 2}, rng, -1, 1);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto rep = wstest::check_gradients({a, b}, [&] { return sum(mul(a, b)); });
    CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("non-finite results are rejected") {
    Tensor<float> big = Tensor<float>::full({4}, 1e30f);
    CHECK_THROWS_AS(mul(big, big), NumericalError);
}

TEST_CASE("ParameterStore round-trips bit-exactly") {
    ParameterStore<float> ps;
    Rng rng(42);
    ps.add("hpu.lstm.w_i", Tensor<float>::randu({4, 3, 3, 3}, rng, -1, 1));
    ps.add("dec.b", Tensor<float>::randu({7}, rng, -2, 2));
    const std::string path = "test_weights.wstw";
    ps.save(path);
    auto loaded = ParameterStore<float>::load(path);
    REQUIRE(loaded.size() == ps.size());
    CHECK(loaded.names() == ps.names());
    for (size_t i = 0; i < ps.size(); ++i) {
        CHECK(loaded.at(i).shape() == ps.at(i).shape());
        CHECK(loaded.at(i).data() == ps.at(i).data());
    }
    std::remove(path.c_str());
    CHECK_THROWS_AS(ps.add("dec.b", Tensor<float>::zeros({1})), ConfigError);
}
