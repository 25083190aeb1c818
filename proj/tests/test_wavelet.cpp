#include <doctest.h>

#include "wstereo/wavelet.hpp"

using namespace ws;

namespace {
template <class T>
double energy(const Tensor<T>& t) {
    double e = 0;
    for (const T& v : t.data()) e += static_cast<double>(v) * v;
    return e;
}
} // namespace

TEST_CASE("dwt2 of a constant image concentrates in LL") {
    auto x = Tensor<float>::full({1, 1, 4, 4}, 4.0f);
    auto sb = dwt2(x);
    for (float v : sb.ll.data()) CHECK(v == doctest::Approx(8.0f));
    for (float v : sb.lh.data()) CHECK(v == 0.0f);
    for (float v : sb.hl.data()) CHECK(v == 0.0f);
    for (float v : sb.hh.data()) CHECK(v == 0.0f);
}

TEST_CASE("dwt2 single block hand values") {
    Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
    auto sb = dwt2(x);
    CHECK(sb.ll.item() == doctest::Approx(5.0f));
    CHECK(sb.hl.item() == doctest::Approx(1.0f));
    CHECK(sb.lh.item() == doctest::Approx(2.0f));
    CHECK(sb.hh.item() == doctest::Approx(0.0f));
}

TEST_CASE("dwt2 rejects odd dims") {
    CHECK_THROWS_AS(dwt2(Tensor<float>::zeros({1, 1, 3, 4})), DimensionError);
    CHECK_THROWS_AS(dwt2(Tensor<float>::zeros({1, 1, 4, 5})), DimensionError);
}

TEST_CASE("orthonormal energy conservation (f64)") {
    Rng rng(21);
    auto x = Tensor<double>::randu({1, 3, 8, 8}, rng, -2, 2);
    auto sb = dwt2(x);
    const double e_in = energy(x);
    const double e_out = energy(sb.ll) + energy(sb.lh) + energy(sb.hl) + energy(sb.hh);
    CHECK(std::abs(e_in - e_out) / e_in < 1e-12);
}

TEST_CASE("idwt2 inverts dwt2") {
    SUBCASE("single coefficient block") {
        Tensor<float> ll({1, 1, 1, 1}, {5}), lh({1, 1, 1, 1}, {2}), hl({1, 1, 1, 1}, {1}),
            hh({1, 1, 1, 1}, {0});
        auto x = idwt2(ll, lh, hl, hh);
        CHECK(x.data()[0] == doctest::Approx(1.0f));
        CHECK(x.data()[1] == doctest::Approx(2.0f));
        CHECK(x.data()[2] == doctest::Approx(3.0f));
        CHECK(x.data()[3] == doctest::Approx(4.0f));
    }
    SUBCASE("constant LL, zero details") {
        auto ll = Tensor<float>::full({1, 1, 2, 2}, 6.0f);
        auto z = Tensor<float>::zeros({1, 1, 2, 2});
        auto x = idwt2(ll, z, z, z);
        for (float v : x.data()) CHECK(v == doctest::Approx(3.0f));
    }
    SUBCASE("random f32 round trip") {
        Rng rng(3);
        auto x = Tensor<float>::randu({2, 3, 8, 10}, rng, -10, 10);
        auto sb = dwt2(x);
        auto rec = idwt2(sb.ll, sb.lh, sb.hl, sb.hh);
        for (long i = 0; i < x.numel(); ++i)
            CHECK(std::abs(rec.data()[i] - x.data()[i]) < 1e-5);
    }
    SUBCASE("shape mismatch rejected") {
        auto a = Tensor<float>::zeros({1, 1, 2, 2});
        auto b = Tensor<float>::zeros({1, 1, 2, 3});
        CHECK_THROWS_AS(idwt2(a, a, a, b), DimensionError);
    }
}

TEST_CASE("perfect reconstruction and linearity in f64") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = Tensor<double>::randu({1, 1, 6, 8}, rng, -5, 5);
        auto y = Tensor<double>::randu({1, 1, 6, 8}, rng, -5, 5);
        auto sb = dwt2(x);
        auto rec = idwt2(sb.ll, sb.lh, sb.hl, sb.hh);
        for (long i = 0; i < x.numel(); ++i) CHECK(std::abs(rec.data()[i] - x.data()[i]) < 1e-12);

        // dwt2(a*x + b*y) = a*dwt2(x) + b*dwt2(y)
        const double a = 1.5, b = -0.75;
        std::vector<double> mix(x.numel());
        for (long i = 0; i < x.numel(); ++i) mix[i] = a * x.data()[i] + b * y.data()[i];
        auto sb_mix = dwt2(Tensor<double>({1, 1, 6, 8}, std::move(mix)));
        auto sb_y = dwt2(y);
        for (long i = 0; i < sb.ll.numel(); ++i) {
            CHECK(sb_mix.ll.data()[i] ==
                  doctest::Approx(a * sb.ll.data()[i] + b * sb_y.ll.data()[i]).epsilon(1e-12));
            CHECK(sb_mix.hh.data()[i] ==
                  doctest::Approx(a * sb.hh.data()[i] + b * sb_y.hh.data()[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("build_pyramid level shapes") {
    auto img = Tensor<float>::zeros({1, 3, 32, 32});
    auto pyr = build_pyramid(img, 3);
    REQUIRE(pyr.levels.size() == 3);
    CHECK(pyr.levels[0].ll.dim(2) == 16);
    CHECK(pyr.levels[1].ll.dim(2) == 8);
    CHECK(pyr.levels[2].ll.dim(2) == 4);
}

TEST_CASE("build_pyramid n_i=1 equals a single dwt2") {
    Rng rng(4);
    auto x = Tensor<float>::randu({1, 3, 8, 8}, rng, 0, 1);
    auto pyr = build_pyramid(x, 1);
    auto sb = dwt2(x);
    CHECK(pyr.levels[0].ll.data() == sb.ll.data());
    CHECK(pyr.levels[0].hh.data() == sb.hh.data());
}

TEST_CASE("cascaded reconstruction from level 3") {
    Rng rng(5);
    auto x = Tensor<float>::randu({1, 3, 32, 48}, rng, 0, 255);
    auto pyr = build_pyramid(x, 3);
    Tensor<float> cur = pyr.levels[2].ll;
    for (int i = 2; i >= 0; --i)
        cur = idwt2(cur, pyr.levels[i].lh, pyr.levels[i].hl, pyr.levels[i].hh);
    double max_err = 0;
    for (long i = 0; i < x.numel(); ++i)
        max_err = std::max(max_err, std::abs(static_cast<double>(cur.data()[i]) - x.data()[i]));
    CHECK(max_err < 1e-4);
}

TEST_CASE("build_pyramid rejects non-divisible dims with a padding hint") {
    auto img = Tensor<float>::zeros({1, 3, 20, 32});
    try {
        build_pyramid(img, 3);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("pad") != std::string::npos);
    }
}

TEST_CASE("concat_high ordering and zero behaviour") {
    SUBCASE("channel count and band order") {
        auto img = Tensor<float>::zeros({1, 3, 16, 16});
        auto pyr = build_pyramid(img, 3);
        // Overwrite level-1 bands with distinct constants: HL=1, LH=2, HH=3.
        pyr.levels[0].hl = Tensor<float>::full({1, 3, 8, 8}, 1.0f);
        pyr.levels[0].lh = Tensor<float>::full({1, 3, 8, 8}, 2.0f);
        pyr.levels[0].hh = Tensor<float>::full({1, 3, 8, 8}, 3.0f);
        auto cat = concat_high(pyr, 1);
        REQUIRE(cat.dim(1) == 9);
        const float expected[9] = {1, 1, 1, 2, 2, 2, 3, 3, 3};
        for (int c = 0; c < 9; ++c) CHECK(cat.at4(0, c, 0, 0) == expected[c]);
    }
    SUBCASE("constant image gives all-zero details") {
        auto img = Tensor<float>::full({1, 3, 16, 16}, 9.0f);
        auto pyr = build_pyramid(img, 3);
        for (int lvl = 1; lvl <= 3; ++lvl) {
            auto cat = concat_high(pyr, lvl);
            for (float v : cat.data()) CHECK(v == 0.0f);
        }
    }
    SUBCASE("level out of range") {
        auto pyr = build_pyramid(Tensor<float>::zeros({1, 3, 16, 16}), 3);
        CHECK_THROWS_AS(concat_high(pyr, 0), RangeError);
        CHECK_THROWS_AS(concat_high(pyr, 4), RangeError);
    }
}
