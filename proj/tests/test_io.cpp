#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "wstereo/stereo_io.hpp"
#include "wstereo/synth.hpp"

using namespace ws;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

// 5x5 SAD block matching with exhaustive search: the independent oracle for
// integer-disparity synthetic pairs.
int sad_match(const Tensor<float>& left, const Tensor<float>& right, int y, int x, int dmax) {
    const int H = left.dim(2), W = left.dim(3);
    double best = 1e18;
    int best_d = 0;
    for (int d = 0; d <= dmax; ++d) {
        if (x - d - 2 < 0) break;
        double sad = 0;
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
                const int yy = std::min(std::max(y + dy, 0), H - 1);
                const int xl = std::min(std::max(x + dx, 0), W - 1);
                const int xr = std::min(std::max(x - d + dx, 0), W - 1);
                sad += std::abs(left.at4(0, 0, yy, xl) - right.at4(0, 0, yy, xr));
            }
        if (sad < best) {
            best = sad;
            best_d = d;
        }
    }
    return best_d;
}

} // namespace

TEST_CASE("PFM round trip is bit-exact and keeps invalid pixels") {
    Rng rng(51);
    DisparityMap map = make_disparity(6, 9);
    for (auto& v : map.values.mutable_data()) v = static_cast<float>(rng.uniform(0, 100));
    map.valid.mutable_data()[13] = 0.0f;
    TempFile f("roundtrip.pfm");
    write_pfm(f.path, map);
    auto back = read_pfm(f.path);
    REQUIRE(back.width() == 9);
    REQUIRE(back.height() == 6);
    for (long i = 0; i < map.values.numel(); ++i) {
        CHECK(back.valid.data()[i] == map.valid.data()[i]);
        if (map.valid.data()[i] > 0.5f) CHECK(back.values.data()[i] == map.values.data()[i]);
    }
}

TEST_CASE("PFM header bytes for a 3x2 little-endian map") {
    DisparityMap map = make_disparity(2, 3);
    TempFile f("header.pfm");
    write_pfm(f.path, map);
    std::ifstream is(f.path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(content.substr(0, 12) == "Pf\n3 2\n-1.0\n");
    CHECK(content.size() == 12 + 24);
}

TEST_CASE("color PF header is rejected for disparity") {
    TempFile f("color.pfm");
    std::ofstream os(f.path, std::ios::binary);
    os << "PF\n2 2\n-1.0\n";
    for (int i = 0; i < 2 * 2 * 3 * 4; ++i) os.put('\0');
    os.close();
    CHECK_THROWS_AS(read_pfm(f.path), FormatError);
}

TEST_CASE("PNG16 KITTI encoding") {
    SUBCASE("disparity 1.0 stores 256") {
        DisparityMap map = make_disparity(1, 1);
        map.values.mutable_data()[0] = 1.0f;
        TempFile f("enc.png");
        write_png16(f.path, map);
        auto back = read_png16(f.path);
        CHECK(back.values.data()[0] == doctest::Approx(1.0f)); // 256/256
    }
    SUBCASE("stored 0 reads back invalid") {
        DisparityMap map = make_disparity(2, 2);
        map.valid.mutable_data()[3] = 0.0f;
        TempFile f("inv.png");
        write_png16(f.path, map);
        auto back = read_png16(f.path);
        CHECK(back.valid.data()[3] == 0.0f);
    }
    SUBCASE("round trip error bounded by 1/512") {
        Rng rng(52);
        DisparityMap map = make_disparity(8, 8);
        for (auto& v : map.values.mutable_data()) v = static_cast<float>(rng.uniform(0.5, 192));
        TempFile f("rt.png");
        write_png16(f.path, map);
        auto back = read_png16(f.path);
        for (long i = 0; i < map.values.numel(); ++i) {
            REQUIRE(back.valid.data()[i] == 1.0f);
            CHECK(std::abs(back.values.data()[i] - map.values.data()[i]) <= 1.0f / 512 + 1e-6);
        }
    }
}

TEST_CASE("PNM round trip") {
    Rng rng(53);
    auto img = Tensor<float>::zeros({1, 3, 5, 7});
    for (auto& v : img.mutable_data()) v = static_cast<float>(rng.below(256));
    TempFile f("img.ppm");
    write_pnm(f.path, img);
    auto back = read_pnm(f.path);
    CHECK(back.shape() == img.shape());
    CHECK(back.data() == img.data());

    auto gray = Tensor<float>::zeros({1, 1, 4, 4});
    TempFile g("img.pgm");
    write_pnm(g.path, gray);
    CHECK(read_pnm(g.path).dim(1) == 1);
}

TEST_CASE("synth: zero disparity gives identical images") {
    SynthSpec spec;
    spec.width = 32;
    spec.height = 16;
    spec.d0 = spec.d1 = 0;
    spec.seed = 3;
    auto pair = synth_pair(spec);
    CHECK(pair.left.data() == pair.right.data());
    for (float v : pair.gt.values.data()) CHECK(v == 0.0f);
}

TEST_CASE("synth: constant integer disparity is a pure shift") {
    SynthSpec spec;
    spec.width = 48;
    spec.height = 12;
    spec.d0 = spec.d1 = 4;
    spec.seed = 5;
    auto pair = synth_pair(spec);
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 48 - 4; ++x)
            CHECK(pair.right.at4(0, 0, y, x) == pair.left.at4(0, 0, y, x + 4));
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 48; ++x) {
            CHECK(pair.gt.values.data()[y * 48 + x] == 4.0f);
            CHECK(pair.gt.valid.data()[y * 48 + x] == (x >= 4 ? 1.0f : 0.0f));
        }
}

TEST_CASE("synth: two-plane field carves an occlusion band of width d1-d0") {
    SynthSpec spec;
    spec.width = 64;
    spec.height = 8;
    spec.field = "two-plane";
    spec.d0 = 2;
    spec.d1 = 6;
    spec.seed = 7;
    auto pair = synth_pair(spec);
    const int xb = 32;
    for (int x = 0; x < 64; ++x) {
        const bool occluded = x >= xb - 4 && x < xb;
        const bool out_of_frame = x < 2;
        const float expect = (occluded || out_of_frame) ? 0.0f : 1.0f;
        CHECK(pair.gt.valid.data()[x] == expect);
    }
}

TEST_CASE("synth determinism: same spec, byte-identical outputs") {
    SynthSpec spec;
    spec.width = 32;
    spec.height = 16;
    spec.seed = 99;
    auto a = synth_pair(spec);
    auto b = synth_pair(spec);
    CHECK(a.left.data() == b.left.data());
    CHECK(a.right.data() == b.right.data());
    CHECK(a.gt.values.data() == b.gt.values.data());
}

TEST_CASE("SAD block matching recovers integer constant disparity") {
    SynthSpec spec;
    spec.width = 64;
    spec.height = 16;
    spec.d0 = spec.d1 = 5;
    spec.dot_density = 0.7;
    spec.seed = 11;
    auto pair = synth_pair(spec);
    int wrong = 0, total = 0;
    for (int y = 2; y < 14; ++y)
        for (int x = 10; x < 60; ++x) {
            if (pair.gt.valid.data()[y * 64 + x] < 0.5f) continue;
            ++total;
            if (sad_match(pair.left, pair.right, y, x, 12) != 5) ++wrong;
        }
    REQUIRE(total > 100);
    CHECK(wrong == 0);
}

TEST_CASE("synth rejects excessive disparity") {
    SynthSpec spec;
    spec.width = 32;
    spec.height = 8;
    spec.d0 = spec.d1 = 10; // >= width/4
    CHECK_THROWS_AS(synth_pair(spec), ConfigError);
}

TEST_CASE("SynthSpec JSON round trip") {
    SynthSpec spec;
    spec.width = 40;
    spec.field = "ramp";
    spec.d0 = 1;
    spec.d1 = 3;
    spec.texture = "noise";
    spec.seed = 123;
    auto back = SynthSpec::from_json(spec.to_json());
    CHECK(back.width == spec.width);
    CHECK(back.field == spec.field);
    CHECK(back.d1 == spec.d1);
    CHECK(back.texture == spec.texture);
    CHECK(back.seed == spec.seed);
}
