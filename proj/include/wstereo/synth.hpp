#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wstereo/errors.hpp"
#include "wstereo/rng.hpp"
#include "wstereo/stereo_io.hpp"
#include "wstereo/tensor.hpp"

namespace ws {

// Random-dot / noise stereogram generator: a desk-scale ground-truth source.
// The right image is the left image warped by the disparity field; left pixel
// (y, x) matches right pixel (y, x - d(y, x)).
struct SynthSpec {
    int width = 64;
    int height = 64;
    std::string field = "constant"; // constant | ramp | two-plane
    double d0 = 4.0;                // constant value / ramp start / left plane
    double d1 = 4.0;                // ramp end / right plane
    double dot_density = 0.5;
    std::string texture = "dots"; // dots | noise
    std::uint64_t seed = 0;

    double max_disparity() const { return std::max(d0, d1); }

    nlohmann::json to_json() const {
        return {{"width", width},   {"height", height},       {"field", field},
                {"d0", d0},         {"d1", d1},               {"dot_density", dot_density},
                {"texture", texture}, {"seed", seed}};
    }

    static SynthSpec from_json(const nlohmann::json& j) {
        SynthSpec s;
        s.width = j.at("width").get<int>();
        s.height = j.at("height").get<int>();
        s.field = j.value("field", "constant");
        s.d0 = j.value("d0", 4.0);
        s.d1 = j.value("d1", 4.0);
        s.dot_density = j.value("dot_density", 0.5);
        s.texture = j.value("texture", "dots");
        s.seed = j.value("seed", std::uint64_t(0));
        return s;
    }
};

struct SynthPair {
    Tensor<float> left;  // [1,3,H,W], 0..255
    Tensor<float> right; // [1,3,H,W], 0..255
    DisparityMap gt;     // left-grid disparity
};

namespace detail {

// Disparity at (possibly fractional) left-image column x.
inline double field_at(const SynthSpec& s, double x) {
    if (s.field == "constant") return s.d0;
    if (s.field == "ramp") return s.d0 + (s.d1 - s.d0) * (x / (s.width - 1));
    if (s.field == "two-plane") return x < s.width / 2.0 ? s.d0 : s.d1;
    throw ConfigError("unknown disparity field: " + s.field);
}

inline float sample_row(const float* row, int w, double x) {
    if (x <= 0) return row[0];
    if (x >= w - 1) return row[w - 1];
    const int x0 = static_cast<int>(std::floor(x));
    const double f = x - x0;
    return static_cast<float>((1.0 - f) * row[x0] + f * row[x0 + 1]);
}

} // namespace detail

inline SynthPair synth_pair(const SynthSpec& spec) {
    const int W = spec.width, H = spec.height;
    if (spec.max_disparity() >= W / 4.0)
        throw ConfigError("synth: max disparity must stay below width/4");
    if (spec.field == "ramp" && (spec.d1 - spec.d0) / (W - 1) >= 1.0)
        throw ConfigError("synth: ramp slope must stay below 1");

    Rng rng(spec.seed);
    Tensor<float> left = Tensor<float>::zeros({1, 3, H, W});
    auto& ld = left.mutable_data();
    if (spec.texture == "dots") {
        // Grayscale random dots on mid-gray background, identical per channel.
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float v = 128.0f;
                if (rng.uniform() < spec.dot_density)
                    v = rng.uniform() < 0.5 ? 0.0f : 255.0f;
                for (int c = 0; c < 3; ++c) ld[(static_cast<long>(c) * H + y) * W + x] = v;
            }
    } else if (spec.texture == "noise") {
        // Uniform noise smoothed by two 3x3 box passes (band-limited texture).
        std::vector<float> noise(static_cast<size_t>(H) * W);
        for (auto& v : noise) v = static_cast<float>(rng.uniform(0.0, 255.0));
        for (int pass = 0; pass < 2; ++pass) {
            std::vector<float> next(noise.size());
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    float acc = 0;
                    int cnt = 0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                            acc += noise[static_cast<size_t>(yy) * W + xx];
                            ++cnt;
                        }
                    next[static_cast<size_t>(y) * W + x] = acc / cnt;
                }
            noise.swap(next);
        }
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c)
                    ld[(static_cast<long>(c) * H + y) * W + x] =
                        noise[static_cast<size_t>(y) * W + x];
    } else {
        throw ConfigError("unknown texture: " + spec.texture);
    }

    // Right image by inverse warping: right column xr samples left at xr + d.
    // For the two-plane field both planes may claim a right pixel; the larger
    // disparity (nearer surface) wins.
    Tensor<float> right = Tensor<float>::zeros({1, 3, H, W});
    auto& rd = right.mutable_data();
    const double xb = W / 2.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y) {
            const float* lrow = ld.data() + (static_cast<long>(c) * H + y) * W;
            float* rrow = rd.data() + (static_cast<long>(c) * H + y) * W;
            for (int xr = 0; xr < W; ++xr) {
                double xl;
                if (spec.field == "two-plane") {
                    const double cand_far = xr + spec.d0;  // valid while left of boundary
                    const double cand_near = xr + spec.d1; // valid at/after boundary
                    const bool far_ok = cand_far < xb;
                    const bool near_ok = cand_near >= xb;
                    if (near_ok && spec.d1 >= spec.d0)
                        xl = cand_near;
                    else if (far_ok)
                        xl = cand_far;
                    else if (near_ok)
                        xl = cand_near;
                    else
                        xl = cand_far; // disocclusion hole: hold the border sample
                } else {
                    // Fixed-point solve of xl - d(xl) = xr; exact for constant,
                    // converges geometrically for sub-unit ramp slopes.
                    xl = xr + detail::field_at(spec, xr);
                    for (int it = 0; it < 20; ++it) xl = xr + detail::field_at(spec, xl);
                }
                rrow[xr] = detail::sample_row(lrow, W, xl);
            }
        }

    // Ground truth with occlusion and out-of-frame handling on the left grid.
    DisparityMap gt = make_disparity(H, W);
    auto& gv = gt.values.mutable_data();
    auto& gm = gt.valid.mutable_data();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double d = detail::field_at(spec, static_cast<double>(x));
            const double target = x - d;
            bool valid = target >= 0.0 && target <= W - 1;
            if (valid && spec.field == "two-plane" && spec.d1 > spec.d0 && x < xb) {
                // Far-plane pixel hidden when a near-plane pixel maps onto it.
                const double claimant = target + spec.d1;
                if (claimant >= xb && claimant <= W - 1) valid = false;
            }
            const long i = static_cast<long>(y) * W + x;
            gv[i] = static_cast<float>(d);
            gm[i] = valid ? 1.0f : 0.0f;
        }
    return {std::move(left), std::move(right), std::move(gt)};
}

} // namespace ws
