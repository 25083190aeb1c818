#pragma once

#include <cmath>
#include <cstdio>
#include <deque>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wstereo/errors.hpp"
#include "wstereo/tensor.hpp"

namespace ws {

// Binary edge mask separating high-frequency (edge) pixels from smooth
// regions. Produced by a Canny detector at the stated thresholds.
struct FrequencyMask {
    Tensor<float> mask; // [H,W], values in {0,1}
    int low_thresh = 100;
    int high_thresh = 200;
};

struct FrequencyMetrics {
    double epe_total = 0, epe_high = 0, epe_low = 0; // px
    double d1 = 0;                                   // %
    double bad1 = 0, bad2 = 0, bad3 = 0;             // %
    long n_high = 0, n_low = 0;

    nlohmann::json to_json() const {
        return {{"epe_total", epe_total}, {"epe_high", epe_high}, {"epe_low", epe_low},
                {"d1", d1},               {"bad1", bad1},         {"bad2", bad2},
                {"bad3", bad3},           {"n_high", n_high},     {"n_low", n_low}};
    }
};

// Canny at aperture 3, L1 gradient magnitude, no pre-blur: 3x3 Sobel,
// 4-direction non-maximum suppression, dual-threshold hysteresis with
// 8-connectivity linking. Input [C,H,W] or [1,C,H,W] in 0..255; color is
// converted to integer luma first.
inline FrequencyMask canny(const Tensor<float>& img, int low = 100, int high = 200) {
    Tensor<float> x = img;
    std::vector<int> s = x.shape();
    if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
    if (s.size() != 3 || (s[0] != 1 && s[0] != 3))
        throw DimensionError("canny: input must be [1|3,H,W]");
    const int C = s[0], H = s[1], W = s[2];
    for (const float v : x.data())
        if (!(v >= 0.0f && v <= 255.0f)) throw ValueError("canny: pixels must be in [0,255]");

    // Integer luma, OpenCV BGR-free convention for gray conversion.
    std::vector<int> gray(static_cast<size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
            const size_t i = static_cast<size_t>(y) * W + xx;
            if (C == 1) {
                gray[i] = static_cast<int>(std::lround(x.data()[i]));
            } else {
                const double r = x.data()[i];
                const double g = x.data()[static_cast<size_t>(H) * W + i];
                const double b = x.data()[2 * static_cast<size_t>(H) * W + i];
                gray[i] = static_cast<int>(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
            }
        }

    auto at = [&](int y, int xx) { // replicate border
        y = std::min(std::max(y, 0), H - 1);
        xx = std::min(std::max(xx, 0), W - 1);
        return gray[static_cast<size_t>(y) * W + xx];
    };

    // 3x3 Sobel, L1 magnitude.
    std::vector<int> gx(gray.size()), gy(gray.size()), mag(gray.size());
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
            const int sx = -at(y - 1, xx - 1) + at(y - 1, xx + 1) - 2 * at(y, xx - 1) +
                           2 * at(y, xx + 1) - at(y + 1, xx - 1) + at(y + 1, xx + 1);
            const int sy = at(y + 1, xx - 1) + 2 * at(y + 1, xx) + at(y + 1, xx + 1) -
                           at(y - 1, xx - 1) - 2 * at(y - 1, xx) - at(y - 1, xx + 1);
            const size_t i = static_cast<size_t>(y) * W + xx;
            gx[i] = sx;
            gy[i] = sy;
            mag[i] = std::abs(sx) + std::abs(sy);
        }

    // Non-maximum suppression over 4 quantized directions, then hysteresis.
    // Sector selection uses tan(22.5) in 15-bit fixed point, equalities
    // falling into the diagonal sector, and the diagonal comparisons are
    // strict on both neighbours; these are exactly the classic integer-NMS
    // conventions, so results agree with common reference implementations.
    // 0 = none, 1 = weak, 2 = strong.
    std::vector<unsigned char> cls(gray.size(), 0);
    constexpr int kShift = 15;
    constexpr long long kTan22 = 13573; // round(tan(22.5 deg) * 2^15)
    auto mag_at = [&](int y, int xx) {
        return (y < 0 || y >= H || xx < 0 || xx >= W) ? 0
                                                      : mag[static_cast<size_t>(y) * W + xx];
    };
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
            const size_t i = static_cast<size_t>(y) * W + xx;
            const int m = mag[i];
            if (m <= low) continue;
            const long long ax = std::abs(static_cast<long long>(gx[i]));
            const long long ay = std::abs(static_cast<long long>(gy[i])) << kShift;
            const long long tg22 = ax * kTan22;
            bool keep;
            if (ay < tg22) { // horizontal gradient: compare left/right
                keep = m > mag_at(y, xx - 1) && m >= mag_at(y, xx + 1);
            } else if (ay > tg22 + ((ax + ax) << kShift)) { // vertical
                keep = m > mag_at(y - 1, xx) && m >= mag_at(y + 1, xx);
            } else if ((gx[i] ^ gy[i]) >= 0) { // 45 degrees (same sign)
                keep = m > mag_at(y - 1, xx - 1) && m > mag_at(y + 1, xx + 1);
            } else { // 135 degrees
                keep = m > mag_at(y - 1, xx + 1) && m > mag_at(y + 1, xx - 1);
            }
            if (keep) cls[i] = m > high ? 2 : 1;
        }

    Tensor<float> mask = Tensor<float>::zeros({H, W});
    auto& out = mask.mutable_data();
    std::deque<size_t> queue;
    for (size_t i = 0; i < cls.size(); ++i)
        if (cls[i] == 2) {
            out[i] = 1.0f;
            queue.push_back(i);
        }
    while (!queue.empty()) {
        const size_t i = queue.front();
        queue.pop_front();
        const int y = static_cast<int>(i / W), xx = static_cast<int>(i % W);
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int ny = y + dy, nx = xx + dx;
                if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                const size_t j = static_cast<size_t>(ny) * W + nx;
                if (cls[j] == 1 && out[j] == 0.0f) {
                    out[j] = 1.0f;
                    queue.push_back(j);
                }
            }
    }
    return {std::move(mask), low, high};
}

// Region-split stereo metrics. The scalar region EPEs divide the masked error
// sums by the region pixel counts so the weighted decomposition
//   n_high*epe_high + n_low*epe_low = n*epe_total
// holds exactly. D1 uses the KITTI definition (>3 px and >5% of gt).
inline FrequencyMetrics epe_split(const Tensor<float>& pred, const Tensor<float>& gt,
                                  const FrequencyMask& fmask,
                                  const Tensor<float>& valid = {}) {
    if (pred.shape() != gt.shape() || pred.shape() != fmask.mask.shape())
        throw DimensionError("epe_split: pred/gt/mask shapes must match");
    const long n = pred.numel();
    double sum_total = 0, sum_high = 0, sum_low = 0;
    long n_valid = 0, n_high = 0, n_low = 0;
    long d1_cnt = 0, bad1 = 0, bad2 = 0, bad3 = 0;
    for (long i = 0; i < n; ++i) {
        if (valid.defined() && valid.data()[i] <= 0.5f) continue;
        const double e = std::abs(static_cast<double>(pred.data()[i]) - gt.data()[i]);
        ++n_valid;
        sum_total += e;
        if (fmask.mask.data()[i] > 0.5f) {
            ++n_high;
            sum_high += e;
        } else {
            ++n_low;
            sum_low += e;
        }
        if (e > 3.0 && e > 0.05 * gt.data()[i]) ++d1_cnt;
        if (e > 1.0) ++bad1;
        if (e > 2.0) ++bad2;
        if (e > 3.0) ++bad3;
    }
    if (n_valid == 0) throw ValueError("epe_split: no valid pixels");
    FrequencyMetrics m;
    m.epe_total = sum_total / n_valid;
    m.epe_high = n_high ? sum_high / n_high : 0;
    m.epe_low = n_low ? sum_low / n_low : 0;
    m.n_high = n_high;
    m.n_low = n_low;
    m.d1 = 100.0 * d1_cnt / n_valid;
    m.bad1 = 100.0 * bad1 / n_valid;
    m.bad2 = 100.0 * bad2 / n_valid;
    m.bad3 = 100.0 * bad3 / n_valid;
    return m;
}

// Per-iteration trace rows for the frequency-convergence measurement.
// CSV schema: header `k,epe_total,epe_high,epe_low`, 6-decimal fixed point.
inline std::string convergence_trace_csv(const std::vector<Tensor<float>>& per_iter_pred,
                                         const Tensor<float>& gt, const FrequencyMask& fmask,
                                         const Tensor<float>& valid = {}) {
    if (per_iter_pred.empty()) throw ValueError("convergence_trace: empty prediction list");
    std::string csv = "k,epe_total,epe_high,epe_low\n";
    char line[128];
    for (size_t k = 0; k < per_iter_pred.size(); ++k) {
        const FrequencyMetrics m = epe_split(per_iter_pred[k], gt, fmask, valid);
        std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f\n", k + 1, m.epe_total,
                      m.epe_high, m.epe_low);
        csv += line;
    }
    return csv;
}

} // namespace ws
