#pragma once

#include <cmath>
#include <vector>

#include "wstereo/errors.hpp"
#include "wstereo/tensor.hpp"

namespace ws {

// All-pairs correlation along epipolar rows plus a pooled pyramid.
// Level 0: C[n,h,w,w'] = <fL(h,w), fR(h,w')> / sqrt(Cf).
// Level p+1 is a 1D average-pool (kernel 2, stride 2) of level p over w'.
template <class T>
struct CorrelationVolume {
    std::vector<Tensor<T>> levels; // [N,H,W,W/2^p]
    int feature_channels = 0;
};

template <class T>
CorrelationVolume<T> build_volume(const Tensor<T>& fl, const Tensor<T>& fr,
                                  int pyramid_levels = 4) {
    if (fl.ndim() != 4 || fl.shape() != fr.shape())
        throw DimensionError("build_volume: feature maps must share an N×C×H×W shape");
    if (pyramid_levels < 1) throw ConfigError("build_volume: need at least one level");
    const int N = fl.dim(0), C = fl.dim(1), H = fl.dim(2), W = fl.dim(3);
    const T inv_sqrt_c = T(1) / std::sqrt(static_cast<T>(C));

    std::vector<T> out(static_cast<long>(N) * H * W * W);
    const auto& a = fl.data();
    const auto& b = fr.data();
    parallel_for(static_cast<long>(N) * H, [&](long nh) {
        const int n = static_cast<int>(nh / H);
        const int h = static_cast<int>(nh % H);
        for (int w = 0; w < W; ++w)
            for (int wp = 0; wp < W; ++wp) {
                T acc = 0;
                for (int c = 0; c < C; ++c)
                    acc += a[((static_cast<long>(n) * C + c) * H + h) * W + w] *
                           b[((static_cast<long>(n) * C + c) * H + h) * W + wp];
                out[((nh * W) + w) * W + wp] = acc * inv_sqrt_c;
            }
    });

    auto fli = fl.impl();
    auto fri = fr.impl();
    auto backward = [fli, fri, N, C, H, W, inv_sqrt_c](typename Tensor<T>::Impl& self) {
        const bool ga = fli->requires_grad || fli->backward_fn;
        const bool gb = fri->requires_grad || fri->backward_fn;
        if (ga) fli->ensure_grad();
        if (gb) fri->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    for (int wp = 0; wp < W; ++wp) {
                        const T g =
                            self.grad[(((static_cast<long>(n) * H + h) * W) + w) * W + wp] *
                            inv_sqrt_c;
                        if (g == T(0)) continue;
                        for (int c = 0; c < C; ++c) {
                            const long il = ((static_cast<long>(n) * C + c) * H + h) * W + w;
                            const long ir = ((static_cast<long>(n) * C + c) * H + h) * W + wp;
                            if (ga) fli->grad[il] += g * fri->data[ir];
                            if (gb) fri->grad[ir] += g * fli->data[il];
                        }
                    }
    };
    CorrelationVolume<T> vol;
    vol.feature_channels = C;
    vol.levels.push_back(
        make_op<T>({N, H, W, W}, std::move(out), {fl, fr}, std::move(backward), "correlate"));
    for (int p = 1; p < pyramid_levels; ++p)
        vol.levels.push_back(avgpool_last(vol.levels.back()));
    return vol;
}

// Windowed lookup: for each pixel and pyramid level p, sample the volume row
// at (w - d)/2^p + o for o in [-r, r] with 1D linear interpolation, clamped at
// the borders. Output channels are ordered level-major: P*(2r+1) total.
template <class T>
Tensor<T> lookup(const CorrelationVolume<T>& vol, const Tensor<T>& d, int r = 4) {
    if (r < 0) throw ConfigError("lookup: radius must be non-negative");
    if (d.ndim() != 4 || d.dim(1) != 1)
        throw DimensionError("lookup: disparity must be [N,1,H,W]");
    for (const T& v : d.data())
        if (std::isnan(static_cast<double>(v))) throw ValueError("lookup: NaN disparity");
    const int P = static_cast<int>(vol.levels.size());
    const int N = d.dim(0), H = d.dim(2), W = d.dim(3);
    const int win = 2 * r + 1;
    const int Cout = P * win;

    std::vector<T> out(static_cast<long>(N) * Cout * H * W);
    const auto& dd = d.data();
    for (int p = 0; p < P; ++p) {
        const auto& lv = vol.levels[p].data();
        const int L = vol.levels[p].dim(3);
        const T inv = T(1) / static_cast<T>(1 << p);
        for (int n = 0; n < N; ++n)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const long row = ((static_cast<long>(n) * H + h) * W + w) * L;
                    const T center = (static_cast<T>(w) - dd[(static_cast<long>(n) * H + h) * W + w]) * inv;
                    for (int o = -r; o <= r; ++o) {
                        T pos = center + static_cast<T>(o);
                        if (pos < T(0)) pos = T(0);
                        if (pos > static_cast<T>(L - 1)) pos = static_cast<T>(L - 1);
                        const int i0 = std::min(static_cast<int>(std::floor(pos)), L - 1);
                        const int i1 = std::min(i0 + 1, L - 1);
                        const T f = pos - static_cast<T>(i0);
                        const long oc = static_cast<long>(p) * win + (o + r);
                        out[((static_cast<long>(n) * Cout + oc) * H + h) * W + w] =
                            (T(1) - f) * lv[row + i0] + f * lv[row + i1];
                    }
                }
    }

    std::vector<Tensor<T>> inputs = vol.levels;
    inputs.push_back(d);
    std::vector<std::shared_ptr<typename Tensor<T>::Impl>> level_impls;
    std::vector<int> level_len;
    for (const auto& l : vol.levels) {
        level_impls.push_back(l.impl());
        level_len.push_back(l.dim(3));
    }
    auto di = d.impl();
    auto backward = [level_impls, level_len, di, P, N, H, W, r,
                     win](typename Tensor<T>::Impl& self) {
        const bool gd = di->requires_grad || di->backward_fn;
        if (gd) di->ensure_grad();
        const int Cout = P * win;
        for (int p = 0; p < P; ++p) {
            auto& li = level_impls[p];
            const bool gl = li->requires_grad || li->backward_fn;
            if (gl) li->ensure_grad();
            if (!gl && !gd) continue;
            const int L = level_len[p];
            const T inv = T(1) / static_cast<T>(1 << p);
            for (int n = 0; n < N; ++n)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        const long row = ((static_cast<long>(n) * H + h) * W + w) * L;
                        const T center =
                            (static_cast<T>(w) - di->data[(static_cast<long>(n) * H + h) * W + w]) * inv;
                        for (int o = -r; o <= r; ++o) {
                            const T raw = center + static_cast<T>(o);
                            T pos = raw;
                            if (pos < T(0)) pos = T(0);
                            if (pos > static_cast<T>(L - 1)) pos = static_cast<T>(L - 1);
                            const int i0 = std::min(static_cast<int>(std::floor(pos)), L - 1);
                            const int i1 = std::min(i0 + 1, L - 1);
                            const T f = pos - static_cast<T>(i0);
                            const long oc = static_cast<long>(p) * win + (o + r);
                            const T g =
                                self.grad[((static_cast<long>(n) * Cout + oc) * H + h) * W + w];
                            if (g == T(0)) continue;
                            if (gl) {
                                li->grad[row + i0] += g * (T(1) - f);
                                li->grad[row + i1] += g * f;
                            }
                            // d-gradient vanishes where the sample is clamped.
                            if (gd && raw > T(0) && raw < static_cast<T>(L - 1))
                                di->grad[(static_cast<long>(n) * H + h) * W + w] +=
                                    g * (li->data[row + i1] - li->data[row + i0]) * (-inv);
                        }
                    }
        }
    };
    return make_op<T>({N, Cout, H, W}, std::move(out), inputs, std::move(backward), "lookup");
}

} // namespace ws
