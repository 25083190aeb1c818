#pragma once

#include <array>
#include <vector>

#include "wstereo/errors.hpp"
#include "wstereo/tensor.hpp"

namespace ws {

// Orthonormal 2D Haar transform. Per 2x2 block [[a,b],[c,d]]:
//   LL = (a+b+c+d)/2   HL = (-a+b-c+d)/2   (horizontal detail)
//   LH = (-a-b+c+d)/2  HH = (a-b-c+d)/2
// The 1/2 factor makes the transform orthonormal, so energy is conserved
// exactly and the inverse uses the same coefficients.

template <class T>
struct Subbands {
    Tensor<T> ll, lh, hl, hh;
};

template <class T>
Subbands<T> dwt2(const Tensor<T>& x) {
    if (x.ndim() != 4) throw DimensionError("dwt2: input must be N×C×H×W");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) throw DimensionError("dwt2: H and W must be even");
    const int Ho = H / 2, Wo = W / 2;
    const long planes = static_cast<long>(N) * C;
    std::vector<T> ll(planes * Ho * Wo), lh(ll.size()), hl(ll.size()), hh(ll.size());
    const auto& xd = x.data();
    for (long p = 0; p < planes; ++p) {
        const long in_base = p * H * W;
        const long out_base = p * Ho * Wo;
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                const T a = xd[in_base + static_cast<long>(2 * i) * W + 2 * j];
                const T b = xd[in_base + static_cast<long>(2 * i) * W + 2 * j + 1];
                const T c = xd[in_base + static_cast<long>(2 * i + 1) * W + 2 * j];
                const T d = xd[in_base + static_cast<long>(2 * i + 1) * W + 2 * j + 1];
                const long o = out_base + static_cast<long>(i) * Wo + j;
                ll[o] = (a + b + c + d) / T(2);
                hl[o] = (-a + b - c + d) / T(2);
                lh[o] = (-a - b + c + d) / T(2);
                hh[o] = (a - b - c + d) / T(2);
            }
    }
    const std::vector<int> shape{N, C, Ho, Wo};
    return {Tensor<T>(shape, std::move(ll)), Tensor<T>(shape, std::move(lh)),
            Tensor<T>(shape, std::move(hl)), Tensor<T>(shape, std::move(hh))};
}

template <class T>
Tensor<T> idwt2(const Tensor<T>& ll, const Tensor<T>& lh, const Tensor<T>& hl,
                const Tensor<T>& hh) {
    for (const Tensor<T>* t : {&lh, &hl, &hh})
        if (t->shape() != ll.shape())
            throw DimensionError("idwt2: sub-bands must share one shape");
    if (ll.ndim() != 4) throw DimensionError("idwt2: sub-bands must be N×C×H×W");
    const int N = ll.dim(0), C = ll.dim(1), Hs = ll.dim(2), Ws = ll.dim(3);
    const int H = Hs * 2, W = Ws * 2;
    const long planes = static_cast<long>(N) * C;
    std::vector<T> out(planes * H * W);
    const auto& vll = ll.data();
    const auto& vlh = lh.data();
    const auto& vhl = hl.data();
    const auto& vhh = hh.data();
    for (long p = 0; p < planes; ++p) {
        const long in_base = p * Hs * Ws;
        const long out_base = p * H * W;
        for (int i = 0; i < Hs; ++i)
            for (int j = 0; j < Ws; ++j) {
                const long o = in_base + static_cast<long>(i) * Ws + j;
                const T s = vll[o], x = vhl[o], y = vlh[o], z = vhh[o];
                out[out_base + static_cast<long>(2 * i) * W + 2 * j] = (s - x - y + z) / T(2);
                out[out_base + static_cast<long>(2 * i) * W + 2 * j + 1] =
                    (s + x - y - z) / T(2);
                out[out_base + static_cast<long>(2 * i + 1) * W + 2 * j] =
                    (s - x + y - z) / T(2);
                out[out_base + static_cast<long>(2 * i + 1) * W + 2 * j + 1] =
                    (s + x + y + z) / T(2);
            }
    }
    return Tensor<T>({N, C, H, W}, std::move(out));
}

// Iterated decomposition: level i is the DWT of level i-1's LL band.
template <class T>
struct WaveletPyramid {
    std::vector<Subbands<T>> levels; // levels[i-1] holds level i
    int n_levels = 0;
};

template <class T>
WaveletPyramid<T> build_pyramid(const Tensor<T>& image, int n_levels = 3) {
    if (n_levels < 1) throw ConfigError("build_pyramid: need at least one level");
    const int H = image.dim(2), W = image.dim(3);
    const int divisor = 1 << n_levels;
    if (H % divisor != 0 || W % divisor != 0)
        throw DimensionError("build_pyramid: dims " + std::to_string(H) + "x" +
                             std::to_string(W) + " not divisible by 2^" +
                             std::to_string(n_levels) + "; pad to a multiple of " +
                             std::to_string(divisor));
    WaveletPyramid<T> pyr;
    pyr.n_levels = n_levels;
    Tensor<T> cur = image;
    for (int i = 0; i < n_levels; ++i) {
        pyr.levels.push_back(dwt2(cur));
        cur = pyr.levels.back().ll;
    }
    return pyr;
}

// Channel concat of the detail bands of one level, in HL, LH, HH order.
template <class T>
Tensor<T> concat_high(const WaveletPyramid<T>& pyr, int level) {
    if (level < 1 || level > pyr.n_levels)
        throw RangeError("concat_high: level " + std::to_string(level) + " out of 1.." +
                         std::to_string(pyr.n_levels));
    const auto& sb = pyr.levels[level - 1];
    return concat_channels<T>({sb.hl, sb.lh, sb.hh});
}

} // namespace ws
