#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "wstereo/backbone.hpp"
#include "wstereo/config.hpp"
#include "wstereo/correlation.hpp"
#include "wstereo/hpu.hpp"
#include "wstereo/param_store.hpp"
#include "wstereo/tensor.hpp"
#include "wstereo/wavelet.hpp"

namespace ws {

template <class T>
struct InferenceResult {
    std::vector<Tensor<T>> disparities; // full resolution, one per iteration
    double update_seconds = 0;          // wall clock spent in the update loop
    double per_iter_seconds = 0;
};

template <class T>
void init_model(ParameterStore<T>& ps, const ModelConfig& cfg, bool gru_baseline = false) {
    Rng rng(cfg.seed);
    init_matching(ps, rng, cfg);
    init_low(ps, rng, cfg, gru_baseline ? 0 : 1);
    if (gru_baseline) {
        init_gru_update(ps, rng, cfg);
    } else {
        init_high(ps, rng, cfg);
        init_hpu(ps, rng, cfg);
    }
}

namespace detail {

// Map 0..255 images to [-1, 1].
template <class T>
Tensor<T> normalize_image(const Tensor<T>& img) {
    return add_scalar(scale(img, T(1.0 / 127.5)), T(-1));
}

template <class T, class F>
auto stage(const char* name, F&& fn) {
    try {
        return fn();
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(name) + ": " + e.what());
    }
}

// Quarter-res disparity to full res: bilinear x4 with x4 value scaling.
template <class T>
Tensor<T> upsample_disparity(const Tensor<T>& d_quarter) {
    return scale(resize_bilinear(d_quarter, 4.0), T(4));
}

} // namespace detail

// Algorithm-2 forward pass: wavelet decomposition of the left image, the
// three extractors, correlation volume, then n_k HPU iterations.
template <class T>
InferenceResult<T> forward(const Tensor<T>& left, const Tensor<T>& right,
                           const ParameterStore<T>& ps, const ModelConfig& cfg, int n_k) {
    if (left.ndim() != 4 || left.shape() != right.shape())
        throw DimensionError("forward: images must share an N×3×H×W shape");
    const int H = left.dim(2), W = left.dim(3);
    if (H % 16 != 0 || W % 16 != 0)
        throw DimensionError("forward: H and W must be divisible by 16");

    Tensor<T> nl = detail::normalize_image(left);
    Tensor<T> nr = detail::normalize_image(right);
    Tensor<T> fl = detail::stage<T>("matching_features", [&] { return extract_matching(ps, nl); });
    Tensor<T> fr = detail::stage<T>("matching_features", [&] { return extract_matching(ps, nr); });
    WaveletPyramid<T> pyr =
        detail::stage<T>("wavelet_pyramid", [&] { return build_pyramid(nl, cfg.n_i); });
    HpuState<T> state;
    state.hidden =
        detail::stage<T>("context_features", [&] { return extract_low(ps, pyr.levels[0].ll, 1); });
    state.fh0 =
        detail::stage<T>("high_frequency_features", [&] { return extract_high(ps, pyr); });
    CorrelationVolume<T> vol = detail::stage<T>(
        "correlation_volume", [&] { return build_volume(fl, fr, cfg.pyramid_levels); });
    state.d = Tensor<T>::zeros({left.dim(0), 1, H / 4, W / 4});

    InferenceResult<T> result;
    const auto t0 = std::chrono::steady_clock::now();
    for (int k = 1; k <= n_k; ++k) {
        auto [next, delta] =
            detail::stage<T>("hpu_update", [&] { return hpu_update(state, vol, ps, cfg); });
        state = std::move(next);
        result.disparities.push_back(detail::upsample_disparity(state.d));
    }
    result.update_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.per_iter_seconds = result.update_seconds / n_k;
    return result;
}

// Algorithm-1 baseline: no wavelet decomposition, context from the raw left
// image, ConvGRU updates.
template <class T>
InferenceResult<T> forward_gru_baseline(const Tensor<T>& left, const Tensor<T>& right,
                                        const ParameterStore<T>& ps, const ModelConfig& cfg,
                                        int n_k) {
    if (left.ndim() != 4 || left.shape() != right.shape())
        throw DimensionError("forward: images must share an N×3×H×W shape");
    const int H = left.dim(2), W = left.dim(3);
    if (H % 16 != 0 || W % 16 != 0)
        throw DimensionError("forward: H and W must be divisible by 16");

    Tensor<T> nl = detail::normalize_image(left);
    Tensor<T> nr = detail::normalize_image(right);
    Tensor<T> fl = detail::stage<T>("matching_features", [&] { return extract_matching(ps, nl); });
    Tensor<T> fr = detail::stage<T>("matching_features", [&] { return extract_matching(ps, nr); });
    HpuState<T> state;
    state.hidden =
        detail::stage<T>("context_features", [&] { return extract_low(ps, nl, 0); });
    CorrelationVolume<T> vol = detail::stage<T>(
        "correlation_volume", [&] { return build_volume(fl, fr, cfg.pyramid_levels); });
    state.d = Tensor<T>::zeros({left.dim(0), 1, H / 4, W / 4});

    InferenceResult<T> result;
    const auto t0 = std::chrono::steady_clock::now();
    for (int k = 1; k <= n_k; ++k) {
        auto [next, delta] =
            detail::stage<T>("gru_update", [&] { return gru_update(state, vol, ps, cfg); });
        state = std::move(next);
        result.disparities.push_back(detail::upsample_disparity(state.d));
    }
    result.update_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.per_iter_seconds = result.update_seconds / n_k;
    return result;
}

// Progressively weighted L1: sum_k gamma^(n_k - k) * mean_valid |d_k - d_gt|.
// The weight exponent counts from the last iteration, so later predictions
// weigh more; the mean (not sum) over pixels keeps magnitudes
// resolution-independent.
template <class T>
Tensor<T> loss(const InferenceResult<T>& result, const Tensor<T>& d_gt, double gamma = 0.9,
               const Tensor<T>& valid = {}) {
    if (result.disparities.empty()) throw ValueError("loss: empty prediction list");
    const int n_k = static_cast<int>(result.disparities.size());
    Tensor<T> mask = valid.defined()
                         ? valid
                         : Tensor<T>::full(result.disparities[0].shape(), T(1));
    T count = 0;
    for (const T& v : mask.data()) count += v;
    if (count <= T(0)) throw ValueError("loss: no valid pixels");

    Tensor<T> total;
    for (int k = 1; k <= n_k; ++k) {
        const T weight = static_cast<T>(std::pow(gamma, n_k - k));
        Tensor<T> err = abs_op(sub(result.disparities[k - 1], d_gt));
        Tensor<T> term = scale(sum(mul(err, mask)), weight / count);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template <class T>
struct TrainSample {
    Tensor<T> left, right; // [1,3,H,W]
    Tensor<T> gt;          // [1,1,H,W] full-res disparity
    Tensor<T> valid;       // [1,1,H,W]
};

// Plain SGD with elementwise gradient clipping to [-1, 1]. One sample per
// step, cycling through the dataset. Returns the per-step loss curve.
template <class T>
std::vector<double> train_toy(std::vector<TrainSample<T>>& samples, ParameterStore<T>& ps,
                              const ModelConfig& cfg, bool gru_baseline = false) {
    if (samples.empty()) throw ValueError("train_toy: empty dataset");
    std::vector<double> curve;
    curve.reserve(cfg.steps);
    for (int step = 0; step < cfg.steps; ++step) {
        auto& s = samples[step % samples.size()];
        double loss_value = 0;
        try {
            InferenceResult<T> result =
                gru_baseline ? forward_gru_baseline(s.left, s.right, ps, cfg, cfg.n_k_train)
                             : forward(s.left, s.right, ps, cfg, cfg.n_k_train);
            Tensor<T> l = loss(result, s.gt, cfg.gamma, s.valid);
            loss_value = static_cast<double>(l.item());
            if (!std::isfinite(loss_value))
                throw TrainingError("divergence at step " + std::to_string(step));
            backward(l);
        } catch (const NumericalError& e) {
            throw TrainingError("divergence at step " + std::to_string(step) + ": " + e.what());
        }
        for (size_t i = 0; i < ps.size(); ++i) {
            auto& p = ps.at(i);
            if (!p.has_grad()) continue;
            // Gradient clipping to [-1, 1], then the SGD step.
            auto impl = p.impl();
            for (auto& g : impl->grad) g = std::min(T(1), std::max(T(-1), g));
            p.sgd_step(static_cast<T>(cfg.lr));
        }
        ps.zero_grads();
        curve.push_back(loss_value);
    }
    return curve;
}

} // namespace ws
