#pragma once

#include <string>

#include "wstereo/config.hpp"
#include "wstereo/errors.hpp"
#include "wstereo/param_store.hpp"
#include "wstereo/tensor.hpp"
#include "wstereo/wavelet.hpp"

namespace ws {

template <class T>
struct MultiScaleFeatures {
    Tensor<T> f4, f8, f16; // 1/4, 1/8, 1/16 of the original image
};

namespace nn {

// Register a conv parameter pair. Weights are fan-in-scaled uniform
// (bound 1/sqrt(cin*k*k)), biases zero.
template <class T>
void add_conv(ParameterStore<T>& ps, Rng& rng, const std::string& name, int cin, int cout,
              int k, bool zero_weights = false) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
    Rng stream = rng.fork();
    Tensor<T> w = zero_weights ? Tensor<T>::zeros({cout, cin, k, k})
                               : Tensor<T>::randu({cout, cin, k, k}, stream, -bound, bound);
    ps.add(name + ".w", std::move(w));
    ps.add(name + ".b", Tensor<T>::zeros({cout}));
}

template <class T>
Tensor<T> conv(const ParameterStore<T>& ps, const std::string& name, const Tensor<T>& x,
               int stride = 1, int pad = 1) {
    return conv2d(x, ps.get(name + ".w"), ps.get(name + ".b"), stride, pad);
}

// Two 3x3 convs with an additive shortcut.
template <class T>
void add_residual(ParameterStore<T>& ps, Rng& rng, const std::string& name, int c) {
    add_conv(ps, rng, name + ".a", c, c, 3);
    add_conv(ps, rng, name + ".b", c, c, 3);
}

template <class T>
Tensor<T> residual(const ParameterStore<T>& ps, const std::string& name, const Tensor<T>& x) {
    Tensor<T> y = relu(conv(ps, name + ".a", x));
    y = conv(ps, name + ".b", y);
    return relu(add(x, y));
}

} // namespace nn

// ---- E_f: shared matching encoder, full res -> 1/4 ----

template <class T>
void init_matching(ParameterStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    const int cf = cfg.ef_channels;
    nn::add_conv(ps, rng, "ef.c1", 3, cf / 2, 3);
    nn::add_conv(ps, rng, "ef.c2", cf / 2, cf, 3);
    nn::add_residual(ps, rng, "ef.r1", cf);
    nn::add_conv(ps, rng, "ef.out", cf, cf, 1);
}

template <class T>
Tensor<T> extract_matching(const ParameterStore<T>& ps, const Tensor<T>& img) {
    if (img.dim(2) % 4 != 0 || img.dim(3) % 4 != 0)
        throw DimensionError("extract_matching: H and W must be divisible by 4");
    Tensor<T> x = relu(nn::conv(ps, "ef.c1", img, 2, 1));
    x = relu(nn::conv(ps, "ef.c2", x, 2, 1));
    x = nn::residual(ps, "ef.r1", x);
    return nn::conv(ps, "ef.out", x, 1, 0);
}

// ---- E_l: low-frequency context extractor ----
// Input is a low-frequency image; `input_scale_log2` says how far below full
// resolution it sits (1 for the level-1 LL band, 0 for the raw image in the
// GRU baseline). Outputs land at 1/4, 1/8, 1/16 of full resolution, tanh'd
// for hidden-state initialization.

template <class T>
void init_low(ParameterStore<T>& ps, Rng& rng, const ModelConfig& cfg, int input_scale_log2) {
    const int c = cfg.ctx_channels;
    if (input_scale_log2 == 0) nn::add_conv(ps, rng, "el.c0", 3, 3, 3);
    nn::add_conv(ps, rng, "el.c1", 3, c, 3);
    nn::add_residual(ps, rng, "el.r4", c);
    nn::add_conv(ps, rng, "el.d8", c, c, 3);
    nn::add_residual(ps, rng, "el.r8", c);
    nn::add_conv(ps, rng, "el.d16", c, c, 3);
    nn::add_residual(ps, rng, "el.r16", c);
    nn::add_conv(ps, rng, "el.o4", c, c, 3);
    nn::add_conv(ps, rng, "el.o8", c, c, 3);
    nn::add_conv(ps, rng, "el.o16", c, c, 3);
}

template <class T>
MultiScaleFeatures<T> extract_low(const ParameterStore<T>& ps, const Tensor<T>& low_img,
                                  int input_scale_log2 = 1) {
    if (input_scale_log2 != 0 && input_scale_log2 != 1)
        throw DimensionError("extract_low: input must be at full or half resolution");
    Tensor<T> x = low_img;
    if (input_scale_log2 == 0) x = relu(nn::conv(ps, "el.c0", x, 2, 1)); // full -> 1/2
    x = relu(nn::conv(ps, "el.c1", x, 2, 1));                            // 1/2 -> 1/4
    x = nn::residual(ps, "el.r4", x);
    Tensor<T> f4 = tanh_op(nn::conv(ps, "el.o4", x));
    x = relu(nn::conv(ps, "el.d8", x, 2, 1)); // 1/8
    x = nn::residual(ps, "el.r8", x);
    Tensor<T> f8 = tanh_op(nn::conv(ps, "el.o8", x));
    x = relu(nn::conv(ps, "el.d16", x, 2, 1)); // 1/16
    x = nn::residual(ps, "el.r16", x);
    Tensor<T> f16 = tanh_op(nn::conv(ps, "el.o16", x));
    return {std::move(f4), std::move(f8), std::move(f16)};
}

// ---- E_h: U-shaped high-frequency extractor ----
// Level-i detail bands (9 channels at 1/2^i) are injected additively at the
// encoder stage of matching resolution; the decoder fuses back up with skip
// connections. Outputs at 1/4, 1/8, 1/16.

template <class T>
void init_high(ParameterStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    const int c = cfg.ctx_channels;
    nn::add_conv(ps, rng, "eh.in1", 9, c, 3);
    nn::add_conv(ps, rng, "eh.in2", 9, c, 3);
    nn::add_conv(ps, rng, "eh.in3", 9, c, 3);
    nn::add_conv(ps, rng, "eh.d2", c, c, 3);
    nn::add_conv(ps, rng, "eh.d3", c, c, 3);
    nn::add_conv(ps, rng, "eh.d4", c, c, 3);
    nn::add_conv(ps, rng, "eh.u3", c, c, 3);
    nn::add_conv(ps, rng, "eh.u2", c, c, 3);
    nn::add_conv(ps, rng, "eh.o4", c, c, 3);
    nn::add_conv(ps, rng, "eh.o8", c, c, 3);
    nn::add_conv(ps, rng, "eh.o16", c, c, 3);
}

template <class T>
MultiScaleFeatures<T> extract_high(const ParameterStore<T>& ps, const WaveletPyramid<T>& pyr) {
    if (pyr.n_levels != 3)
        throw ConfigError("extract_high: level-to-scale wiring requires n_i = 3");
    Tensor<T> bands1 = concat_high(pyr, 1); // 1/2
    Tensor<T> bands2 = concat_high(pyr, 2); // 1/4
    Tensor<T> bands3 = concat_high(pyr, 3); // 1/8

    Tensor<T> e1 = relu(nn::conv(ps, "eh.in1", bands1));
    Tensor<T> e2 = relu(add(nn::conv(ps, "eh.d2", e1, 2, 1), nn::conv(ps, "eh.in2", bands2)));
    Tensor<T> e3 = relu(add(nn::conv(ps, "eh.d3", e2, 2, 1), nn::conv(ps, "eh.in3", bands3)));
    Tensor<T> e4 = relu(nn::conv(ps, "eh.d4", e3, 2, 1)); // 1/16 bottleneck

    Tensor<T> u3 = relu(add(nn::conv(ps, "eh.u3", resize_bilinear(e4, 2.0)), e3));
    Tensor<T> u2 = relu(add(nn::conv(ps, "eh.u2", resize_bilinear(u3, 2.0)), e2));

    return {nn::conv(ps, "eh.o4", u2), nn::conv(ps, "eh.o8", u3), nn::conv(ps, "eh.o16", e4)};
}

} // namespace ws
