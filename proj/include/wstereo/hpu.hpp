#pragma once

#include <string>

#include "wstereo/backbone.hpp"
#include "wstereo/config.hpp"
#include "wstereo/correlation.hpp"
#include "wstereo/errors.hpp"
#include "wstereo/param_store.hpp"
#include "wstereo/tensor.hpp"

namespace ws {

// State carried across update iterations. fh0 holds the extractor's
// high-frequency features and is never written after construction; adapted
// copies produced by the IFA are iteration-local.
template <class T>
struct HpuState {
    MultiScaleFeatures<T> hidden; // F_l at 1/4, 1/8, 1/16, values in (-1,1)
    MultiScaleFeatures<T> fh0;    // preserved F_h
    Tensor<T> d;                  // [N,1,H4,W4] disparity at 1/4
    int k = 0;                    // iterations applied
};

// ---- attention modules ----

// Channel attention from spatially pooled features:
//   A_L = sigmoid(ReLU(W1 GMP(fl)) + ReLU(W2 GAP(fl))), output [N,C,1,1].
template <class T>
void init_lsa(ParameterStore<T>& ps, Rng& rng, const std::string& prefix, int c) {
    nn::add_conv(ps, rng, prefix + ".w1", c, c, 1);
    nn::add_conv(ps, rng, prefix + ".w2", c, c, 1);
}

template <class T>
Tensor<T> lsa(const ParameterStore<T>& ps, const std::string& prefix, const Tensor<T>& fl) {
    Tensor<T> zmax = relu(conv2d(global_pool(PoolKind::Max, PoolAxis::Spatial, fl),
                                 ps.get(prefix + ".w1.w"), ps.get(prefix + ".w1.b"), 1, 0));
    Tensor<T> zavg = relu(conv2d(global_pool(PoolKind::Avg, PoolAxis::Spatial, fl),
                                 ps.get(prefix + ".w2.w"), ps.get(prefix + ".w2.b"), 1, 0));
    return sigmoid(add(zmax, zavg));
}

// Spatial attention: per-pixel channel max/mean, 2-channel concat, 7x7 conv,
// sigmoid; output [N,1,H,W]. The alternative "spatial" pooling reading pools
// over space instead (output [N,1,1,1]); selected via config.
template <class T>
void init_hsa(ParameterStore<T>& ps, Rng& rng, const std::string& prefix, int c,
              const std::string& pooling) {
    const int cin = pooling == "channel" ? 2 : 2 * c;
    nn::add_conv(ps, rng, prefix + ".w3", cin, 1, 7);
}

template <class T>
Tensor<T> hsa(const ParameterStore<T>& ps, const std::string& prefix, const Tensor<T>& fh,
              const std::string& pooling = "channel") {
    Tensor<T> zmax, zavg;
    if (pooling == "channel") {
        zmax = global_pool(PoolKind::Max, PoolAxis::Channel, fh);
        zavg = global_pool(PoolKind::Avg, PoolAxis::Channel, fh);
    } else {
        zmax = global_pool(PoolKind::Max, PoolAxis::Spatial, fh);
        zavg = global_pool(PoolKind::Avg, PoolAxis::Spatial, fh);
    }
    Tensor<T> z = concat_channels<T>({zmax, zavg});
    return sigmoid(conv2d(z, ps.get(prefix + ".w3.w"), ps.get(prefix + ".w3.b"), 1, 3));
}

// ---- Iterative Frequency Adapter ----
// Alternating rounds starting from the preserved features: odd rounds gate
// F_h by LSA(F_l), even rounds gate F_l by HSA(F_h).
template <class T>
struct IfaResult {
    Tensor<T> fh, fl;
};

template <class T>
IfaResult<T> ifa(const ParameterStore<T>& ps, const std::string& prefix, const Tensor<T>& fh0,
                 const Tensor<T>& fl0, int n_j, const std::string& hsa_pooling = "channel") {
    if (n_j < 1) throw ConfigError("ifa: n_j must be at least 1");
    Tensor<T> fh = fh0;
    Tensor<T> fl = fl0;
    for (int j = 1; j <= n_j; ++j) {
        if (j % 2 == 1)
            fh = mul(lsa(ps, prefix + ".lsa", fl), fh);
        else
            fl = mul(hsa(ps, prefix + ".hsa", fh, hsa_pooling), fl);
    }
    return {std::move(fh), std::move(fl)};
}

// ---- HP-LSTM cell ----
// Gates from concat(hidden, x); the cell state injects the adapted
// high-frequency features through the forget gate:
//   c = f * fh + i * g,  h' = o * tanh(c).
template <class T>
void init_hp_lstm(ParameterStore<T>& ps, Rng& rng, const std::string& prefix, int c_hidden,
                  int c_x) {
    const int cin = c_hidden + c_x;
    nn::add_conv(ps, rng, prefix + ".w_i", cin, c_hidden, 3);
    nn::add_conv(ps, rng, prefix + ".w_f", cin, c_hidden, 3);
    nn::add_conv(ps, rng, prefix + ".w_g", cin, c_hidden, 3);
    nn::add_conv(ps, rng, prefix + ".w_o", cin, c_hidden, 3);
}

template <class T>
Tensor<T> hp_lstm_step(const ParameterStore<T>& ps, const std::string& prefix,
                       const Tensor<T>& hidden, const Tensor<T>& fh_adapted,
                       const Tensor<T>& x) {
    if (hidden.shape() != fh_adapted.shape())
        throw DimensionError("hp_lstm_step: hidden and fh_adapted must share a shape");
    Tensor<T> hx = concat_channels<T>({hidden, x});
    Tensor<T> i = sigmoid(nn::conv(ps, prefix + ".w_i", hx));
    Tensor<T> f = sigmoid(nn::conv(ps, prefix + ".w_f", hx));
    Tensor<T> g = tanh_op(nn::conv(ps, prefix + ".w_g", hx));
    Tensor<T> o = sigmoid(nn::conv(ps, prefix + ".w_o", hx));
    Tensor<T> c = add(mul(f, fh_adapted), mul(i, g));
    return mul(o, tanh_op(c));
}

// ---- ConvGRU cell (Algorithm 1 baseline) ----

template <class T>
void init_conv_gru(ParameterStore<T>& ps, Rng& rng, const std::string& prefix, int c_hidden,
                   int c_x) {
    const int cin = c_hidden + c_x;
    nn::add_conv(ps, rng, prefix + ".w_z", cin, c_hidden, 3);
    nn::add_conv(ps, rng, prefix + ".w_r", cin, c_hidden, 3);
    nn::add_conv(ps, rng, prefix + ".w_q", cin, c_hidden, 3);
}

template <class T>
Tensor<T> conv_gru_step(const ParameterStore<T>& ps, const std::string& prefix,
                        const Tensor<T>& hidden, const Tensor<T>& x) {
    Tensor<T> hx = concat_channels<T>({hidden, x});
    Tensor<T> z = sigmoid(nn::conv(ps, prefix + ".w_z", hx));
    Tensor<T> r = sigmoid(nn::conv(ps, prefix + ".w_r", hx));
    Tensor<T> q = tanh_op(nn::conv(ps, prefix + ".w_q", concat_channels<T>({mul(r, hidden), x})));
    // h' = (1-z) * h + z * q
    Tensor<T> one_minus_z = add_scalar(scale(z, T(-1)), T(1));
    return add(mul(one_minus_z, hidden), mul(z, q));
}

// ---- motion input: x_k = [Enc_g(L(C,d)), Enc_d(d), d] ----

template <class T>
void init_motion(ParameterStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    const int corr_ch = cfg.pyramid_levels * (2 * cfg.lookup_radius + 1);
    const int mc = cfg.motion_channels;
    nn::add_conv(ps, rng, "motion.g1", corr_ch, mc, 1);
    nn::add_conv(ps, rng, "motion.g2", mc, mc, 3);
    nn::add_conv(ps, rng, "motion.d1", 1, mc, 3);
    nn::add_conv(ps, rng, "motion.d2", mc, mc, 3);
}

inline int motion_channels(const ModelConfig& cfg) {
    return 2 * cfg.motion_channels + 1;
}

template <class T>
Tensor<T> build_motion_input(const ParameterStore<T>& ps, const CorrelationVolume<T>& vol,
                             const Tensor<T>& d, const ModelConfig& cfg) {
    Tensor<T> corr = lookup(vol, d, cfg.lookup_radius);
    Tensor<T> g = relu(nn::conv(ps, "motion.g1", corr, 1, 0));
    g = relu(nn::conv(ps, "motion.g2", g));
    Tensor<T> e = relu(nn::conv(ps, "motion.d1", d));
    e = relu(nn::conv(ps, "motion.d2", e));
    return concat_channels<T>({g, e, d});
}

// ---- decoder head D: hidden -> delta d ----

template <class T>
void init_decoder(ParameterStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    nn::add_conv(ps, rng, "dec.c1", cfg.ctx_channels, 32, 3);
    // Final layer starts at zero so the first prediction is delta_d = 0.
    nn::add_conv(ps, rng, "dec.c2", 32, 1, 3, /*zero_weights=*/true);
}

template <class T>
Tensor<T> decode_delta(const ParameterStore<T>& ps, const Tensor<T>& hidden4) {
    return nn::conv(ps, "dec.c2", relu(nn::conv(ps, "dec.c1", hidden4)));
}

// ---- full HPU parameter set and one update iteration ----

template <class T>
void init_hpu(ParameterStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    const int c = cfg.ctx_channels;
    for (const char* s : {"hpu.s16", "hpu.s8", "hpu.s4"}) {
        init_lsa(ps, rng, std::string(s) + ".lsa", c);
        init_hsa(ps, rng, std::string(s) + ".hsa", c, cfg.hsa_pooling);
    }
    init_hp_lstm(ps, rng, "hpu.s16.lstm", c, c);
    init_hp_lstm(ps, rng, "hpu.s8.lstm", c, c);
    init_hp_lstm(ps, rng, "hpu.s4.lstm", c, c + motion_channels(cfg));
    init_motion(ps, rng, cfg);
    init_decoder(ps, rng, cfg);
}

// One iteration k: coarse-to-fine over 1/16, 1/8, 1/4. Each scale runs the
// IFA from the preserved fh0, then an HP-LSTM step; only 1/4 sees the
// correlation lookup and decodes delta_d.
template <class T>
std::pair<HpuState<T>, Tensor<T>> hpu_update(const HpuState<T>& state,
                                             const CorrelationVolume<T>& vol,
                                             const ParameterStore<T>& ps,
                                             const ModelConfig& cfg) {
    const std::string& hp = cfg.hsa_pooling;
    HpuState<T> next;
    next.fh0 = state.fh0;

    IfaResult<T> a16 = ifa(ps, "hpu.s16", state.fh0.f16, state.hidden.f16, cfg.n_j, hp);
    Tensor<T> x16 = resize_bilinear(state.hidden.f8, 0.5);
    next.hidden.f16 = hp_lstm_step(ps, "hpu.s16.lstm", a16.fl, a16.fh, x16);

    IfaResult<T> a8 = ifa(ps, "hpu.s8", state.fh0.f8, state.hidden.f8, cfg.n_j, hp);
    Tensor<T> x8 = resize_bilinear(next.hidden.f16, 2.0);
    next.hidden.f8 = hp_lstm_step(ps, "hpu.s8.lstm", a8.fl, a8.fh, x8);

    IfaResult<T> a4 = ifa(ps, "hpu.s4", state.fh0.f4, state.hidden.f4, cfg.n_j, hp);
    Tensor<T> motion = build_motion_input(ps, vol, state.d, cfg);
    Tensor<T> x4 = concat_channels<T>({resize_bilinear(next.hidden.f8, 2.0), motion});
    next.hidden.f4 = hp_lstm_step(ps, "hpu.s4.lstm", a4.fl, a4.fh, x4);

    Tensor<T> delta = decode_delta(ps, next.hidden.f4);
    next.d = add(state.d, delta);
    next.k = state.k + 1;
    return {std::move(next), std::move(delta)};
}

// GRU baseline parameters and update (no IFA, no fh0).
template <class T>
void init_gru_update(ParameterStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    const int c = cfg.ctx_channels;
    init_conv_gru(ps, rng, "gru.s16", c, c);
    init_conv_gru(ps, rng, "gru.s8", c, c);
    init_conv_gru(ps, rng, "gru.s4", c, c + motion_channels(cfg));
    init_motion(ps, rng, cfg);
    init_decoder(ps, rng, cfg);
}

template <class T>
std::pair<HpuState<T>, Tensor<T>> gru_update(const HpuState<T>& state,
                                             const CorrelationVolume<T>& vol,
                                             const ParameterStore<T>& ps,
                                             const ModelConfig& cfg) {
    HpuState<T> next;
    Tensor<T> x16 = resize_bilinear(state.hidden.f8, 0.5);
    next.hidden.f16 = conv_gru_step(ps, "gru.s16", state.hidden.f16, x16);
    Tensor<T> x8 = resize_bilinear(next.hidden.f16, 2.0);
    next.hidden.f8 = conv_gru_step(ps, "gru.s8", state.hidden.f8, x8);
    Tensor<T> motion = build_motion_input(ps, vol, state.d, cfg);
    Tensor<T> x4 = concat_channels<T>({resize_bilinear(next.hidden.f8, 2.0), motion});
    next.hidden.f4 = conv_gru_step(ps, "gru.s4", state.hidden.f4, x4);
    Tensor<T> delta = decode_delta(ps, next.hidden.f4);
    next.d = add(state.d, delta);
    next.k = state.k + 1;
    return {std::move(next), std::move(delta)};
}

} // namespace ws
