#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "wstereo/errors.hpp"
#include "wstereo/parallel.hpp"
#include "wstereo/rng.hpp"

namespace ws {

// Dense N-dimensional tensor with reverse-mode autodiff. Images and features
// use N×C×H×W row-major layout. Tensors are immutable once they carry a
// gradient graph; ops return fresh tensors.
template <class T>
class Tensor {
public:
    struct Impl {
        std::vector<int> shape;
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
        bool backward_done = false;
        std::vector<std::shared_ptr<Impl>> parents;
        std::function<void(Impl&)> backward_fn;

        long numel() const {
            long n = 1;
            for (int d : shape) n *= d;
            return n;
        }
        void ensure_grad() {
            if (grad.empty()) grad.assign(data.size(), T(0));
        }
    };

    Tensor() = default;

    Tensor(std::vector<int> shape, std::vector<T> data, bool requires_grad = false)
        : impl_(std::make_shared<Impl>()) {
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
        if (impl_->numel() != static_cast<long>(impl_->data.size()))
            throw DimensionError("tensor data size does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) {
        long n = 1;
        for (int d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<T>(n, T(0)));
    }

    static Tensor full(std::vector<int> shape, T v) {
        long n = 1;
        for (int d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<T>(n, v));
    }

    static Tensor randu(std::vector<int> shape, Rng& rng, double lo, double hi) {
        long n = 1;
        for (int d : shape) n *= d;
        std::vector<T> data(n);
        for (long i = 0; i < n; ++i) data[i] = static_cast<T>(rng.uniform(lo, hi));
        return Tensor(std::move(shape), std::move(data));
    }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[i]; }
    long numel() const { return impl_->numel(); }
    const std::vector<T>& data() const { return impl_->data; }

    // Raw write access for construction of untracked tensors only.
    std::vector<T>& mutable_data() {
        if (impl_->requires_grad || impl_->backward_fn)
            throw GraphError("mutating a tracked tensor is not allowed");
        return impl_->data;
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) { impl_->requires_grad = b; }
    bool tracked() const { return impl_->requires_grad || static_cast<bool>(impl_->backward_fn); }

    bool has_grad() const { return !impl_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (impl_->grad.empty()) throw GraphError("gradient not populated");
        return impl_->grad;
    }
    void zero_grad() {
        impl_->grad.clear();
        impl_->backward_done = false;
    }

    // Value copy with no graph attached.
    Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

    T item() const {
        if (numel() != 1) throw DimensionError("item() requires a scalar tensor");
        return impl_->data[0];
    }

    // NCHW accessor.
    T at4(int n, int c, int h, int w) const {
        const auto& s = impl_->shape;
        return impl_->data[((static_cast<long>(n) * s[1] + c) * s[2] + h) * s[3] + w];
    }

    std::shared_ptr<Impl> impl() const { return impl_; }

    // Apply an in-place SGD step; only valid on untracked leaves.
    void sgd_step(T lr) {
        if (impl_->grad.empty()) return;
        for (size_t i = 0; i < impl_->data.size(); ++i) impl_->data[i] -= lr * impl_->grad[i];
    }

private:
    std::shared_ptr<Impl> impl_;
};

namespace detail {

template <class T>
void check_finite(const std::vector<T>& v, const char* op) {
    for (const T& x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericalError(std::string("non-finite value produced by ") + op);
}

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Row-major strides with 0 on broadcast (size-1) axes.
inline std::vector<long> broadcast_strides(const std::vector<int>& shape,
                                           const std::vector<int>& out) {
    std::vector<long> st(shape.size());
    long acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        st[i] = (shape[i] == 1 && out[i] != 1) ? 0 : acc;
        acc *= shape[i];
    }
    return st;
}

template <class T>
bool any_tracked(const std::vector<Tensor<T>>& ts) {
    for (const auto& t : ts)
        if (t.tracked()) return true;
    return false;
}

} // namespace detail

// Build a result tensor wired into the graph when any input is tracked.
template <class T>
Tensor<T> make_op(std::vector<int> shape, std::vector<T> data,
                  const std::vector<Tensor<T>>& inputs,
                  std::function<void(typename Tensor<T>::Impl&)> backward,
                  const char* name) {
    detail::check_finite(data, name);
    Tensor<T> out(std::move(shape), std::move(data));
    if (detail::any_tracked(inputs)) {
        for (const auto& in : inputs) out.impl()->parents.push_back(in.impl());
        out.impl()->backward_fn = std::move(backward);
    }
    return out;
}

// ---- elementwise ----

template <class T, class F, class G>
Tensor<T> unary_op(const Tensor<T>& a, F f, G dfd, const char* name) {
    std::vector<T> out(a.numel());
    const auto& x = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    auto ai = a.impl();
    return make_op<T>(
        a.shape(), std::move(out), {a},
        [ai, dfd](typename Tensor<T>::Impl& self) {
            if (!ai->requires_grad && !ai->backward_fn) return;
            ai->ensure_grad();
            for (size_t i = 0; i < self.data.size(); ++i)
                ai->grad[i] += self.grad[i] * dfd(ai->data[i], self.data[i]);
        },
        name);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <class T>
Tensor<T> tanh_op(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; }, "tanh");
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); }, "relu");
}

template <class T>
Tensor<T> abs_op(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); }, "abs");
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return unary_op(
        a, [s](T x) { return s * x; }, [s](T, T) { return s; }, "scale");
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return unary_op(
        a, [s](T x) { return x + s; }, [](T, T) { return T(1); }, "add_scalar");
}

// Binary elementwise with size-1 axis broadcasting (equal rank required).
template <class T, class F, class DA, class DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, F f, DA dfda, DB dfdb,
                    const char* name) {
    if (a.ndim() != b.ndim())
        throw DimensionError(std::string(name) + ": rank mismatch " +
                             detail::shape_str(a.shape()) + " vs " +
                             detail::shape_str(b.shape()));
    std::vector<int> out_shape(a.ndim());
    for (int i = 0; i < a.ndim(); ++i) {
        int da = a.dim(i), db = b.dim(i);
        if (da != db && da != 1 && db != 1)
            throw DimensionError(std::string(name) + ": shapes not broadcastable " +
                                 detail::shape_str(a.shape()) + " vs " +
                                 detail::shape_str(b.shape()));
        out_shape[i] = std::max(da, db);
    }
    const auto sa = detail::broadcast_strides(a.shape(), out_shape);
    const auto sb = detail::broadcast_strides(b.shape(), out_shape);
    long n = 1;
    for (int d : out_shape) n *= d;
    std::vector<T> out(n);
    const int nd = a.ndim();
    const auto& xa = a.data();
    const auto& xb = b.data();
    std::vector<int> idx(nd, 0);
    for (long i = 0; i < n; ++i) {
        long ia = 0, ib = 0;
        for (int d = 0; d < nd; ++d) {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        out[i] = f(xa[ia], xb[ib]);
        for (int d = nd - 1; d >= 0; --d) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    auto ai = a.impl();
    auto bi = b.impl();
    auto backward = [ai, bi, sa, sb, out_shape, nd, dfda, dfdb](typename Tensor<T>::Impl& self) {
        const bool ga = ai->requires_grad || ai->backward_fn;
        const bool gb = bi->requires_grad || bi->backward_fn;
        if (ga) ai->ensure_grad();
        if (gb) bi->ensure_grad();
        std::vector<int> idx(nd, 0);
        for (size_t i = 0; i < self.data.size(); ++i) {
            long ia = 0, ib = 0;
            for (int d = 0; d < nd; ++d) {
                ia += idx[d] * sa[d];
                ib += idx[d] * sb[d];
            }
            const T va = ai->data[ia], vb = bi->data[ib], g = self.grad[i];
            if (ga) ai->grad[ia] += g * dfda(va, vb);
            if (gb) bi->grad[ib] += g * dfdb(va, vb);
            for (int d = nd - 1; d >= 0; --d) {
                if (++idx[d] < out_shape[d]) break;
                idx[d] = 0;
            }
        }
    };
    return make_op<T>(std::move(out_shape), std::move(out), {a, b}, std::move(backward), name);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); }, "add");
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); }, "sub");
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; }, "mul");
}

// ---- reductions ----

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (const T& v : a.data()) acc += v;
    auto ai = a.impl();
    return make_op<T>(
        {1}, {acc}, {a},
        [ai](typename Tensor<T>::Impl& self) {
            if (!ai->requires_grad && !ai->backward_fn) return;
            ai->ensure_grad();
            for (auto& g : ai->grad) g += self.grad[0];
        },
        "sum");
}

// ---- conv2d ----

// Cross-correlation, NCHW; w is Cout×Cin×kh×kw, b Cout or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int pad) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw DimensionError("conv2d: x and w must be 4-D");
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Cin)
        throw DimensionError("conv2d: channel mismatch " + detail::shape_str(x.shape()) +
                             " vs " + detail::shape_str(w.shape()));
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != Cout))
        throw DimensionError("conv2d: bias must be [Cout]");
    if (pad < 0 || stride < 1) throw DimensionError("conv2d: bad stride/pad");
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw DimensionError("conv2d: kernel larger than padded input");
    // Floor output size, as in the usual conv convention; trailing rows and
    // columns that do not fit a full stride are dropped.
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw DimensionError("conv2d: empty output");

    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    const auto& xd = x.data();
    const auto& wd = w.data();
    const T* bd = b.defined() ? b.data().data() : nullptr;
    // Zero-padded copy of the input; removes all bounds checks from the hot
    // loops below and makes the innermost loops contiguous so they vectorize.
    auto pad_input = [=, &xd] {
        std::vector<T> xp(static_cast<long>(N) * Cin * Hp * Wp, T(0));
        for (long nc = 0; nc < static_cast<long>(N) * Cin; ++nc)
            for (int hi = 0; hi < H; ++hi)
                std::copy_n(&xd[(nc * H + hi) * W], W, &xp[(nc * Hp + hi + pad) * Wp + pad]);
        return xp;
    };
    const std::vector<T> xp = pad_input();

    std::vector<T> out(static_cast<long>(N) * Cout * Ho * Wo);
    parallel_for(static_cast<long>(N) * Cout, [&](long nc) {
        const int n = static_cast<int>(nc / Cout);
        const int co = static_cast<int>(nc % Cout);
        T* oplane = &out[nc * Ho * Wo];
        std::fill_n(oplane, static_cast<long>(Ho) * Wo, bd ? bd[co] : T(0));
        for (int ci = 0; ci < Cin; ++ci)
            for (int u = 0; u < kh; ++u)
                for (int v = 0; v < kw; ++v) {
                    const T wv = wd[((static_cast<long>(co) * Cin + ci) * kh + u) * kw + v];
                    for (int ho = 0; ho < Ho; ++ho) {
                        const T* xr =
                            &xp[((static_cast<long>(n) * Cin + ci) * Hp + ho * stride + u) * Wp +
                                v];
                        T* orow = oplane + static_cast<long>(ho) * Wo;
                        if (stride == 1)
                            for (int wo = 0; wo < Wo; ++wo) orow[wo] += wv * xr[wo];
                        else
                            for (int wo = 0; wo < Wo; ++wo) orow[wo] += wv * xr[wo * stride];
                    }
                }
    });

    auto xi = x.impl();
    auto wi_ = w.impl();
    auto bi = b.defined() ? b.impl() : nullptr;
    std::vector<Tensor<T>> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    auto backward = [=](typename Tensor<T>::Impl& self) {
        const bool gx = xi->requires_grad || xi->backward_fn;
        const bool gw = wi_->requires_grad || wi_->backward_fn;
        const bool gb = bi && (bi->requires_grad || bi->backward_fn);
        if (gx) xi->ensure_grad();
        if (gw) wi_->ensure_grad();
        if (gb) bi->ensure_grad();
        // Two passes so each can run in parallel on disjoint slices: weight
        // and bias gradients partition by output channel, input gradients by
        // input channel. Accumulation order per slice is fixed, so results
        // are bit-identical for any thread count. Both passes run over the
        // zero-padded input / a padded scratch gradient so the innermost
        // loops are branch-free and contiguous.
        const std::vector<T> xpb = pad_input();
        if (gw || gb)
            parallel_for(Cout, [&](long co) {
                for (int n = 0; n < N; ++n) {
                    const T* gplane = &self.grad[((static_cast<long>(n) * Cout + co) * Ho) * Wo];
                    if (gb)
                        for (long i = 0; i < static_cast<long>(Ho) * Wo; ++i)
                            bi->grad[co] += gplane[i];
                    if (!gw) continue;
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v) {
                                T acc = T(0);
                                for (int ho = 0; ho < Ho; ++ho) {
                                    const T* xr = &xpb[((static_cast<long>(n) * Cin + ci) * Hp +
                                                        ho * stride + u) *
                                                           Wp +
                                                       v];
                                    const T* gr = gplane + static_cast<long>(ho) * Wo;
                                    if (stride == 1)
                                        for (int wo = 0; wo < Wo; ++wo) acc += gr[wo] * xr[wo];
                                    else
                                        for (int wo = 0; wo < Wo; ++wo)
                                            acc += gr[wo] * xr[wo * stride];
                                }
                                wi_->grad[((co * Cin + ci) * kh + u) * kw + v] += acc;
                            }
                }
            });
        if (gx)
            parallel_for(static_cast<long>(N) * Cin, [&](long nci) {
                const int n = static_cast<int>(nci / Cin);
                const int ci = static_cast<int>(nci % Cin);
                std::vector<T> dxp(static_cast<long>(Hp) * Wp, T(0));
                for (int co = 0; co < Cout; ++co) {
                    const T* gplane = &self.grad[((static_cast<long>(n) * Cout + co) * Ho) * Wo];
                    for (int u = 0; u < kh; ++u)
                        for (int v = 0; v < kw; ++v) {
                            const T wv =
                                wi_->data[((static_cast<long>(co) * Cin + ci) * kh + u) * kw + v];
                            for (int ho = 0; ho < Ho; ++ho) {
                                T* dxr = &dxp[(static_cast<long>(ho) * stride + u) * Wp + v];
                                const T* gr = gplane + static_cast<long>(ho) * Wo;
                                if (stride == 1)
                                    for (int wo = 0; wo < Wo; ++wo) dxr[wo] += wv * gr[wo];
                                else
                                    for (int wo = 0; wo < Wo; ++wo)
                                        dxr[wo * stride] += wv * gr[wo];
                            }
                        }
                }
                for (int hi = 0; hi < H; ++hi) {
                    const T* src = &dxp[(static_cast<long>(hi) + pad) * Wp + pad];
                    T* dst = &xi->grad[((static_cast<long>(n) * Cin + ci) * H + hi) * W];
                    for (int wpix = 0; wpix < W; ++wpix) dst[wpix] += src[wpix];
                }
            });
    };
    return make_op<T>({N, Cout, Ho, Wo}, std::move(out), inputs, std::move(backward), "conv2d");
}

// ---- pooling ----

enum class PoolKind { Max, Avg };
enum class PoolAxis { Spatial, Channel };

template <class T>
Tensor<T> global_pool(PoolKind kind, PoolAxis axis, const Tensor<T>& x) {
    if (x.ndim() != 4) throw DimensionError("global_pool: input must be 4-D");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto& xd = x.data();
    std::vector<int> out_shape;
    std::vector<T> out;
    std::vector<long> argmax;
    if (axis == PoolAxis::Spatial) {
        out_shape = {N, C, 1, 1};
        out.resize(static_cast<long>(N) * C);
        if (kind == PoolKind::Max) argmax.resize(out.size());
        for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
            const long base = nc * H * W;
            if (kind == PoolKind::Max) {
                long best = base;
                for (long i = base + 1; i < base + H * W; ++i)
                    if (xd[i] > xd[best]) best = i;
                out[nc] = xd[best];
                argmax[nc] = best;
            } else {
                T acc = 0;
                for (long i = base; i < base + H * W; ++i) acc += xd[i];
                out[nc] = acc / static_cast<T>(H * W);
            }
        }
    } else {
        out_shape = {N, 1, H, W};
        out.resize(static_cast<long>(N) * H * W);
        if (kind == PoolKind::Max) argmax.resize(out.size());
        for (int n = 0; n < N; ++n)
            for (long hw = 0; hw < static_cast<long>(H) * W; ++hw) {
                const long o = static_cast<long>(n) * H * W + hw;
                long best = (static_cast<long>(n) * C) * H * W + hw;
                T acc = 0;
                for (int c = 0; c < C; ++c) {
                    const long i = (static_cast<long>(n) * C + c) * H * W + hw;
                    acc += xd[i];
                    if (xd[i] > xd[best]) best = i;
                }
                if (kind == PoolKind::Max) {
                    out[o] = xd[best];
                    argmax[o] = best;
                } else {
                    out[o] = acc / static_cast<T>(C);
                }
            }
    }
    auto xi = x.impl();
    auto backward = [xi, kind, axis, N, C, H, W, argmax](typename Tensor<T>::Impl& self) {
        if (!xi->requires_grad && !xi->backward_fn) return;
        xi->ensure_grad();
        if (kind == PoolKind::Max) {
            for (size_t o = 0; o < self.grad.size(); ++o) xi->grad[argmax[o]] += self.grad[o];
        } else if (axis == PoolAxis::Spatial) {
            const T inv = T(1) / static_cast<T>(H * W);
            for (long nc = 0; nc < static_cast<long>(N) * C; ++nc)
                for (long i = 0; i < static_cast<long>(H) * W; ++i)
                    xi->grad[nc * H * W + i] += self.grad[nc] * inv;
        } else {
            const T inv = T(1) / static_cast<T>(C);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (long hw = 0; hw < static_cast<long>(H) * W; ++hw)
                        xi->grad[(static_cast<long>(n) * C + c) * H * W + hw] +=
                            self.grad[static_cast<long>(n) * H * W + hw] * inv;
        }
    };
    return make_op<T>(std::move(out_shape), std::move(out), {x}, std::move(backward),
                      "global_pool");
}

// ---- bilinear resize (align-corners = false) ----

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, double scale) {
    if (x.ndim() != 4) throw DimensionError("resize_bilinear: input must be 4-D");
    if (scale <= 0) throw DimensionError("resize_bilinear: scale must be positive");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = static_cast<int>(std::floor(H * scale + 0.5));
    const int Wo = static_cast<int>(std::floor(W * scale + 0.5));
    if (Ho < 1 || Wo < 1) throw DimensionError("resize_bilinear: zero output dim");

    // Precompute per-axis sample taps.
    struct Tap {
        int i0, i1;
        T w1;
    };
    auto taps = [](int in, int out) {
        std::vector<Tap> t(out);
        const double r = static_cast<double>(in) / out;
        for (int i = 0; i < out; ++i) {
            double src = (i + 0.5) * r - 0.5;
            if (src < 0) src = 0;
            if (src > in - 1) src = in - 1;
            const int i0 = static_cast<int>(std::floor(src));
            t[i] = {i0, std::min(i0 + 1, in - 1), static_cast<T>(src - i0)};
        }
        return t;
    };
    const auto th = taps(H, Ho);
    const auto tw = taps(W, Wo);

    std::vector<T> out(static_cast<long>(N) * C * Ho * Wo);
    const auto& xd = x.data();
    for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
        const long base = nc * H * W;
        for (int ho = 0; ho < Ho; ++ho)
            for (int wo = 0; wo < Wo; ++wo) {
                const auto& a = th[ho];
                const auto& b = tw[wo];
                const T v00 = xd[base + static_cast<long>(a.i0) * W + b.i0];
                const T v01 = xd[base + static_cast<long>(a.i0) * W + b.i1];
                const T v10 = xd[base + static_cast<long>(a.i1) * W + b.i0];
                const T v11 = xd[base + static_cast<long>(a.i1) * W + b.i1];
                out[nc * Ho * Wo + static_cast<long>(ho) * Wo + wo] =
                    (T(1) - a.w1) * ((T(1) - b.w1) * v00 + b.w1 * v01) +
                    a.w1 * ((T(1) - b.w1) * v10 + b.w1 * v11);
            }
    }
    auto xi = x.impl();
    auto backward = [xi, N, C, H, W, Ho, Wo, th, tw](typename Tensor<T>::Impl& self) {
        if (!xi->requires_grad && !xi->backward_fn) return;
        xi->ensure_grad();
        for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
            const long base = nc * H * W;
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    const auto& a = th[ho];
                    const auto& b = tw[wo];
                    const T g = self.grad[nc * Ho * Wo + static_cast<long>(ho) * Wo + wo];
                    xi->grad[base + static_cast<long>(a.i0) * W + b.i0] +=
                        g * (T(1) - a.w1) * (T(1) - b.w1);
                    xi->grad[base + static_cast<long>(a.i0) * W + b.i1] +=
                        g * (T(1) - a.w1) * b.w1;
                    xi->grad[base + static_cast<long>(a.i1) * W + b.i0] +=
                        g * a.w1 * (T(1) - b.w1);
                    xi->grad[base + static_cast<long>(a.i1) * W + b.i1] += g * a.w1 * b.w1;
                }
        }
    };
    return make_op<T>({N, C, Ho, Wo}, std::move(out), {x}, std::move(backward),
                      "resize_bilinear");
}

// ---- channel concat ----

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_channels: empty input list");
    const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
    int Ctot = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 4 || p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
            throw DimensionError("concat_channels: incompatible shapes");
        Ctot += p.dim(1);
    }
    std::vector<T> out(static_cast<long>(N) * Ctot * H * W);
    long coff = 0;
    for (const auto& p : parts) {
        const int C = p.dim(1);
        for (int n = 0; n < N; ++n)
            std::copy(p.data().begin() + static_cast<long>(n) * C * H * W,
                      p.data().begin() + static_cast<long>(n + 1) * C * H * W,
                      out.begin() + (static_cast<long>(n) * Ctot + coff) * H * W);
        coff += C;
    }
    std::vector<std::shared_ptr<typename Tensor<T>::Impl>> impls;
    std::vector<int> chans;
    for (const auto& p : parts) {
        impls.push_back(p.impl());
        chans.push_back(p.dim(1));
    }
    auto backward = [impls, chans, N, H, W, Ctot](typename Tensor<T>::Impl& self) {
        long coff = 0;
        for (size_t k = 0; k < impls.size(); ++k) {
            auto& pi = impls[k];
            const int C = chans[k];
            if (pi->requires_grad || pi->backward_fn) {
                pi->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (long i = 0; i < static_cast<long>(C) * H * W; ++i)
                        pi->grad[static_cast<long>(n) * C * H * W + i] +=
                            self.grad[(static_cast<long>(n) * Ctot + coff) * H * W + i];
            }
            coff += C;
        }
    };
    return make_op<T>({N, Ctot, H, W}, std::move(out), parts, std::move(backward),
                      "concat_channels");
}

// Average-pool (kernel 2, stride 2) along the last axis of a 4-D tensor.
template <class T>
Tensor<T> avgpool_last(const Tensor<T>& x) {
    if (x.ndim() != 4) throw DimensionError("avgpool_last: input must be 4-D");
    const int L = x.dim(3);
    if (L % 2 != 0) throw DimensionError("avgpool_last: last axis must be even");
    const int Lo = L / 2;
    const long rows = x.numel() / L;
    std::vector<T> out(rows * Lo);
    const auto& xd = x.data();
    for (long r = 0; r < rows; ++r)
        for (int i = 0; i < Lo; ++i)
            out[r * Lo + i] = (xd[r * L + 2 * i] + xd[r * L + 2 * i + 1]) / T(2);
    auto xi = x.impl();
    auto backward = [xi, rows, L, Lo](typename Tensor<T>::Impl& self) {
        if (!xi->requires_grad && !xi->backward_fn) return;
        xi->ensure_grad();
        for (long r = 0; r < rows; ++r)
            for (int i = 0; i < Lo; ++i) {
                const T g = self.grad[r * Lo + i] / T(2);
                xi->grad[r * L + 2 * i] += g;
                xi->grad[r * L + 2 * i + 1] += g;
            }
    };
    std::vector<int> shape = x.shape();
    shape[3] = Lo;
    return make_op<T>(std::move(shape), std::move(out), {x}, std::move(backward),
                      "avgpool_last");
}

// ---- backward driver ----

template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw DimensionError("backward: loss must be a scalar");
    auto root = loss.impl();
    if (!root->backward_fn && !root->requires_grad)
        throw GraphError("backward: loss is detached from any tracked graph");
    if (root->backward_done)
        throw GraphError("backward: called twice without zeroing gradients");

    // Iterative post-order DFS; reverse gives topological order.
    using ImplPtr = std::shared_ptr<typename Tensor<T>::Impl>;
    std::vector<ImplPtr> topo;
    std::unordered_set<typename Tensor<T>::Impl*> seen;
    std::vector<std::pair<ImplPtr, size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto child = node->parents[next++];
            if (seen.insert(child.get()).second) stack.emplace_back(child, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        auto& node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    root->backward_done = true;
}

} // namespace ws
