#include "nasdet/functional.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "nasdet/errors.hpp"

namespace nasdet::fn {
namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

thread_local std::vector<OpEvent>* g_trace = nullptr;

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

// ---------------------------------------------------------------------------
// Depthwise kernels. One plane at a time; stride-1 inner loops are contiguous.

struct Window {
    int in_h, in_w, out_h, out_w, k, stride, pad, dil;
};

// Copies a plane into a zero-bordered scratch plane of (h + 2p) x (w + 2p).
// Stride-1 window whose padding keeps the extent unchanged.
bool spec_stride1_same(const Window& g) {
    return g.stride == 1 && 2 * g.pad == g.dil * (g.k - 1) && g.out_h == g.in_h && g.out_w == g.in_w;
}

void pad_plane(const Real* in, int h, int w, int p, Real* out) {
    const int pw = w + 2 * p;
    std::fill(out, out + std::int64_t(h + 2 * p) * pw, Real(0));
    for (int y = 0; y < h; ++y) std::copy_n(in + std::int64_t(y) * w, w, out + std::int64_t(y + p) * pw + p);
}

// Fixed-width block of outputs accumulated in registers over all taps.
template <int B>
inline void dw_block(const Real* __restrict prow0, std::int64_t row_step, const Real* __restrict w, int k, int dil,
                     Real* __restrict out) {
    Real acc[B] = {};
    for (int ky = 0; ky < k; ++ky) {
        const Real* prow = prow0 + ky * dil * row_step;
        for (int kx = 0; kx < k; ++kx) {
            const Real wv = w[ky * k + kx];
            const Real* src = prow + kx * dil;
#pragma GCC unroll 32
            for (int i = 0; i < B; ++i) acc[i] += wv * src[i];
        }
    }
#pragma GCC unroll 32
    for (int i = 0; i < B; ++i) out[i] += acc[i];
}

void depthwise_forward_plane(const Real* padded, const Real* w, Real* out, const Window& g) {
    const int pw = g.in_w + 2 * g.pad;
    for (int oy = 0; oy < g.out_h; ++oy) {
        Real* orow = out + std::int64_t(oy) * g.out_w;
        const Real* prow0 = padded + std::int64_t(oy * g.stride) * pw;
        if (g.stride == 1) {
            int ox = 0;
            for (; ox + 32 <= g.out_w; ox += 32) dw_block<32>(prow0 + ox, pw, w, g.k, g.dil, orow + ox);
            for (; ox + 16 <= g.out_w; ox += 16) dw_block<16>(prow0 + ox, pw, w, g.k, g.dil, orow + ox);
            for (; ox + 8 <= g.out_w; ox += 8) dw_block<8>(prow0 + ox, pw, w, g.k, g.dil, orow + ox);
            for (; ox + 4 <= g.out_w; ox += 4) dw_block<4>(prow0 + ox, pw, w, g.k, g.dil, orow + ox);
            for (; ox < g.out_w; ++ox) dw_block<1>(prow0 + ox, pw, w, g.k, g.dil, orow + ox);
            continue;
        }
        for (int ky = 0; ky < g.k; ++ky) {
            const Real* prow = prow0 + std::int64_t(ky * g.dil) * pw;
            for (int kx = 0; kx < g.k; ++kx) {
                const Real wv = w[ky * g.k + kx];
                const Real* src = prow + kx * g.dil;
                for (int ox = 0; ox < g.out_w; ++ox) orow[ox] += wv * src[ox * g.stride];
            }
        }
    }
}

// Weight gradient for a stride-1 plane: per-tap vector accumulators.
void depthwise_weight_grad_s1(const Real* padded, const Real* gout, Real* gw, const Window& g) {
    constexpr int V = 8;
    const int pw = g.in_w + 2 * g.pad;
    const int taps = g.k * g.k;
    std::vector<Real> vacc(std::size_t(taps) * V, Real(0));
    Real tail[64] = {};
    const int full = g.out_w / V * V;
    for (int oy = 0; oy < g.out_h; ++oy) {
        const Real* grow = gout + std::int64_t(oy) * g.out_w;
        for (int ky = 0; ky < g.k; ++ky) {
            const Real* prow = padded + std::int64_t(oy + ky * g.dil) * pw;
            for (int kx = 0; kx < g.k; ++kx) {
                Real* __restrict acc = vacc.data() + std::size_t(ky * g.k + kx) * V;
                const Real* __restrict src = prow + kx * g.dil;
                for (int ox = 0; ox < full; ox += V) {
#pragma GCC unroll 8
                    for (int i = 0; i < V; ++i) acc[i] += grow[ox + i] * src[ox + i];
                }
                for (int ox = full; ox < g.out_w; ++ox) tail[ky * g.k + kx] += grow[ox] * src[ox];
            }
        }
    }
    for (int t = 0; t < taps; ++t) {
        Real sum = tail[t];
        for (int i = 0; i < V; ++i) sum += vacc[std::size_t(t) * V + i];
        gw[t] += sum;
    }
}

// General scatter form; gpad receives the input gradient in padded layout.
void depthwise_backward_plane(const Real* padded, const Real* w, const Real* gout, Real* gpad, Real* gw,
                              const Window& g) {
    const int pw = g.in_w + 2 * g.pad;
    for (int oy = 0; oy < g.out_h; ++oy) {
        const Real* grow = gout + std::int64_t(oy) * g.out_w;
        for (int ky = 0; ky < g.k; ++ky) {
            const std::int64_t off = std::int64_t(oy * g.stride + ky * g.dil) * pw;
            const Real* prow = padded + off;
            Real* drow = gpad ? gpad + off : nullptr;
            for (int kx = 0; kx < g.k; ++kx) {
                const Real wv = w[ky * g.k + kx];
                const Real* src = prow + kx * g.dil;
                Real acc = 0;
                for (int ox = 0; ox < g.out_w; ++ox) acc += grow[ox] * src[ox * g.stride];
                if (drow) {
                    Real* dst = drow + kx * g.dil;
                    for (int ox = 0; ox < g.out_w; ++ox) dst[ox * g.stride] += wv * grow[ox];
                }
                if (gw) gw[ky * g.k + kx] += acc;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// im2col for the general (groups == 1) path.

void im2col(const Real* in, int channels, const Window& g, Real* col) {
    const std::int64_t out_plane = std::int64_t(g.out_h) * g.out_w;
    for (int c = 0; c < channels; ++c) {
        const Real* src = in + std::int64_t(c) * g.in_h * g.in_w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                Real* dst = col + (std::int64_t(c) * g.k * g.k + ky * g.k + kx) * out_plane;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky * g.dil;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx * g.dil;
                        dst[oy * g.out_w + ox] =
                            (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) ? src[iy * g.in_w + ix] : Real(0);
                    }
                }
            }
        }
    }
}

void col2im(const Real* col, int channels, const Window& g, Real* out) {
    const std::int64_t out_plane = std::int64_t(g.out_h) * g.out_w;
    for (int c = 0; c < channels; ++c) {
        Real* dst = out + std::int64_t(c) * g.in_h * g.in_w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const Real* src = col + (std::int64_t(c) * g.k * g.k + ky * g.k + kx) * out_plane;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky * g.dil;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx * g.dil;
                        if (ix >= 0 && ix < g.in_w) dst[iy * g.in_w + ix] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

void add_bias(Tensor& out, const Tensor& bias) {
    const Shape s = out.shape();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            Real* p = out.plane(n, c);
            const Real b = bias[c];
            for (std::int64_t i = 0; i < s.plane(); ++i) p[i] += b;
        }
    }
}

void bias_grad(const Tensor& gout, Tensor& gb) {
    const Shape s = gout.shape();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const Real* p = gout.plane(n, c);
            Real acc = 0;
            for (std::int64_t i = 0; i < s.plane(); ++i) acc += p[i];
            gb[c] += acc;
        }
    }
}

}  // namespace

int window_out(int in, int kernel, int stride, int padding, int dilation) {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    require(ws.h == ws.w, "conv2d expects square kernels");
    require(spec.stride >= 1 && spec.dilation >= 1 && spec.padding >= 0, "conv2d invalid spec");
    const int k = ws.h;
    const int cout = ws.n;
    const bool depthwise = spec.groups > 1;
    if (depthwise) {
        require(spec.groups == xs.c && cout == xs.c && ws.c == 1,
                "conv2d supports groups == 1 or depthwise; got groups " + std::to_string(spec.groups) +
                    " on input " + to_string(xs) + " weight " + to_string(ws));
    } else {
        require(ws.c == xs.c, "conv2d channel mismatch: input " + to_string(xs) + " weight " + to_string(ws));
    }
    if (bias.defined()) require(bias.value().numel() == cout, "conv2d bias length mismatch");

    Window g{xs.h, xs.w, window_out(xs.h, k, spec.stride, spec.padding, spec.dilation),
             window_out(xs.w, k, spec.stride, spec.padding, spec.dilation), k, spec.stride, spec.padding,
             spec.dilation};
    require(g.out_h > 0 && g.out_w > 0, "conv2d output would be empty for input " + to_string(xs));
    const Shape os{xs.n, cout, g.out_h, g.out_w};
    Tensor out = depthwise ? Tensor(os) : Tensor::uninitialized(os);
    const Tensor& in = x.value();
    const Tensor& wt = weight.value();
    const bool pointwise = !depthwise && k == 1 && spec.stride == 1 && spec.padding == 0;
    const std::int64_t in_plane = xs.plane();
    const std::int64_t out_plane = os.plane();

    if (depthwise) {
        std::vector<Real> padded(std::size_t(xs.h + 2 * g.pad) * std::size_t(xs.w + 2 * g.pad));
        for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
                pad_plane(in.plane(n, c), xs.h, xs.w, g.pad, padded.data());
                depthwise_forward_plane(padded.data(), wt.data() + std::int64_t(c) * k * k, out.plane(n, c), g);
            }
    } else if (pointwise) {
        ConstMatMap W(wt.data(), cout, xs.c);
        for (int n = 0; n < xs.n; ++n) {
            ConstMatMap X(in.plane(n, 0), xs.c, in_plane);
            MatMap Y(out.plane(n, 0), cout, out_plane);
            Y.noalias() = W * X;
        }
    } else {
        const std::int64_t rows = std::int64_t(xs.c) * k * k;
        std::vector<Real> col(std::size_t(rows * out_plane));
        ConstMatMap W(wt.data(), cout, rows);
        for (int n = 0; n < xs.n; ++n) {
            im2col(in.plane(n, 0), xs.c, g, col.data());
            ConstMatMap C(col.data(), rows, out_plane);
            MatMap Y(out.plane(n, 0), cout, out_plane);
            Y.noalias() = W * C;
        }
    }
    if (bias.defined()) add_bias(out, bias.value());
    trace({"conv2d", xs, os, k, spec.groups, bias.defined()});

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return detail::make_result(std::move(out), std::move(inputs), [g, depthwise, pointwise, xs, os, k,
                                                                    cout](Node& node) {
        const Tensor& gout = node.grad;
        const Tensor& in = node.inputs[0]->value;
        const Tensor& wt = node.inputs[1]->value;
        Tensor* gin = detail::input_grad(node, 0);
        Tensor* gw = detail::input_grad(node, 1);
        if (node.inputs.size() > 2) {
            if (Tensor* gb = detail::input_grad(node, 2)) bias_grad(gout, *gb);
        }
        const std::int64_t in_plane = xs.plane();
        const std::int64_t out_plane = os.plane();
        if (depthwise) {
            const int pw = xs.w + 2 * g.pad;
            const std::size_t padded_size = std::size_t(xs.h + 2 * g.pad) * std::size_t(pw);
            std::vector<Real> padded(padded_size);
            // Same-padded stride-1 windows: the input gradient is the forward
            // correlation of the output gradient with the flipped kernel.
            const bool same = spec_stride1_same(g);
            std::vector<Real> gpad(gin && !same ? padded_size : 0);
            std::vector<Real> gout_pad(gin && same ? padded_size : 0);
            std::vector<Real> flipped(gin && same ? std::size_t(k * k) : 0);
            for (int n = 0; n < xs.n; ++n)
                for (int c = 0; c < xs.c; ++c) {
                    const Real* wc = wt.data() + std::int64_t(c) * k * k;
                    Real* gwc = gw ? gw->data() + std::int64_t(c) * k * k : nullptr;
                    pad_plane(in.plane(n, c), xs.h, xs.w, g.pad, padded.data());
                    if (same) {
                        if (gwc) depthwise_weight_grad_s1(padded.data(), gout.plane(n, c), gwc, g);
                        if (!gin) continue;
                        for (int t = 0; t < k * k; ++t) flipped[std::size_t(t)] = wc[k * k - 1 - t];
                        pad_plane(gout.plane(n, c), os.h, os.w, g.pad, gout_pad.data());
                        depthwise_forward_plane(gout_pad.data(), flipped.data(), gin->plane(n, c), g);
                        continue;
                    }
                    if (gin) std::fill(gpad.begin(), gpad.end(), Real(0));
                    depthwise_backward_plane(padded.data(), wc, gout.plane(n, c), gin ? gpad.data() : nullptr, gwc, g);
                    if (!gin) continue;
                    Real* dst = gin->plane(n, c);
                    for (int y = 0; y < xs.h; ++y) {
                        const Real* src = gpad.data() + std::int64_t(y + g.pad) * pw + g.pad;
                        for (int x = 0; x < xs.w; ++x) dst[std::int64_t(y) * xs.w + x] += src[x];
                    }
                }
        } else if (pointwise) {
            ConstMatMap W(wt.data(), cout, xs.c);
            for (int n = 0; n < xs.n; ++n) {
                ConstMatMap G(gout.plane(n, 0), cout, out_plane);
                ConstMatMap X(in.plane(n, 0), xs.c, in_plane);
                if (gw) {
                    MatMap GW(gw->data(), cout, xs.c);
                    GW.noalias() += G * X.transpose();
                }
                if (gin) {
                    MatMap GX(gin->plane(n, 0), xs.c, in_plane);
                    GX.noalias() += W.transpose() * G;
                }
            }
        } else {
            const std::int64_t rows = std::int64_t(xs.c) * k * k;
            std::vector<Real> col(std::size_t(rows * out_plane));
            std::vector<Real> gcol(gin ? std::size_t(rows * out_plane) : 0);
            ConstMatMap W(wt.data(), cout, rows);
            for (int n = 0; n < xs.n; ++n) {
                ConstMatMap G(gout.plane(n, 0), cout, out_plane);
                if (gw) {
                    im2col(in.plane(n, 0), xs.c, g, col.data());
                    ConstMatMap C(col.data(), rows, out_plane);
                    MatMap GW(gw->data(), cout, rows);
                    GW.noalias() += G * C.transpose();
                }
                if (gin) {
                    MatMap GC(gcol.data(), rows, out_plane);
                    GC.noalias() = W.transpose() * G;
                    col2im(gcol.data(), xs.c, g, gin->plane(n, 0));
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, NormStats* stats, bool use_batch_stats, Real eps,
               Real momentum) {
    const Shape s = x.shape();
    require(gamma.value().numel() == s.c && beta.value().numel() == s.c, "batch_norm parameter length mismatch");
    const std::int64_t m = std::int64_t(s.n) * s.plane();
    require(m > 0, "batch_norm on empty input");
    const Tensor& in = x.value();
    Tensor mean({1, s.c, 1, 1});
    Tensor invstd({1, s.c, 1, 1});
    if (use_batch_stats) {
        for (int c = 0; c < s.c; ++c) {
            Real sum = 0;
            for (int n = 0; n < s.n; ++n) {
                const Real* p = in.plane(n, c);
                for (std::int64_t i = 0; i < s.plane(); ++i) sum += p[i];
            }
            const Real mu = sum / Real(m);
            Real sq = 0;
            for (int n = 0; n < s.n; ++n) {
                const Real* p = in.plane(n, c);
                for (std::int64_t i = 0; i < s.plane(); ++i) sq += (p[i] - mu) * (p[i] - mu);
            }
            const Real var = sq / Real(m);
            mean[c] = mu;
            invstd[c] = Real(1) / std::sqrt(var + eps);
            if (stats) {
                const Real unbiased = m > 1 ? sq / Real(m - 1) : var;
                stats->mean[c] = (1 - momentum) * stats->mean[c] + momentum * mu;
                stats->var[c] = (1 - momentum) * stats->var[c] + momentum * unbiased;
            }
        }
    } else {
        if (!stats) throw StateError("batch_norm without batch statistics needs running statistics");
        for (int c = 0; c < s.c; ++c) {
            mean[c] = stats->mean[c];
            invstd[c] = Real(1) / std::sqrt(stats->var[c] + eps);
        }
    }
    Tensor out = Tensor::uninitialized(s);
    const Tensor& ga = gamma.value();
    const Tensor& be = beta.value();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const Real* p = in.plane(n, c);
            Real* q = out.plane(n, c);
            const Real a = ga[c] * invstd[c];
            const Real b = be[c] - mean[c] * a;
            for (std::int64_t i = 0; i < s.plane(); ++i) q[i] = a * p[i] + b;
        }
    }
    trace({"batch_norm", s, s});
    return detail::make_result(
        std::move(out), {x, gamma, beta},
        [s, m, mean = std::move(mean), invstd = std::move(invstd), use_batch_stats](Node& node) {
            const Tensor& gout = node.grad;
            const Tensor& in = node.inputs[0]->value;
            const Tensor& ga = node.inputs[1]->value;
            Tensor* gin = detail::input_grad(node, 0);
            Tensor* gg = detail::input_grad(node, 1);
            Tensor* gb = detail::input_grad(node, 2);
            for (int c = 0; c < s.c; ++c) {
                Real sum_g = 0, sum_gx = 0;
                for (int n = 0; n < s.n; ++n) {
                    const Real* p = in.plane(n, c);
                    const Real* d = gout.plane(n, c);
                    for (std::int64_t i = 0; i < s.plane(); ++i) {
                        sum_g += d[i];
                        sum_gx += d[i] * (p[i] - mean[c]) * invstd[c];
                    }
                }
                if (gg) (*gg)[c] += sum_gx;
                if (gb) (*gb)[c] += sum_g;
                if (!gin) continue;
                const Real a = ga[c] * invstd[c];
                for (int n = 0; n < s.n; ++n) {
                    const Real* p = in.plane(n, c);
                    const Real* d = gout.plane(n, c);
                    Real* q = gin->plane(n, c);
                    if (use_batch_stats) {
                        const Real mg = sum_g / Real(m);
                        const Real mgx = sum_gx / Real(m);
                        for (std::int64_t i = 0; i < s.plane(); ++i) {
                            const Real xhat = (p[i] - mean[c]) * invstd[c];
                            q[i] += a * (d[i] - mg - xhat * mgx);
                        }
                    } else {
                        for (std::int64_t i = 0; i < s.plane(); ++i) q[i] += a * d[i];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------

namespace {
thread_local ReluMemo* g_relu_memo = nullptr;
}

ReluMemo::ReluMemo() : previous_(g_relu_memo) { g_relu_memo = this; }
ReluMemo::~ReluMemo() { g_relu_memo = previous_; }

Var relu(const Var& x) {
    if (g_relu_memo) {
        for (const auto& [in, out] : g_relu_memo->entries_)
            if (in.same(x)) return out;
    }
    const Tensor& in = x.value();
    Tensor out = Tensor::uninitialized(x.shape());
    for (std::int64_t i = 0; i < in.numel(); ++i) out[i] = in[i] > 0 ? in[i] : Real(0);
    trace({"relu", x.shape(), x.shape()});
    Var y = detail::make_result(std::move(out), {x}, [](Node& node) {
        Tensor* gin = detail::input_grad(node, 0);
        if (!gin) return;
        const Real* v = node.value.data();
        const Real* g = node.grad.data();
        Real* d = gin->data();
        const std::int64_t n = node.value.numel();
        for (std::int64_t i = 0; i < n; ++i) d[i] += v[i] > 0 ? g[i] : Real(0);
    });
    if (g_relu_memo) g_relu_memo->entries_.emplace_back(x, y);
    return y;
}

Var sigmoid(const Var& x) {
    const Tensor& in = x.value();
    Tensor out = Tensor::uninitialized(x.shape());
    for (std::int64_t i = 0; i < in.numel(); ++i) out[i] = Real(1) / (Real(1) + std::exp(-in[i]));
    trace({"sigmoid", x.shape(), x.shape()});
    return detail::make_result(std::move(out), {x}, [](Node& node) {
        Tensor* gin = detail::input_grad(node, 0);
        if (!gin) return;
        const Tensor& y = node.value;
        for (std::int64_t i = 0; i < y.numel(); ++i) (*gin)[i] += node.grad[i] * y[i] * (1 - y[i]);
    });
}

// ---------------------------------------------------------------------------

namespace {

// 3x3, stride 1, padding 1 pooling over padded planes.
void pool3_s1_forward(const Tensor& in, PoolKind kind, Tensor& out, std::vector<std::int32_t>& argmax,
                      std::vector<Real>& inv_count) {
    const Shape s = in.shape();
    const int pw = s.w + 2;
    std::vector<Real> padded(std::size_t(s.h + 2) * std::size_t(pw));
    const Real fill = kind == PoolKind::Max ? -std::numeric_limits<Real>::infinity() : Real(0);
    if (kind == PoolKind::Avg) {
        inv_count.resize(std::size_t(s.plane()));
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                const int rows = std::min(s.h, y + 2) - std::max(0, y - 1);
                const int cols = std::min(s.w, x + 2) - std::max(0, x - 1);
                inv_count[std::size_t(y * s.w + x)] = Real(1) / Real(rows * cols);
            }
    } else {
        argmax.resize(std::size_t(s.numel()));
    }
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            std::fill(padded.begin(), padded.end(), fill);
            const Real* p = in.plane(n, c);
            for (int y = 0; y < s.h; ++y) std::copy_n(p + std::int64_t(y) * s.w, s.w, padded.data() + (y + 1) * pw + 1);
            Real* q = out.plane(n, c);
            std::int32_t* arg = kind == PoolKind::Max ? argmax.data() + (std::int64_t(n) * s.c + c) * s.plane() : nullptr;
            for (int y = 0; y < s.h; ++y) {
                Real* orow = q + std::int64_t(y) * s.w;
                if (kind == PoolKind::Avg) {
                    for (int x = 0; x < s.w; ++x) orow[x] = 0;
                    for (int dy = 0; dy < 3; ++dy) {
                        const Real* r = padded.data() + (y + dy) * pw;
                        for (int x = 0; x < s.w; ++x) orow[x] += r[x] + r[x + 1] + r[x + 2];
                    }
                    const Real* ic = inv_count.data() + std::int64_t(y) * s.w;
                    for (int x = 0; x < s.w; ++x) orow[x] *= ic[x];
                } else {
                    std::int32_t* arow = arg + std::int64_t(y) * s.w;
                    for (int x = 0; x < s.w; ++x) {
                        orow[x] = -std::numeric_limits<Real>::infinity();
                        arow[x] = 0;
                    }
                    for (int dy = 0; dy < 3; ++dy) {
                        const Real* r = padded.data() + (y + dy) * pw;
                        const int iy = y + dy - 1;
                        for (int dx = 0; dx < 3; ++dx) {
                            for (int x = 0; x < s.w; ++x) {
                                const Real v = r[x + dx];
                                const bool gt = v > orow[x];
                                orow[x] = gt ? v : orow[x];
                                arow[x] = gt ? iy * s.w + x + dx - 1 : arow[x];
                            }
                        }
                    }
                }
            }
        }
}

}  // namespace

Var pool2d(const Var& x, PoolKind kind, int kernel, int stride, int padding) {
    const Shape s = x.shape();
    const int oh = window_out(s.h, kernel, stride, padding);
    const int ow = window_out(s.w, kernel, stride, padding);
    require(oh > 0 && ow > 0, "pool2d output would be empty");
    const Shape os{s.n, s.c, oh, ow};
    Tensor out = Tensor::uninitialized(os);
    const Tensor& in = x.value();
    std::vector<std::int32_t> argmax;
    std::vector<Real> inv_count;
    const bool fast = kernel == 3 && stride == 1 && padding == 1;
    if (fast) {
        pool3_s1_forward(in, kind, out, argmax, inv_count);
    } else {
        if (kind == PoolKind::Max) argmax.resize(std::size_t(os.numel()));
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const Real* p = in.plane(n, c);
                Real* q = out.plane(n, c);
                const std::int64_t base = (std::int64_t(n) * s.c + c) * os.plane();
                for (int oy = 0; oy < oh; ++oy) {
                    const int y0 = std::max(0, oy * stride - padding);
                    const int y1 = std::min(s.h, oy * stride - padding + kernel);
                    for (int ox = 0; ox < ow; ++ox) {
                        const int x0 = std::max(0, ox * stride - padding);
                        const int x1 = std::min(s.w, ox * stride - padding + kernel);
                        if (kind == PoolKind::Max) {
                            Real best = -std::numeric_limits<Real>::infinity();
                            int arg = -1;
                            for (int iy = y0; iy < y1; ++iy)
                                for (int ix = x0; ix < x1; ++ix)
                                    if (p[iy * s.w + ix] > best) {
                                        best = p[iy * s.w + ix];
                                        arg = iy * s.w + ix;
                                    }
                            q[oy * ow + ox] = best;
                            argmax[std::size_t(base + oy * ow + ox)] = arg;
                        } else {
                            Real acc = 0;
                            for (int iy = y0; iy < y1; ++iy)
                                for (int ix = x0; ix < x1; ++ix) acc += p[iy * s.w + ix];
                            q[oy * ow + ox] = acc / Real((y1 - y0) * (x1 - x0));
                        }
                    }
                }
            }
        }
    }
    trace({kind == PoolKind::Max ? "max_pool" : "avg_pool", s, os, kernel});
    return detail::make_result(
        std::move(out), {x},
        [s, os, kind, kernel, stride, padding, fast, argmax = std::move(argmax),
         inv_count = std::move(inv_count)](Node& node) {
            Tensor* gin = detail::input_grad(node, 0);
            if (!gin) return;
            if (kind == PoolKind::Max) {
                for (int n = 0; n < s.n; ++n)
                    for (int c = 0; c < s.c; ++c) {
                        const Real* d = node.grad.plane(n, c);
                        Real* q = gin->plane(n, c);
                        const std::int32_t* arg = argmax.data() + (std::int64_t(n) * s.c + c) * os.plane();
                        for (std::int64_t i = 0; i < os.plane(); ++i) q[arg[i]] += d[i];
                    }
                return;
            }
            if (fast) {
                // Box-sum of the count-normalized output gradient.
                const int pw = s.w + 2;
                std::vector<Real> padded(std::size_t(s.h + 2) * std::size_t(pw), Real(0));
                for (int n = 0; n < s.n; ++n)
                    for (int c = 0; c < s.c; ++c) {
                        const Real* d = node.grad.plane(n, c);
                        for (int y = 0; y < s.h; ++y) {
                            Real* r = padded.data() + (y + 1) * pw + 1;
                            const Real* ic = inv_count.data() + std::int64_t(y) * s.w;
                            for (int x = 0; x < s.w; ++x) r[x] = d[y * s.w + x] * ic[x];
                        }
                        Real* q = gin->plane(n, c);
                        for (int y = 0; y < s.h; ++y) {
                            Real* qrow = q + std::int64_t(y) * s.w;
                            for (int dy = 0; dy < 3; ++dy) {
                                const Real* r = padded.data() + (y + dy) * pw;
                                for (int x = 0; x < s.w; ++x) qrow[x] += r[x] + r[x + 1] + r[x + 2];
                            }
                        }
                    }
                return;
            }
            for (int n = 0; n < s.n; ++n) {
                for (int c = 0; c < s.c; ++c) {
                    const Real* d = node.grad.plane(n, c);
                    Real* q = gin->plane(n, c);
                    for (int oy = 0; oy < os.h; ++oy) {
                        const int y0 = std::max(0, oy * stride - padding);
                        const int y1 = std::min(s.h, oy * stride - padding + kernel);
                        for (int ox = 0; ox < os.w; ++ox) {
                            const int x0 = std::max(0, ox * stride - padding);
                            const int x1 = std::min(s.w, ox * stride - padding + kernel);
                            const Real share = d[oy * os.w + ox] / Real((y1 - y0) * (x1 - x0));
                            for (int iy = y0; iy < y1; ++iy)
                                for (int ix = x0; ix < x1; ++ix) q[iy * s.w + ix] += share;
                        }
                    }
                }
            }
        });
}

Var global_avg_pool(const Var& x) {
    const Shape s = x.shape();
    Tensor out({s.n, s.c, 1, 1});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const Real* p = x.value().plane(n, c);
            Real acc = 0;
            for (std::int64_t i = 0; i < s.plane(); ++i) acc += p[i];
            out.at(n, c, 0, 0) = acc / Real(s.plane());
        }
    trace({"global_avg_pool", s, out.shape()});
    return detail::make_result(std::move(out), {x}, [s](Node& node) {
        Tensor* gin = detail::input_grad(node, 0);
        if (!gin) return;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const Real gv = node.grad.at(n, c, 0, 0) / Real(s.plane());
                Real* q = gin->plane(n, c);
                for (std::int64_t i = 0; i < s.plane(); ++i) q[i] += gv;
            }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Shape s = x.shape();
    const Shape ws = weight.shape();
    require(s.h == 1 && s.w == 1, "linear expects N x C x 1 x 1 input, got " + to_string(s));
    require(ws.c == s.c && ws.h == 1 && ws.w == 1, "linear weight " + to_string(ws) + " vs input " + to_string(s));
    if (bias.defined()) require(bias.value().numel() == ws.n, "linear bias length mismatch");
    Tensor out({s.n, ws.n, 1, 1});
    ConstMatMap W(weight.value().data(), ws.n, ws.c);
    ConstMatMap X(x.value().data(), s.n, s.c);
    MatMap Y(out.data(), s.n, ws.n);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) add_bias(out, bias.value());
    trace({"linear", s, out.shape(), 0, 1, bias.defined()});
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return detail::make_result(std::move(out), std::move(inputs), [s, ws](Node& node) {
        ConstMatMap G(node.grad.data(), s.n, ws.n);
        if (Tensor* gin = detail::input_grad(node, 0)) {
            ConstMatMap W(node.inputs[1]->value.data(), ws.n, ws.c);
            MatMap GX(gin->data(), s.n, s.c);
            GX.noalias() += G * W;
        }
        if (Tensor* gw = detail::input_grad(node, 1)) {
            ConstMatMap X(node.inputs[0]->value.data(), s.n, s.c);
            MatMap GW(gw->data(), ws.n, ws.c);
            GW.noalias() += G.transpose() * X;
        }
        if (node.inputs.size() > 2) {
            if (Tensor* gb = detail::input_grad(node, 2)) bias_grad(node.grad, *gb);
        }
    });
}

// ---------------------------------------------------------------------------

Var scale_blocks(const Var& x, const Var& gate) {
    const Shape s = x.shape();
    const Shape gs = gate.shape();
    require(gs.n == s.n && gs.h == 1 && gs.w == 1 && gs.c > 0 && s.c % gs.c == 0,
            "scale_blocks gate " + to_string(gs) + " incompatible with " + to_string(s));
    const int block = s.c / gs.c;
    Tensor out = Tensor::uninitialized(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const Real g = gate.value().at(n, c / block, 0, 0);
            const Real* p = x.value().plane(n, c);
            Real* q = out.plane(n, c);
            for (std::int64_t i = 0; i < s.plane(); ++i) q[i] = g * p[i];
        }
    trace({"scale", s, s});
    return detail::make_result(std::move(out), {x, gate}, [s, block](Node& node) {
        Tensor* gin = detail::input_grad(node, 0);
        Tensor* gg = detail::input_grad(node, 1);
        const Tensor& in = node.inputs[0]->value;
        const Tensor& gate = node.inputs[1]->value;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const Real g = gate.at(n, c / block, 0, 0);
                const Real* d = node.grad.plane(n, c);
                const Real* p = in.plane(n, c);
                if (gin) {
                    Real* q = gin->plane(n, c);
                    for (std::int64_t i = 0; i < s.plane(); ++i) q[i] += g * d[i];
                }
                if (gg) {
                    Real acc = 0;
                    for (std::int64_t i = 0; i < s.plane(); ++i) acc += d[i] * p[i];
                    gg->at(n, c / block, 0, 0) += acc;
                }
            }
    });
}

Var scale_spatial(const Var& x, const Var& gate) {
    const Shape s = x.shape();
    const Shape gs = gate.shape();
    require(gs.n == s.n && gs.c == 1 && gs.h == s.h && gs.w == s.w,
            "scale_spatial gate " + to_string(gs) + " incompatible with " + to_string(s));
    Tensor out = Tensor::uninitialized(s);
    for (int n = 0; n < s.n; ++n) {
        const Real* g = gate.value().plane(n, 0);
        for (int c = 0; c < s.c; ++c) {
            const Real* p = x.value().plane(n, c);
            Real* q = out.plane(n, c);
            for (std::int64_t i = 0; i < s.plane(); ++i) q[i] = g[i] * p[i];
        }
    }
    trace({"scale", s, s});
    return detail::make_result(std::move(out), {x, gate}, [s](Node& node) {
        Tensor* gin = detail::input_grad(node, 0);
        Tensor* gg = detail::input_grad(node, 1);
        const Tensor& in = node.inputs[0]->value;
        const Tensor& gate = node.inputs[1]->value;
        for (int n = 0; n < s.n; ++n) {
            const Real* g = gate.plane(n, 0);
            for (int c = 0; c < s.c; ++c) {
                const Real* d = node.grad.plane(n, c);
                const Real* p = in.plane(n, c);
                if (gin) {
                    Real* q = gin->plane(n, c);
                    for (std::int64_t i = 0; i < s.plane(); ++i) q[i] += g[i] * d[i];
                }
                if (gg) {
                    Real* q = gg->plane(n, 0);
                    for (std::int64_t i = 0; i < s.plane(); ++i) q[i] += d[i] * p[i];
                }
            }
        }
    });
}

Var channel_mean_max(const Var& x) {
    const Shape s = x.shape();
    require(s.c >= 1, "channel_mean_max on zero channels");
    const Shape os{s.n, 2, s.h, s.w};
    Tensor out(os);
    std::vector<std::int32_t> argmax(std::size_t(s.n * s.plane()));
    for (int n = 0; n < s.n; ++n) {
        Real* mean = out.plane(n, 0);
        Real* mx = out.plane(n, 1);
        const Real* first = x.value().plane(n, 0);
        for (std::int64_t i = 0; i < s.plane(); ++i) {
            mean[i] = first[i];
            mx[i] = first[i];
        }
        std::int32_t* arg = argmax.data() + std::int64_t(n) * s.plane();
        for (int c = 1; c < s.c; ++c) {
            const Real* p = x.value().plane(n, c);
            for (std::int64_t i = 0; i < s.plane(); ++i) {
                mean[i] += p[i];
                if (p[i] > mx[i]) {
                    mx[i] = p[i];
                    arg[i] = c;
                }
            }
        }
        for (std::int64_t i = 0; i < s.plane(); ++i) mean[i] /= Real(s.c);
    }
    trace({"channel_pool", s, os});
    return detail::make_result(std::move(out), {x}, [s, argmax = std::move(argmax)](Node& node) {
        Tensor* gin = detail::input_grad(node, 0);
        if (!gin) return;
        for (int n = 0; n < s.n; ++n) {
            const Real* gmean = node.grad.plane(n, 0);
            const Real* gmax = node.grad.plane(n, 1);
            const std::int32_t* arg = argmax.data() + std::int64_t(n) * s.plane();
            for (int c = 0; c < s.c; ++c) {
                Real* q = gin->plane(n, c);
                for (std::int64_t i = 0; i < s.plane(); ++i) q[i] += gmean[i] / Real(s.c);
            }
            for (std::int64_t i = 0; i < s.plane(); ++i) gin->plane(n, arg[i])[i] += gmax[i];
        }
    });
}

// ---------------------------------------------------------------------------

Var concat_channels(std::span<const Var> parts) {
    require(!parts.empty(), "concat_channels of nothing");
    const Shape first = parts[0].shape();
    int channels = 0;
    for (const auto& p : parts) {
        const Shape s = p.shape();
        require(s.n == first.n && s.h == first.h && s.w == first.w,
                "concat_channels " + to_string(s) + " vs " + to_string(first));
        channels += s.c;
    }
    const Shape os{first.n, channels, first.h, first.w};
    Tensor out = Tensor::uninitialized(os);
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const Shape s = p.shape();
        for (int n = 0; n < s.n; ++n)
            std::copy_n(p.value().plane(n, 0), s.c * s.plane(), out.plane(n, off));
        off += s.c;
    }
    trace({"concat", first, os, 0, 1, false, int(parts.size())});
    return detail::make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                               [offsets = std::move(offsets)](Node& node) {
                                   for (std::size_t i = 0; i < node.inputs.size(); ++i) {
                                       Tensor* gin = detail::input_grad(node, i);
                                       if (!gin) continue;
                                       const Shape s = gin->shape();
                                       for (int n = 0; n < s.n; ++n) {
                                           const Real* d = node.grad.plane(n, offsets[i]);
                                           Real* q = gin->plane(n, 0);
                                           for (std::int64_t j = 0; j < s.c * s.plane(); ++j) q[j] += d[j];
                                       }
                                   }
                               });
}

Var add(const Var& a, const Var& b) {
    const Var parts[] = {a, b};
    return add_n(parts);
}

Var add_n(std::span<const Var> parts) {
    require(!parts.empty(), "add_n of nothing");
    const Shape s = parts[0].shape();
    for (const auto& p : parts) require(p.shape() == s, "add_n " + to_string(p.shape()) + " vs " + to_string(s));
    if (parts.size() == 1) return parts[0];
    Tensor out = parts[0].value();
    for (std::size_t i = 1; i < parts.size(); ++i) out.add_(parts[i].value());
    trace({"add", s, s, 0, 1, false, int(parts.size())});
    return detail::make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& node) {
        for (std::size_t i = 0; i < node.inputs.size(); ++i)
            if (Tensor* gin = detail::input_grad(node, i)) gin->add_(node.grad);
    });
}

Var scale(const Var& x, Real factor) {
    Tensor out = x.value();
    for (auto& v : out.values()) v *= factor;
    trace({"scale", x.shape(), x.shape()});
    return detail::make_result(std::move(out), {x}, [factor](Node& node) {
        if (Tensor* gin = detail::input_grad(node, 0)) gin->add_(node.grad, factor);
    });
}

Var dot(const Var& x, const Tensor& w) {
    require(x.shape() == w.shape(), "dot " + to_string(x.shape()) + " vs " + to_string(w.shape()));
    Real acc = 0;
    for (std::int64_t i = 0; i < w.numel(); ++i) acc += x.value()[i] * w[i];
    trace({"dot", x.shape(), {1, 1, 1, 1}});
    return detail::make_result(Tensor::scalar(acc), {x}, [w](Node& node) {
        if (Tensor* gin = detail::input_grad(node, 0)) gin->add_(w, node.grad[0]);
    });
}

Var gather_channels(const Var& x, std::span<const int> channels) {
    const Shape s = x.shape();
    require(!channels.empty(), "gather_channels needs at least one channel");
    for (int c : channels) require(c >= 0 && c < s.c, "gather_channels index out of range");
    const Shape os{s.n, int(channels.size()), s.h, s.w};
    Tensor out = Tensor::uninitialized(os);
    for (int n = 0; n < s.n; ++n)
        for (int k = 0; k < os.c; ++k) std::copy_n(x.value().plane(n, channels[std::size_t(k)]), s.plane(), out.plane(n, k));
    trace({"gather", s, os});
    return detail::make_result(std::move(out), {x},
                               [s, os, idx = std::vector<int>(channels.begin(), channels.end())](Node& node) {
                                   Tensor* gin = detail::input_grad(node, 0);
                                   if (!gin) return;
                                   for (int n = 0; n < s.n; ++n)
                                       for (int k = 0; k < os.c; ++k) {
                                           const Real* d = node.grad.plane(n, k);
                                           Real* q = gin->plane(n, idx[std::size_t(k)]);
                                           for (std::int64_t i = 0; i < s.plane(); ++i) q[i] += d[i];
                                       }
                               });
}

Var softmax(const Var& logits) {
    const Shape s = logits.shape();
    require(s.n == 1 && s.h == 1 && s.w == 1 && s.c >= 1, "softmax expects 1 x K x 1 x 1, got " + to_string(s));
    Tensor out(s);
    const Tensor& in = logits.value();
    Real mx = in[0];
    for (int k = 1; k < s.c; ++k) mx = std::max(mx, in[k]);
    Real z = 0;
    for (int k = 0; k < s.c; ++k) z += (out[k] = std::exp(in[k] - mx));
    for (int k = 0; k < s.c; ++k) out[k] /= z;
    trace({"softmax", s, s});
    return detail::make_result(std::move(out), {logits}, [s](Node& node) {
        Tensor* gin = detail::input_grad(node, 0);
        if (!gin) return;
        const Tensor& y = node.value;
        Real dot = 0;
        for (int k = 0; k < s.c; ++k) dot += node.grad[k] * y[k];
        for (int k = 0; k < s.c; ++k) (*gin)[k] += y[k] * (node.grad[k] - dot);
    });
}

Var mix(const Var& weights, std::span<const Var> outs) {
    const Shape ws = weights.shape();
    require(ws.numel() == std::int64_t(outs.size()),
            "mix: " + std::to_string(outs.size()) + " outputs for " + std::to_string(ws.numel()) + " weights");
    Shape s{};
    bool have = false;
    for (const auto& o : outs) {
        if (!o.defined()) continue;
        if (!have) {
            s = o.shape();
            have = true;
        }
        require(o.shape() == s, "mix operand " + to_string(o.shape()) + " vs " + to_string(s));
    }
    require(have, "mix needs at least one non-zero operand");
    Tensor out(s);
    std::vector<Var> inputs{weights};
    std::vector<int> index;  // position in weights of inputs[1 + i]
    for (std::size_t k = 0; k < outs.size(); ++k) {
        if (!outs[k].defined()) continue;
        out.add_(outs[k].value(), weights.value()[std::int64_t(k)]);
        inputs.push_back(outs[k]);
        index.push_back(int(k));
    }
    trace({"mix", s, s, 0, 1, false, int(index.size())});
    return detail::make_result(std::move(out), std::move(inputs), [index = std::move(index)](Node& node) {
        const Tensor& w = node.inputs[0]->value;
        Tensor* gw = detail::input_grad(node, 0);
        for (std::size_t i = 0; i < index.size(); ++i) {
            const Node& in = *node.inputs[i + 1];
            if (gw) {
                Real acc = 0;
                for (std::int64_t j = 0; j < in.value.numel(); ++j) acc += in.value[j] * node.grad[j];
                (*gw)[index[i]] += acc;
            }
            if (Tensor* gin = detail::input_grad(node, i + 1)) gin->add_(node.grad, w[index[i]]);
        }
    });
}

// ---------------------------------------------------------------------------

namespace {

struct Lerp {
    int i0, i1;
    Real t;
};

std::vector<Lerp> lerp_table(int in, int factor) {
    std::vector<Lerp> table(std::size_t(in) * factor);
    for (int o = 0; o < in * factor; ++o) {
        Real src = (Real(o) + Real(0.5)) / Real(factor) - Real(0.5);
        if (src < 0) src = 0;
        int i0 = int(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        table[std::size_t(o)] = {i0, i1, src - Real(i0)};
    }
    return table;
}

}  // namespace

Var upsample_bilinear(const Var& x, int factor) {
    require(factor >= 1, "upsample factor must be >= 1");
    if (factor == 1) return x;
    const Shape s = x.shape();
    const Shape os{s.n, s.c, s.h * factor, s.w * factor};
    auto ty = lerp_table(s.h, factor);
    auto tx = lerp_table(s.w, factor);
    Tensor out = Tensor::uninitialized(os);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const Real* p = x.value().plane(n, c);
            Real* q = out.plane(n, c);
            for (int oy = 0; oy < os.h; ++oy) {
                const Lerp ly = ty[std::size_t(oy)];
                const Real* r0 = p + std::int64_t(ly.i0) * s.w;
                const Real* r1 = p + std::int64_t(ly.i1) * s.w;
                for (int ox = 0; ox < os.w; ++ox) {
                    const Lerp lx = tx[std::size_t(ox)];
                    const Real top = r0[lx.i0] + lx.t * (r0[lx.i1] - r0[lx.i0]);
                    const Real bot = r1[lx.i0] + lx.t * (r1[lx.i1] - r1[lx.i0]);
                    q[oy * os.w + ox] = top + ly.t * (bot - top);
                }
            }
        }
    trace({"upsample", s, os});
    return detail::make_result(std::move(out), {x}, [s, os, ty = std::move(ty), tx = std::move(tx)](Node& node) {
        Tensor* gin = detail::input_grad(node, 0);
        if (!gin) return;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const Real* d = node.grad.plane(n, c);
                Real* q = gin->plane(n, c);
                for (int oy = 0; oy < os.h; ++oy) {
                    const Lerp ly = ty[std::size_t(oy)];
                    Real* r0 = q + std::int64_t(ly.i0) * s.w;
                    Real* r1 = q + std::int64_t(ly.i1) * s.w;
                    for (int ox = 0; ox < os.w; ++ox) {
                        const Lerp lx = tx[std::size_t(ox)];
                        const Real gv = d[oy * os.w + ox];
                        const Real gtop = gv * (1 - ly.t);
                        const Real gbot = gv * ly.t;
                        r0[lx.i0] += gtop * (1 - lx.t);
                        r0[lx.i1] += gtop * lx.t;
                        r1[lx.i0] += gbot * (1 - lx.t);
                        r1[lx.i1] += gbot * lx.t;
                    }
                }
            }
    });
}

Var subsample(const Var& x, int stride, int offset) {
    require(stride >= 1 && offset >= 0, "subsample invalid arguments");
    const Shape s = x.shape();
    const Shape os{s.n, s.c, (s.h + stride - 1) / stride, (s.w + stride - 1) / stride};
    Tensor out(os);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const Real* p = x.value().plane(n, c);
            Real* q = out.plane(n, c);
            for (int oy = 0; oy < os.h; ++oy) {
                const int iy = oy * stride + offset;
                if (iy >= s.h) continue;
                for (int ox = 0; ox < os.w; ++ox) {
                    const int ix = ox * stride + offset;
                    if (ix < s.w) q[oy * os.w + ox] = p[iy * s.w + ix];
                }
            }
        }
    trace({"subsample", s, os});
    return detail::make_result(std::move(out), {x}, [s, os, stride, offset](Node& node) {
        Tensor* gin = detail::input_grad(node, 0);
        if (!gin) return;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const Real* d = node.grad.plane(n, c);
                Real* q = gin->plane(n, c);
                for (int oy = 0; oy < os.h; ++oy) {
                    const int iy = oy * stride + offset;
                    if (iy >= s.h) continue;
                    for (int ox = 0; ox < os.w; ++ox) {
                        const int ix = ox * stride + offset;
                        if (ix < s.w) q[iy * s.w + ix] += d[oy * os.w + ox];
                    }
                }
            }
    });
}

Var zeros(Shape shape) { return constant(Tensor(shape)); }

// ---------------------------------------------------------------------------

Var bce_dice(const Var& pred, const Tensor& target, Real dice_eps, Real clamp_eps) {
    const Shape s = pred.shape();
    require(s == target.shape(), "bce_dice pred " + to_string(s) + " vs target " + to_string(target.shape()));
    require(s.c == 1, "bce_dice expects single-channel maps");
    const std::int64_t pixels = s.plane();
    const Tensor& p = pred.value();
    Real total = 0;
    // per image: inter, sum_p, sum_t for the dice backward
    std::vector<Real> inter(std::size_t(s.n)), sum_p(std::size_t(s.n)), sum_t(std::size_t(s.n));
    for (int n = 0; n < s.n; ++n) {
        const Real* pp = p.plane(n, 0);
        const Real* tt = target.plane(n, 0);
        Real bce = 0, in = 0, sp = 0, st = 0;
        for (std::int64_t i = 0; i < pixels; ++i) {
            const Real q = std::clamp(pp[i], clamp_eps, 1 - clamp_eps);
            bce -= tt[i] * std::log(q) + (1 - tt[i]) * std::log(1 - q);
            in += q * tt[i];
            sp += q;
            st += tt[i];
        }
        inter[std::size_t(n)] = in;
        sum_p[std::size_t(n)] = sp;
        sum_t[std::size_t(n)] = st;
        total += bce / Real(pixels) + (1 - (2 * in + dice_eps) / (sp + st + dice_eps));
    }
    Tensor out = Tensor::scalar(total / Real(s.n));
    trace({"loss", s, out.shape()});
    return detail::make_result(
        std::move(out), {pred},
        [s, pixels, target, dice_eps, clamp_eps, inter = std::move(inter), sum_p = std::move(sum_p),
         sum_t = std::move(sum_t)](Node& node) {
            Tensor* gin = detail::input_grad(node, 0);
            if (!gin) return;
            const Real g = node.grad[0] / Real(s.n);
            const Tensor& p = node.inputs[0]->value;
            for (int n = 0; n < s.n; ++n) {
                const Real* pp = p.plane(n, 0);
                const Real* tt = target.plane(n, 0);
                Real* q = gin->plane(n, 0);
                const Real num = 2 * inter[std::size_t(n)] + dice_eps;
                const Real den = sum_p[std::size_t(n)] + sum_t[std::size_t(n)] + dice_eps;
                for (std::int64_t i = 0; i < pixels; ++i) {
                    if (pp[i] < clamp_eps || pp[i] > 1 - clamp_eps) continue;
                    const Real v = pp[i];
                    const Real dbce = (-tt[i] / v + (1 - tt[i]) / (1 - v)) / Real(pixels);
                    const Real ddice = -(2 * tt[i] * den - num) / (den * den);
                    q[i] += g * (dbce + ddice);
                }
            }
        });
}

Var bce_dice_logits(const Var& logits, const Tensor& target, Real dice_eps) {
    const Shape s = logits.shape();
    require(s == target.shape(), "bce_dice_logits logits " + to_string(s) + " vs target " + to_string(target.shape()));
    require(s.c == 1, "bce_dice_logits expects single-channel maps");
    const std::int64_t pixels = s.plane();
    const Tensor& z = logits.value();
    Tensor prob(s);
    Real total = 0;
    std::vector<Real> inter(std::size_t(s.n)), sum_p(std::size_t(s.n)), sum_t(std::size_t(s.n));
    for (int n = 0; n < s.n; ++n) {
        const Real* zz = z.plane(n, 0);
        const Real* tt = target.plane(n, 0);
        Real* pp = prob.plane(n, 0);
        Real bce = 0, in = 0, sp = 0, st = 0;
        for (std::int64_t i = 0; i < pixels; ++i) {
            // log(1 + e^z) - t z, stable for either sign of z
            bce += std::max(zz[i], Real(0)) + std::log1p(std::exp(-std::abs(zz[i]))) - tt[i] * zz[i];
            pp[i] = zz[i] >= 0 ? 1 / (1 + std::exp(-zz[i])) : std::exp(zz[i]) / (1 + std::exp(zz[i]));
            in += pp[i] * tt[i];
            sp += pp[i];
            st += tt[i];
        }
        inter[std::size_t(n)] = in;
        sum_p[std::size_t(n)] = sp;
        sum_t[std::size_t(n)] = st;
        total += bce / Real(pixels) + (1 - (2 * in + dice_eps) / (sp + st + dice_eps));
    }
    Tensor out = Tensor::scalar(total / Real(s.n));
    trace({"loss", s, out.shape()});
    return detail::make_result(
        std::move(out), {logits},
        [s, pixels, target, dice_eps, prob = std::move(prob), inter = std::move(inter), sum_p = std::move(sum_p),
         sum_t = std::move(sum_t)](Node& node) {
            Tensor* gin = detail::input_grad(node, 0);
            if (!gin) return;
            const Real g = node.grad[0] / Real(s.n);
            for (int n = 0; n < s.n; ++n) {
                const Real* pp = prob.plane(n, 0);
                const Real* tt = target.plane(n, 0);
                Real* q = gin->plane(n, 0);
                const Real num = 2 * inter[std::size_t(n)] + dice_eps;
                const Real den = sum_p[std::size_t(n)] + sum_t[std::size_t(n)] + dice_eps;
                for (std::int64_t i = 0; i < pixels; ++i) {
                    const Real v = pp[i];
                    const Real dbce = (v - tt[i]) / Real(pixels);
                    const Real ddice = -(2 * tt[i] * den - num) / (den * den) * v * (1 - v);
                    q[i] += g * (dbce + ddice);
                }
            }
        });
}

// ---------------------------------------------------------------------------

TraceScope::TraceScope() : previous_(g_trace) { g_trace = &events_; }
TraceScope::~TraceScope() { g_trace = previous_; }

void trace(const OpEvent& event) {
    if (g_trace) g_trace->push_back(event);
}

}  // namespace nasdet::fn
