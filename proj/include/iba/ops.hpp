#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>

#include "iba/tensor.hpp"

namespace iba {

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

template <class Real>
void check_same_shape(const TensorT<Real>& a, const TensorT<Real>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

// Reflect an index into [0,n), mirroring at the borders (edge included).
inline int fold_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = (i < 0) ? -1 - i : 2 * n - 1 - i;
    return i;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<Real> out(a.vec());
    const Real* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
    return detail::make_result<Real>(a.shape(), std::move(out), {a.node(), b.node()},
        [](detail::TapeNode<Real>& n) {
            for (int k = 0; k < 2; ++k) {
                auto& p = *n.parents[static_cast<size_t>(k)];
                if (!p.requires_grad) continue;
                for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
            }
        });
}

template <class Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<Real> out(a.vec());
    const Real* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
    return detail::make_result<Real>(a.shape(), std::move(out), {a.node(), b.node()},
        [](detail::TapeNode<Real>& n) {
            auto& pa = *n.parents[0];
            auto& pb2 = *n.parents[1];
            if (pa.requires_grad)
                for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
            if (pb2.requires_grad)
                for (size_t i = 0; i < n.grad.size(); ++i) pb2.grad[i] -= n.grad[i];
        });
}

template <class Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<Real> out(a.vec());
    const Real* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
    return detail::make_result<Real>(a.shape(), std::move(out), {a.node(), b.node()},
        [](detail::TapeNode<Real>& n) {
            auto& pa = *n.parents[0];
            auto& pb2 = *n.parents[1];
            if (pa.requires_grad)
                for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb2.value[i];
            if (pb2.requires_grad)
                for (size_t i = 0; i < n.grad.size(); ++i) pb2.grad[i] += n.grad[i] * pa.value[i];
        });
}

template <class Real>
TensorT<Real> scalar_mul(const TensorT<Real>& a, Real c) {
    std::vector<Real> out(a.vec());
    for (auto& v : out) v *= c;
    return detail::make_result<Real>(a.shape(), std::move(out), {a.node()},
        [c](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
        });
}

template <class Real>
TensorT<Real> scalar_add(const TensorT<Real>& a, Real c) {
    std::vector<Real> out(a.vec());
    for (auto& v : out) v += c;
    return detail::make_result<Real>(a.shape(), std::move(out), {a.node()},
        [](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        });
}

template <class Real>
TensorT<Real> relu(const TensorT<Real>& x) {
    std::vector<Real> out(x.vec());
    for (auto& v : out) v = v > Real(0) ? v : Real(0);
    return detail::make_result<Real>(x.shape(), std::move(out), {x.node()},
        [](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i)
                if (p.value[i] > Real(0)) p.grad[i] += n.grad[i];
        });
}

// ReLU whose backward also gates on the sign of the incoming gradient
// (guided backpropagation rule).
template <class Real>
TensorT<Real> relu_guided(const TensorT<Real>& x) {
    std::vector<Real> out(x.vec());
    for (auto& v : out) v = v > Real(0) ? v : Real(0);
    return detail::make_result<Real>(x.shape(), std::move(out), {x.node()},
        [](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i)
                if (p.value[i] > Real(0) && n.grad[i] > Real(0)) p.grad[i] += n.grad[i];
        });
}

template <class Real>
TensorT<Real> sigmoid(const TensorT<Real>& x) {
    std::vector<Real> out(x.vec());
    for (auto& v : out) {
        if (v >= Real(0)) {
            const Real e = std::exp(-v);
            v = Real(1) / (Real(1) + e);
        } else {
            const Real e = std::exp(v);
            v = e / (Real(1) + e);
        }
    }
    return detail::make_result<Real>(x.shape(), std::move(out), {x.node()},
        [](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) {
                const Real y = n.value[i];
                p.grad[i] += n.grad[i] * y * (Real(1) - y);
            }
        });
}

// log with inputs clamped away from 0 by 1e-12
template <class Real>
TensorT<Real> log_op(const TensorT<Real>& x) {
    constexpr Real kEps = Real(1e-12);
    std::vector<Real> out(x.vec());
    for (auto& v : out) v = std::log(std::max(v, kEps));
    return detail::make_result<Real>(x.shape(), std::move(out), {x.node()},
        [](detail::TapeNode<Real>& n) {
            constexpr Real eps = Real(1e-12);
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) {
                const Real xv = p.value[i];
                if (xv > eps) p.grad[i] += n.grad[i] / xv;
            }
        });
}

template <class Real>
TensorT<Real> exp_op(const TensorT<Real>& x) {
    std::vector<Real> out(x.vec());
    for (auto& v : out) v = std::exp(v);
    return detail::make_result<Real>(x.shape(), std::move(out), {x.node()},
        [](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * n.value[i];
        });
}

// ---------------------------------------------------------------------------
// reductions and shape ops
// ---------------------------------------------------------------------------

template <class Real>
TensorT<Real> sum_all(const TensorT<Real>& x) {
    Real s = 0;
    for (Real v : x.vec()) s += v;
    return detail::make_result<Real>({1}, {s}, {x.node()},
        [](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            const Real g = n.grad[0];
            for (auto& gv : p.grad) gv += g;
        });
}

template <class Real>
TensorT<Real> mean(const TensorT<Real>& x) {
    Real s = 0;
    for (Real v : x.vec()) s += v;
    const Real inv = Real(1) / static_cast<Real>(x.size());
    return detail::make_result<Real>({1}, {s * inv}, {x.node()},
        [inv](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            const Real g = n.grad[0] * inv;
            for (auto& gv : p.grad) gv += g;
        });
}

// Sums out one axis; result drops that axis (rank-1 inputs give a scalar).
template <class Real>
TensorT<Real> sum_axis(const TensorT<Real>& x, int axis) {
    const Shape& s = x.shape();
    detail::require(axis >= 0 && axis < x.rank(), "sum_axis: axis out of range for " + shape_str(s));
    int outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
    const int nax = s[static_cast<size_t>(axis)];
    Shape os;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) os.push_back(s[static_cast<size_t>(i)]);
    if (os.empty()) os = {1};
    std::vector<Real> out(static_cast<size_t>(outer) * inner, Real(0));
    const Real* px = x.data();
    for (int o = 0; o < outer; ++o)
        for (int a = 0; a < nax; ++a) {
            const Real* src = px + (static_cast<size_t>(o) * nax + a) * inner;
            Real* dst = out.data() + static_cast<size_t>(o) * inner;
            for (int i = 0; i < inner; ++i) dst[i] += src[i];
        }
    return detail::make_result<Real>(os, std::move(out), {x.node()},
        [outer, inner, nax](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (int o = 0; o < outer; ++o)
                for (int a = 0; a < nax; ++a) {
                    Real* dst = p.grad.data() + (static_cast<size_t>(o) * nax + a) * inner;
                    const Real* g = n.grad.data() + static_cast<size_t>(o) * inner;
                    for (int i = 0; i < inner; ++i) dst[i] += g[i];
                }
        });
}

template <class Real>
TensorT<Real> reshape(const TensorT<Real>& x, Shape s) {
    check_shape(s);
    detail::require(numel(s) == x.size(),
                    "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
    return detail::make_result<Real>(std::move(s), x.vec(), {x.node()},
        [](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        });
}

// Replicates a [C,H,W] (or any) tensor B times along a new leading axis.
// Backward sums over the copies.
template <class Real>
TensorT<Real> tile_batch(const TensorT<Real>& x, int copies) {
    detail::require(copies >= 1, "tile_batch: copies must be >= 1");
    detail::require(x.rank() < 4, "tile_batch: input rank must be < 4");
    Shape os;
    os.push_back(copies);
    for (int d : x.shape()) os.push_back(d);
    const size_t n = x.vec().size();
    std::vector<Real> out(n * static_cast<size_t>(copies));
    for (int b = 0; b < copies; ++b)
        std::memcpy(out.data() + static_cast<size_t>(b) * n, x.data(), n * sizeof(Real));
    return detail::make_result<Real>(std::move(os), std::move(out), {x.node()},
        [copies, n](detail::TapeNode<Real>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            for (int b = 0; b < copies; ++b) {
                const Real* g = node.grad.data() + static_cast<size_t>(b) * n;
                for (size_t i = 0; i < n; ++i) p.grad[i] += g[i];
            }
        });
}

// Concatenates rank-4 tensors along the channel axis.
template <class Real>
TensorT<Real> concat_channels(const std::vector<TensorT<Real>>& xs) {
    detail::require(!xs.empty(), "concat_channels: empty input list");
    const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int ctot = 0;
    std::vector<std::shared_ptr<detail::TapeNode<Real>>> parents;
    for (const auto& x : xs) {
        detail::require(x.rank() == 4, "concat_channels: inputs must be rank 4");
        detail::require(x.dim(0) == N && x.dim(2) == H && x.dim(3) == W,
                        "concat_channels: spatial/batch mismatch " + shape_str(x.shape()));
        ctot += x.dim(1);
        parents.push_back(x.node());
    }
    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<Real> out(static_cast<size_t>(N) * ctot * plane);
    std::vector<int> chans;
    for (const auto& x : xs) chans.push_back(x.dim(1));
    for (int n = 0; n < N; ++n) {
        size_t coff = 0;
        for (size_t k = 0; k < xs.size(); ++k) {
            const size_t bytes = static_cast<size_t>(chans[k]) * plane;
            std::memcpy(out.data() + (static_cast<size_t>(n) * ctot) * plane + coff * plane,
                        xs[k].data() + static_cast<size_t>(n) * bytes, bytes * sizeof(Real));
            coff += static_cast<size_t>(chans[k]);
        }
    }
    return detail::make_result<Real>({N, ctot, H, W}, std::move(out), std::move(parents),
        [N, ctot, plane, chans](detail::TapeNode<Real>& node) {
            size_t coff = 0;
            for (size_t k = 0; k < node.parents.size(); ++k) {
                auto& p = *node.parents[k];
                const size_t sz = static_cast<size_t>(chans[k]) * plane;
                if (p.requires_grad) {
                    for (int n = 0; n < N; ++n) {
                        const Real* g = node.grad.data() + (static_cast<size_t>(n) * ctot + coff) * plane;
                        Real* dst = p.grad.data() + static_cast<size_t>(n) * sz;
                        for (size_t i = 0; i < sz; ++i) dst[i] += g[i];
                    }
                }
                coff += static_cast<size_t>(chans[k]);
            }
        });
}

// ---------------------------------------------------------------------------
// neural network ops
// ---------------------------------------------------------------------------

// y[N,O] = x[N,F] * w[O,F]^T + b[O]
template <class Real>
TensorT<Real> dense(const TensorT<Real>& x, const TensorT<Real>& w, const TensorT<Real>& b) {
    detail::require(x.rank() == 2, "dense: input must be rank 2, got " + shape_str(x.shape()));
    detail::require(w.rank() == 2 && b.rank() == 1, "dense: weight/bias rank mismatch");
    const int N = x.dim(0), F = x.dim(1), O = w.dim(0);
    detail::require(w.dim(1) == F && b.dim(0) == O,
                    "dense: x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) + " b" +
                        shape_str(b.shape()));
    std::vector<Real> out(static_cast<size_t>(N) * O);
    const Real* px = x.data();
    const Real* pw = w.data();
    const Real* pb = b.data();
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            Real acc = pb[o];
            const Real* xr = px + static_cast<size_t>(n) * F;
            const Real* wr = pw + static_cast<size_t>(o) * F;
            for (int f = 0; f < F; ++f) acc += xr[f] * wr[f];
            out[static_cast<size_t>(n) * O + o] = acc;
        }
    return detail::make_result<Real>({N, O}, std::move(out), {x.node(), w.node(), b.node()},
        [N, F, O](detail::TapeNode<Real>& node) {
            auto& px2 = *node.parents[0];
            auto& pw2 = *node.parents[1];
            auto& pb2 = *node.parents[2];
            const Real* g = node.grad.data();
            if (px2.requires_grad) {
                for (int n = 0; n < N; ++n)
                    for (int o = 0; o < O; ++o) {
                        const Real gv = g[static_cast<size_t>(n) * O + o];
                        const Real* wr = pw2.value.data() + static_cast<size_t>(o) * F;
                        Real* dx = px2.grad.data() + static_cast<size_t>(n) * F;
                        for (int f = 0; f < F; ++f) dx[f] += gv * wr[f];
                    }
            }
            if (pw2.requires_grad) {
                for (int n = 0; n < N; ++n)
                    for (int o = 0; o < O; ++o) {
                        const Real gv = g[static_cast<size_t>(n) * O + o];
                        const Real* xr = px2.value.data() + static_cast<size_t>(n) * F;
                        Real* dw = pw2.grad.data() + static_cast<size_t>(o) * F;
                        for (int f = 0; f < F; ++f) dw[f] += gv * xr[f];
                    }
            }
            if (pb2.requires_grad) {
                for (int n = 0; n < N; ++n)
                    for (int o = 0; o < O; ++o) pb2.grad[static_cast<size_t>(o)] += g[static_cast<size_t>(n) * O + o];
            }
        });
}

namespace detail {

template <class Real>
std::vector<Real> pad_nchw(const Real* src, int N, int C, int H, int W, int pad) {
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    std::vector<Real> out(static_cast<size_t>(N) * C * Hp * Wp, Real(0));
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y) {
                const Real* s = src + ((static_cast<size_t>(n) * C + c) * H + y) * W;
                Real* d = out.data() + ((static_cast<size_t>(n) * C + c) * Hp + (y + pad)) * Wp + pad;
                std::memcpy(d, s, static_cast<size_t>(W) * sizeof(Real));
            }
    return out;
}

}  // namespace detail

// 2-D convolution, NCHW layout.  H' = floor((H + 2*pad - kh)/stride) + 1.
template <class Real>
TensorT<Real> conv2d(const TensorT<Real>& x, const TensorT<Real>& w, const TensorT<Real>& b,
                     int stride = 1, int pad = 0) {
    detail::require(x.rank() == 4, "conv2d: input must be rank 4, got " + shape_str(x.shape()));
    detail::require(w.rank() == 4, "conv2d: weight must be rank 4, got " + shape_str(w.shape()));
    detail::require(b.rank() == 1, "conv2d: bias must be rank 1, got " + shape_str(b.shape()));
    detail::require(stride >= 1, "conv2d: stride must be >= 1, got " + std::to_string(stride));
    detail::require(pad >= 0, "conv2d: pad must be >= 0");
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    detail::require(w.dim(1) == Cin,
                    "conv2d: input channels " + std::to_string(Cin) + " but weight expects " +
                        std::to_string(w.dim(1)) + " (w=" + shape_str(w.shape()) + ")");
    detail::require(b.dim(0) == Cout, "conv2d: bias size " + std::to_string(b.dim(0)) +
                                          " != out channels " + std::to_string(Cout));
    detail::require(kh <= H + 2 * pad && kw <= W + 2 * pad,
                    "conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                        shape_str(x.shape()) + " with pad " + std::to_string(pad));
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    const int OH = (Hp - kh) / stride + 1, OW = (Wp - kw) / stride + 1;

    std::vector<Real> padded = detail::pad_nchw(x.data(), N, Cin, H, W, pad);
    std::vector<Real> out(static_cast<size_t>(N) * Cout * OH * OW);
    const Real* pw = w.data();
    const Real* pb = b.data();
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
            Real* oplane = out.data() + (static_cast<size_t>(n) * Cout + co) * OH * OW;
            const Real bias = pb[co];
            for (int i = 0; i < OH * OW; ++i) oplane[i] = bias;
            for (int ci = 0; ci < Cin; ++ci) {
                const Real* iplane = padded.data() + (static_cast<size_t>(n) * Cin + ci) * Hp * Wp;
                const Real* wk = pw + ((static_cast<size_t>(co) * Cin + ci) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const Real wv = wk[static_cast<size_t>(ky) * kw + kx];
                        for (int oy = 0; oy < OH; ++oy) {
                            const Real* src = iplane + (static_cast<size_t>(oy) * stride + ky) * Wp + kx;
                            Real* dst = oplane + static_cast<size_t>(oy) * OW;
                            if (stride == 1) {
                                for (int ox = 0; ox < OW; ++ox) dst[ox] += wv * src[ox];
                            } else {
                                for (int ox = 0; ox < OW; ++ox) dst[ox] += wv * src[static_cast<size_t>(ox) * stride];
                            }
                        }
                    }
            }
        }

    auto backprop = [N, Cin, H, W, Cout, kh, kw, stride, pad, Hp, Wp, OH, OW,
                     padded = std::move(padded)](detail::TapeNode<Real>& node) {
        auto& px = *node.parents[0];
        auto& pw2 = *node.parents[1];
        auto& pb2 = *node.parents[2];
        const Real* g = node.grad.data();
        if (px.requires_grad) {
            std::vector<Real> dpad(static_cast<size_t>(N) * Cin * Hp * Wp, Real(0));
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Cout; ++co) {
                    const Real* gplane = g + (static_cast<size_t>(n) * Cout + co) * OH * OW;
                    for (int ci = 0; ci < Cin; ++ci) {
                        Real* dplane = dpad.data() + (static_cast<size_t>(n) * Cin + ci) * Hp * Wp;
                        const Real* wk = pw2.value.data() + ((static_cast<size_t>(co) * Cin + ci) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const Real wv = wk[static_cast<size_t>(ky) * kw + kx];
                                for (int oy = 0; oy < OH; ++oy) {
                                    Real* dst = dplane + (static_cast<size_t>(oy) * stride + ky) * Wp + kx;
                                    const Real* gr = gplane + static_cast<size_t>(oy) * OW;
                                    if (stride == 1) {
                                        for (int ox = 0; ox < OW; ++ox) dst[ox] += wv * gr[ox];
                                    } else {
                                        for (int ox = 0; ox < OW; ++ox) dst[static_cast<size_t>(ox) * stride] += wv * gr[ox];
                                    }
                                }
                            }
                    }
                }
            // crop padding back off
            for (int n = 0; n < N; ++n)
                for (int ci = 0; ci < Cin; ++ci)
                    for (int y = 0; y < H; ++y) {
                        const Real* s = dpad.data() + ((static_cast<size_t>(n) * Cin + ci) * Hp + y + pad) * Wp + pad;
                        Real* d = px.grad.data() + ((static_cast<size_t>(n) * Cin + ci) * H + y) * W;
                        for (int xi = 0; xi < W; ++xi) d[xi] += s[xi];
                    }
        }
        if (pw2.requires_grad) {
            // lane-partitioned accumulators so the reduction vectorizes under
            // strict FP semantics; summation order is fixed and deterministic
            constexpr int kLanes = 16;
            Real lanes[kLanes];
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Cout; ++co) {
                    const Real* gplane = g + (static_cast<size_t>(n) * Cout + co) * OH * OW;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const Real* iplane = padded.data() + (static_cast<size_t>(n) * Cin + ci) * Hp * Wp;
                        Real* dwk = pw2.grad.data() + ((static_cast<size_t>(co) * Cin + ci) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                for (int l = 0; l < kLanes; ++l) lanes[l] = Real(0);
                                for (int oy = 0; oy < OH; ++oy) {
                                    const Real* src = iplane + (static_cast<size_t>(oy) * stride + ky) * Wp + kx;
                                    const Real* gr = gplane + static_cast<size_t>(oy) * OW;
                                    if (stride == 1) {
                                        int ox = 0;
                                        for (; ox + kLanes <= OW; ox += kLanes)
                                            for (int l = 0; l < kLanes; ++l) lanes[l] += src[ox + l] * gr[ox + l];
                                        for (; ox < OW; ++ox) lanes[ox % kLanes] += src[ox] * gr[ox];
                                    } else {
                                        for (int ox = 0; ox < OW; ++ox)
                                            lanes[ox % kLanes] += src[static_cast<size_t>(ox) * stride] * gr[ox];
                                    }
                                }
                                Real acc = 0;
                                for (int l = 0; l < kLanes; ++l) acc += lanes[l];
                                dwk[static_cast<size_t>(ky) * kw + kx] += acc;
                            }
                    }
                }
        }
        if (pb2.requires_grad) {
            constexpr int kLanes = 16;
            Real lanes[kLanes];
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Cout; ++co) {
                    const Real* gplane = g + (static_cast<size_t>(n) * Cout + co) * OH * OW;
                    for (int l = 0; l < kLanes; ++l) lanes[l] = Real(0);
                    int i = 0;
                    const int total = OH * OW;
                    for (; i + kLanes <= total; i += kLanes)
                        for (int l = 0; l < kLanes; ++l) lanes[l] += gplane[i + l];
                    for (; i < total; ++i) lanes[i % kLanes] += gplane[i];
                    Real acc = 0;
                    for (int l = 0; l < kLanes; ++l) acc += lanes[l];
                    pb2.grad[static_cast<size_t>(co)] += acc;
                }
        }
    };
    return detail::make_result<Real>({N, Cout, OH, OW}, std::move(out),
                                     {x.node(), w.node(), b.node()}, std::move(backprop));
}

// Max pooling; gradient routes to the max element, ties broken by lowest flat
// index (the first maximum in row-major window scan).
template <class Real>
TensorT<Real> maxpool2d(const TensorT<Real>& x, int k = 2, int stride = 2) {
    detail::require(x.rank() == 4, "maxpool2d: input must be rank 4, got " + shape_str(x.shape()));
    detail::require(k >= 1 && stride >= 1, "maxpool2d: bad kernel/stride");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::require(k <= H && k <= W, "maxpool2d: kernel larger than input " + shape_str(x.shape()));
    const int OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
    std::vector<Real> out(static_cast<size_t>(N) * C * OH * OW);
    std::vector<int> arg(out.size());
    const Real* px = x.data();
    for (int nc = 0; nc < N * C; ++nc) {
        const Real* plane = px + static_cast<size_t>(nc) * H * W;
        Real* oplane = out.data() + static_cast<size_t>(nc) * OH * OW;
        int* aplane = arg.data() + static_cast<size_t>(nc) * OH * OW;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                Real best = plane[static_cast<size_t>(oy) * stride * W + ox * stride];
                int besti = oy * stride * W + ox * stride;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const int idx = (oy * stride + ky) * W + ox * stride + kx;
                        if (plane[idx] > best) {
                            best = plane[idx];
                            besti = idx;
                        }
                    }
                oplane[static_cast<size_t>(oy) * OW + ox] = best;
                aplane[static_cast<size_t>(oy) * OW + ox] = besti;
            }
    }
    const size_t plane_in = static_cast<size_t>(H) * W, plane_out = static_cast<size_t>(OH) * OW;
    return detail::make_result<Real>({N, C, OH, OW}, std::move(out), {x.node()},
        [arg = std::move(arg), plane_in, plane_out, NC = N * C](detail::TapeNode<Real>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            for (int nc = 0; nc < NC; ++nc) {
                Real* dst = p.grad.data() + static_cast<size_t>(nc) * plane_in;
                const Real* g = node.grad.data() + static_cast<size_t>(nc) * plane_out;
                const int* a = arg.data() + static_cast<size_t>(nc) * plane_out;
                for (size_t i = 0; i < plane_out; ++i) dst[a[i]] += g[i];
            }
        });
}

// Row-wise softmax over the last axis of a rank-2 tensor.
template <class Real>
TensorT<Real> softmax(const TensorT<Real>& x) {
    detail::require(x.rank() == 2, "softmax: input must be rank 2, got " + shape_str(x.shape()));
    const int N = x.dim(0), C = x.dim(1);
    std::vector<Real> out(x.vec());
    for (int n = 0; n < N; ++n) {
        Real* row = out.data() + static_cast<size_t>(n) * C;
        Real mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        Real s = 0;
        for (int c = 0; c < C; ++c) {
            row[c] = std::exp(row[c] - mx);
            s += row[c];
        }
        const Real inv = Real(1) / s;
        for (int c = 0; c < C; ++c) row[c] *= inv;
    }
    return detail::make_result<Real>({N, C}, std::move(out), {x.node()},
        [N, C](detail::TapeNode<Real>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            for (int n = 0; n < N; ++n) {
                const Real* y = node.value.data() + static_cast<size_t>(n) * C;
                const Real* g = node.grad.data() + static_cast<size_t>(n) * C;
                Real dot = 0;
                for (int c = 0; c < C; ++c) dot += g[c] * y[c];
                Real* dx = p.grad.data() + static_cast<size_t>(n) * C;
                for (int c = 0; c < C; ++c) dx[c] += (g[c] - dot) * y[c];
            }
        });
}

// Mean cross-entropy of logits against integer class targets, computed with a
// stable log-sum-exp.
template <class Real>
TensorT<Real> cross_entropy(const TensorT<Real>& logits, const std::vector<int>& targets) {
    detail::require(logits.rank() == 2, "cross_entropy: logits must be rank 2");
    const int N = logits.dim(0), C = logits.dim(1);
    detail::require(static_cast<int>(targets.size()) == N,
                    "cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                        std::to_string(N));
    for (int t : targets)
        detail::require(t >= 0 && t < C, "cross_entropy: target " + std::to_string(t) +
                                             " out of range [0," + std::to_string(C) + ")");
    const Real* px = logits.data();
    std::vector<Real> probs(static_cast<size_t>(N) * C);
    Real loss = 0;
    for (int n = 0; n < N; ++n) {
        const Real* row = px + static_cast<size_t>(n) * C;
        Real mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        Real s = 0;
        for (int c = 0; c < C; ++c) s += std::exp(row[c] - mx);
        const Real lse = mx + std::log(s);
        loss += lse - row[targets[static_cast<size_t>(n)]];
        for (int c = 0; c < C; ++c) probs[static_cast<size_t>(n) * C + c] = std::exp(row[c] - lse);
    }
    loss /= static_cast<Real>(N);
    return detail::make_result<Real>({1}, {loss}, {logits.node()},
        [N, C, targets, probs = std::move(probs)](detail::TapeNode<Real>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            const Real g = node.grad[0] / static_cast<Real>(N);
            for (int n = 0; n < N; ++n) {
                Real* dx = p.grad.data() + static_cast<size_t>(n) * C;
                const Real* pr = probs.data() + static_cast<size_t>(n) * C;
                for (int c = 0; c < C; ++c) dx[c] += g * pr[c];
                dx[targets[static_cast<size_t>(n)]] -= g;
            }
        });
}

// Extracts one element as a scalar (gradient routes to that element).
template <class Real>
TensorT<Real> pick(const TensorT<Real>& x, int flat_index) {
    detail::require(flat_index >= 0 && flat_index < x.size(),
                    "pick: index " + std::to_string(flat_index) + " out of range for " +
                        shape_str(x.shape()));
    return detail::make_result<Real>({1}, {x.data()[flat_index]}, {x.node()},
        [flat_index](detail::TapeNode<Real>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            p.grad[static_cast<size_t>(flat_index)] += n.grad[0];
        });
}

// ---------------------------------------------------------------------------
// image ops
// ---------------------------------------------------------------------------

inline std::vector<double> gaussian_kernel_1d(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double s = 0;
    for (int t = -radius; t <= radius; ++t) {
        const double v = std::exp(-0.5 * (t * t) / (sigma * sigma));
        k[static_cast<size_t>(t + radius)] = v;
        s += v;
    }
    for (auto& v : k) v /= s;
    return k;
}

namespace detail {

// separable 1-D pass along the last axis of rows x cols planes, reflect padding
template <class Real>
void blur_pass(const Real* src, Real* dst, int rows, int cols, const std::vector<double>& k,
               bool transpose) {
    const int radius = static_cast<int>(k.size() / 2);
    if (!transpose) {
        for (int r = 0; r < rows; ++r) {
            const Real* s = src + static_cast<size_t>(r) * cols;
            Real* d = dst + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) {
                double acc = 0;
                for (int t = -radius; t <= radius; ++t)
                    acc += k[static_cast<size_t>(t + radius)] * s[fold_index(c + t, cols)];
                d[c] = static_cast<Real>(acc);
            }
        }
    } else {
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r) {
                double acc = 0;
                for (int t = -radius; t <= radius; ++t)
                    acc += k[static_cast<size_t>(t + radius)] *
                           src[static_cast<size_t>(fold_index(r + t, rows)) * cols + c];
                dst[static_cast<size_t>(r) * cols + c] = static_cast<Real>(acc);
            }
    }
}

// adjoint of blur_pass (scatter instead of gather)
template <class Real>
void blur_pass_adjoint(const Real* g, Real* dst, int rows, int cols, const std::vector<double>& k,
                       bool transpose) {
    const int radius = static_cast<int>(k.size() / 2);
    if (!transpose) {
        for (int r = 0; r < rows; ++r) {
            const Real* gr = g + static_cast<size_t>(r) * cols;
            Real* d = dst + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c)
                for (int t = -radius; t <= radius; ++t)
                    d[fold_index(c + t, cols)] += static_cast<Real>(k[static_cast<size_t>(t + radius)]) * gr[c];
        }
    } else {
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r)
                for (int t = -radius; t <= radius; ++t)
                    dst[static_cast<size_t>(fold_index(r + t, rows)) * cols + c] +=
                        static_cast<Real>(k[static_cast<size_t>(t + radius)]) * g[static_cast<size_t>(r) * cols + c];
    }
}

}  // namespace detail

// Separable Gaussian blur over the trailing two axes (rank 3 or 4 input).
// Kernel radius ceil(3*sigma), normalized to sum 1, reflect padding.
// sigma == 0 is the identity.
template <class Real>
TensorT<Real> gaussian_blur(const TensorT<Real>& x, double sigma) {
    detail::require(sigma >= 0.0, "gaussian_blur: sigma must be >= 0");
    detail::require(x.rank() >= 2, "gaussian_blur: input must have spatial dims");
    if (sigma == 0.0) return x;
    const int W = x.dim(x.rank() - 1), H = x.dim(x.rank() - 2);
    int planes = 1;
    for (int i = 0; i < x.rank() - 2; ++i) planes *= x.dim(i);
    const auto kernel = gaussian_kernel_1d(sigma);
    const size_t plane_sz = static_cast<size_t>(H) * W;
    std::vector<Real> out(x.vec().size());
    std::vector<Real> tmp(plane_sz);
    for (int p = 0; p < planes; ++p) {
        const Real* src = x.data() + static_cast<size_t>(p) * plane_sz;
        Real* dst = out.data() + static_cast<size_t>(p) * plane_sz;
        detail::blur_pass(src, tmp.data(), H, W, kernel, false);
        detail::blur_pass(tmp.data(), dst, H, W, kernel, true);
    }
    return detail::make_result<Real>(x.shape(), std::move(out), {x.node()},
        [planes, H, W, kernel, plane_sz](detail::TapeNode<Real>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            std::vector<Real> tmp2(plane_sz, Real(0));
            for (int pl = 0; pl < planes; ++pl) {
                const Real* g = node.grad.data() + static_cast<size_t>(pl) * plane_sz;
                Real* dst = p.grad.data() + static_cast<size_t>(pl) * plane_sz;
                std::fill(tmp2.begin(), tmp2.end(), Real(0));
                detail::blur_pass_adjoint(g, tmp2.data(), H, W, kernel, true);
                detail::blur_pass_adjoint(tmp2.data(), dst, H, W, kernel, false);
            }
        });
}

namespace detail {

struct LerpIdx {
    int i0, i1;
    double f;
};

// half-pixel-center source coordinate for output index o
inline LerpIdx lerp_index(int o, int out_n, int in_n) {
    const double src = (o + 0.5) * (static_cast<double>(in_n) / out_n) - 0.5;
    LerpIdx li{};
    if (src <= 0.0) {
        li.i0 = li.i1 = 0;
        li.f = 0.0;
    } else if (src >= in_n - 1) {
        li.i0 = li.i1 = in_n - 1;
        li.f = 0.0;
    } else {
        li.i0 = static_cast<int>(src);
        li.i1 = li.i0 + 1;
        li.f = src - li.i0;
    }
    return li;
}

}  // namespace detail

// Bilinear resize of the trailing two axes (half-pixel centers; resizing to
// the same size is the identity mapping).
template <class Real>
TensorT<Real> bilinear_resize(const TensorT<Real>& x, int out_h, int out_w) {
    detail::require(out_h >= 1 && out_w >= 1, "bilinear_resize: output dims must be >= 1");
    detail::require(x.rank() >= 2, "bilinear_resize: input must have spatial dims");
    const int W = x.dim(x.rank() - 1), H = x.dim(x.rank() - 2);
    int planes = 1;
    Shape os = x.shape();
    for (int i = 0; i < x.rank() - 2; ++i) planes *= x.dim(i);
    os[static_cast<size_t>(x.rank() - 2)] = out_h;
    os[static_cast<size_t>(x.rank() - 1)] = out_w;

    std::vector<detail::LerpIdx> ly(static_cast<size_t>(out_h)), lx(static_cast<size_t>(out_w));
    for (int i = 0; i < out_h; ++i) ly[static_cast<size_t>(i)] = detail::lerp_index(i, out_h, H);
    for (int i = 0; i < out_w; ++i) lx[static_cast<size_t>(i)] = detail::lerp_index(i, out_w, W);

    const size_t in_plane = static_cast<size_t>(H) * W, out_plane = static_cast<size_t>(out_h) * out_w;
    std::vector<Real> out(static_cast<size_t>(planes) * out_plane);
    for (int p = 0; p < planes; ++p) {
        const Real* src = x.data() + static_cast<size_t>(p) * in_plane;
        Real* dst = out.data() + static_cast<size_t>(p) * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
            const auto& yy = ly[static_cast<size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const auto& xx = lx[static_cast<size_t>(ox)];
                const double v00 = src[static_cast<size_t>(yy.i0) * W + xx.i0];
                const double v01 = src[static_cast<size_t>(yy.i0) * W + xx.i1];
                const double v10 = src[static_cast<size_t>(yy.i1) * W + xx.i0];
                const double v11 = src[static_cast<size_t>(yy.i1) * W + xx.i1];
                const double top = v00 + (v01 - v00) * xx.f;
                const double bot = v10 + (v11 - v10) * xx.f;
                dst[static_cast<size_t>(oy) * out_w + ox] = static_cast<Real>(top + (bot - top) * yy.f);
            }
        }
    }
    return detail::make_result<Real>(os, std::move(out), {x.node()},
        [planes, W, out_h, out_w, ly = std::move(ly), lx = std::move(lx), in_plane,
         out_plane](detail::TapeNode<Real>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            for (int pl = 0; pl < planes; ++pl) {
                const Real* g = node.grad.data() + static_cast<size_t>(pl) * out_plane;
                Real* dst = p.grad.data() + static_cast<size_t>(pl) * in_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const auto& yy = ly[static_cast<size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const auto& xx = lx[static_cast<size_t>(ox)];
                        const Real gv = g[static_cast<size_t>(oy) * out_w + ox];
                        const Real fy = static_cast<Real>(yy.f), fx = static_cast<Real>(xx.f);
                        dst[static_cast<size_t>(yy.i0) * W + xx.i0] += gv * (1 - fy) * (1 - fx);
                        dst[static_cast<size_t>(yy.i0) * W + xx.i1] += gv * (1 - fy) * fx;
                        dst[static_cast<size_t>(yy.i1) * W + xx.i0] += gv * fy * (1 - fx);
                        dst[static_cast<size_t>(yy.i1) * W + xx.i1] += gv * fy * fx;
                    }
                }
            }
        });
}

}  // namespace iba
