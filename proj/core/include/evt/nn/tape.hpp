#pragma once

#include "evt/nn/tensor.hpp"
#include "evt/nn/params.hpp"

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

namespace evt::nn {

template <typename T>
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape over the layer set the model needs.
// Creation order is a topological order, so backward() is a single reverse
// sweep. Parameters are borrowed (not copied); their gradients are pulled
// out with add_param_grads() after backward().
template <typename T>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    int size() const { return int(nodes_.size()); }

    const Tensor<T>& value(Var<T> v) const { return val(v.id); }
    const Tensor<T>& grad(Var<T> v) const {
        if (!ran_backward_) throw StateError("gradient requested before backward()");
        return nodes_[v.id].grad;
    }
    const Shape& shape(Var<T> v) const { return val(v.id).shape; }

    // ---- graph inputs -------------------------------------------------

    Var<T> leaf(Tensor<T> v) {
        return make(std::move(v), {});
    }

    // Borrow an external tensor; it must outlive the tape.
    Var<T> borrow(const Tensor<T>* v) {
        Node n;
        n.view = v;
        nodes_.push_back(std::move(n));
        return {int(nodes_.size()) - 1};
    }

    // Borrow a parameter and remember the binding for add_param_grads().
    Var<T> param(const ParamStore<T>& store, int param_id) {
        Var<T> v = borrow(&store.entry(param_id).value);
        bindings_.emplace_back(v.id, param_id);
        return v;
    }

    // ---- elementwise --------------------------------------------------

    Var<T> add(Var<T> a, Var<T> b) {
        const Tensor<T>& x = val(a.id);
        const Tensor<T>& y = val(b.id);
        check_same_shape(x, y, "add");
        Tensor<T> out = x;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += y.data[i];
        return make(std::move(out), [a, b](Tape& t, int self) {
            t.accumulate(a.id, t.nodes_[self].grad.data);
            t.accumulate(b.id, t.nodes_[self].grad.data);
        });
    }

    Var<T> add_const(Var<T> a, const Tensor<T>& c) {
        const Tensor<T>& x = val(a.id);
        check_same_shape(x, c, "add_const");
        Tensor<T> out = x;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += c.data[i];
        return make(std::move(out), [a](Tape& t, int self) {
            t.accumulate(a.id, t.nodes_[self].grad.data);
        });
    }

    Var<T> mul(Var<T> a, Var<T> b) {
        const Tensor<T>& x = val(a.id);
        const Tensor<T>& y = val(b.id);
        check_same_shape(x, y, "mul");
        Tensor<T> out = x;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= y.data[i];
        return make(std::move(out), [a, b](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            const auto& xv = t.val(a.id).data;
            const auto& yv = t.val(b.id).data;
            auto& ga = t.grad_buf(a.id);
            auto& gb = t.grad_buf(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * yv[i];
                gb[i] += g[i] * xv[i];
            }
        });
    }

    Var<T> scale(Var<T> a, T s) {
        Tensor<T> out = val(a.id);
        for (auto& v : out.data) v *= s;
        return make(std::move(out), [a, s](Tape& t, int self) {
            auto& g = t.nodes_[self].grad.data;
            auto& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
        });
    }

    Var<T> relu(Var<T> a) { return clamp_act(a, T(0), std::numeric_limits<T>::infinity()); }
    Var<T> relu6(Var<T> a) { return clamp_act(a, T(0), T(6)); }

    // ---- dense / matmul -----------------------------------------------

    // y = x W + b, x:[N x Din], W:[Din x Dout], b:[Dout]
    Var<T> dense(Var<T> x, Var<T> W, Var<T> b) {
        const Tensor<T>& xv = val(x.id);
        const Tensor<T>& wv = val(W.id);
        const Tensor<T>& bv = val(b.id);
        if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[0])
            throw DimensionError("dense: x " + shape_str(xv.shape) + " vs W " + shape_str(wv.shape));
        if (bv.rank() != 1 || bv.shape[0] != wv.shape[1])
            throw DimensionError("dense: b " + shape_str(bv.shape) + " vs W " + shape_str(wv.shape));
        const int N = xv.shape[0], K = xv.shape[1], M = wv.shape[1];
        Tensor<T> out({N, M});
        for (int i = 0; i < N; ++i) {
            T* orow = &out.data[std::size_t(i) * M];
            for (int j = 0; j < M; ++j) orow[j] = bv.data[j];
            const T* xrow = &xv.data[std::size_t(i) * K];
            for (int k = 0; k < K; ++k) {
                const T xk = xrow[k];
                const T* wrow = &wv.data[std::size_t(k) * M];
                for (int j = 0; j < M; ++j) orow[j] += xk * wrow[j];
            }
        }
        return make(std::move(out), [x, W, b, N, K, M](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            const auto& xv2 = t.val(x.id).data;
            const auto& wv2 = t.val(W.id).data;
            auto& gx = t.grad_buf(x.id);
            auto& gw = t.grad_buf(W.id);
            auto& gb = t.grad_buf(b.id);
            for (int i = 0; i < N; ++i) {
                const T* grow = &g[std::size_t(i) * M];
                for (int j = 0; j < M; ++j) gb[j] += grow[j];
                const T* xrow = &xv2[std::size_t(i) * K];
                for (int k = 0; k < K; ++k) {
                    const T* wrow = &wv2[std::size_t(k) * M];
                    T acc = 0;
                    for (int j = 0; j < M; ++j) acc += grow[j] * wrow[j];
                    gx[std::size_t(i) * K + k] += acc;
                    T* gwrow = &gw[std::size_t(k) * M];
                    const T xk = xrow[k];
                    for (int j = 0; j < M; ++j) gwrow[j] += xk * grow[j];
                }
            }
        });
    }

    // c = a b, a:[M x K], b:[K x N]
    Var<T> matmul(Var<T> a, Var<T> b) {
        const Tensor<T>& av = val(a.id);
        const Tensor<T>& bv = val(b.id);
        if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
            throw DimensionError("matmul: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        const int M = av.shape[0], K = av.shape[1], N = bv.shape[1];
        Tensor<T> out({M, N});
        matmul_raw(av.data.data(), bv.data.data(), out.data.data(), M, K, N);
        return make(std::move(out), [a, b, M, K, N](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            const auto& av2 = t.val(a.id).data;
            const auto& bv2 = t.val(b.id).data;
            auto& ga = t.grad_buf(a.id);
            auto& gb = t.grad_buf(b.id);
            // ga += g b^T ; gb += a^T g
            for (int i = 0; i < M; ++i)
                for (int k = 0; k < K; ++k) {
                    T acc = 0;
                    const T* grow = &g[std::size_t(i) * N];
                    const T* brow = &bv2[std::size_t(k) * N];
                    for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
                    ga[std::size_t(i) * K + k] += acc;
                }
            for (int k = 0; k < K; ++k) {
                T* gbrow = &gb[std::size_t(k) * N];
                for (int i = 0; i < M; ++i) {
                    const T aik = av2[std::size_t(i) * K + k];
                    const T* grow = &g[std::size_t(i) * N];
                    for (int j = 0; j < N; ++j) gbrow[j] += aik * grow[j];
                }
            }
        });
    }

    // c = a b^T, a:[M x K], b:[N x K]
    Var<T> matmul_nt(Var<T> a, Var<T> b) {
        const Tensor<T>& av = val(a.id);
        const Tensor<T>& bv = val(b.id);
        if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[1])
            throw DimensionError("matmul_nt: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        const int M = av.shape[0], K = av.shape[1], N = bv.shape[0];
        Tensor<T> out({M, N});
        for (int i = 0; i < M; ++i) {
            const T* arow = &av.data[std::size_t(i) * K];
            for (int j = 0; j < N; ++j) {
                const T* brow = &bv.data[std::size_t(j) * K];
                T acc = 0;
                for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
                out.data[std::size_t(i) * N + j] = acc;
            }
        }
        return make(std::move(out), [a, b, M, K, N](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            const auto& av2 = t.val(a.id).data;
            const auto& bv2 = t.val(b.id).data;
            auto& ga = t.grad_buf(a.id);
            auto& gb = t.grad_buf(b.id);
            // ga += g b ; gb += g^T a
            for (int i = 0; i < M; ++i) {
                const T* grow = &g[std::size_t(i) * N];
                T* garow = &ga[std::size_t(i) * K];
                for (int j = 0; j < N; ++j) {
                    const T gij = grow[j];
                    const T* brow = &bv2[std::size_t(j) * K];
                    for (int k = 0; k < K; ++k) garow[k] += gij * brow[k];
                }
                const T* arow = &av2[std::size_t(i) * K];
                for (int j = 0; j < N; ++j) {
                    const T gij = grow[j];
                    T* gbrow = &gb[std::size_t(j) * K];
                    for (int k = 0; k < K; ++k) gbrow[k] += gij * arow[k];
                }
            }
        });
    }

    // ---- softmax -------------------------------------------------------

    // Row-wise softmax of (x + mask); mask entries are 0 or -inf and masked
    // positions come out exactly 0. Pass nullptr for no mask.
    Var<T> masked_softmax_rows(Var<T> x, const Tensor<T>* mask) {
        const Tensor<T>& xv = val(x.id);
        if (xv.rank() != 2) throw DimensionError("softmax: want 2-D, got " + shape_str(xv.shape));
        if (mask && mask->shape != xv.shape)
            throw DimensionError("softmax mask " + shape_str(mask->shape) + " vs " + shape_str(xv.shape));
        const int R = xv.shape[0], C = xv.shape[1];
        Tensor<T> out({R, C});
        for (int r = 0; r < R; ++r) {
            const T* row = &xv.data[std::size_t(r) * C];
            const T* mrow = mask ? &mask->data[std::size_t(r) * C] : nullptr;
            T mx = -std::numeric_limits<T>::infinity();
            for (int c = 0; c < C; ++c) {
                const T v = mrow ? row[c] + mrow[c] : row[c];
                if (v > mx) mx = v;
            }
            T sum = 0;
            T* orow = &out.data[std::size_t(r) * C];
            for (int c = 0; c < C; ++c) {
                const T v = mrow ? row[c] + mrow[c] : row[c];
                const T e = std::isinf(v) && v < 0 ? T(0) : std::exp(v - mx);
                orow[c] = e;
                sum += e;
            }
            for (int c = 0; c < C; ++c) orow[c] /= sum;
        }
        return make(std::move(out), [x, R, C](Tape& t, int self) {
            const auto& y = t.nodes_[self].val.data;
            const auto& g = t.nodes_[self].grad.data;
            auto& gx = t.grad_buf(x.id);
            for (int r = 0; r < R; ++r) {
                const T* yrow = &y[std::size_t(r) * C];
                const T* grow = &g[std::size_t(r) * C];
                T dot = 0;
                for (int c = 0; c < C; ++c) dot += yrow[c] * grow[c];
                T* gxrow = &gx[std::size_t(r) * C];
                for (int c = 0; c < C; ++c) gxrow[c] += yrow[c] * (grow[c] - dot);
            }
        });
    }

    // ---- normalization --------------------------------------------------

    // Per-row layer norm: y = gamma * (x - mean)/sqrt(var + eps) + beta
    Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
        const Tensor<T>& xv = val(x.id);
        const Tensor<T>& gv = val(gamma.id);
        const Tensor<T>& bv = val(beta.id);
        if (xv.rank() != 2) throw DimensionError("layer_norm: want 2-D, got " + shape_str(xv.shape));
        const int N = xv.shape[0], D = xv.shape[1];
        if (gv.numel() != D || bv.numel() != D)
            throw DimensionError("layer_norm: gamma " + shape_str(gv.shape) + " vs width " + std::to_string(D));
        Tensor<T> out({N, D});
        Tensor<T> xhat({N, D});
        std::vector<T> inv_sd(N);
        for (int n = 0; n < N; ++n) {
            const T* row = &xv.data[std::size_t(n) * D];
            T mu = 0;
            for (int d = 0; d < D; ++d) mu += row[d];
            mu /= T(D);
            T var = 0;
            for (int d = 0; d < D; ++d) var += (row[d] - mu) * (row[d] - mu);
            var /= T(D);
            const T isd = T(1) / std::sqrt(var + eps);
            inv_sd[n] = isd;
            T* hrow = &xhat.data[std::size_t(n) * D];
            T* orow = &out.data[std::size_t(n) * D];
            for (int d = 0; d < D; ++d) {
                hrow[d] = (row[d] - mu) * isd;
                orow[d] = gv.data[d] * hrow[d] + bv.data[d];
            }
        }
        auto xhat_p = std::make_shared<Tensor<T>>(std::move(xhat));
        auto isd_p = std::make_shared<std::vector<T>>(std::move(inv_sd));
        return make(std::move(out), [x, gamma, beta, N, D, xhat_p, isd_p](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            const auto& gv2 = t.val(gamma.id).data;
            auto& gx = t.grad_buf(x.id);
            auto& gg = t.grad_buf(gamma.id);
            auto& gb = t.grad_buf(beta.id);
            for (int n = 0; n < N; ++n) {
                const T* grow = &g[std::size_t(n) * D];
                const T* hrow = &xhat_p->data[std::size_t(n) * D];
                const T isd = (*isd_p)[n];
                T mean_gy = 0, mean_gyh = 0;
                for (int d = 0; d < D; ++d) {
                    const T gy = grow[d] * gv2[d];
                    mean_gy += gy;
                    mean_gyh += gy * hrow[d];
                }
                mean_gy /= T(D);
                mean_gyh /= T(D);
                T* gxrow = &gx[std::size_t(n) * D];
                for (int d = 0; d < D; ++d) {
                    const T gy = grow[d] * gv2[d];
                    gxrow[d] += (gy - mean_gy - hrow[d] * mean_gyh) * isd;
                    gg[d] += grow[d] * hrow[d];
                    gb[d] += grow[d];
                }
            }
        });
    }

    // Per-channel affine on [N x C x H x W]: y = gamma[c] * x + beta[c]
    Var<T> scale_bias(Var<T> x, Var<T> gamma, Var<T> beta) {
        const Tensor<T>& xv = val(x.id);
        const Tensor<T>& gv = val(gamma.id);
        const Tensor<T>& bv = val(beta.id);
        if (xv.rank() != 4) throw DimensionError("scale_bias: want 4-D, got " + shape_str(xv.shape));
        const int N = xv.shape[0], C = xv.shape[1];
        const std::size_t HW = std::size_t(xv.shape[2]) * xv.shape[3];
        if (gv.numel() != C || bv.numel() != C)
            throw DimensionError("scale_bias: gamma " + shape_str(gv.shape) + " vs channels " + std::to_string(C));
        Tensor<T> out = xv;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T* p = &out.data[(std::size_t(n) * C + c) * HW];
                const T gc = gv.data[c], bc = bv.data[c];
                for (std::size_t i = 0; i < HW; ++i) p[i] = gc * p[i] + bc;
            }
        return make(std::move(out), [x, gamma, beta, N, C, HW](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            const auto& xv2 = t.val(x.id).data;
            const auto& gv2 = t.val(gamma.id).data;
            auto& gx = t.grad_buf(x.id);
            auto& gg = t.grad_buf(gamma.id);
            auto& gb = t.grad_buf(beta.id);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base = (std::size_t(n) * C + c) * HW;
                    T sg = 0, sb = 0;
                    const T gc = gv2[c];
                    for (std::size_t i = 0; i < HW; ++i) {
                        const T gi = g[base + i];
                        sg += gi * xv2[base + i];
                        sb += gi;
                        gx[base + i] += gc * gi;
                    }
                    gg[c] += sg;
                    gb[c] += sb;
                }
        });
    }

    // ---- convolutions ----------------------------------------------------

    // Depthwise 3x3, same padding (pad=1), stride 1 or 2.
    // x:[N x C x H x W], k:[C x 3 x 3]
    Var<T> conv_dw3x3(Var<T> x, Var<T> k, int stride) {
        const Tensor<T>& xv = val(x.id);
        const Tensor<T>& kv = val(k.id);
        if (xv.rank() != 4) throw DimensionError("conv_dw3x3: want 4-D input, got " + shape_str(xv.shape));
        const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
        if (kv.rank() != 3 || kv.shape[0] != C || kv.shape[1] != 3 || kv.shape[2] != 3)
            throw DimensionError("conv_dw3x3: kernel " + shape_str(kv.shape) + " vs input " + shape_str(xv.shape));
        if (H < 2 || W < 2)
            throw DimensionError("conv_dw3x3: spatial dims too small: " + shape_str(xv.shape));
        const int OH = (H + 2 - 3) / stride + 1;
        const int OW = (W + 2 - 3) / stride + 1;
        Tensor<T> out({N, C, OH, OW});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T* xp = &xv.data[(std::size_t(n) * C + c) * H * W];
                const T* kp = &kv.data[std::size_t(c) * 9];
                T* op = &out.data[(std::size_t(n) * C + c) * OH * OW];
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        T acc = 0;
                        const int iy0 = oy * stride - 1, ix0 = ox * stride - 1;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= W) continue;
                                acc += kp[ky * 3 + kx] * xp[std::size_t(iy) * W + ix];
                            }
                        }
                        op[std::size_t(oy) * OW + ox] = acc;
                    }
            }
        return make(std::move(out), [x, k, stride, N, C, H, W, OH, OW](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            const auto& xv2 = t.val(x.id).data;
            const auto& kv2 = t.val(k.id).data;
            auto& gx = t.grad_buf(x.id);
            auto& gk = t.grad_buf(k.id);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* xp = &xv2[(std::size_t(n) * C + c) * H * W];
                    const T* kp = &kv2[std::size_t(c) * 9];
                    const T* gp = &g[(std::size_t(n) * C + c) * OH * OW];
                    T* gxp = &gx[(std::size_t(n) * C + c) * H * W];
                    T* gkp = &gk[std::size_t(c) * 9];
                    for (int oy = 0; oy < OH; ++oy)
                        for (int ox = 0; ox < OW; ++ox) {
                            const T go = gp[std::size_t(oy) * OW + ox];
                            if (go == T(0)) continue;
                            const int iy0 = oy * stride - 1, ix0 = ox * stride - 1;
                            for (int ky = 0; ky < 3; ++ky) {
                                const int iy = iy0 + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int ix = ix0 + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    gxp[std::size_t(iy) * W + ix] += kp[ky * 3 + kx] * go;
                                    gkp[ky * 3 + kx] += xp[std::size_t(iy) * W + ix] * go;
                                }
                            }
                        }
                }
        });
    }

    // Pointwise 1x1 convolution. x:[N x Cin x H x W], w:[Cout x Cin]
    Var<T> conv_pw(Var<T> x, Var<T> w) {
        const Tensor<T>& xv = val(x.id);
        const Tensor<T>& wv = val(w.id);
        if (xv.rank() != 4) throw DimensionError("conv_pw: want 4-D input, got " + shape_str(xv.shape));
        const int N = xv.shape[0], CI = xv.shape[1];
        const std::size_t HW = std::size_t(xv.shape[2]) * xv.shape[3];
        if (wv.rank() != 2 || wv.shape[1] != CI)
            throw DimensionError("conv_pw: weight " + shape_str(wv.shape) + " vs input " + shape_str(xv.shape));
        const int CO = wv.shape[0];
        Tensor<T> out({N, CO, xv.shape[2], xv.shape[3]});
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < CO; ++co) {
                T* op = &out.data[(std::size_t(n) * CO + co) * HW];
                for (int ci = 0; ci < CI; ++ci) {
                    const T wcc = wv.data[std::size_t(co) * CI + ci];
                    if (wcc == T(0)) continue;
                    const T* xp = &xv.data[(std::size_t(n) * CI + ci) * HW];
                    for (std::size_t i = 0; i < HW; ++i) op[i] += wcc * xp[i];
                }
            }
        return make(std::move(out), [x, w, N, CI, CO, HW](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            const auto& xv2 = t.val(x.id).data;
            const auto& wv2 = t.val(w.id).data;
            auto& gx = t.grad_buf(x.id);
            auto& gw = t.grad_buf(w.id);
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < CO; ++co) {
                    const T* gp = &g[(std::size_t(n) * CO + co) * HW];
                    for (int ci = 0; ci < CI; ++ci) {
                        const T wcc = wv2[std::size_t(co) * CI + ci];
                        const T* xp = &xv2[(std::size_t(n) * CI + ci) * HW];
                        T* gxp = &gx[(std::size_t(n) * CI + ci) * HW];
                        T acc = 0;
                        for (std::size_t i = 0; i < HW; ++i) {
                            acc += gp[i] * xp[i];
                            gxp[i] += wcc * gp[i];
                        }
                        gw[std::size_t(co) * CI + ci] += acc;
                    }
                }
        });
    }

    // [N x C x H x W] -> [N x C]
    Var<T> global_avg_pool(Var<T> x) {
        const Tensor<T>& xv = val(x.id);
        if (xv.rank() != 4) throw DimensionError("global_avg_pool: want 4-D, got " + shape_str(xv.shape));
        const int N = xv.shape[0], C = xv.shape[1];
        const std::size_t HW = std::size_t(xv.shape[2]) * xv.shape[3];
        Tensor<T> out({N, C});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T* p = &xv.data[(std::size_t(n) * C + c) * HW];
                T acc = 0;
                for (std::size_t i = 0; i < HW; ++i) acc += p[i];
                out.data[std::size_t(n) * C + c] = acc / T(HW);
            }
        return make(std::move(out), [x, N, C, HW](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            auto& gx = t.grad_buf(x.id);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T gi = g[std::size_t(n) * C + c] / T(HW);
                    T* p = &gx[(std::size_t(n) * C + c) * HW];
                    for (std::size_t i = 0; i < HW; ++i) p[i] += gi;
                }
        });
    }

    // ---- shape plumbing ---------------------------------------------------

    Var<T> reshape(Var<T> x, Shape s) {
        const Tensor<T>& xv = val(x.id);
        if (shape_numel(s) != xv.numel())
            throw DimensionError("reshape: " + shape_str(xv.shape) + " to " + shape_str(s));
        Tensor<T> out(std::move(s), xv.data);
        return make(std::move(out), [x](Tape& t, int self) {
            t.accumulate(x.id, t.nodes_[self].grad.data);
        });
    }

    Var<T> slice_cols(Var<T> x, int c0, int c1) {
        const Tensor<T>& xv = val(x.id);
        if (xv.rank() != 2 || c0 < 0 || c1 > xv.shape[1] || c0 >= c1)
            throw DimensionError("slice_cols: " + shape_str(xv.shape) + " cols [" +
                                 std::to_string(c0) + "," + std::to_string(c1) + ")");
        const int R = xv.shape[0], C = xv.shape[1], W = c1 - c0;
        Tensor<T> out({R, W});
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < W; ++c) out.data[std::size_t(r) * W + c] = xv.data[std::size_t(r) * C + c0 + c];
        return make(std::move(out), [x, R, C, W, c0](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            auto& gx = t.grad_buf(x.id);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < W; ++c) gx[std::size_t(r) * C + c0 + c] += g[std::size_t(r) * W + c];
        });
    }

    Var<T> slice_rows(Var<T> x, int r0, int r1) {
        const Tensor<T>& xv = val(x.id);
        if (xv.rank() != 2 || r0 < 0 || r1 > xv.shape[0] || r0 >= r1)
            throw DimensionError("slice_rows: " + shape_str(xv.shape) + " rows [" +
                                 std::to_string(r0) + "," + std::to_string(r1) + ")");
        const int C = xv.shape[1], H = r1 - r0;
        Tensor<T> out({H, C});
        std::copy(xv.data.begin() + std::size_t(r0) * C, xv.data.begin() + std::size_t(r1) * C, out.data.begin());
        return make(std::move(out), [x, r0, C, H](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            auto& gx = t.grad_buf(x.id);
            for (std::size_t i = 0; i < std::size_t(H) * C; ++i) gx[std::size_t(r0) * C + i] += g[i];
        });
    }

    Var<T> concat_cols(const std::vector<Var<T>>& parts) {
        if (parts.empty()) throw DimensionError("concat_cols: empty");
        const int R = val(parts[0].id).shape[0];
        int total = 0;
        for (auto p : parts) {
            const Tensor<T>& pv = val(p.id);
            if (pv.rank() != 2 || pv.shape[0] != R)
                throw DimensionError("concat_cols: part " + shape_str(pv.shape));
            total += pv.shape[1];
        }
        Tensor<T> out({R, total});
        int off = 0;
        for (auto p : parts) {
            const Tensor<T>& pv = val(p.id);
            const int W = pv.shape[1];
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < W; ++c) out.data[std::size_t(r) * total + off + c] = pv.data[std::size_t(r) * W + c];
            off += W;
        }
        auto parts_copy = parts;
        return make(std::move(out), [parts_copy, R, total](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            int off2 = 0;
            for (auto p : parts_copy) {
                const int W = t.val(p.id).shape[1];
                auto& gp = t.grad_buf(p.id);
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < W; ++c) gp[std::size_t(r) * W + c] += g[std::size_t(r) * total + off2 + c];
                off2 += W;
            }
        });
    }

    // Stack L row vectors ([D] or [1 x D]) into [L x D].
    Var<T> stack_rows(const std::vector<Var<T>>& rows) {
        if (rows.empty()) throw DimensionError("stack_rows: empty");
        const std::int64_t D = val(rows[0].id).numel();
        const int L = int(rows.size());
        Tensor<T> out({L, int(D)});
        for (int i = 0; i < L; ++i) {
            const Tensor<T>& rv = val(rows[i].id);
            if (rv.numel() != D) throw DimensionError("stack_rows: row " + shape_str(rv.shape));
            std::copy(rv.data.begin(), rv.data.end(), out.data.begin() + std::size_t(i) * D);
        }
        auto rows_copy = rows;
        return make(std::move(out), [rows_copy, D](Tape& t, int self) {
            const auto& g = t.nodes_[self].grad.data;
            for (std::size_t i = 0; i < rows_copy.size(); ++i) {
                auto& gr = t.grad_buf(rows_copy[i].id);
                for (std::int64_t d = 0; d < D; ++d) gr[d] += g[i * D + d];
            }
        });
    }

    // ---- reductions / loss -------------------------------------------------

    Var<T> sum(Var<T> x) {
        const Tensor<T>& xv = val(x.id);
        T acc = 0;
        for (T v : xv.data) acc += v;
        Tensor<T> out({1});
        out.data[0] = acc;
        return make(std::move(out), [x](Tape& t, int self) {
            const T g = t.nodes_[self].grad.data[0];
            auto& gx = t.grad_buf(x.id);
            for (auto& v : gx) v += g;
        });
    }

    Var<T> mean(Var<T> x) {
        const std::int64_t n = val(x.id).numel();
        return scale(sum(x), T(1) / T(n));
    }

    // Numerically stable softmax cross-entropy with integer labels.
    // Returns the mean negative log-likelihood; writes row-stochastic
    // probabilities to probs_out when given.
    Var<T> softmax_xent(Var<T> logits, const std::vector<int>& labels, Tensor<T>* probs_out = nullptr) {
        const Tensor<T>& lv = val(logits.id);
        if (lv.rank() != 2) throw DimensionError("softmax_xent: want 2-D logits, got " + shape_str(lv.shape));
        const int N = lv.shape[0], C = lv.shape[1];
        if (int(labels.size()) != N)
            throw DimensionError("softmax_xent: " + std::to_string(labels.size()) + " labels vs " +
                                 std::to_string(N) + " rows");
        for (int n = 0; n < N; ++n)
            if (labels[n] < 0 || labels[n] >= C)
                throw ValidationError("softmax_xent: label " + std::to_string(labels[n]) +
                                      " outside [0," + std::to_string(C) + ")", std::size_t(n));
        auto probs = std::make_shared<Tensor<T>>(Shape{N, C});
        T loss = 0;
        for (int n = 0; n < N; ++n) {
            const T* row = &lv.data[std::size_t(n) * C];
            T mx = row[0];
            for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
            T sum = 0;
            T* prow = &probs->data[std::size_t(n) * C];
            for (int c = 0; c < C; ++c) {
                prow[c] = std::exp(row[c] - mx);
                sum += prow[c];
            }
            for (int c = 0; c < C; ++c) prow[c] /= sum;
            // log p = (x - mx) - log sum, evaluated directly for stability
            loss -= (row[labels[n]] - mx) - std::log(sum);
        }
        loss /= T(N);
        if (probs_out) *probs_out = *probs;
        Tensor<T> out({1});
        out.data[0] = loss;
        auto labels_copy = labels;
        return make(std::move(out), [logits, probs, labels_copy, N, C](Tape& t, int self) {
            const T g = t.nodes_[self].grad.data[0] / T(N);
            auto& gl = t.grad_buf(logits.id);
            for (int n = 0; n < N; ++n) {
                const T* prow = &probs->data[std::size_t(n) * C];
                T* grow = &gl[std::size_t(n) * C];
                for (int c = 0; c < C; ++c) grow[c] += g * prow[c];
                grow[labels_copy[n]] -= g;
            }
        });
    }

    // ---- backward ------------------------------------------------------

    void backward(Var<T> loss) {
        if (!grad_enabled_) throw StateError("backward() on a no-grad tape");
        if (!loss.valid() || loss.id >= size()) throw StateError("backward() before forward()");
        if (val(loss.id).numel() != 1)
            throw DimensionError("backward: loss must be scalar, got " + shape_str(val(loss.id).shape));
        for (auto& n : nodes_) {
            n.grad.shape.clear();
            n.grad.data.clear();
        }
        grad_buf(loss.id)[0] = T(1);
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[i].back && !nodes_[i].grad.data.empty()) nodes_[i].back(*this, i);
        ran_backward_ = true;
    }

    // Adds node gradients into the bound parameter slots (accumulating).
    void add_param_grads(ParamStore<T>& store) const {
        if (!ran_backward_) throw StateError("add_param_grads() before backward()");
        for (auto [node_id, param_id] : bindings_) {
            auto& slot = store.entry(param_id).grad;
            const auto& g = nodes_[node_id].grad;
            if (g.data.empty()) continue; // parameter not reached by this loss
            for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
        }
    }

private:
    struct Node {
        Tensor<T> val;
        const Tensor<T>* view = nullptr;
        Tensor<T> grad;
        std::function<void(Tape&, int)> back;
    };

    const Tensor<T>& val(int id) const {
        const Node& n = nodes_[id];
        return n.view ? *n.view : n.val;
    }

    std::vector<T>& grad_buf(int id) {
        Node& n = nodes_[id];
        if (n.grad.data.empty()) {
            n.grad.shape = val(id).shape;
            n.grad.data.assign(std::size_t(val(id).numel()), T(0));
        }
        return n.grad.data;
    }

    void accumulate(int id, const std::vector<T>& g) {
        auto& buf = grad_buf(id);
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
    }

    Var<T> make(Tensor<T> out, std::function<void(Tape&, int)> back) {
        Node n;
        n.val = std::move(out);
        if (grad_enabled_) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return {int(nodes_.size()) - 1};
    }

    Var<T> clamp_act(Var<T> a, T lo, T hi) {
        Tensor<T> out = val(a.id);
        for (auto& v : out.data) v = std::min(std::max(v, lo), hi);
        return make(std::move(out), [a, lo, hi](Tape& t, int self) {
            const auto& x = t.val(a.id).data;
            const auto& g = t.nodes_[self].grad.data;
            auto& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > lo && x[i] < hi) ga[i] += g[i];
        });
    }

    static void matmul_raw(const T* a, const T* b, T* c, int M, int K, int N) {
        for (int i = 0; i < M; ++i) {
            T* crow = c + std::size_t(i) * N;
            for (int k = 0; k < K; ++k) {
                const T aik = a[std::size_t(i) * K + k];
                if (aik == T(0)) continue;
                const T* brow = b + std::size_t(k) * N;
                for (int j = 0; j < N; ++j) crow[j] += aik * brow[j];
            }
        }
    }

    std::deque<Node> nodes_;
    std::vector<std::pair<int, int>> bindings_;
    bool grad_enabled_;
    bool ran_backward_ = false;
};

// Look-ahead mask: entry (i, j) = 0 if j <= i, -inf otherwise.
template <typename T>
Tensor<T> causal_mask(int L) {
    if (L < 1) throw ConfigError("causal_mask: L must be >= 1");
    Tensor<T> m({L, L});
    const T ninf = -std::numeric_limits<T>::infinity();
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) m.data[std::size_t(i) * L + j] = j <= i ? T(0) : ninf;
    return m;
}

// Fixed sinusoidal positional encoding, PE[pos, 2k] = sin(pos / 10000^(2k/D)),
// PE[pos, 2k+1] = cos(same).
template <typename T>
Tensor<T> positional_encoding(int L, int D) {
    if (D % 2 != 0) throw ConfigError("positional_encoding: D must be even");
    Tensor<T> pe({L, D});
    for (int pos = 0; pos < L; ++pos)
        for (int k = 0; 2 * k < D; ++k) {
            const double freq = std::pow(10000.0, -2.0 * k / double(D));
            pe.data[std::size_t(pos) * D + 2 * k] = T(std::sin(pos * freq));
            pe.data[std::size_t(pos) * D + 2 * k + 1] = T(std::cos(pos * freq));
        }
    return pe;
}

} // namespace evt::nn
