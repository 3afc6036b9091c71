#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cth/kernels.hpp"
#include "cth/parallel.hpp"
#include "cth/tensor.hpp"

namespace cth {

// Reverse-mode autodiff over the fixed op set the denoiser needs.
// Nodes are appended in execution order, so the record is topologically
// sorted by construction; backward() is a single reverse sweep that visits
// each node exactly once.
template <typename T>
class Tape {
  public:
    using Id = int32_t;

    explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Id leaf(Tensor<T> v, bool requires_grad = false) {
        return push(std::move(v), requires_grad, nullptr, "leaf");
    }
    Id constant(Tensor<T> v) { return leaf(std::move(v), false); }

    const Tensor<T>& val(Id id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Zero tensor for nodes that never received (or never required) a gradient.
    Tensor<T> grad(Id id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.numel() == 0) return Tensor<T>::zeros(n.value.shape);
        return n.grad;
    }

    size_t size() const { return nodes_.size(); }

    void backward(Id root, const Tensor<T>& seed) {
        if (nodes_.empty()) return;
        Node& r = nodes_[static_cast<size_t>(root)];
        if (seed.shape != r.value.shape)
            throw std::invalid_argument("backward: seed shape " + shape_str(seed.shape) +
                                        " does not match output shape " + shape_str(r.value.shape));
        for (Id i = 0; i <= root; ++i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.requires_grad) n.grad = Tensor<T>::zeros(n.value.shape);
        }
        if (!r.requires_grad) return;
        r.grad = seed;
        for (Id i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.requires_grad && n.backprop) n.backprop(*this);
        }
    }

    void backward_scalar(Id root, T seed = T(1)) { backward(root, Tensor<T>::scalar(seed)); }

    // ---- ops ----

    Id conv1d(Id x, Id w, Id bias, int64_t stride = 1, int64_t pad = 0) {
        const Tensor<T>& xt = val(x);
        const Tensor<T>& wt = val(w);
        auto [B, Ci, L] = as_bcl(xt, "conv1d input");
        if (wt.rank() != 3)
            throw std::invalid_argument("conv1d: weight must be [C_out,C_in,K], got " +
                                        shape_str(wt.shape));
        const int64_t Co = wt.dim(0), K = wt.dim(2);
        if (wt.dim(1) != Ci)
            throw std::invalid_argument("conv1d: weight C_in " + std::to_string(wt.dim(1)) +
                                        " != input C_in " + std::to_string(Ci));
        const T* bp = nullptr;
        if (bias >= 0) {
            const Tensor<T>& bt = val(bias);
            if (bt.numel() != Co)
                throw std::invalid_argument("conv1d: bias length " + std::to_string(bt.numel()) +
                                            " != C_out " + std::to_string(Co));
            bp = bt.ptr();
        }
        const int64_t Lo = kern::conv_out_len(L, K, stride, pad);
        if (Lo < 1) throw std::invalid_argument("conv1d: output length < 1");
        Tensor<T> y(xt.rank() == 3 ? Shape{B, Co, Lo} : Shape{Co, Lo});
        kern::conv1d_fwd(xt.ptr(), wt.ptr(), bp, y.ptr(), B, Ci, L, Co, K, stride, pad);
        bool rg = needs_grad({x, w, bias});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                T* gx = t.grad_ptr(x);
                T* gw = t.grad_ptr(w);
                T* gb = bias >= 0 ? t.grad_ptr(bias) : nullptr;
                kern::conv1d_bwd(t.val(x).ptr(), t.val(w).ptr(), gy.ptr(), gx, gw, gb, B, Ci, L,
                                 Co, K, stride, pad);
            };
        }
        return push(std::move(y), rg, std::move(back), "conv1d");
    }

    Id linear(Id x, Id w, Id bias) {
        const Tensor<T>& xt = val(x);
        const Tensor<T>& wt = val(w);
        auto [B, Fi] = as_bf(xt, "linear input");
        if (wt.rank() != 2 || wt.dim(1) != Fi)
            throw std::invalid_argument("linear: weight " + shape_str(wt.shape) +
                                        " does not match input features " + std::to_string(Fi));
        const int64_t Fo = wt.dim(0);
        const T* bp = nullptr;
        if (bias >= 0) {
            const Tensor<T>& bt = val(bias);
            if (bt.numel() != Fo)
                throw std::invalid_argument("linear: bias length mismatch");
            bp = bt.ptr();
        }
        Tensor<T> y(xt.rank() == 2 ? Shape{B, Fo} : Shape{Fo});
        kern::linear_fwd(xt.ptr(), wt.ptr(), bp, y.ptr(), B, Fi, Fo);
        bool rg = needs_grad({x, w, bias});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                kern::linear_bwd(t.val(x).ptr(), t.val(w).ptr(), gy.ptr(), t.grad_ptr(x),
                                 t.grad_ptr(w), bias >= 0 ? t.grad_ptr(bias) : nullptr, B, Fi,
                                 Fo);
            };
        }
        return push(std::move(y), rg, std::move(back), "linear");
    }

    Id group_norm(Id x, int64_t groups, Id gamma, Id beta, T eps) {
        const Tensor<T>& xt = val(x);
        auto [B, C, L] = as_bcl(xt, "group_norm input");
        if (groups < 1 || C % groups != 0)
            throw std::invalid_argument("group_norm: groups " + std::to_string(groups) +
                                        " does not divide C " + std::to_string(C));
        if (eps <= T(0)) throw std::invalid_argument("group_norm: eps must be > 0");
        const Tensor<T>& gt = val(gamma);
        const Tensor<T>& bt = val(beta);
        if (gt.numel() != C || bt.numel() != C)
            throw std::invalid_argument("group_norm: gamma/beta length != C");
        const int64_t cpg = C / groups, n = cpg * L;
        Tensor<T> y(xt.shape);
        Tensor<T> mean({B, groups}), rstd({B, groups});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t g = 0; g < groups; ++g) {
                const T* xp = xt.ptr() + (b * C + g * cpg) * L;
                double mu = 0;
                for (int64_t i = 0; i < n; ++i) mu += static_cast<double>(xp[i]);
                mu /= static_cast<double>(n);
                double var = 0;
                for (int64_t i = 0; i < n; ++i) {
                    double d = static_cast<double>(xp[i]) - mu;
                    var += d * d;
                }
                var /= static_cast<double>(n);
                T rs = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
                mean.at(b, g) = static_cast<T>(mu);
                rstd.at(b, g) = rs;
                T* yp = y.ptr() + (b * C + g * cpg) * L;
                for (int64_t c = 0; c < cpg; ++c) {
                    const T ga = gt[g * cpg + c], be = bt[g * cpg + c];
                    for (int64_t l = 0; l < L; ++l) {
                        T xhat = (xp[c * L + l] - static_cast<T>(mean.at(b, g))) * rs;
                        yp[c * L + l] = ga * xhat + be;
                    }
                }
            }
        bool rg = needs_grad({x, gamma, beta});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=, mean = std::move(mean), rstd = std::move(rstd)](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                const Tensor<T>& xv = t.val(x);
                const Tensor<T>& gv = t.val(gamma);
                T* gx = t.grad_ptr(x);
                if (gx) {
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t g = 0; g < groups; ++g) {
                            const T mu = mean.at(b, g), rs = rstd.at(b, g);
                            const T* xp = xv.ptr() + (b * C + g * cpg) * L;
                            const T* gp = gy.ptr() + (b * C + g * cpg) * L;
                            double s1 = 0, s2 = 0;
                            for (int64_t c = 0; c < cpg; ++c) {
                                const T ga = gv[g * cpg + c];
                                for (int64_t l = 0; l < L; ++l) {
                                    T gyh = gp[c * L + l] * ga;
                                    T xhat = (xp[c * L + l] - mu) * rs;
                                    s1 += static_cast<double>(gyh);
                                    s2 += static_cast<double>(gyh * xhat);
                                }
                            }
                            const T m1 = static_cast<T>(s1 / static_cast<double>(n));
                            const T m2 = static_cast<T>(s2 / static_cast<double>(n));
                            T* gxp = gx + (b * C + g * cpg) * L;
                            for (int64_t c = 0; c < cpg; ++c) {
                                const T ga = gv[g * cpg + c];
                                for (int64_t l = 0; l < L; ++l) {
                                    T gyh = gp[c * L + l] * ga;
                                    T xhat = (xp[c * L + l] - mu) * rs;
                                    gxp[c * L + l] += rs * (gyh - m1 - xhat * m2);
                                }
                            }
                        }
                }
                T* gga = t.grad_ptr(gamma);
                T* gbe = t.grad_ptr(beta);
                if (gga || gbe) {
                    for (int64_t c = 0; c < C; ++c) {
                        const int64_t g = c / cpg;
                        double sg = 0, sb = 0;
                        for (int64_t b = 0; b < B; ++b) {
                            const T mu = mean.at(b, g), rs = rstd.at(b, g);
                            const T* xp = xv.ptr() + (b * C + c) * L;
                            const T* gp = gy.ptr() + (b * C + c) * L;
                            for (int64_t l = 0; l < L; ++l) {
                                sg += static_cast<double>(gp[l] * (xp[l] - mu) * rs);
                                sb += static_cast<double>(gp[l]);
                            }
                        }
                        if (gga) gga[c] += static_cast<T>(sg);
                        if (gbe) gbe[c] += static_cast<T>(sb);
                    }
                }
            };
        }
        return push(std::move(y), rg, std::move(back), "group_norm");
    }

    Id silu(Id x) {
        const Tensor<T>& xt = val(x);
        Tensor<T> y(xt.shape);
        for (int64_t i = 0; i < xt.numel(); ++i) {
            T s = sigmoid(xt[i]);
            y[i] = xt[i] * s;
        }
        bool rg = needs_grad({x});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                const Tensor<T>& xv = t.val(x);
                T* gx = t.grad_ptr(x);
                for (int64_t i = 0; i < xv.numel(); ++i) {
                    T s = sigmoid(xv[i]);
                    gx[i] += gy[i] * s * (T(1) + xv[i] * (T(1) - s));
                }
            };
        }
        return push(std::move(y), rg, std::move(back), "silu");
    }

    Id square(Id x) {
        const Tensor<T>& xt = val(x);
        Tensor<T> y(xt.shape);
        for (int64_t i = 0; i < xt.numel(); ++i) y[i] = xt[i] * xt[i];
        bool rg = needs_grad({x});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                const Tensor<T>& xv = t.val(x);
                T* gx = t.grad_ptr(x);
                for (int64_t i = 0; i < xv.numel(); ++i) gx[i] += gy[i] * T(2) * xv[i];
            };
        }
        return push(std::move(y), rg, std::move(back), "square");
    }

    // Single-head scaled dot-product attention over the length axis.
    // Projections run as one GEMM over the whole batch ([C, B*L] layout);
    // only the length-axis softmax mixing is per item.
    Id self_attention(Id x, Id wq, Id wk, Id wv, Id wo) {
        const Tensor<T>& xt = val(x);
        auto [B, C, L] = as_bcl(xt, "self_attention input");
        for (Id w : {wq, wk, wv, wo}) {
            const Tensor<T>& wt = val(w);
            if (wt.rank() != 2 || wt.dim(0) != C || wt.dim(1) != C)
                throw std::invalid_argument("self_attention: projection must be [C,C]=[" +
                                            std::to_string(C) + "," + std::to_string(C) +
                                            "], got " + shape_str(wt.shape));
        }
        const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(C)));
        const int64_t BL = B * L;
        Tensor<T> Xf({C, BL});
        gather_flat(xt.ptr(), Xf.ptr(), B, C, L);
        Tensor<T> Q({C, BL}), Kt({C, BL}), V({C, BL}), A({B, L, L}), H({C, BL});
        kern::gemm<T>(false, false, C, BL, C, T(1), val(wq).ptr(), C, Xf.ptr(), BL, T(0), Q.ptr(), BL);
        kern::gemm<T>(false, false, C, BL, C, T(1), val(wk).ptr(), C, Xf.ptr(), BL, T(0), Kt.ptr(), BL);
        kern::gemm<T>(false, false, C, BL, C, T(1), val(wv).ptr(), C, Xf.ptr(), BL, T(0), V.ptr(), BL);
        parallel_for(B, [&](int64_t b) {
            T* a = A.ptr() + b * L * L;
            kern::gemm<T>(true, false, L, L, C, inv, Q.ptr() + b * L, BL, Kt.ptr() + b * L, BL,
                          T(0), a, L);
            for (int64_t i = 0; i < L; ++i) softmax_row(a + i * L, L);
            kern::gemm<T>(false, true, C, L, L, T(1), V.ptr() + b * L, BL, a, L, T(0),
                          H.ptr() + b * L, BL);
        });
        Tensor<T> Yf({C, BL});
        kern::gemm<T>(false, false, C, BL, C, T(1), val(wo).ptr(), C, H.ptr(), BL, T(0), Yf.ptr(), BL);
        Tensor<T> y(xt.shape);
        scatter_flat(Yf.ptr(), y.ptr(), B, C, L);
        bool rg = needs_grad({x, wq, wk, wv, wo});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=, Q = std::move(Q), Kt = std::move(Kt), V = std::move(V), A = std::move(A),
                    H = std::move(H), Xf = std::move(Xf)](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                const int64_t BL = B * L;
                Tensor<T> gYf({C, BL});
                gather_flat(gy.ptr(), gYf.ptr(), B, C, L);
                Tensor<T> gH({C, BL}), gQ({C, BL}), gK({C, BL}), gV({C, BL});
                kern::gemm<T>(true, false, C, BL, C, T(1), t.val(wo).ptr(), C, gYf.ptr(), BL,
                              T(0), gH.ptr(), BL);
                parallel_for(B, [&](int64_t b) {
                    const T* a = A.ptr() + b * L * L;
                    std::vector<T> ga(static_cast<size_t>(L * L)), gs(static_cast<size_t>(L * L));
                    kern::gemm<T>(false, false, C, L, L, T(1), gH.ptr() + b * L, BL, a, L, T(0),
                                  gV.ptr() + b * L, BL);
                    kern::gemm<T>(true, false, L, L, C, T(1), gH.ptr() + b * L, BL,
                                  V.ptr() + b * L, BL, T(0), ga.data(), L);
                    for (int64_t i = 0; i < L; ++i) {
                        double dot = 0;
                        for (int64_t j = 0; j < L; ++j)
                            dot += static_cast<double>(ga[i * L + j] * a[i * L + j]);
                        for (int64_t j = 0; j < L; ++j)
                            gs[i * L + j] = a[i * L + j] * (ga[i * L + j] - static_cast<T>(dot));
                    }
                    kern::gemm<T>(false, true, C, L, L, inv, Kt.ptr() + b * L, BL, gs.data(), L,
                                  T(0), gQ.ptr() + b * L, BL);
                    kern::gemm<T>(false, false, C, L, L, inv, Q.ptr() + b * L, BL, gs.data(), L,
                                  T(0), gK.ptr() + b * L, BL);
                });
                auto acc_weight = [&](Id w, const Tensor<T>& gproj) {
                    if (T* g = t.grad_ptr(w))
                        kern::gemm<T>(false, true, C, C, BL, T(1), gproj.ptr(), BL, Xf.ptr(), BL,
                                      T(1), g, C);
                };
                if (T* g = t.grad_ptr(wo))
                    kern::gemm<T>(false, true, C, C, BL, T(1), gYf.ptr(), BL, H.ptr(), BL, T(1),
                                  g, C);
                acc_weight(wq, gQ);
                acc_weight(wk, gK);
                acc_weight(wv, gV);
                if (T* gx = t.grad_ptr(x)) {
                    Tensor<T> gXf({C, BL});
                    kern::gemm<T>(true, false, C, BL, C, T(1), t.val(wq).ptr(), C, gQ.ptr(), BL,
                                  T(0), gXf.ptr(), BL);
                    kern::gemm<T>(true, false, C, BL, C, T(1), t.val(wk).ptr(), C, gK.ptr(), BL,
                                  T(1), gXf.ptr(), BL);
                    kern::gemm<T>(true, false, C, BL, C, T(1), t.val(wv).ptr(), C, gV.ptr(), BL,
                                  T(1), gXf.ptr(), BL);
                    Tensor<T> gxs(gy.shape);
                    scatter_flat(gXf.ptr(), gxs.ptr(), B, C, L);
                    for (int64_t i = 0; i < gxs.numel(); ++i) gx[i] += gxs[i];
                }
            };
        }
        return push(std::move(y), rg, std::move(back), "self_attention");
    }

    // y[b,c,l] = x[b,c,l]*(1+scale[b,c]) + shift[b,c]; ss packs [scale|shift] as [B,2C].
    Id film(Id x, Id ss) {
        const Tensor<T>& xt = val(x);
        const Tensor<T>& st = val(ss);
        auto [B, C, L] = as_bcl(xt, "film input");
        bool batched = xt.rank() == 3;
        if ((batched && (st.rank() != 2 || st.dim(0) != B || st.dim(1) != 2 * C)) ||
            (!batched && st.numel() != 2 * C))
            throw std::invalid_argument("film: scale/shift shape " + shape_str(st.shape) +
                                        " does not match [B,2C]");
        Tensor<T> y(xt.shape);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const T s = st[b * 2 * C + c], sh = st[b * 2 * C + C + c];
                const T* xp = xt.ptr() + (b * C + c) * L;
                T* yp = y.ptr() + (b * C + c) * L;
                for (int64_t l = 0; l < L; ++l) yp[l] = xp[l] * (T(1) + s) + sh;
            }
        bool rg = needs_grad({x, ss});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                const Tensor<T>& xv = t.val(x);
                const Tensor<T>& sv = t.val(ss);
                T* gx = t.grad_ptr(x);
                T* gs = t.grad_ptr(ss);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        const T s = sv[b * 2 * C + c];
                        const T* gp = gy.ptr() + (b * C + c) * L;
                        const T* xp = xv.ptr() + (b * C + c) * L;
                        if (gx) {
                            T* gxp = gx + (b * C + c) * L;
                            for (int64_t l = 0; l < L; ++l) gxp[l] += gp[l] * (T(1) + s);
                        }
                        if (gs) {
                            double dsc = 0, dsh = 0;
                            for (int64_t l = 0; l < L; ++l) {
                                dsc += static_cast<double>(gp[l] * xp[l]);
                                dsh += static_cast<double>(gp[l]);
                            }
                            gs[b * 2 * C + c] += static_cast<T>(dsc);
                            gs[b * 2 * C + C + c] += static_cast<T>(dsh);
                        }
                    }
            };
        }
        return push(std::move(y), rg, std::move(back), "film");
    }

    Id add(Id a, Id b) {
        const Tensor<T>& at = val(a);
        const Tensor<T>& bt = val(b);
        if (at.shape != bt.shape)
            throw std::invalid_argument("add: shape mismatch " + shape_str(at.shape) + " vs " +
                                        shape_str(bt.shape));
        Tensor<T> y(at.shape);
        for (int64_t i = 0; i < at.numel(); ++i) y[i] = at[i] + bt[i];
        bool rg = needs_grad({a, b});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                for (Id in : {a, b}) {
                    T* g = t.grad_ptr(in);
                    if (g)
                        for (int64_t i = 0; i < gy.numel(); ++i) g[i] += gy[i];
                }
            };
        }
        return push(std::move(y), rg, std::move(back), "add");
    }

    // y_b = a[b]*xc_b + c[b]*f_b, with xc a constant tensor; item axis is dim 0
    // for rank-3 values, or the whole tensor for rank 2 (a,c length 1).
    Id lincomb_per_item(Id f, Tensor<T> xc, std::vector<T> a, std::vector<T> c) {
        const Tensor<T>& ft = val(f);
        if (xc.shape != ft.shape)
            throw std::invalid_argument("lincomb_per_item: tensor shape mismatch");
        const int64_t B = ft.rank() == 3 ? ft.dim(0) : 1;
        const int64_t stride = ft.numel() / B;
        if (static_cast<int64_t>(a.size()) != B || static_cast<int64_t>(c.size()) != B)
            throw std::invalid_argument("lincomb_per_item: coefficient count != item count");
        Tensor<T> y(ft.shape);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < stride; ++i)
                y[b * stride + i] = a[static_cast<size_t>(b)] * xc[b * stride + i] +
                                    c[static_cast<size_t>(b)] * ft[b * stride + i];
        bool rg = needs_grad({f});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=, c = std::move(c)](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                T* gf = t.grad_ptr(f);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < stride; ++i)
                        gf[b * stride + i] += c[static_cast<size_t>(b)] * gy[b * stride + i];
            };
        }
        return push(std::move(y), rg, std::move(back), "lincomb_per_item");
    }

    Id concat_channels(Id a, Id b) {
        const Tensor<T>& at = val(a);
        const Tensor<T>& bt = val(b);
        if (at.rank() != bt.rank() || at.rank() < 2)
            throw std::invalid_argument("concat_channels: rank mismatch");
        auto [Ba, Ca, La] = as_bcl(at, "concat_channels lhs");
        auto [Bb, Cb, Lb] = as_bcl(bt, "concat_channels rhs");
        if (Ba != Bb || La != Lb)
            throw std::invalid_argument("concat_channels: length axes differ (" +
                                        std::to_string(La) + " vs " + std::to_string(Lb) + ")");
        Tensor<T> y(at.rank() == 3 ? Shape{Ba, Ca + Cb, La} : Shape{Ca + Cb, La});
        for (int64_t bi = 0; bi < Ba; ++bi) {
            std::copy_n(at.ptr() + bi * Ca * La, Ca * La, y.ptr() + bi * (Ca + Cb) * La);
            std::copy_n(bt.ptr() + bi * Cb * La, Cb * La,
                        y.ptr() + bi * (Ca + Cb) * La + Ca * La);
        }
        bool rg = needs_grad({a, b});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                T* ga = t.grad_ptr(a);
                T* gb = t.grad_ptr(b);
                for (int64_t bi = 0; bi < Ba; ++bi) {
                    const T* g = gy.ptr() + bi * (Ca + Cb) * La;
                    if (ga)
                        for (int64_t i = 0; i < Ca * La; ++i) ga[bi * Ca * La + i] += g[i];
                    if (gb)
                        for (int64_t i = 0; i < Cb * La; ++i)
                            gb[bi * Cb * La + i] += g[Ca * La + i];
                }
            };
        }
        return push(std::move(y), rg, std::move(back), "concat_channels");
    }

    Id slice_channels(Id x, int64_t c0, int64_t c1) {
        const Tensor<T>& xt = val(x);
        auto [B, C, L] = as_bcl(xt, "slice_channels input");
        if (c0 < 0 || c1 <= c0 || c1 > C)
            throw std::invalid_argument("slice_channels: range [" + std::to_string(c0) + "," +
                                        std::to_string(c1) + ") invalid for C " +
                                        std::to_string(C));
        const int64_t Cs = c1 - c0;
        Tensor<T> y(xt.rank() == 3 ? Shape{B, Cs, L} : Shape{Cs, L});
        for (int64_t b = 0; b < B; ++b)
            std::copy_n(xt.ptr() + (b * C + c0) * L, Cs * L, y.ptr() + b * Cs * L);
        bool rg = needs_grad({x});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                T* gx = t.grad_ptr(x);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < Cs * L; ++i)
                        gx[(b * C + c0) * L + i] += gy[b * Cs * L + i];
            };
        }
        return push(std::move(y), rg, std::move(back), "slice_channels");
    }

    // Nearest-neighbour x2 upsample along the length axis, cropped to target_len.
    Id upsample_nearest(Id x, int64_t target_len) {
        const Tensor<T>& xt = val(x);
        auto [B, C, L] = as_bcl(xt, "upsample input");
        if (target_len <= L || target_len > 2 * L)
            throw std::invalid_argument("upsample_nearest: target " + std::to_string(target_len) +
                                        " not in (L, 2L] for L " + std::to_string(L));
        Tensor<T> y(xt.rank() == 3 ? Shape{B, C, target_len} : Shape{C, target_len});
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const T* xp = xt.ptr() + bc * L;
            T* yp = y.ptr() + bc * target_len;
            for (int64_t l = 0; l < target_len; ++l) yp[l] = xp[l / 2];
        }
        bool rg = needs_grad({x});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const Tensor<T>& gy = t.nodes_[static_cast<size_t>(self)].grad;
                T* gx = t.grad_ptr(x);
                for (int64_t bc = 0; bc < B * C; ++bc) {
                    const T* gp = gy.ptr() + bc * target_len;
                    T* gxp = gx + bc * L;
                    for (int64_t l = 0; l < target_len; ++l) gxp[l / 2] += gp[l];
                }
            };
        }
        return push(std::move(y), rg, std::move(back), "upsample_nearest");
    }

    Id sum_all(Id x) {
        const Tensor<T>& xt = val(x);
        double s = 0;
        for (int64_t i = 0; i < xt.numel(); ++i) s += static_cast<double>(xt[i]);
        bool rg = needs_grad({x});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const T g = t.nodes_[static_cast<size_t>(self)].grad[0];
                T* gx = t.grad_ptr(x);
                for (int64_t i = 0; i < t.val(x).numel(); ++i) gx[i] += g;
            };
        }
        return push(Tensor<T>::scalar(static_cast<T>(s)), rg, std::move(back), "sum_all");
    }

    Id mean_all(Id x) {
        const Tensor<T>& xt = val(x);
        const int64_t n = xt.numel();
        double s = 0;
        for (int64_t i = 0; i < n; ++i) s += static_cast<double>(xt[i]);
        bool rg = needs_grad({x});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=](Tape& t) {
                const T g = t.nodes_[static_cast<size_t>(self)].grad[0] / static_cast<T>(n);
                T* gx = t.grad_ptr(x);
                for (int64_t i = 0; i < n; ++i) gx[i] += g;
            };
        }
        return push(Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n))), rg,
                    std::move(back), "mean_all");
    }

    // loss = (1/B) * sum_b w[b] * ||pred_b - target_b||^2
    Id weighted_sq_loss(Id pred, Tensor<T> target, std::vector<T> w) {
        const Tensor<T>& pt = val(pred);
        if (target.shape != pt.shape)
            throw std::invalid_argument("weighted_sq_loss: target shape mismatch");
        const int64_t B = pt.rank() == 3 ? pt.dim(0) : 1;
        const int64_t stride = pt.numel() / B;
        if (static_cast<int64_t>(w.size()) != B)
            throw std::invalid_argument("weighted_sq_loss: weight count != item count");
        double loss = 0;
        for (int64_t b = 0; b < B; ++b) {
            double s = 0;
            for (int64_t i = 0; i < stride; ++i) {
                double d = static_cast<double>(pt[b * stride + i] - target[b * stride + i]);
                s += d * d;
            }
            loss += static_cast<double>(w[static_cast<size_t>(b)]) * s;
        }
        loss /= static_cast<double>(B);
        bool rg = needs_grad({pred});
        std::function<void(Tape&)> back;
        if (rg) {
            const Id self = next_id();
            back = [=, target = std::move(target), w = std::move(w)](Tape& t) {
                const T g = t.nodes_[static_cast<size_t>(self)].grad[0];
                const Tensor<T>& pv = t.val(pred);
                T* gp = t.grad_ptr(pred);
                const T scale = g * T(2) / static_cast<T>(B);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < stride; ++i)
                        gp[b * stride + i] += scale * w[static_cast<size_t>(b)] *
                                              (pv[b * stride + i] - target[b * stride + i]);
            };
        }
        return push(Tensor<T>::scalar(static_cast<T>(loss)), rg, std::move(back),
                    "weighted_sq_loss");
    }

  private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;
    };

    static T sigmoid(T v) { return T(1) / (T(1) + std::exp(-v)); }

    // [B,C,L] <-> [C, B*L] (item-major column blocks)
    static void gather_flat(const T* x, T* flat, int64_t B, int64_t C, int64_t L) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                std::copy_n(x + (b * C + c) * L, L, flat + c * B * L + b * L);
    }
    static void scatter_flat(const T* flat, T* x, int64_t B, int64_t C, int64_t L) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                std::copy_n(flat + c * B * L + b * L, L, x + (b * C + c) * L);
    }

    static void softmax_row(T* row, int64_t n) {
        T mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0;
        for (int64_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += static_cast<double>(row[j]);
        }
        const T inv = static_cast<T>(1.0 / sum);
        for (int64_t j = 0; j < n; ++j) row[j] *= inv;
    }

    // [C,L] is treated as a single item; [B,C,L] as a batch.
    static std::tuple<int64_t, int64_t, int64_t> as_bcl(const Tensor<T>& t, const char* what) {
        if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
        if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
        throw std::invalid_argument(std::string(what) + ": expected rank 2 or 3, got " +
                                    shape_str(t.shape));
    }
    static std::tuple<int64_t, int64_t> as_bf(const Tensor<T>& t, const char* what) {
        if (t.rank() == 1) return {1, t.dim(0)};
        if (t.rank() == 2) return {t.dim(0), t.dim(1)};
        throw std::invalid_argument(std::string(what) + ": expected rank 1 or 2, got " +
                                    shape_str(t.shape));
    }

    bool needs_grad(std::initializer_list<Id> ids) const {
        for (Id id : ids)
            if (id >= 0 && nodes_[static_cast<size_t>(id)].requires_grad) return true;
        return false;
    }

    // Gradient buffer of an input node, or null when it does not require grad.
    T* grad_ptr(Id id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        return n.requires_grad ? n.grad.ptr() : nullptr;
    }

    Id push(Tensor<T> v, bool rg, std::function<void(Tape&)> back, const char* op) {
        if (check_finite_ && !v.all_finite())
            throw std::runtime_error(std::string(op) + ": non-finite value in output");
        Id id = static_cast<Id>(nodes_.size());
        nodes_.push_back(Node{std::move(v), Tensor<T>{}, rg, std::move(back)});
        return id;
    }

    Id next_id() const { return static_cast<Id>(nodes_.size()); }

    std::vector<Node> nodes_;
    bool check_finite_;
};

}  // namespace cth
