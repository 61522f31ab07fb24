#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentdiff/kernels.hpp"
#include "sentdiff/rng.hpp"
#include "sentdiff/tensor.hpp"

namespace sentdiff {

// Named trainable parameter. Gradients accumulate into `grad` when a tape
// that references the parameter runs backward.
template <class T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    Param(std::string n, std::vector<int64_t> shape)
        : name(std::move(n)), value(shape), grad(std::move(shape)) {}

    void zero_grad() { grad.fill(T{0}); }
};

// Reverse-mode autodiff tape. Operations append nodes; backward() walks the
// tape in reverse, accumulating gradients. Node indices are only valid for
// the tape that produced them. One tape per training step.
template <class T>
class Tape {
public:
    using Index = int32_t;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    const Tensor<T>& value(Index i) const { return nodes_[static_cast<size_t>(i)].value; }
    const Tensor<T>& grad(Index i) const { return nodes_[static_cast<size_t>(i)].grad; }
    bool has_grad(Index i) const { return !nodes_[static_cast<size_t>(i)].grad.empty(); }

    // Keeps the node's gradient alive after backward() for inspection.
    void retain_grad(Index i) { nodes_[static_cast<size_t>(i)].retain = true; }

    size_t size() const { return nodes_.size(); }

    // ---- leaves ----

    Index leaf(Tensor<T> v) { return push(std::move(v), nullptr); }

    Index param(Param<T>& p) {
        Index out = push_ref(p.value);
        Param<T>* pp = &p;
        node(out).backward = [this, out, pp]() {
            auto& g = node(out).grad;
            T* dst = pp->grad.ptr();
            const T* src = g.ptr();
            const int64_t n = g.numel();
            for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
        };
        return out;
    }

    // Value copy with no backward edge.
    Index detach(Index x) { return leaf(value(x)); }

    // ---- structural ops ----

    // out[i, :] = src[rows[i], :]
    Index gather_rows(Index src, std::vector<int64_t> rows) {
        const auto& s = value(src);
        const int64_t cols = s.shape.back();
        const int64_t src_rows = s.numel() / cols;
        Tensor<T> out({static_cast<int64_t>(rows.size()), cols});
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= src_rows) throw std::out_of_range("gather_rows index");
            std::copy_n(s.ptr() + rows[i] * cols, cols, out.ptr() + static_cast<int64_t>(i) * cols);
        }
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, src, rows = std::move(rows), cols]() {
            auto& g = node(o).grad;
            auto& gs = ensure_grad(src);
            for (size_t i = 0; i < rows.size(); ++i) {
                T* dst = gs.ptr() + rows[i] * cols;
                const T* gp = g.ptr() + static_cast<int64_t>(i) * cols;
                for (int64_t c = 0; c < cols; ++c) dst[c] += gp[c];
            }
        };
        return o;
    }

    // out = x with out[rows[i], :] = h[i, :]
    Index replace_rows(Index x, Index h, std::vector<int64_t> rows) {
        const auto& xv = value(x);
        const auto& hv = value(h);
        const int64_t cols = xv.shape.back();
        if (hv.shape.back() != cols) throw std::invalid_argument("replace_rows: column mismatch");
        if (hv.numel() / cols != static_cast<int64_t>(rows.size()))
            throw std::invalid_argument("replace_rows: row count mismatch");
        Tensor<T> out = xv;
        for (size_t i = 0; i < rows.size(); ++i)
            std::copy_n(hv.ptr() + static_cast<int64_t>(i) * cols, cols, out.ptr() + rows[i] * cols);
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, h, rows, cols]() {
            auto& g = node(o).grad;
            auto& gh = ensure_grad(h);
            for (size_t i = 0; i < rows.size(); ++i) {
                T* dst = gh.ptr() + static_cast<int64_t>(i) * cols;
                const T* gp = g.ptr() + rows[i] * cols;
                for (int64_t c = 0; c < cols; ++c) dst[c] += gp[c];
            }
            auto& gx = ensure_grad(x);
            const int64_t n = g.numel();
            std::vector<uint8_t> replaced(static_cast<size_t>(n / cols), 0);
            for (int64_t r : rows) replaced[static_cast<size_t>(r)] = 1;
            for (int64_t r = 0; r < n / cols; ++r) {
                if (replaced[static_cast<size_t>(r)]) continue;
                T* dst = gx.ptr() + r * cols;
                const T* gp = g.ptr() + r * cols;
                for (int64_t c = 0; c < cols; ++c) dst[c] += gp[c];
            }
        };
        return o;
    }

    // (N*T) x H  ->  (N*heads) x T x dk
    Index split_heads(Index x, int64_t n, int64_t t, int64_t heads) {
        const auto& xv = value(x);
        const int64_t h = xv.shape.back();
        const int64_t dk = h / heads;
        Tensor<T> out({n * heads, t, dk});
        for (int64_t b = 0; b < n; ++b)
            for (int64_t hh = 0; hh < heads; ++hh)
                for (int64_t tt = 0; tt < t; ++tt)
                    std::copy_n(xv.ptr() + (b * t + tt) * h + hh * dk, dk,
                                out.ptr() + ((b * heads + hh) * t + tt) * dk);
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, n, t, heads, h, dk]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            for (int64_t b = 0; b < n; ++b)
                for (int64_t hh = 0; hh < heads; ++hh)
                    for (int64_t tt = 0; tt < t; ++tt) {
                        T* dst = gx.ptr() + (b * t + tt) * h + hh * dk;
                        const T* gp = g.ptr() + ((b * heads + hh) * t + tt) * dk;
                        for (int64_t d = 0; d < dk; ++d) dst[d] += gp[d];
                    }
        };
        return o;
    }

    // (N*heads) x T x dk  ->  (N*T) x H
    Index merge_heads(Index x, int64_t n, int64_t t) {
        const auto& xv = value(x);
        const int64_t heads = xv.dim(0) / n;
        const int64_t dk = xv.shape.back();
        const int64_t h = heads * dk;
        Tensor<T> out({n * t, h});
        for (int64_t b = 0; b < n; ++b)
            for (int64_t hh = 0; hh < heads; ++hh)
                for (int64_t tt = 0; tt < t; ++tt)
                    std::copy_n(xv.ptr() + ((b * heads + hh) * t + tt) * dk, dk,
                                out.ptr() + (b * t + tt) * h + hh * dk);
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, n, t, heads, h, dk]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            for (int64_t b = 0; b < n; ++b)
                for (int64_t hh = 0; hh < heads; ++hh)
                    for (int64_t tt = 0; tt < t; ++tt) {
                        T* dst = gx.ptr() + ((b * heads + hh) * t + tt) * dk;
                        const T* gp = g.ptr() + (b * t + tt) * h + hh * dk;
                        for (int64_t d = 0; d < dk; ++d) dst[d] += gp[d];
                    }
        };
        return o;
    }

    Index reshape(Index x, std::vector<int64_t> shape) {
        const auto& xv = value(x);
        if (Tensor<T>::count(shape) != xv.numel())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor<T> out = xv;
        out.shape = std::move(shape);
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x]() { accumulate(x, node(o).grad); };
        return o;
    }

    // Stack the rows of b below the rows of a.
    Index concat_rows(Index a, Index b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        const int64_t cols = av.shape.back();
        if (bv.shape.back() != cols) throw std::invalid_argument("concat_rows: width mismatch");
        const int64_t ra = av.numel() / cols, rb = bv.numel() / cols;
        Tensor<T> out({ra + rb, cols});
        std::copy_n(av.ptr(), ra * cols, out.ptr());
        std::copy_n(bv.ptr(), rb * cols, out.ptr() + ra * cols);
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, a, b, ra, rb, cols]() {
            auto& g = node(o).grad;
            auto& ga = ensure_grad(a);
            auto& gb = ensure_grad(b);
            for (int64_t i = 0; i < ra * cols; ++i) ga[i] += g[i];
            for (int64_t i = 0; i < rb * cols; ++i) gb[i] += g[ra * cols + i];
        };
        return o;
    }

    // ---- linear algebra ----

    Index matmul(Index a, Index b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        const int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
        if (bv.dim(0) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
        Tensor<T> out({m, n});
        kernels::gemm_nn(out.ptr(), av.ptr(), bv.ptr(), m, k, n, false);
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, a, b, m, k, n]() {
            auto& g = node(o).grad;
            kernels::gemm_nt(ensure_grad(a).ptr(), g.ptr(), value(b).ptr(), m, n, k, true);
            kernels::gemm_tn(ensure_grad(b).ptr(), value(a).ptr(), g.ptr(), k, m, n, true);
        };
        return o;
    }

    Index bmm(Index a, Index b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        const int64_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
        if (bv.dim(0) != batch || bv.dim(1) != k) throw std::invalid_argument("bmm: shape mismatch");
        Tensor<T> out({batch, m, n});
        kernels::bmm_nn(out.ptr(), av.ptr(), bv.ptr(), batch, m, k, n, false);
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, a, b, batch, m, k, n]() {
            auto& g = node(o).grad;
            kernels::bmm_nt(ensure_grad(a).ptr(), g.ptr(), value(b).ptr(), batch, m, n, k, true);
            kernels::bmm_tn(ensure_grad(b).ptr(), value(a).ptr(), g.ptr(), batch, k, m, n, true);
        };
        return o;
    }

    // C[b] = A[b] * B[b]^T
    Index bmm_nt(Index a, Index b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        const int64_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(1);
        if (bv.dim(0) != batch || bv.dim(2) != k) throw std::invalid_argument("bmm_nt: shape mismatch");
        Tensor<T> out({batch, m, n});
        kernels::bmm_nt(out.ptr(), av.ptr(), bv.ptr(), batch, m, k, n, false);
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, a, b, batch, m, k, n]() {
            auto& g = node(o).grad;
            kernels::bmm_nn(ensure_grad(a).ptr(), g.ptr(), value(b).ptr(), batch, m, n, k, true);
            kernels::bmm_tn(ensure_grad(b).ptr(), g.ptr(), value(a).ptr(), batch, n, m, k, true);
        };
        return o;
    }

    // ---- elementwise / broadcast ----

    Index add(Index a, Index b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
        Tensor<T> out = av;
        const int64_t n = out.numel();
        T* op = out.ptr();
        const T* bp = bv.ptr();
        for (int64_t i = 0; i < n; ++i) op[i] += bp[i];
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, a, b]() {
            auto& g = node(o).grad;
            accumulate(a, g);
            accumulate(b, g);
        };
        return o;
    }

    // out = a + c * b. A zero coefficient prunes the b-subtree from backward.
    Index add_scaled(Index a, Index b, T c) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (!av.same_shape(bv)) throw std::invalid_argument("add_scaled: shape mismatch");
        Tensor<T> out = av;
        const int64_t n = out.numel();
        T* op = out.ptr();
        const T* bp = bv.ptr();
        for (int64_t i = 0; i < n; ++i) op[i] += c * bp[i];
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, a, b, c]() {
            auto& g = node(o).grad;
            accumulate(a, g);
            if (c != T{0}) accumulate_scaled(b, g, c);
        };
        return o;
    }

    Index scale(Index a, T c) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v *= c;
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, a, c]() { accumulate_scaled(a, node(o).grad, c); };
        return o;
    }

    // x: R x C, bias: C
    Index add_bias(Index x, Index bias) {
        const auto& xv = value(x);
        const auto& bv = value(bias);
        const int64_t cols = xv.shape.back();
        if (bv.numel() != cols) throw std::invalid_argument("add_bias: width mismatch");
        Tensor<T> out = xv;
        const int64_t rows = out.numel() / cols;
        for (int64_t r = 0; r < rows; ++r) {
            T* op = out.ptr() + r * cols;
            const T* bp = bv.ptr();
            for (int64_t c = 0; c < cols; ++c) op[c] += bp[c];
        }
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, bias, rows, cols]() {
            auto& g = node(o).grad;
            accumulate(x, g);
            auto& gb = ensure_grad(bias);
            for (int64_t r = 0; r < rows; ++r) {
                const T* gp = g.ptr() + r * cols;
                T* bp = gb.ptr();
                for (int64_t c = 0; c < cols; ++c) bp[c] += gp[c];
            }
        };
        return o;
    }

    Index relu(Index x) {
        Tensor<T> out = value(x);
        for (auto& v : out.data) v = v > T{0} ? v : T{0};
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            const T* xv = value(x).ptr();
            const int64_t n = g.numel();
            for (int64_t i = 0; i < n; ++i)
                if (xv[i] > T{0}) gx[i] += g[i];
        };
        return o;
    }

    Index gelu(Index x) {
        const auto& xv = value(x);
        Tensor<T> out(xv.shape);
        const int64_t n = out.numel();
        const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
#pragma omp parallel for schedule(static) if (n > 16384)
        for (int64_t i = 0; i < n; ++i) {
            const T v = xv[i];
            out[i] = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
        }
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, inv_sqrt2]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            const T* xv = value(x).ptr();
            const int64_t n2 = g.numel();
            const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
#pragma omp parallel for schedule(static) if (n2 > 16384)
            for (int64_t i = 0; i < n2; ++i) {
                const T v = xv[i];
                const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
                gx[i] += g[i] * (cdf + v * pdf);
            }
        };
        return o;
    }

    Index sigmoid(Index x) {
        const auto& xv = value(x);
        Tensor<T> out(xv.shape);
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) out[i] = T{1} / (T{1} + std::exp(-xv[i]));
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            const T* ov = value(o).ptr();
            const int64_t n2 = g.numel();
            for (int64_t i = 0; i < n2; ++i) gx[i] += g[i] * ov[i] * (T{1} - ov[i]);
        };
        return o;
    }

    // Inverted dropout; identity when p == 0.
    Index dropout(Index x, T p, uint64_t seed) {
        if (p == T{0}) return x;
        if (p < T{0} || p >= T{1}) throw std::invalid_argument("dropout probability out of range");
        const auto& xv = value(x);
        const int64_t n = xv.numel();
        auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n));
        rng::Stream stream(seed);
        for (int64_t i = 0; i < n; ++i)
            (*mask)[static_cast<size_t>(i)] = stream.next_double() >= static_cast<double>(p) ? 1 : 0;
        const T scale_keep = T{1} / (T{1} - p);
        Tensor<T> out(xv.shape);
        for (int64_t i = 0; i < n; ++i)
            out[i] = (*mask)[static_cast<size_t>(i)] ? xv[i] * scale_keep : T{0};
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, mask, scale_keep]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            const int64_t n2 = g.numel();
            for (int64_t i = 0; i < n2; ++i)
                if ((*mask)[static_cast<size_t>(i)]) gx[i] += g[i] * scale_keep;
        };
        return o;
    }

    // ---- normalization ----

    Index layer_norm(Index x, Index gamma, Index beta, T eps) {
        const auto& xv = value(x);
        const int64_t cols = xv.shape.back();
        const int64_t rows = xv.numel() / cols;
        if (value(gamma).numel() != cols || value(beta).numel() != cols)
            throw std::invalid_argument("layer_norm: affine width mismatch");
        Tensor<T> out(xv.shape);
        auto xhat = std::make_shared<Tensor<T>>(xv.shape);
        auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
        const T* gp = value(gamma).ptr();
        const T* bp = value(beta).ptr();
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xv.ptr() + r * cols;
            T mean{0};
            for (int64_t c = 0; c < cols; ++c) mean += xr[c];
            mean /= static_cast<T>(cols);
            T var{0};
            for (int64_t c = 0; c < cols; ++c) {
                const T d = xr[c] - mean;
                var += d * d;
            }
            var /= static_cast<T>(cols);
            const T rs = T{1} / std::sqrt(var + eps);
            (*rstd)[static_cast<size_t>(r)] = rs;
            T* hr = xhat->ptr() + r * cols;
            T* orow = out.ptr() + r * cols;
            for (int64_t c = 0; c < cols; ++c) {
                hr[c] = (xr[c] - mean) * rs;
                orow[c] = gp[c] * hr[c] + bp[c];
            }
        }
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, gamma, beta, xhat, rstd, rows, cols]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            auto& gg = ensure_grad(gamma);
            auto& gb = ensure_grad(beta);
            const T* gam = value(gamma).ptr();
            for (int64_t r = 0; r < rows; ++r) {
                const T* gr = g.ptr() + r * cols;
                const T* hr = xhat->ptr() + r * cols;
                for (int64_t c = 0; c < cols; ++c) {
                    gg[c] += gr[c] * hr[c];
                    gb[c] += gr[c];
                }
            }
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
            for (int64_t r = 0; r < rows; ++r) {
                const T* gr = g.ptr() + r * cols;
                const T* hr = xhat->ptr() + r * cols;
                T* gxr = gx.ptr() + r * cols;
                T sum_dy{0};
                T sum_dy_xhat{0};
                for (int64_t c = 0; c < cols; ++c) {
                    const T dy = gr[c] * gam[c];
                    sum_dy += dy;
                    sum_dy_xhat += dy * hr[c];
                }
                const T rs = (*rstd)[static_cast<size_t>(r)];
                const T inv_cols = T{1} / static_cast<T>(cols);
                for (int64_t c = 0; c < cols; ++c) {
                    const T dy = gr[c] * gam[c];
                    gxr[c] += rs * (dy - inv_cols * sum_dy - hr[c] * inv_cols * sum_dy_xhat);
                }
            }
        };
        return o;
    }

    // BatchNorm over the row dimension of an N x C input. In train mode the
    // batch statistics are used and running stats are updated in place (side
    // effect on the buffers, not part of the tape). gamma/beta may be -1 for
    // the affine-free variant. Gradients flow through the batch statistics.
    Index batch_norm(Index x, Index gamma, Index beta, Tensor<T>* running_mean,
                     Tensor<T>* running_var, T momentum, T eps, bool train_mode) {
        const auto& xv = value(x);
        if (xv.rank() != 2) throw std::invalid_argument("batch_norm expects a 2-D input");
        const int64_t rows = xv.dim(0), cols = xv.dim(1);
        if (train_mode && rows < 2) throw std::invalid_argument("batch too small for BatchNorm");
        const bool affine = gamma >= 0;

        Tensor<T> out(xv.shape);
        auto xhat = std::make_shared<Tensor<T>>(xv.shape);
        auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(cols));
        const T* gp = affine ? value(gamma).ptr() : nullptr;
        const T* bp = affine ? value(beta).ptr() : nullptr;

        for (int64_t c = 0; c < cols; ++c) {
            T mean, rs;
            if (train_mode) {
                T m{0};
                for (int64_t r = 0; r < rows; ++r) m += xv.at2(r, c);
                m /= static_cast<T>(rows);
                T var{0};
                for (int64_t r = 0; r < rows; ++r) {
                    const T d = xv.at2(r, c) - m;
                    var += d * d;
                }
                var /= static_cast<T>(rows);
                mean = m;
                rs = T{1} / std::sqrt(var + eps);
                // Running stats use the unbiased variance estimate.
                const T unbiased = var * static_cast<T>(rows) / static_cast<T>(rows - 1);
                (*running_mean)[c] = (T{1} - momentum) * (*running_mean)[c] + momentum * m;
                (*running_var)[c] = (T{1} - momentum) * (*running_var)[c] + momentum * unbiased;
            } else {
                mean = (*running_mean)[c];
                rs = T{1} / std::sqrt((*running_var)[c] + eps);
            }
            (*rstd)[static_cast<size_t>(c)] = rs;
            for (int64_t r = 0; r < rows; ++r) {
                const T h = (xv.at2(r, c) - mean) * rs;
                xhat->at2(r, c) = h;
                out.at2(r, c) = affine ? gp[c] * h + bp[c] : h;
            }
        }
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, gamma, beta, xhat, rstd, rows, cols, affine, train_mode]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            const T* gam = affine ? value(gamma).ptr() : nullptr;
            if (affine) {
                auto& gg = ensure_grad(gamma);
                auto& gb = ensure_grad(beta);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) {
                        gg[c] += g.at2(r, c) * xhat->at2(r, c);
                        gb[c] += g.at2(r, c);
                    }
            }
            for (int64_t c = 0; c < cols; ++c) {
                const T rs = (*rstd)[static_cast<size_t>(c)];
                if (train_mode) {
                    T sum_dy{0};
                    T sum_dy_xhat{0};
                    for (int64_t r = 0; r < rows; ++r) {
                        const T dy = affine ? g.at2(r, c) * gam[c] : g.at2(r, c);
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat->at2(r, c);
                    }
                    const T inv_rows = T{1} / static_cast<T>(rows);
                    for (int64_t r = 0; r < rows; ++r) {
                        const T dy = affine ? g.at2(r, c) * gam[c] : g.at2(r, c);
                        gx.at2(r, c) +=
                            rs * (dy - inv_rows * sum_dy - xhat->at2(r, c) * inv_rows * sum_dy_xhat);
                    }
                } else {
                    for (int64_t r = 0; r < rows; ++r) {
                        const T dy = affine ? g.at2(r, c) * gam[c] : g.at2(r, c);
                        gx.at2(r, c) += dy * rs;
                    }
                }
            }
        };
        return o;
    }

    // ---- softmax family ----

    Index softmax_lastdim(Index x) {
        const auto& xv = value(x);
        const int64_t cols = xv.shape.back();
        const int64_t rows = xv.numel() / cols;
        Tensor<T> out(xv.shape);
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xv.ptr() + r * cols;
            T* orow = out.ptr() + r * cols;
            T mx = xr[0];
            for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
            T sum{0};
            for (int64_t c = 0; c < cols; ++c) {
                orow[c] = std::exp(xr[c] - mx);
                sum += orow[c];
            }
            const T inv = T{1} / sum;
            for (int64_t c = 0; c < cols; ++c) orow[c] *= inv;
        }
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, rows, cols]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            const T* p = value(o).ptr();
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
            for (int64_t r = 0; r < rows; ++r) {
                const T* pr = p + r * cols;
                const T* gr = g.ptr() + r * cols;
                T* gxr = gx.ptr() + r * cols;
                T dot{0};
                for (int64_t c = 0; c < cols; ++c) dot += gr[c] * pr[c];
                for (int64_t c = 0; c < cols; ++c) gxr[c] += pr[c] * (gr[c] - dot);
            }
        };
        return o;
    }

    Index l2_normalize_rows(Index x) {
        const auto& xv = value(x);
        const int64_t cols = xv.shape.back();
        const int64_t rows = xv.numel() / cols;
        Tensor<T> out(xv.shape);
        auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xv.ptr() + r * cols;
            T sq{0};
            for (int64_t c = 0; c < cols; ++c) sq += xr[c] * xr[c];
            const T nrm = std::sqrt(sq);
            if (!(nrm > T{0})) throw std::domain_error("cannot normalize zero-norm vector");
            (*norms)[static_cast<size_t>(r)] = nrm;
            T* orow = out.ptr() + r * cols;
            const T inv = T{1} / nrm;
            for (int64_t c = 0; c < cols; ++c) orow[c] = xr[c] * inv;
        }
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, x, norms, rows, cols]() {
            auto& g = node(o).grad;
            auto& gx = ensure_grad(x);
            const T* u = value(o).ptr();
            for (int64_t r = 0; r < rows; ++r) {
                const T* ur = u + r * cols;
                const T* gr = g.ptr() + r * cols;
                T* gxr = gx.ptr() + r * cols;
                T dot{0};
                for (int64_t c = 0; c < cols; ++c) dot += gr[c] * ur[c];
                const T inv = T{1} / (*norms)[static_cast<size_t>(r)];
                for (int64_t c = 0; c < cols; ++c) gxr[c] += inv * (gr[c] - dot * ur[c]);
            }
        };
        return o;
    }

    // ---- loss heads (scalar outputs) ----

    // Softmax cross-entropy over rows of a logit matrix where each row has a
    // set of target columns; the per-row loss uses the shared denominator and
    // averages over the targets. loss = mean_i [ LSE_i - (1/k) sum_t l_it ].
    Index softmax_ce_multi(Index logits, std::vector<std::vector<int64_t>> targets) {
        const auto& lv = value(logits);
        const int64_t rows = lv.dim(0), cols = lv.dim(1);
        if (static_cast<int64_t>(targets.size()) != rows)
            throw std::invalid_argument("softmax_ce_multi: one target set per row required");
        for (const auto& v : lv.data)
            if (!std::isfinite(static_cast<double>(v)))
                throw std::domain_error("non-finite input to contrastive loss");
        auto probs = std::make_shared<Tensor<T>>(lv.shape);
        T loss{0};
        for (int64_t r = 0; r < rows; ++r) {
            const T* lr = lv.ptr() + r * cols;
            T mx = lr[0];
            for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, lr[c]);
            T sum{0};
            T* pr = probs->ptr() + r * cols;
            for (int64_t c = 0; c < cols; ++c) {
                pr[c] = std::exp(lr[c] - mx);
                sum += pr[c];
            }
            const T inv = T{1} / sum;
            for (int64_t c = 0; c < cols; ++c) pr[c] *= inv;
            const T lse = mx + std::log(sum);
            const auto& tg = targets[static_cast<size_t>(r)];
            if (tg.empty()) throw std::invalid_argument("softmax_ce_multi: empty target set");
            T tsum{0};
            for (int64_t t : tg) tsum += lr[t];
            loss += lse - tsum / static_cast<T>(tg.size());
        }
        loss /= static_cast<T>(rows);
        Tensor<T> out({1});
        out[0] = loss;
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, logits, probs, targets = std::move(targets), rows, cols]() {
            const T up = node(o).grad[0];
            auto& gl = ensure_grad(logits);
            const T inv_rows = T{1} / static_cast<T>(rows);
            for (int64_t r = 0; r < rows; ++r) {
                const T* pr = probs->ptr() + r * cols;
                T* gr = gl.ptr() + r * cols;
                for (int64_t c = 0; c < cols; ++c) gr[c] += up * inv_rows * pr[c];
                const auto& tg = targets[static_cast<size_t>(r)];
                const T w = up * inv_rows / static_cast<T>(tg.size());
                for (int64_t t : tg) gr[t] -= w;
            }
        };
        return o;
    }

    // Binary cross-entropy on probabilities for the replaced-token task.
    // labels: 1 = replaced; mask selects the positions that count. The sum is
    // normalized by num_sentences (mean per sentence). Probabilities are
    // clamped away from {0,1} by `clamp` before the logs.
    Index bce_masked(Index probs, std::shared_ptr<std::vector<uint8_t>> labels,
                     std::shared_ptr<std::vector<uint8_t>> mask, int64_t num_sentences, T clamp) {
        const auto& pv = value(probs);
        const int64_t n = pv.numel();
        if (static_cast<int64_t>(labels->size()) != n || static_cast<int64_t>(mask->size()) != n)
            throw std::invalid_argument("bce_masked: shape mismatch");
        T loss{0};
        for (int64_t i = 0; i < n; ++i) {
            if (!(*mask)[static_cast<size_t>(i)]) continue;
            const T p = pv[i];
            if (!std::isfinite(static_cast<double>(p)))
                throw std::domain_error("non-finite probability in replaced-token loss");
            if ((*labels)[static_cast<size_t>(i)])
                loss -= std::log(std::max(T{1} - p, clamp));
            else
                loss -= std::log(std::max(p, clamp));
        }
        loss /= static_cast<T>(num_sentences);
        Tensor<T> out({1});
        out[0] = loss;
        Index o = push(std::move(out), nullptr);
        node(o).backward = [this, o, probs, labels, mask, num_sentences, clamp, n]() {
            const T up = node(o).grad[0];
            auto& gp = ensure_grad(probs);
            const T* pv = value(probs).ptr();
            const T inv = T{1} / static_cast<T>(num_sentences);
            for (int64_t i = 0; i < n; ++i) {
                if (!(*mask)[static_cast<size_t>(i)]) continue;
                const T p = pv[i];
                if ((*labels)[static_cast<size_t>(i)]) {
                    if (T{1} - p > clamp) gp[i] += up * inv / (T{1} - p);
                } else {
                    if (p > clamp) gp[i] -= up * inv / p;
                }
            }
        };
        return o;
    }

    // Mean softmax cross-entropy with one integer target per row. Used for
    // masked-token prediction during generator pretraining.
    Index ce_rows(Index logits, std::vector<int64_t> targets) {
        std::vector<std::vector<int64_t>> multi(targets.size());
        for (size_t i = 0; i < targets.size(); ++i) multi[i] = {targets[i]};
        return softmax_ce_multi(logits, std::move(multi));
    }

    // ---- backward ----

    void backward(Index loss) {
        auto& ln = node(loss);
        if (ln.value.numel() != 1) throw std::invalid_argument("backward expects a scalar loss");
        ensure_grad(loss)[0] = T{1};
        for (Index i = loss; i >= 0; --i) {
            auto& nd = node(i);
            if (nd.grad.empty()) continue;
            if (nd.backward) nd.backward();
            if (!nd.retain) nd.grad.release();
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void()> backward;
        bool retain = false;
    };

    Node& node(Index i) { return nodes_[static_cast<size_t>(i)]; }

    Index push(Tensor<T> v, std::nullptr_t) {
        nodes_.push_back(Node{std::move(v), {}, nullptr, false});
        return static_cast<Index>(nodes_.size() - 1);
    }

    Index push_ref(const Tensor<T>& v) {
        // Parameters are small relative to activations; a copy keeps the tape
        // self-contained and immune to parameter updates mid-step.
        nodes_.push_back(Node{v, {}, nullptr, false});
        return static_cast<Index>(nodes_.size() - 1);
    }

    Tensor<T>& ensure_grad(Index i) {
        auto& nd = node(i);
        if (nd.grad.empty()) nd.grad = Tensor<T>(nd.value.shape);
        return nd.grad;
    }

    void accumulate(Index i, const Tensor<T>& g) {
        auto& gi = ensure_grad(i);
        const int64_t n = g.numel();
        T* dst = gi.ptr();
        const T* src = g.ptr();
        for (int64_t k = 0; k < n; ++k) dst[k] += src[k];
    }

    void accumulate_scaled(Index i, const Tensor<T>& g, T c) {
        auto& gi = ensure_grad(i);
        const int64_t n = g.numel();
        T* dst = gi.ptr();
        const T* src = g.ptr();
        for (int64_t k = 0; k < n; ++k) dst[k] += c * src[k];
    }

    std::vector<Node> nodes_;
};

}  // namespace sentdiff
