#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sentdiff/autodiff.hpp"
#include "sentdiff/tensor.hpp"

namespace sentdiff {

struct LossConfig {
    double temperature = 0.05;
    double lambda = 0.005;

    void validate() const {
        if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
        if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
    }
};

template <class T>
struct LossBreakdown {
    T contrast{0};
    T rtd{0};
    T total{0};
};

enum class ExtraRole { positive, negative };

// Probabilities are clamped this far from {0,1} before the logs.
inline constexpr double kProbClamp = 1e-7;

template <class T>
T cosine_sim(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_sim: dimension mismatch");
    T dot{0}, na{0}, nb{0};
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (!(na > T{0}) || !(nb > T{0})) throw std::domain_error("cosine_sim: zero-norm input");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace detail {

// Row-normalized cosine similarity matrix S[i][j] = sim(a_i, b_j) / tau.
template <class T>
Tensor<T> similarity_matrix(const Tensor<T>& a, const Tensor<T>& b, T tau) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("contrastive loss expects matching N x H matrices");
    for (const auto& v : a.data)
        if (!std::isfinite(static_cast<double>(v))) throw std::domain_error("non-finite input to contrastive loss");
    for (const auto& v : b.data)
        if (!std::isfinite(static_cast<double>(v))) throw std::domain_error("non-finite input to contrastive loss");
    const int64_t n = a.dim(0), m = b.dim(0), h = a.dim(1);
    auto row_norms = [&](const Tensor<T>& x) {
        std::vector<T> norms(static_cast<size_t>(x.dim(0)));
        for (int64_t i = 0; i < x.dim(0); ++i) {
            T sq{0};
            for (int64_t c = 0; c < h; ++c) sq += x.at2(i, c) * x.at2(i, c);
            if (!(sq > T{0})) throw std::domain_error("contrastive loss: zero-norm row");
            norms[static_cast<size_t>(i)] = std::sqrt(sq);
        }
        return norms;
    };
    const auto na = row_norms(a);
    const auto nb = row_norms(b);
    Tensor<T> s({n, m});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) {
            T dot{0};
            for (int64_t c = 0; c < h; ++c) dot += a.at2(i, c) * b.at2(j, c);
            s.at2(i, j) = dot / (na[static_cast<size_t>(i)] * nb[static_cast<size_t>(j)] * tau);
        }
    return s;
}

// Mean over rows of LSE(row) - mean(logits at target columns), with the row
// max subtracted before exponentiation.
template <class T>
T softmax_ce_rows(const Tensor<T>& s, const std::vector<std::vector<int64_t>>& targets) {
    const int64_t n = s.dim(0), m = s.dim(1);
    T loss{0};
    for (int64_t i = 0; i < n; ++i) {
        T mx = s.at2(i, 0);
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, s.at2(i, j));
        T sum{0};
        for (int64_t j = 0; j < m; ++j) sum += std::exp(s.at2(i, j) - mx);
        const T lse = mx + std::log(sum);
        const auto& tg = targets[static_cast<size_t>(i)];
        T tsum{0};
        for (int64_t t : tg) tsum += s.at2(i, t);
        loss += lse - tsum / static_cast<T>(tg.size());
    }
    return loss / static_cast<T>(n);
}

}  // namespace detail

// InfoNCE over in-batch negatives: mean_i of
//   -log( exp(sim(h_i, h_i+)/tau) / sum_j exp(sim(h_i, h_j+)/tau) ).
template <class T>
T contrastive_loss(const Tensor<T>& h, const Tensor<T>& h_plus, T tau) {
    if (!(tau > T{0})) throw std::invalid_argument("temperature must be positive");
    if (h.dim(0) != h_plus.dim(0)) throw std::invalid_argument("batch size mismatch");
    const auto s = detail::similarity_matrix(h, h_plus, tau);
    std::vector<std::vector<int64_t>> targets(static_cast<size_t>(h.dim(0)));
    for (int64_t i = 0; i < h.dim(0); ++i) targets[static_cast<size_t>(i)] = {i};
    return detail::softmax_ce_rows(s, targets);
}

// Variant with a third embedding per sentence. As negatives, every extra_j
// joins the denominator of every row; as positives, each row's loss averages
// over the two positive targets {h_i+, extra_i} under the widened denominator.
template <class T>
T contrastive_loss_with_extras(const Tensor<T>& h, const Tensor<T>& h_plus,
                               const Tensor<T>& extra, ExtraRole role, T tau) {
    if (!(tau > T{0})) throw std::invalid_argument("temperature must be positive");
    const int64_t n = h.dim(0);
    if (h_plus.dim(0) != n || extra.dim(0) != n) throw std::invalid_argument("batch size mismatch");
    Tensor<T> cols({2 * n, h.dim(1)});
    std::copy_n(h_plus.ptr(), h_plus.numel(), cols.ptr());
    std::copy_n(extra.ptr(), extra.numel(), cols.ptr() + h_plus.numel());
    const auto s = detail::similarity_matrix(h, cols, tau);
    std::vector<std::vector<int64_t>> targets(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        if (role == ExtraRole::positive)
            targets[static_cast<size_t>(i)] = {i, n + i};
        else
            targets[static_cast<size_t>(i)] = {i};
    }
    return detail::softmax_ce_rows(s, targets);
}

// Replaced-token detection loss. probs holds P(original) per position,
// labels[t] = 1 iff the token was replaced, content_mask selects the word
// positions (CLS/SEP/PAD excluded). Sum per sentence, mean over sentences.
template <class T>
T rtd_loss(const Tensor<T>& probs, const std::vector<uint8_t>& labels,
           const std::vector<uint8_t>& content_mask) {
    if (probs.rank() != 2) throw std::invalid_argument("rtd_loss expects an N x T matrix");
    const int64_t n = probs.dim(0), t = probs.dim(1);
    if (static_cast<int64_t>(labels.size()) != n * t ||
        static_cast<int64_t>(content_mask.size()) != n * t)
        throw std::invalid_argument("rtd_loss: shape mismatch");
    const T clamp = static_cast<T>(kProbClamp);
    T loss{0};
    for (int64_t i = 0; i < n * t; ++i) {
        if (!content_mask[static_cast<size_t>(i)]) continue;
        const T p = probs[i];
        if (!std::isfinite(static_cast<double>(p)))
            throw std::domain_error("non-finite probability in rtd_loss");
        if (labels[static_cast<size_t>(i)])
            loss -= std::log(std::max(T{1} - p, clamp));
        else
            loss -= std::log(std::max(p, clamp));
    }
    return loss / static_cast<T>(n);
}

template <class T>
LossBreakdown<T> combined_loss(T contrast, T rtd, T lambda) {
    LossBreakdown<T> out;
    out.contrast = contrast;
    out.rtd = rtd;
    out.total = contrast + lambda * rtd;
    return out;
}

// ---- tape builders ---------------------------------------------------------

// Contrastive loss node over projected embeddings already on the tape.
template <class T>
typename Tape<T>::Index contrastive_loss_node(Tape<T>& tape, typename Tape<T>::Index h,
                                              typename Tape<T>::Index h_plus, T tau) {
    if (!(tau > T{0})) throw std::invalid_argument("temperature must be positive");
    const int64_t n = tape.value(h).dim(0);
    const int64_t d = tape.value(h).dim(1);
    auto hn = tape.l2_normalize_rows(h);
    auto pn = tape.l2_normalize_rows(h_plus);
    auto sim = tape.bmm_nt(tape.reshape(hn, {1, n, d}), tape.reshape(pn, {1, n, d}));
    auto logits = tape.scale(tape.reshape(sim, {n, n}), T{1} / tau);
    std::vector<std::vector<int64_t>> targets(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) targets[static_cast<size_t>(i)] = {i};
    return tape.softmax_ce_multi(logits, std::move(targets));
}

template <class T>
typename Tape<T>::Index contrastive_loss_with_extras_node(Tape<T>& tape,
                                                          typename Tape<T>::Index h,
                                                          typename Tape<T>::Index h_plus,
                                                          typename Tape<T>::Index extra,
                                                          ExtraRole role, T tau) {
    if (!(tau > T{0})) throw std::invalid_argument("temperature must be positive");
    const int64_t n = tape.value(h).dim(0);
    const int64_t d = tape.value(h).dim(1);
    auto hn = tape.l2_normalize_rows(h);
    auto cols = tape.l2_normalize_rows(tape.concat_rows(h_plus, extra));
    auto sim = tape.bmm_nt(tape.reshape(hn, {1, n, d}), tape.reshape(cols, {1, 2 * n, d}));
    auto logits = tape.scale(tape.reshape(sim, {n, 2 * n}), T{1} / tau);
    std::vector<std::vector<int64_t>> targets(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        if (role == ExtraRole::positive)
            targets[static_cast<size_t>(i)] = {i, n + i};
        else
            targets[static_cast<size_t>(i)] = {i};
    }
    return tape.softmax_ce_multi(logits, std::move(targets));
}

template <class T>
typename Tape<T>::Index rtd_loss_node(Tape<T>& tape, typename Tape<T>::Index probs,
                                      std::vector<uint8_t> labels, std::vector<uint8_t> mask,
                                      int64_t num_sentences) {
    return tape.bce_masked(probs, std::make_shared<std::vector<uint8_t>>(std::move(labels)),
                           std::make_shared<std::vector<uint8_t>>(std::move(mask)), num_sentences,
                           static_cast<T>(kProbClamp));
}

}  // namespace sentdiff
