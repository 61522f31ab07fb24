#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentdiff/autodiff.hpp"
#include "sentdiff/corpus.hpp"
#include "sentdiff/rng.hpp"

namespace sentdiff {

enum class Mode { train, eval };

struct EncoderConfig {
    int64_t num_layers = 4;
    int64_t hidden = 128;
    int64_t heads = 4;
    int64_t ffn = 512;
    int64_t max_len = 32;
    int64_t vocab = 0;
    double dropout = 0.1;

    void validate() const {
        if (num_layers < 1) throw std::invalid_argument("num_layers must be positive");
        if (hidden % heads != 0) throw std::invalid_argument("hidden must be divisible by heads");
        if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0,1)");
        if (max_len < 3) throw std::invalid_argument("max_len must be at least 3");
        if (vocab <= Vocabulary::kNumSpecials) throw std::invalid_argument("vocab too small");
    }
};

template <class T>
struct TransformerLayerParams {
    Param<T> ln1_gamma, ln1_beta;
    Param<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Param<T> ln2_gamma, ln2_beta;
    Param<T> w_ff1, b_ff1, w_ff2, b_ff2;
};

// Pre-norm transformer encoder parameters: embeddings, layers, final norm.
template <class T>
struct EncoderParams {
    EncoderConfig cfg;
    Param<T> tok_emb;  // V x H
    Param<T> pos_emb;  // max_len x H
    std::vector<TransformerLayerParams<T>> layers;
    Param<T> lnf_gamma, lnf_beta;

    explicit EncoderParams(const EncoderConfig& c, const std::string& prefix) : cfg(c) {
        cfg.validate();
        const int64_t h = cfg.hidden, f = cfg.ffn;
        tok_emb = Param<T>(prefix + ".tok_emb", {cfg.vocab, h});
        pos_emb = Param<T>(prefix + ".pos_emb", {cfg.max_len, h});
        layers.reserve(static_cast<size_t>(cfg.num_layers));
        for (int64_t l = 0; l < cfg.num_layers; ++l) {
            const std::string lp = prefix + ".layer" + std::to_string(l);
            TransformerLayerParams<T> L;
            L.ln1_gamma = Param<T>(lp + ".ln1_gamma", {h});
            L.ln1_beta = Param<T>(lp + ".ln1_beta", {h});
            L.wq = Param<T>(lp + ".wq", {h, h});
            L.bq = Param<T>(lp + ".bq", {h});
            L.wk = Param<T>(lp + ".wk", {h, h});
            L.bk = Param<T>(lp + ".bk", {h});
            L.wv = Param<T>(lp + ".wv", {h, h});
            L.bv = Param<T>(lp + ".bv", {h});
            L.wo = Param<T>(lp + ".wo", {h, h});
            L.bo = Param<T>(lp + ".bo", {h});
            L.ln2_gamma = Param<T>(lp + ".ln2_gamma", {h});
            L.ln2_beta = Param<T>(lp + ".ln2_beta", {h});
            L.w_ff1 = Param<T>(lp + ".w_ff1", {h, f});
            L.b_ff1 = Param<T>(lp + ".b_ff1", {f});
            L.w_ff2 = Param<T>(lp + ".w_ff2", {f, h});
            L.b_ff2 = Param<T>(lp + ".b_ff2", {h});
            layers.push_back(std::move(L));
        }
        lnf_gamma = Param<T>(prefix + ".lnf_gamma", {h});
        lnf_beta = Param<T>(prefix + ".lnf_beta", {h});
    }

    void for_each_param(const std::function<void(Param<T>&)>& fn) {
        fn(tok_emb);
        fn(pos_emb);
        for (auto& L : layers) {
            fn(L.ln1_gamma);
            fn(L.ln1_beta);
            fn(L.wq);
            fn(L.bq);
            fn(L.wk);
            fn(L.bk);
            fn(L.wv);
            fn(L.bv);
            fn(L.wo);
            fn(L.bo);
            fn(L.ln2_gamma);
            fn(L.ln2_beta);
            fn(L.w_ff1);
            fn(L.b_ff1);
            fn(L.w_ff2);
            fn(L.b_ff2);
        }
        fn(lnf_gamma);
        fn(lnf_beta);
    }
};

// Projection head used only at training time: two bias-free linears with a
// BatchNorm after each, ReLU in between, and no affine on the second norm.
template <class T>
struct ProjectorParams {
    Param<T> w1;  // H x 2H
    Param<T> bn1_gamma, bn1_beta;
    Param<T> w2;  // 2H x H
    Tensor<T> bn1_running_mean, bn1_running_var;
    Tensor<T> bn2_running_mean, bn2_running_var;
    T momentum = static_cast<T>(0.1);
    T eps = static_cast<T>(1e-5);
    bool enabled = true;  // false drops the BatchNorm layers (ablation)

    explicit ProjectorParams(int64_t hidden, const std::string& prefix) {
        const int64_t mid = hidden * 2;
        w1 = Param<T>(prefix + ".w1", {hidden, mid});
        bn1_gamma = Param<T>(prefix + ".bn1_gamma", {mid});
        bn1_beta = Param<T>(prefix + ".bn1_beta", {mid});
        w2 = Param<T>(prefix + ".w2", {mid, hidden});
        bn1_running_mean = Tensor<T>({mid});
        bn1_running_var = Tensor<T>({mid});
        bn1_running_var.fill(T{1});
        bn2_running_mean = Tensor<T>({hidden});
        bn2_running_var = Tensor<T>({hidden});
        bn2_running_var.fill(T{1});
    }

    void for_each_param(const std::function<void(Param<T>&)>& fn) {
        fn(w1);
        fn(bn1_gamma);
        fn(bn1_beta);
        fn(w2);
    }
};

template <class T>
struct DiscriminatorParams {
    EncoderParams<T> body;
    Param<T> rtd_weight;  // H x 1, per-token logit

    explicit DiscriminatorParams(const EncoderConfig& cfg)
        : body(cfg, "discriminator"), rtd_weight("discriminator.rtd_weight", {cfg.hidden, 1}) {}

    void for_each_param(const std::function<void(Param<T>&)>& fn) {
        body.for_each_param(fn);
        fn(rtd_weight);
    }
};

template <class T>
struct GeneratorParams {
    EncoderParams<T> body;
    Param<T> out_weight;  // H_g x V
    Param<T> out_bias;    // V

    explicit GeneratorParams(const EncoderConfig& cfg)
        : body(cfg, "generator"),
          out_weight("generator.out_weight", {cfg.hidden, cfg.vocab}),
          out_bias("generator.out_bias", {cfg.vocab}) {}

    void for_each_param(const std::function<void(Param<T>&)>& fn) {
        body.for_each_param(fn);
        fn(out_weight);
        fn(out_bias);
    }
};

// Everything the optimizer touches: sentence encoder, projector,
// discriminator. The generator lives separately and stays frozen.
template <class T>
struct ModelParams {
    EncoderParams<T> encoder;
    ProjectorParams<T> projector;
    DiscriminatorParams<T> discriminator;

    explicit ModelParams(const EncoderConfig& cfg)
        : encoder(cfg, "encoder"), projector(cfg.hidden, "projector"), discriminator(cfg) {}

    void for_each_param(const std::function<void(Param<T>&)>& fn) {
        encoder.for_each_param(fn);
        projector.for_each_param(fn);
        discriminator.for_each_param(fn);
    }

    void zero_grads() {
        for_each_param([](Param<T>& p) { p.zero_grad(); });
    }
};

namespace detail {

template <class T>
void init_normal(Param<T>& p, rng::Stream& stream, double std) {
    for (auto& v : p.value.data) v = static_cast<T>(stream.next_normal() * std);
}

template <class T>
void init_encoder(EncoderParams<T>& enc, uint64_t seed) {
    // BERT-style N(0, 0.02) for projections and embeddings; identity norms.
    uint64_t ordinal = 0;
    enc.for_each_param([&](Param<T>& p) {
        rng::Stream stream(rng::derive(seed, 0x7e5au, ordinal++));
        const std::string& n = p.name;
        const bool is_gamma = n.find("gamma") != std::string::npos;
        const bool is_beta = n.find("beta") != std::string::npos;
        const bool is_bias = n.find(".b") != std::string::npos && !is_beta;
        if (is_gamma)
            p.value.fill(T{1});
        else if (is_beta || is_bias)
            p.value.fill(T{0});
        else
            init_normal(p, stream, 0.02);
    });
}

}  // namespace detail

template <class T>
void init_model(ModelParams<T>& m, uint64_t seed) {
    detail::init_encoder(m.encoder, rng::derive(seed, 1));
    detail::init_encoder(m.discriminator.body, rng::derive(seed, 2));
    {
        rng::Stream stream(rng::derive(seed, 3));
        detail::init_normal(m.discriminator.rtd_weight, stream, 0.02);
    }
    // Projector linears use 1/sqrt(fan_in) so unit-variance inputs keep unit
    // variance into each BatchNorm.
    {
        rng::Stream s1(rng::derive(seed, 4));
        detail::init_normal(m.projector.w1, s1, 1.0 / std::sqrt(static_cast<double>(m.projector.w1.value.dim(0))));
        rng::Stream s2(rng::derive(seed, 5));
        detail::init_normal(m.projector.w2, s2, 1.0 / std::sqrt(static_cast<double>(m.projector.w2.value.dim(0))));
        m.projector.bn1_gamma.value.fill(T{1});
        m.projector.bn1_beta.value.fill(T{0});
    }
}

template <class T>
void init_generator(GeneratorParams<T>& g, uint64_t seed) {
    detail::init_encoder(g.body, rng::derive(seed, 6));
    rng::Stream stream(rng::derive(seed, 7));
    detail::init_normal(g.out_weight, stream, 0.02);
    g.out_bias.value.fill(T{0});
}

// FNV-1a over the raw bytes of every parameter in visitation order.
template <class T, class Params>
uint64_t param_checksum(Params& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    params.for_each_param([&](Param<T>& p) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.ptr());
        const size_t n = p.value.data.size() * sizeof(T);
        for (size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    });
    return h;
}

// ---- forward passes -------------------------------------------------------

// Flattens a batch to row-major (N*T) token ids, padding/truncating each
// sequence to the common length t.
inline std::vector<int32_t> flatten_batch(const std::vector<TokenSequence>& seqs, int64_t t) {
    std::vector<int32_t> ids(static_cast<size_t>(static_cast<int64_t>(seqs.size()) * t),
                             Vocabulary::kPad);
    for (size_t i = 0; i < seqs.size(); ++i) {
        const auto& s = seqs[i];
        const int64_t n = std::min<int64_t>(t, s.content_len);
        for (int64_t j = 0; j < n; ++j) ids[i * static_cast<size_t>(t) + static_cast<size_t>(j)] = s.ids[static_cast<size_t>(j)];
    }
    return ids;
}

inline int64_t batch_common_length(const std::vector<TokenSequence>& seqs) {
    int64_t t = 0;
    for (const auto& s : seqs) t = std::max(t, s.content_len);
    return t;
}

template <class T>
typename Tape<T>::Index transformer_stack(Tape<T>& tape, EncoderParams<T>& enc,
                                          typename Tape<T>::Index x, int64_t n, int64_t t,
                                          Mode mode, uint64_t dropout_seed) {
    using Index = typename Tape<T>::Index;
    const auto& cfg = enc.cfg;
    const T p = mode == Mode::train ? static_cast<T>(cfg.dropout) : T{0};
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.hidden / cfg.heads)));

    for (size_t l = 0; l < enc.layers.size(); ++l) {
        auto& L = enc.layers[l];
        Index normed = tape.layer_norm(x, tape.param(L.ln1_gamma), tape.param(L.ln1_beta),
                                       static_cast<T>(1e-5));
        Index q = tape.add_bias(tape.matmul(normed, tape.param(L.wq)), tape.param(L.bq));
        Index k = tape.add_bias(tape.matmul(normed, tape.param(L.wk)), tape.param(L.bk));
        Index v = tape.add_bias(tape.matmul(normed, tape.param(L.wv)), tape.param(L.bv));
        Index qh = tape.split_heads(q, n, t, cfg.heads);
        Index kh = tape.split_heads(k, n, t, cfg.heads);
        Index vh = tape.split_heads(v, n, t, cfg.heads);
        Index scores = tape.scale(tape.bmm_nt(qh, kh), scale);
        Index probs = tape.softmax_lastdim(scores);
        Index ctx = tape.merge_heads(tape.bmm(probs, vh), n, t);
        Index attn = tape.add_bias(tape.matmul(ctx, tape.param(L.wo)), tape.param(L.bo));
        attn = tape.dropout(attn, p, rng::derive(dropout_seed, 0xa77u, l));
        x = tape.add(x, attn);

        Index normed2 = tape.layer_norm(x, tape.param(L.ln2_gamma), tape.param(L.ln2_beta),
                                        static_cast<T>(1e-5));
        Index ff = tape.add_bias(tape.matmul(normed2, tape.param(L.w_ff1)), tape.param(L.b_ff1));
        ff = tape.gelu(ff);
        ff = tape.add_bias(tape.matmul(ff, tape.param(L.w_ff2)), tape.param(L.b_ff2));
        ff = tape.dropout(ff, p, rng::derive(dropout_seed, 0xffdu, l));
        x = tape.add(x, ff);
    }
    return tape.layer_norm(x, tape.param(enc.lnf_gamma), tape.param(enc.lnf_beta),
                           static_cast<T>(1e-5));
}

// Per-token hidden states for a batch; returns the (N*T) x H final states.
// Two train-mode calls with different seeds realize the two dropout views.
template <class T>
typename Tape<T>::Index encode_tokens(Tape<T>& tape, EncoderParams<T>& enc,
                                      const std::vector<int32_t>& ids, int64_t n, int64_t t,
                                      Mode mode, uint64_t dropout_seed) {
    using Index = typename Tape<T>::Index;
    const auto& cfg = enc.cfg;
    if (t > cfg.max_len) throw std::invalid_argument("sequence longer than max_len");
    if (static_cast<int64_t>(ids.size()) != n * t)
        throw std::invalid_argument("encode_tokens: id buffer size mismatch");
    std::vector<int64_t> tok_rows(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= cfg.vocab)
            throw std::out_of_range("token id out of vocabulary range");
        tok_rows[i] = ids[i];
    }
    std::vector<int64_t> pos_rows(ids.size());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < t; ++j) pos_rows[static_cast<size_t>(i * t + j)] = j;

    Index emb = tape.add(tape.gather_rows(tape.param(enc.tok_emb), std::move(tok_rows)),
                         tape.gather_rows(tape.param(enc.pos_emb), std::move(pos_rows)));
    const T p = mode == Mode::train ? static_cast<T>(cfg.dropout) : T{0};
    emb = tape.dropout(emb, p, rng::derive(dropout_seed, 0xe33u));
    return transformer_stack(tape, enc, emb, n, t, mode, dropout_seed);
}

// Rows of the [CLS] position for each sentence: (N*T) x H -> N x H.
template <class T>
typename Tape<T>::Index select_cls(Tape<T>& tape, typename Tape<T>::Index hidden, int64_t n,
                                   int64_t t) {
    std::vector<int64_t> rows(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) rows[static_cast<size_t>(i)] = i * t;
    return tape.gather_rows(hidden, std::move(rows));
}

// Projection MLP over [CLS] vectors. Train mode uses batch statistics and
// updates the running stats; eval mode reads the running stats and leaves
// them untouched.
template <class T>
typename Tape<T>::Index project(Tape<T>& tape, ProjectorParams<T>& proj,
                                typename Tape<T>::Index cls, Mode mode) {
    using Index = typename Tape<T>::Index;
    const bool train_mode = mode == Mode::train;
    Index z = tape.matmul(cls, tape.param(proj.w1));
    if (proj.enabled) {
        z = tape.batch_norm(z, tape.param(proj.bn1_gamma), tape.param(proj.bn1_beta),
                            &proj.bn1_running_mean, &proj.bn1_running_var, proj.momentum, proj.eps,
                            train_mode);
    }
    z = tape.relu(z);
    z = tape.matmul(z, tape.param(proj.w2));
    if (proj.enabled) {
        z = tape.batch_norm(z, -1, -1, &proj.bn2_running_mean, &proj.bn2_running_var,
                            proj.momentum, proj.eps, train_mode);
    }
    return z;
}

// Conditional replaced-token discriminator. The sentence embedding h replaces
// the discriminator's position-0 input embedding, so its gradient reaches the
// encoder through h. Returns per-token P(original), shape (N*T) x 1.
template <class T>
typename Tape<T>::Index discriminate(Tape<T>& tape, DiscriminatorParams<T>& disc,
                                     const std::vector<int32_t>& ids, int64_t n, int64_t t,
                                     typename Tape<T>::Index h, Mode mode, uint64_t dropout_seed) {
    using Index = typename Tape<T>::Index;
    const auto& cfg = disc.body.cfg;
    const auto& hv = tape.value(h);
    if (hv.rank() != 2 || hv.dim(0) != n || hv.dim(1) != cfg.hidden)
        throw std::invalid_argument("conditioning vector shape mismatch");

    std::vector<int64_t> tok_rows(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= cfg.vocab)
            throw std::out_of_range("token id out of vocabulary range");
        tok_rows[i] = ids[i];
    }
    Index emb = tape.gather_rows(tape.param(disc.body.tok_emb), std::move(tok_rows));
    std::vector<int64_t> cls_rows(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) cls_rows[static_cast<size_t>(i)] = i * t;
    emb = tape.replace_rows(emb, h, std::move(cls_rows));

    std::vector<int64_t> pos_rows(ids.size());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < t; ++j) pos_rows[static_cast<size_t>(i * t + j)] = j;
    emb = tape.add(emb, tape.gather_rows(tape.param(disc.body.pos_emb), std::move(pos_rows)));

    const T p = mode == Mode::train ? static_cast<T>(cfg.dropout) : T{0};
    emb = tape.dropout(emb, p, rng::derive(dropout_seed, 0xd15cu));
    Index hidden = transformer_stack(tape, disc.body, emb, n, t, mode, dropout_seed);
    Index logits = tape.matmul(hidden, tape.param(disc.rtd_weight));
    return tape.sigmoid(logits);
}

// Generator MLM logits over the vocabulary, shape (N*T) x V.
template <class T>
typename Tape<T>::Index generator_logits(Tape<T>& tape, GeneratorParams<T>& gen,
                                         const std::vector<int32_t>& ids, int64_t n, int64_t t,
                                         Mode mode, uint64_t dropout_seed) {
    using Index = typename Tape<T>::Index;
    Index hidden = encode_tokens(tape, gen.body, ids, n, t, mode, dropout_seed);
    return tape.add_bias(tape.matmul(hidden, tape.param(gen.out_weight)), tape.param(gen.out_bias));
}

// Eval-mode sentence embedding: raw [CLS] hidden state, projector discarded,
// computed at the sequence's own content length so padding never enters.
template <class T>
std::vector<T> eval_embedding(EncoderParams<T>& enc, const TokenSequence& seq) {
    Tape<T> tape;
    const int64_t t = seq.content_len;
    std::vector<int32_t> ids(seq.ids.begin(), seq.ids.begin() + t);
    auto hidden = encode_tokens(tape, enc, ids, 1, t, Mode::eval, 0);
    auto cls = select_cls(tape, hidden, 1, t);
    const auto& v = tape.value(cls);
    return std::vector<T>(v.data.begin(), v.data.end());
}

// Train-mode sentence embedding for a batch: encoder [CLS] through the
// projector with the given dropout seed.
template <class T>
typename Tape<T>::Index train_embeddings(Tape<T>& tape, ModelParams<T>& m,
                                         const std::vector<int32_t>& ids, int64_t n, int64_t t,
                                         uint64_t dropout_seed) {
    auto hidden = encode_tokens(tape, m.encoder, ids, n, t, Mode::train, dropout_seed);
    auto cls = select_cls(tape, hidden, n, t);
    return project(tape, m.projector, cls, Mode::train);
}

}  // namespace sentdiff
