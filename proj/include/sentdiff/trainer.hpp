#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sentdiff/augment.hpp"
#include "sentdiff/config.hpp"
#include "sentdiff/corpus.hpp"
#include "sentdiff/eval.hpp"
#include "sentdiff/generator.hpp"
#include "sentdiff/losses.hpp"
#include "sentdiff/model.hpp"

namespace sentdiff {

// Seed stream tags. Every consumer of randomness derives its own stream, so
// disabling one branch never shifts another branch's draws.
namespace seeds {
inline constexpr uint64_t kInit = 0x01;
inline constexpr uint64_t kShuffle = 0x02;
inline constexpr uint64_t kStep = 0x03;
inline constexpr uint64_t kView1 = 0x10;
inline constexpr uint64_t kView2 = 0x11;
inline constexpr uint64_t kViewExtra = 0x12;
inline constexpr uint64_t kAugChoice = 0x20;
inline constexpr uint64_t kMask = 0x21;
inline constexpr uint64_t kGenSample = 0x22;
inline constexpr uint64_t kDiscDropout = 0x23;
inline constexpr uint64_t kGenPretrain = 0x30;
}  // namespace seeds

template <class T>
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps)
        : lr_(static_cast<T>(lr)),
          beta1_(static_cast<T>(beta1)),
          beta2_(static_cast<T>(beta2)),
          eps_(static_cast<T>(eps)) {}

    void step(const std::vector<Param<T>*>& params) {
        if (m_.empty()) {
            for (const auto* p : params) {
                m_.emplace_back(p->value.shape);
                v_.emplace_back(p->value.shape);
            }
        }
        ++t_;
        const T bc1 = T{1} - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T{1} - std::pow(beta2_, static_cast<T>(t_));
        for (size_t pi = 0; pi < params.size(); ++pi) {
            Param<T>& p = *params[pi];
            Tensor<T>& m = m_[pi];
            Tensor<T>& v = v_[pi];
            const int64_t n = p.value.numel();
            T* w = p.value.ptr();
            const T* g = p.grad.ptr();
            T* mp = m.ptr();
            T* vp = v.ptr();
            for (int64_t i = 0; i < n; ++i) {
                mp[i] = beta1_ * mp[i] + (T{1} - beta1_) * g[i];
                vp[i] = beta2_ * vp[i] + (T{1} - beta2_) * g[i] * g[i];
                const T mhat = mp[i] / bc1;
                const T vhat = vp[i] / bc2;
                w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    T lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

template <class T>
std::vector<Param<T>*> collect_params(ModelParams<T>& m) {
    std::vector<Param<T>*> out;
    m.for_each_param([&](Param<T>& p) { out.push_back(&p); });
    return out;
}

template <class T>
std::vector<Param<T>*> collect_params(GeneratorParams<T>& g) {
    std::vector<Param<T>*> out;
    g.for_each_param([&](Param<T>& p) { out.push_back(&p); });
    return out;
}

// ---- generator pretraining --------------------------------------------------

// Masked-token cross-entropy of a generator over a sequence set, eval mode.
// Used to compare a pretrained generator against its random initialization.
template <class T>
double mlm_eval_loss(GeneratorParams<T>& gen, const std::vector<TokenSequence>& seqs,
                     double mask_ratio, uint64_t seed) {
    if (seqs.empty()) throw std::invalid_argument("empty evaluation set");
    double total = 0.0;
    int64_t count = 0;
    const int64_t t = batch_common_length(seqs);
    std::vector<TokenSequence> masked(seqs.size());
    std::vector<std::vector<int64_t>> positions(seqs.size());
    for (size_t i = 0; i < seqs.size(); ++i) {
        const auto pattern = sample_mask(seqs[i], mask_ratio, rng::derive(seed, 0xe7a1u, i));
        masked[i] = apply_mask(seqs[i], pattern);
        positions[i] = mask_positions(masked[i]);
    }
    Tape<T> tape;
    auto logits = generator_logits(tape, gen, flatten_batch(masked, t),
                                   static_cast<int64_t>(seqs.size()), t, Mode::eval, 0);
    const auto& lv = tape.value(logits);
    const int64_t v = gen.body.cfg.vocab;
    for (size_t i = 0; i < seqs.size(); ++i) {
        for (int64_t pos : positions[i]) {
            const T* row = lv.ptr() + (static_cast<int64_t>(i) * t + pos) * v;
            T mx = row[0];
            for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            T sum{0};
            for (int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
            const int32_t target = seqs[i].ids[static_cast<size_t>(pos)];
            total += static_cast<double>(mx + std::log(sum) - row[target]);
            ++count;
        }
    }
    if (count == 0) throw std::runtime_error("no masked positions in evaluation set");
    return total / static_cast<double>(count);
}

// Trains a small MLM with standard masking cross-entropy and returns it
// frozen. steps = 0 yields the random initialization.
template <class T>
MlmGenerator<T> pretrain_generator(const std::vector<TokenSequence>& corpus,
                                   const TrainConfig& cfg, std::ostream* log = nullptr) {
    if (corpus.empty()) throw std::invalid_argument("empty corpus");
    GeneratorParams<T> gen(cfg.generator);
    const uint64_t seed = rng::derive(cfg.seed, seeds::kGenPretrain);
    init_generator(gen, rng::derive(seed, seeds::kInit));

    Adam<T> opt(cfg.gen_lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    std::vector<Param<T>*> params = collect_params(gen);

    const int64_t batch_size =
        std::min<int64_t>(cfg.batch_size, static_cast<int64_t>(corpus.size()));
    int64_t step = 0, epoch = 0;
    while (step < cfg.gen_pretrain_steps) {
        const auto batches =
            make_batches(corpus, batch_size, rng::derive(seed, seeds::kShuffle, epoch));
        ++epoch;
        for (const auto& batch : batches) {
            if (step >= cfg.gen_pretrain_steps) break;
            const uint64_t step_seed = rng::derive(seed, seeds::kStep, step);
            const int64_t n = batch.size();
            const int64_t t = batch_common_length(batch.sequences);

            std::vector<TokenSequence> masked(batch.sequences.size());
            std::vector<int64_t> rows;
            std::vector<int64_t> targets;
            for (size_t i = 0; i < batch.sequences.size(); ++i) {
                const auto pattern = sample_mask(batch.sequences[i], cfg.gen_mask_ratio,
                                                 rng::derive(step_seed, seeds::kMask, i));
                masked[i] = apply_mask(batch.sequences[i], pattern);
                for (int64_t pos : mask_positions(masked[i])) {
                    rows.push_back(static_cast<int64_t>(i) * t + pos);
                    targets.push_back(batch.sequences[i].ids[static_cast<size_t>(pos)]);
                }
            }
            if (rows.empty()) {
                ++step;
                continue;
            }
            Tape<T> tape;
            auto logits = generator_logits(tape, gen, flatten_batch(masked, t), n, t, Mode::train,
                                           rng::derive(step_seed, seeds::kView1));
            auto loss = tape.ce_rows(tape.gather_rows(logits, rows), targets);
            const double loss_value = static_cast<double>(tape.value(loss)[0]);
            if (!std::isfinite(loss_value))
                throw std::runtime_error("generator pretraining diverged at step " +
                                         std::to_string(step));
            for (auto* p : params) p->zero_grad();
            tape.backward(loss);
            opt.step(params);
            if (log && step % 100 == 0)
                (*log) << "gen\t" << step << "\t" << loss_value << "\n";
            ++step;
        }
    }
    return MlmGenerator<T>(std::move(gen));
}

// ---- the training step ------------------------------------------------------

struct StepLoss {
    double contrast = 0.0;
    double rtd = 0.0;
    double total = 0.0;
};

// One edited sentence batch ready for the discriminator.
struct EditedBatch {
    std::vector<TokenSequence> seqs;
    std::vector<uint8_t> labels;  // n * t, aligned to the flattened batch
    std::vector<uint8_t> mask;    // content positions
    std::vector<int32_t> ids;     // flattened n * t
    int64_t t = 0;
};

// Masks/edits every sentence of the batch with per-sentence seeds and fills
// masked slots from the generator in one batched forward.
inline EditedBatch make_edited_batch(const SentenceBatch& batch, const GeneratorModel& gen,
                                     const TrainConfig& cfg, uint64_t step_seed) {
    const size_t n = batch.sequences.size();
    std::vector<EditedSequence> edited(n);
    std::vector<AugKind> kinds(n, cfg.aug_kind());
    if (cfg.aug_kind() == AugKind::all) {
        for (size_t i = 0; i < n; ++i) {
            rng::Stream pick(rng::derive(step_seed, seeds::kAugChoice, i));
            const AugKind choices[] = {AugKind::replace, AugKind::insert, AugKind::del};
            kinds[i] = choices[pick.next_below(3)];
        }
    }

    // Pass 1: build skeletons; collect sequences that need generator fills.
    std::vector<TokenSequence> pending;
    std::vector<size_t> pending_owner;
    for (size_t i = 0; i < n; ++i) {
        const auto& x = batch.sequences[i];
        const uint64_t mask_seed = rng::derive(step_seed, seeds::kMask, i);
        switch (kinds[i]) {
            case AugKind::replace: {
                const auto pattern = sample_mask(x, cfg.mask_ratio, mask_seed);
                edited[i].origin = x;
                edited[i].seq = apply_mask(x, pattern);
                pending.push_back(edited[i].seq);
                pending_owner.push_back(i);
                break;
            }
            case AugKind::insert: {
                edited[i] = insert_skeleton(x, cfg.mask_ratio, mask_seed);
                if (!mask_positions(edited[i].seq).empty()) {
                    pending.push_back(edited[i].seq);
                    pending_owner.push_back(i);
                }
                break;
            }
            case AugKind::del:
                edited[i] = delete_augment(x, cfg.mask_ratio, mask_seed);
                break;
            case AugKind::all:
                break;  // resolved above
        }
    }

    // Pass 2: one generator forward for everything that has MASK slots.
    if (!pending.empty()) {
        std::vector<std::vector<std::vector<double>>> dists;
        if (const auto* batched_f = dynamic_cast<const MlmGenerator<float>*>(&gen))
            dists = batched_f->fill_distributions_batch(pending);
        else if (const auto* batched_d = dynamic_cast<const MlmGenerator<double>*>(&gen))
            dists = batched_d->fill_distributions_batch(pending);
        else {
            dists.reserve(pending.size());
            for (const auto& seq : pending) dists.push_back(gen.fill_distributions(seq));
        }
        for (size_t k = 0; k < pending.size(); ++k) {
            const size_t i = pending_owner[k];
            const uint64_t fill_seed = rng::derive(step_seed, seeds::kGenSample, i);
            if (kinds[i] == AugKind::replace) {
                edited[i] = generate_edit_with_distributions(batch.sequences[i], edited[i].seq,
                                                             dists[k], fill_seed);
            } else {
                fill_masks(edited[i], dists[k], fill_seed);
            }
        }
    }

    EditedBatch out;
    out.seqs.reserve(n);
    for (auto& e : edited) out.seqs.push_back(e.seq);
    out.t = batch_common_length(out.seqs);
    out.ids = flatten_batch(out.seqs, out.t);
    out.labels.assign(n * static_cast<size_t>(out.t), 0);
    out.mask.assign(n * static_cast<size_t>(out.t), 0);
    for (size_t i = 0; i < n; ++i) {
        const auto cm = content_mask(edited[i].seq, out.t);
        for (int64_t p = 0; p < out.t; ++p) {
            out.mask[i * static_cast<size_t>(out.t) + static_cast<size_t>(p)] = cm[static_cast<size_t>(p)];
            if (p < static_cast<int64_t>(edited[i].labels.size()))
                out.labels[i * static_cast<size_t>(out.t) + static_cast<size_t>(p)] =
                    edited[i].labels[static_cast<size_t>(p)];
        }
    }
    return out;
}

// The full step objective on a tape. Exposed separately from train_step so
// tests can inspect gradients of intermediate nodes.
template <class T>
struct StepGraph {
    typename Tape<T>::Index h = -1;
    typename Tape<T>::Index contrast = -1;
    typename Tape<T>::Index rtd = -1;  // -1 when the branch is off
    typename Tape<T>::Index total = -1;
};

template <class T>
StepGraph<T> build_step_loss(Tape<T>& tape, ModelParams<T>& model, const SentenceBatch& batch,
                             const GeneratorModel& gen, const TrainConfig& cfg,
                             uint64_t step_seed) {
    using Index = typename Tape<T>::Index;
    const int64_t n = batch.size();
    if (n < 2) throw std::invalid_argument("batch size must be at least 2");
    const int64_t t = batch_common_length(batch.sequences);
    const auto ids = flatten_batch(batch.sequences, t);

    model.projector.enabled = cfg.batchnorm_enabled();

    StepGraph<T> g;
    g.h = train_embeddings(tape, model, ids, n, t, rng::derive(step_seed, seeds::kView1));
    Index h_plus = train_embeddings(tape, model, ids, n, t, rng::derive(step_seed, seeds::kView2));

    const ExtrasMode extras = cfg.extras_mode();
    if (extras != ExtrasMode::none) {
        // Third view: the edited sentences, embedded like any other input and
        // appended as extra positives or negatives.
        const auto eb = make_edited_batch(batch, gen, cfg, step_seed);
        Index h_extra = train_embeddings(tape, model, eb.ids, n, eb.t,
                                         rng::derive(step_seed, seeds::kViewExtra));
        const ExtraRole role =
            extras == ExtrasMode::positive ? ExtraRole::positive : ExtraRole::negative;
        g.contrast = contrastive_loss_with_extras_node(tape, g.h, h_plus, h_extra, role,
                                                       static_cast<T>(cfg.tau));
        g.total = g.contrast;
    } else if (cfg.rtd_branch) {
        const auto eb = make_edited_batch(batch, gen, cfg, step_seed);
        g.contrast = contrastive_loss_node(tape, g.h, h_plus, static_cast<T>(cfg.tau));
        Index cond = cfg.condition_on_h ? g.h : tape.detach(g.h);
        Index probs = discriminate(tape, model.discriminator, eb.ids, n, eb.t, cond, Mode::train,
                                   rng::derive(step_seed, seeds::kDiscDropout));
        g.rtd = rtd_loss_node(tape, probs, eb.labels, eb.mask, n);
        g.total = tape.add_scaled(g.contrast, g.rtd, static_cast<T>(cfg.lambda));
    } else {
        g.contrast = contrastive_loss_node(tape, g.h, h_plus, static_cast<T>(cfg.tau));
        g.total = g.contrast;
    }
    return g;
}

// One optimization step over a batch: two dropout views -> contrastive loss;
// mask + generate + discriminate conditioned on h -> difference loss; Adam on
// encoder, projector and discriminator. The generator is read-only.
template <class T>
StepLoss train_step(ModelParams<T>& model, Adam<T>& opt, const std::vector<Param<T>*>& params,
                    const SentenceBatch& batch, const GeneratorModel& gen, const TrainConfig& cfg,
                    uint64_t step_seed) {
    Tape<T> tape;
    const auto g = build_step_loss(tape, model, batch, gen, cfg, step_seed);
    StepLoss out;
    out.contrast = static_cast<double>(tape.value(g.contrast)[0]);
    out.rtd = g.rtd >= 0 ? static_cast<double>(tape.value(g.rtd)[0]) : 0.0;
    out.total = static_cast<double>(tape.value(g.total)[0]);
    if (!std::isfinite(out.total)) throw std::runtime_error("non-finite training loss");

    for (auto* p : params) p->zero_grad();
    tape.backward(g.total);
    opt.step(params);
    return out;
}

// ---- evaluation helper ------------------------------------------------------

// Eval-mode embeddings (raw [CLS], projector discarded) for both sides of a
// pair set. Each unique sentence is embedded once at its own length.
template <class T>
std::pair<std::vector<Vec>, std::vector<Vec>> embed_pairs(ModelParams<T>& model,
                                                          const EvalPairSet& set,
                                                          const Vocabulary& vocab) {
    std::vector<std::string> unique;
    std::unordered_map<std::string, size_t> index;
    auto intern = [&](const std::string& s) {
        auto it = index.find(s);
        if (it != index.end()) return it->second;
        index.emplace(s, unique.size());
        unique.push_back(s);
        return unique.size() - 1;
    };
    std::vector<std::pair<size_t, size_t>> refs;
    refs.reserve(set.pairs.size());
    for (const auto& p : set.pairs) refs.emplace_back(intern(p.sentence_a), intern(p.sentence_b));

    std::vector<Vec> emb(unique.size());
    const int64_t u = static_cast<int64_t>(unique.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (int64_t i = 0; i < u; ++i) {
        const auto seq =
            encode(unique[static_cast<size_t>(i)], vocab, model.encoder.cfg.max_len);
        const auto v = eval_embedding(model.encoder, seq);
        emb[static_cast<size_t>(i)] = Vec(v.begin(), v.end());
    }

    std::vector<Vec> a, b;
    a.reserve(refs.size());
    b.reserve(refs.size());
    for (const auto& [ia, ib] : refs) {
        a.push_back(emb[ia]);
        b.push_back(emb[ib]);
    }
    return {std::move(a), std::move(b)};
}

template <class T>
double dev_spearman(ModelParams<T>& model, const EvalPairSet& set, const Vocabulary& vocab) {
    const auto [a, b] = embed_pairs(model, set, vocab);
    std::vector<double> cosines(set.pairs.size());
    std::vector<double> golds(set.pairs.size());
    for (size_t i = 0; i < set.pairs.size(); ++i) {
        cosines[i] = cosine_sim(a[i], b[i]);
        golds[i] = set.pairs[i].gold;
    }
    return spearman(cosines, golds);
}

// ---- full training ----------------------------------------------------------

template <class T>
struct TrainResult {
    ModelParams<T> best;  // snapshot with the highest dev score
    TrainConfig config;
    int64_t best_step = 0;
    double best_dev = 0.0;
    double final_dev = 0.0;
    int64_t steps = 0;
    std::vector<StepLoss> losses;

    explicit TrainResult(const EncoderConfig& cfg) : best(cfg) {}
};

// Runs epochs x batches steps, evaluating dev Spearman every eval_every steps
// and at the end, and returns the best-scoring parameter snapshot. Log lines:
// step <TAB> contrast <TAB> rtd <TAB> total <TAB> [dev].
template <class T>
TrainResult<T> train(const TrainConfig& cfg, const std::vector<TokenSequence>& train_seqs,
                     const EvalPairSet& dev, const Vocabulary& vocab, const GeneratorModel& gen,
                     std::ostream* log = nullptr) {
    cfg.validate();
    TrainResult<T> result(cfg.encoder);
    result.config = cfg;

    ModelParams<T> model(cfg.encoder);
    init_model(model, rng::derive(cfg.seed, seeds::kInit));
    Adam<T> opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    const auto params = collect_params(model);

    const int64_t steps_per_epoch = static_cast<int64_t>(train_seqs.size()) / cfg.batch_size;
    const int64_t total_steps = cfg.epochs * steps_per_epoch;
    if (steps_per_epoch < 1) throw std::runtime_error("corpus smaller than batch");

    int64_t step = 0;
    bool have_best = false;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches =
            make_batches(train_seqs, cfg.batch_size, rng::derive(cfg.seed, seeds::kShuffle, epoch));
        for (const auto& batch : batches) {
            StepLoss loss;
            try {
                loss = train_step(model, opt, params, batch, gen, cfg,
                                  rng::derive(cfg.seed, seeds::kStep, step));
            } catch (const std::exception& e) {
                throw std::runtime_error("step " + std::to_string(step) + ": " + e.what());
            }
            result.losses.push_back(loss);
            ++step;

            const bool eval_now = step % cfg.eval_every == 0 || step == total_steps;
            std::optional<double> dev_score;
            if (eval_now) {
                dev_score = dev_spearman(model, dev, vocab);
                if (!have_best || *dev_score > result.best_dev) {
                    result.best = model;
                    result.best_dev = *dev_score;
                    result.best_step = step;
                    have_best = true;
                }
                if (step == total_steps) result.final_dev = *dev_score;
            }
            if (log) {
                (*log) << step << '\t' << loss.contrast << '\t' << loss.rtd << '\t' << loss.total
                       << '\t' << (dev_score ? std::to_string(*dev_score) : std::string{}) << '\n';
            }
        }
    }
    result.steps = step;
    if (!have_best) {
        result.best = model;
        result.best_dev = dev_spearman(model, dev, vocab);
        result.final_dev = result.best_dev;
        result.best_step = step;
    }
    return result;
}

// ---- ablation runner --------------------------------------------------------

struct SweepSpec {
    std::string name;  // lambda | mask_ratio | aug | ablation | batchnorm | gen-size | lr
    std::vector<std::string> values;
};

struct AblationRow {
    std::string delta;
    double dev_score = 0.0;
    bool failed = false;
    std::string error;
};

inline void apply_sweep_value(TrainConfig& cfg, const std::string& name, const std::string& value) {
    if (name == "lambda" || name == "mask_ratio" || name == "lr" || name == "aug" ||
        name == "ablation") {
        apply_config_entry(cfg, name, value);
    } else if (name == "batchnorm") {
        cfg.ablation = config_detail::parse_bool(value) ? "none" : "no-batchnorm";
    } else if (name == "gen-size") {
        const auto x = value.find('x');
        if (x == std::string::npos)
            throw std::invalid_argument("gen-size cells look like LAYERSxHIDDEN, got: " + value);
        cfg.generator.num_layers = std::stoll(value.substr(0, x));
        cfg.generator.hidden = std::stoll(value.substr(x + 1));
        cfg.generator.ffn = cfg.generator.hidden * 4;
        cfg.generator.heads = cfg.generator.hidden % 4 == 0 ? 4 : (cfg.generator.hidden % 2 == 0 ? 2 : 1);
    } else {
        throw std::invalid_argument("unknown sweep parameter: " + name);
    }
}

// One full training run per grid cell, sharing the data seed; cell errors are
// recorded, not fatal. Generators are cached across cells with identical
// generator settings.
template <class T>
std::vector<AblationRow> run_ablation(const TrainConfig& base, const SweepSpec& sweep,
                                      const std::vector<TokenSequence>& corpus,
                                      const EvalPairSet& dev, const Vocabulary& vocab,
                                      std::ostream* log = nullptr) {
    if (sweep.values.empty()) throw std::invalid_argument("empty sweep grid");
    std::vector<AblationRow> rows;
    std::map<std::string, MlmGenerator<T>> gen_cache;
    for (const auto& value : sweep.values) {
        AblationRow row;
        row.delta = sweep.name + "=" + value;
        try {
            TrainConfig cfg = base;
            apply_sweep_value(cfg, sweep.name, value);
            cfg.validate();
            std::ostringstream gen_key;
            gen_key << cfg.generator.num_layers << 'x' << cfg.generator.hidden << 'x'
                    << cfg.generator.heads << 'x' << cfg.generator.ffn << '@'
                    << cfg.gen_pretrain_steps << '@' << cfg.seed;
            auto it = gen_cache.find(gen_key.str());
            if (it == gen_cache.end())
                it = gen_cache.emplace(gen_key.str(), pretrain_generator<T>(corpus, cfg, log)).first;
            if (log) (*log) << "# cell " << row.delta << "\n";
            const auto result = train<T>(cfg, corpus, dev, vocab, it->second, log);
            row.dev_score = result.best_dev;
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "cell\tdev_spearman\tstatus\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& r : rows) {
        out << r.delta << '\t';
        if (r.failed)
            out << "-\terror: " << r.error << '\n';
        else
            out << r.dev_score << "\tok\n";
    }
    return out.str();
}

}  // namespace sentdiff
