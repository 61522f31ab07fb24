#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sentdiff/corpus.hpp"
#include "sentdiff/model.hpp"

namespace sentdiff {

// A fixed masked-language model that proposes fill-ins for MASK positions.
// Implementations must be safe to call concurrently (read-only parameters).
class GeneratorModel {
public:
    virtual ~GeneratorModel() = default;

    // One categorical distribution over the vocabulary per MASK position of
    // `masked`, in ascending position order. Each distribution sums to 1
    // (within 1e-6) and places zero mass on PAD.
    virtual std::vector<std::vector<double>> fill_distributions(
        const TokenSequence& masked) const = 0;

    virtual int64_t vocab_size() const = 0;
};

// GeneratorModel backed by a small transformer MLM. Parameters are owned and
// never mutated after construction.
template <class T>
class MlmGenerator : public GeneratorModel {
public:
    explicit MlmGenerator(GeneratorParams<T> params) : params_(std::move(params)) {}

    std::vector<std::vector<double>> fill_distributions(const TokenSequence& masked) const override {
        const int64_t t = masked.content_len;
        std::vector<int32_t> ids(masked.ids.begin(), masked.ids.begin() + t);
        Tape<T> tape;
        auto logits =
            generator_logits(tape, const_cast<GeneratorParams<T>&>(params_), ids, 1, t, Mode::eval, 0);
        const auto& lv = tape.value(logits);
        const int64_t v = params_.body.cfg.vocab;

        std::vector<std::vector<double>> out;
        for (int64_t pos = 0; pos < t; ++pos) {
            if (ids[static_cast<size_t>(pos)] != Vocabulary::kMask) continue;
            out.push_back(softmax_no_pad(lv.ptr() + pos * v, v));
        }
        return out;
    }

    int64_t vocab_size() const override { return params_.body.cfg.vocab; }

    // Batched forward over several masked sequences, one distribution list
    // per sequence. Equivalent to calling fill_distributions per sequence up
    // to the padding the batch shares.
    std::vector<std::vector<std::vector<double>>> fill_distributions_batch(
        const std::vector<TokenSequence>& masked) const {
        if (masked.empty()) return {};
        const int64_t n = static_cast<int64_t>(masked.size());
        const int64_t t = batch_common_length(masked);
        const auto ids = flatten_batch(masked, t);
        Tape<T> tape;
        auto logits =
            generator_logits(tape, const_cast<GeneratorParams<T>&>(params_), ids, n, t, Mode::eval, 0);
        const auto& lv = tape.value(logits);
        const int64_t v = params_.body.cfg.vocab;

        std::vector<std::vector<std::vector<double>>> out(masked.size());
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t pos = 0; pos < masked[static_cast<size_t>(i)].content_len; ++pos) {
                if (ids[static_cast<size_t>(i * t + pos)] != Vocabulary::kMask) continue;
                out[static_cast<size_t>(i)].push_back(
                    softmax_no_pad(lv.ptr() + (i * t + pos) * v, v));
            }
        }
        return out;
    }

    const GeneratorParams<T>& params() const { return params_; }
    GeneratorParams<T>& mutable_params() { return params_; }

    uint64_t checksum() const {
        return param_checksum<T>(const_cast<GeneratorParams<T>&>(params_));
    }

    // Softmax over a logit row with the PAD slot removed from the support.
    static std::vector<double> softmax_no_pad(const T* logits, int64_t v) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < v; ++j)
            if (j != Vocabulary::kPad) mx = std::max(mx, static_cast<double>(logits[j]));
        std::vector<double> dist(static_cast<size_t>(v), 0.0);
        double sum = 0.0;
        for (int64_t j = 0; j < v; ++j) {
            if (j == Vocabulary::kPad) continue;
            dist[static_cast<size_t>(j)] = std::exp(static_cast<double>(logits[j]) - mx);
            sum += dist[static_cast<size_t>(j)];
        }
        for (auto& d : dist) d /= sum;
        return dist;
    }

private:
    GeneratorParams<T> params_;
};

}  // namespace sentdiff
