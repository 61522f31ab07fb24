#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sentdiff/eval.hpp"
#include "sentdiff/rng.hpp"

namespace sentdiff {

// Template-grammar generator for the desk-scale corpus and STS-style pair
// sets. Sentences are built from pseudo-word concept tables partitioned into
// topics; pair partners take 0..5 meaning-bearing edits (content words swapped
// across topics), giving gold scores 5 - k, while determiners and prepositions
// jitter freely as meaning-preserving noise.
struct SynthConfig {
    uint64_t seed = 42;
    int64_t nouns = 800;
    int64_t verbs = 400;
    int64_t adjectives = 400;
    int64_t places = 200;
    int64_t topics = 10;
};

class SynthGrammar {
public:
    explicit SynthGrammar(const SynthConfig& cfg = SynthConfig{});

    std::vector<std::string> corpus(int64_t n, uint64_t seed) const;

    // Sentences with their topic labels, for the transfer probe.
    std::pair<std::vector<std::string>, std::vector<int64_t>> labeled_corpus(int64_t n,
                                                                             uint64_t seed) const;

    EvalPairSet pairs(int64_t n, uint64_t seed, const std::string& role) const;

    int64_t num_topics() const { return cfg_.topics; }
    int64_t lexicon_size() const;

private:
    enum class Slot { adjective, noun, verb, place };

    struct Template {
        // A sentence is a flat list of items; negative values name a slot,
        // non-negative values index the function-word kind.
        std::vector<int> items;
        std::vector<Slot> slots;
    };

    std::string make_word(rng::Stream& stream, std::vector<std::string>& used) const;
    const std::vector<std::string>& table(Slot slot) const;
    int64_t pick_concept(Slot slot, int64_t topic, rng::Stream& stream) const;
    int64_t pick_concept_other_topic(Slot slot, int64_t topic, rng::Stream& stream) const;

    struct SentencePlan {
        int64_t template_id = 0;
        int64_t topic = 0;
        std::vector<int64_t> concepts;        // one per slot
        std::vector<int64_t> function_words;  // one per function item
    };
    SentencePlan plan_sentence(rng::Stream& stream, int64_t topic, bool pair_templates) const;
    std::string realize(const SentencePlan& plan) const;

    SynthConfig cfg_;
    std::vector<std::string> nouns_, verbs_, adjectives_, places_;
    std::vector<std::string> determiners_, prepositions_;
    std::vector<Template> templates_;
    int64_t num_pair_templates_ = 0;  // leading templates have exactly 5 slots
};

}  // namespace sentdiff
