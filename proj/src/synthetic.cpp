#include "sentdiff/synthetic.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace sentdiff {

namespace {

constexpr int kDet = 0;   // function-word kind 0: determiner
constexpr int kPrep = 1;  // function-word kind 1: preposition

constexpr int kSlotAdj = -1;
constexpr int kSlotNoun = -2;
constexpr int kSlotVerb = -3;
constexpr int kSlotPlace = -4;

const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
const char* kVowels[] = {"a", "e", "i", "o", "u"};

}  // namespace

SynthGrammar::SynthGrammar(const SynthConfig& cfg) : cfg_(cfg) {
    if (cfg_.topics < 2) throw std::invalid_argument("need at least two topics");
    if (cfg_.nouns < cfg_.topics || cfg_.verbs < cfg_.topics || cfg_.adjectives < cfg_.topics ||
        cfg_.places < cfg_.topics)
        throw std::invalid_argument("each word class needs at least one concept per topic");

    determiners_ = {"the", "a"};
    prepositions_ = {"in", "at", "near", "by"};

    rng::Stream stream(rng::derive(cfg_.seed, 0x5e17u));
    std::vector<std::string> used(determiners_);
    used.insert(used.end(), prepositions_.begin(), prepositions_.end());
    auto fill = [&](std::vector<std::string>& out, int64_t n) {
        out.reserve(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) out.push_back(make_word(stream, used));
    };
    fill(nouns_, cfg_.nouns);
    fill(verbs_, cfg_.verbs);
    fill(adjectives_, cfg_.adjectives);
    fill(places_, cfg_.places);

    // Leading templates carry exactly five content slots and are the only
    // ones used for graded pairs; the rest add length variety to the corpus.
    auto add = [&](std::vector<int> items) {
        Template t;
        t.items = std::move(items);
        for (int it : t.items) {
            switch (it) {
                case kSlotAdj: t.slots.push_back(Slot::adjective); break;
                case kSlotNoun: t.slots.push_back(Slot::noun); break;
                case kSlotVerb: t.slots.push_back(Slot::verb); break;
                case kSlotPlace: t.slots.push_back(Slot::place); break;
                default: break;
            }
        }
        templates_.push_back(std::move(t));
    };
    add({kDet, kSlotAdj, kSlotNoun, kSlotVerb, kDet, kSlotNoun, kPrep, kDet, kSlotPlace});
    add({kDet, kSlotNoun, kSlotVerb, kDet, kSlotAdj, kSlotNoun, kPrep, kDet, kSlotPlace});
    add({kDet, kSlotNoun, kSlotVerb, kDet, kSlotNoun, kPrep, kDet, kSlotAdj, kSlotPlace});
    num_pair_templates_ = static_cast<int64_t>(templates_.size());
    add({kDet, kSlotNoun, kSlotVerb, kDet, kSlotNoun, kPrep, kDet, kSlotPlace});
    add({kDet, kSlotAdj, kSlotNoun, kSlotVerb, kDet, kSlotAdj, kSlotNoun, kPrep, kDet, kSlotPlace});
}

std::string SynthGrammar::make_word(rng::Stream& stream, std::vector<std::string>& used) const {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const int64_t syllables = 2 + static_cast<int64_t>(stream.next_below(2));
        std::string w;
        for (int64_t s = 0; s < syllables; ++s) {
            w += kOnsets[stream.next_below(std::size(kOnsets))];
            w += kVowels[stream.next_below(std::size(kVowels))];
        }
        if (stream.next_below(3) == 0) w += kOnsets[stream.next_below(std::size(kOnsets))];
        if (std::find(used.begin(), used.end(), w) == used.end()) {
            used.push_back(w);
            return w;
        }
    }
    throw std::runtime_error("pseudo-word space exhausted");
}

const std::vector<std::string>& SynthGrammar::table(Slot slot) const {
    switch (slot) {
        case Slot::adjective: return adjectives_;
        case Slot::noun: return nouns_;
        case Slot::verb: return verbs_;
        case Slot::place: return places_;
    }
    throw std::logic_error("unreachable");
}

int64_t SynthGrammar::lexicon_size() const {
    return static_cast<int64_t>(nouns_.size() + verbs_.size() + adjectives_.size() +
                                places_.size() + determiners_.size() + prepositions_.size());
}

// Concepts of topic t are the table entries with index = t (mod topics).
int64_t SynthGrammar::pick_concept(Slot slot, int64_t topic, rng::Stream& stream) const {
    const int64_t n = static_cast<int64_t>(table(slot).size());
    const int64_t per_topic = n / cfg_.topics;
    const int64_t k = static_cast<int64_t>(stream.next_below(static_cast<uint64_t>(per_topic)));
    return topic + k * cfg_.topics;
}

int64_t SynthGrammar::pick_concept_other_topic(Slot slot, int64_t topic, rng::Stream& stream) const {
    int64_t other = static_cast<int64_t>(stream.next_below(static_cast<uint64_t>(cfg_.topics - 1)));
    if (other >= topic) ++other;
    return pick_concept(slot, other, stream);
}

SynthGrammar::SentencePlan SynthGrammar::plan_sentence(rng::Stream& stream, int64_t topic,
                                                       bool pair_templates) const {
    SentencePlan plan;
    const int64_t limit = pair_templates ? num_pair_templates_ : static_cast<int64_t>(templates_.size());
    plan.template_id = static_cast<int64_t>(stream.next_below(static_cast<uint64_t>(limit)));
    plan.topic = topic;
    const Template& t = templates_[static_cast<size_t>(plan.template_id)];
    for (Slot slot : t.slots) plan.concepts.push_back(pick_concept(slot, topic, stream));
    for (int item : t.items) {
        if (item == kDet)
            plan.function_words.push_back(static_cast<int64_t>(stream.next_below(determiners_.size())));
        else if (item == kPrep)
            plan.function_words.push_back(static_cast<int64_t>(stream.next_below(prepositions_.size())));
    }
    return plan;
}

std::string SynthGrammar::realize(const SentencePlan& plan) const {
    const Template& t = templates_[static_cast<size_t>(plan.template_id)];
    std::string out;
    size_t slot_i = 0, fn_i = 0;
    for (int item : t.items) {
        if (!out.empty()) out += ' ';
        if (item == kDet) {
            out += determiners_[static_cast<size_t>(plan.function_words[fn_i++])];
        } else if (item == kPrep) {
            out += prepositions_[static_cast<size_t>(plan.function_words[fn_i++])];
        } else {
            out += table(t.slots[slot_i])[static_cast<size_t>(plan.concepts[slot_i])];
            ++slot_i;
        }
    }
    return out;
}

std::vector<std::string> SynthGrammar::corpus(int64_t n, uint64_t seed) const {
    rng::Stream stream(rng::derive(seed, 0xc0deu));
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t topic = static_cast<int64_t>(stream.next_below(static_cast<uint64_t>(cfg_.topics)));
        out.push_back(realize(plan_sentence(stream, topic, false)));
    }
    return out;
}

std::pair<std::vector<std::string>, std::vector<int64_t>> SynthGrammar::labeled_corpus(
    int64_t n, uint64_t seed) const {
    rng::Stream stream(rng::derive(seed, 0x1abe1u));
    std::vector<std::string> sentences;
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t topic = static_cast<int64_t>(stream.next_below(static_cast<uint64_t>(cfg_.topics)));
        sentences.push_back(realize(plan_sentence(stream, topic, false)));
        labels.push_back(topic);
    }
    return {std::move(sentences), std::move(labels)};
}

EvalPairSet SynthGrammar::pairs(int64_t n, uint64_t seed, const std::string& role) const {
    rng::Stream stream(rng::derive(seed, 0x9a125u));
    EvalPairSet set;
    set.role = role;
    set.pairs.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t topic = static_cast<int64_t>(stream.next_below(static_cast<uint64_t>(cfg_.topics)));
        SentencePlan base = plan_sentence(stream, topic, true);

        const int64_t k = static_cast<int64_t>(stream.next_below(6));  // edits: 0..5
        SentencePlan partner = base;
        // Meaning-preserving jitter: re-draw the function words.
        const Template& t = templates_[static_cast<size_t>(base.template_id)];
        size_t fn_i = 0;
        for (int item : t.items) {
            if (item == kDet)
                partner.function_words[fn_i++] =
                    static_cast<int64_t>(stream.next_below(determiners_.size()));
            else if (item == kPrep)
                partner.function_words[fn_i++] =
                    static_cast<int64_t>(stream.next_below(prepositions_.size()));
        }
        // Meaning-bearing edits: swap k distinct content slots across topics.
        const auto slots = stream.sample_without_replacement(
            static_cast<int64_t>(base.concepts.size()), k);
        for (int64_t s : slots)
            partner.concepts[static_cast<size_t>(s)] =
                pick_concept_other_topic(t.slots[static_cast<size_t>(s)], topic, stream);

        PairExample p;
        p.sentence_a = realize(base);
        p.sentence_b = realize(partner);
        p.gold = static_cast<double>(5 - k);
        set.pairs.push_back(std::move(p));
    }
    return set;
}

}  // namespace sentdiff
