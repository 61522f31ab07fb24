#include <cmath>
#include <vector>

#include "doctest.h"
#include "sentdiff/augment.hpp"
#include "sentdiff/rng.hpp"

using namespace sentdiff;

namespace {

TokenSequence make_sequence(int64_t words, int64_t max_len, uint64_t seed = 0, int64_t vocab = 60) {
    TokenSequence seq;
    seq.ids.assign(static_cast<size_t>(max_len), Vocabulary::kPad);
    seq.ids[0] = Vocabulary::kCls;
    rng::Stream stream(seed);
    for (int64_t w = 0; w < words; ++w)
        seq.ids[static_cast<size_t>(1 + w)] = static_cast<int32_t>(
            Vocabulary::kNumSpecials + stream.next_below(vocab - Vocabulary::kNumSpecials));
    seq.ids[static_cast<size_t>(1 + words)] = Vocabulary::kSep;
    seq.content_len = words + 2;
    return seq;
}

// Generator that puts probability 1 on a fixed token at every slot.
class ConstantGenerator : public GeneratorModel {
public:
    ConstantGenerator(int32_t token, int64_t vocab) : token_(token), vocab_(vocab) {}
    std::vector<std::vector<double>> fill_distributions(const TokenSequence& masked) const override {
        std::vector<std::vector<double>> out;
        for (int64_t t = 0; t < masked.content_len; ++t) {
            if (masked.ids[static_cast<size_t>(t)] != Vocabulary::kMask) continue;
            std::vector<double> d(static_cast<size_t>(vocab_), 0.0);
            d[static_cast<size_t>(token_)] = 1.0;
            out.push_back(std::move(d));
        }
        return out;
    }
    int64_t vocab_size() const override { return vocab_; }

private:
    int32_t token_;
    int64_t vocab_;
};

// Generator that reproduces the original sentence at each masked slot.
class IdentityGenerator : public GeneratorModel {
public:
    IdentityGenerator(const TokenSequence& original, int64_t vocab)
        : original_(original), vocab_(vocab) {}
    std::vector<std::vector<double>> fill_distributions(const TokenSequence& masked) const override {
        std::vector<std::vector<double>> out;
        for (int64_t t = 0; t < masked.content_len; ++t) {
            if (masked.ids[static_cast<size_t>(t)] != Vocabulary::kMask) continue;
            std::vector<double> d(static_cast<size_t>(vocab_), 0.0);
            d[static_cast<size_t>(original_.ids[static_cast<size_t>(t)])] = 1.0;
            out.push_back(std::move(d));
        }
        return out;
    }
    int64_t vocab_size() const override { return vocab_; }

private:
    TokenSequence original_;
    int64_t vocab_;
};

// Uniform distribution over the word range (no specials).
class UniformGenerator : public GeneratorModel {
public:
    explicit UniformGenerator(int64_t vocab) : vocab_(vocab) {}
    std::vector<std::vector<double>> fill_distributions(const TokenSequence& masked) const override {
        std::vector<std::vector<double>> out;
        const int64_t words = vocab_ - Vocabulary::kNumSpecials;
        for (int64_t t = 0; t < masked.content_len; ++t) {
            if (masked.ids[static_cast<size_t>(t)] != Vocabulary::kMask) continue;
            std::vector<double> d(static_cast<size_t>(vocab_), 0.0);
            for (int64_t j = Vocabulary::kNumSpecials; j < vocab_; ++j)
                d[static_cast<size_t>(j)] = 1.0 / static_cast<double>(words);
            out.push_back(std::move(d));
        }
        return out;
    }
    int64_t vocab_size() const override { return vocab_; }

private:
    int64_t vocab_;
};

}  // namespace

TEST_CASE("sample_mask edge ratios") {
    const auto seq = make_sequence(20, 32);

    const auto none = sample_mask(seq, 0.0, 1);
    CHECK(none.count() == 0);

    const auto full = sample_mask(seq, 1.0, 1);
    CHECK(full.count() == 20);
    CHECK(full.flags[0] == 0);                                        // CLS
    CHECK(full.flags[static_cast<size_t>(seq.content_len - 1)] == 0); // SEP
    for (size_t t = static_cast<size_t>(seq.content_len); t < full.flags.size(); ++t)
        CHECK(full.flags[t] == 0);  // PAD

    const auto third = sample_mask(seq, 0.30, 2);
    CHECK(third.count() == 6);  // round(0.30 * 20)

    // minimum of one masked position when ratio > 0
    const auto tiny = sample_mask(make_sequence(3, 8), 0.05, 3);
    CHECK(tiny.count() == 1);

    // no maskable positions at all
    const auto empty = sample_mask(make_sequence(0, 8), 0.5, 4);
    CHECK(empty.count() == 0);
}

TEST_CASE("mask statistics stay within 0.01 of the requested ratio") {
    const auto seq = make_sequence(32, 40);
    for (double ratio : {0.15, 0.30}) {
        double total = 0;
        const int64_t draws = 10000;
        for (int64_t i = 0; i < draws; ++i)
            total += static_cast<double>(sample_mask(seq, ratio, 1000 + static_cast<uint64_t>(i)).count()) / 32.0;
        CHECK(std::abs(total / static_cast<double>(draws) - ratio) <= 0.01);
    }
}

TEST_CASE("apply_mask rewrites exactly the flagged positions") {
    const auto seq = make_sequence(6, 12);

    MaskPattern none;
    none.flags.assign(seq.ids.size(), 0);
    CHECK(apply_mask(seq, none).ids == seq.ids);

    const auto full = sample_mask(seq, 1.0, 5);
    const auto masked = apply_mask(seq, full);
    for (int64_t t = 1; t < seq.content_len - 1; ++t)
        CHECK(masked.ids[static_cast<size_t>(t)] == Vocabulary::kMask);
    CHECK(masked.ids[0] == Vocabulary::kCls);

    MaskPattern single;
    single.flags.assign(seq.ids.size(), 0);
    single.flags[3] = 1;
    const auto one = apply_mask(seq, single);
    for (size_t t = 0; t < seq.ids.size(); ++t) {
        if (t == 3)
            CHECK(one.ids[t] == Vocabulary::kMask);
        else
            CHECK(one.ids[t] == seq.ids[t]);
    }

    MaskPattern wrong;
    wrong.flags.assign(seq.ids.size() + 1, 0);
    CHECK_THROWS(apply_mask(seq, wrong));
}

TEST_CASE("identical seeds give bit-identical masks, different seeds differ somewhere") {
    const auto seq = make_sequence(16, 24);
    const auto a = sample_mask(seq, 0.4, 77);
    const auto b = sample_mask(seq, 0.4, 77);
    CHECK(a.flags == b.flags);
    bool any_diff = false;
    for (uint64_t s = 0; s < 20 && !any_diff; ++s)
        any_diff = sample_mask(seq, 0.4, 1000 + s).flags != a.flags;
    CHECK(any_diff);
}

TEST_CASE("generate_edit with no masks and with an identity generator") {
    const auto seq = make_sequence(5, 12, 9);
    const int64_t vocab = 60;

    MaskPattern none;
    none.flags.assign(seq.ids.size(), 0);
    IdentityGenerator identity(seq, vocab);
    const auto unchanged = generate_edit(seq, apply_mask(seq, none), identity, 11);
    CHECK(unchanged.seq.ids == seq.ids);
    for (uint8_t l : unchanged.labels) CHECK(l == 0);

    // identity generator: every slot refilled with the original token
    const auto pattern = sample_mask(seq, 0.6, 12);
    const auto edited = generate_edit(seq, apply_mask(seq, pattern), identity, 13);
    CHECK(edited.seq.ids == seq.ids);
    for (uint8_t l : edited.labels) CHECK(l == 0);
}

TEST_CASE("replace labels match the elementwise-compare oracle on 1000 random edits") {
    const int64_t vocab = 60;
    UniformGenerator gen(vocab);
    for (uint64_t trial = 0; trial < 1000; ++trial) {
        rng::Stream s(rng::derive(4242, trial));
        const auto seq = make_sequence(3 + static_cast<int64_t>(s.next_below(10)), 20,
                                       rng::derive(1, trial), vocab);
        const auto pattern = sample_mask(seq, 0.15 + 0.5 * s.next_double(), rng::derive(2, trial));
        const auto edited = generate_edit(seq, apply_mask(seq, pattern), gen, rng::derive(3, trial));

        REQUIRE(edited.seq.ids.size() == seq.ids.size());
        for (size_t t = 0; t < seq.ids.size(); ++t) {
            const uint8_t expect = edited.seq.ids[t] != seq.ids[t] ? 1 : 0;
            CHECK(edited.labels[t] == expect);
            if (!pattern.flags[t]) CHECK(edited.labels[t] == 0);  // generator writes masked slots only
        }
    }
}

TEST_CASE("generate_edit is deterministic in the seed") {
    const int64_t vocab = 60;
    UniformGenerator gen(vocab);
    const auto seq = make_sequence(8, 16, 21);
    const auto pattern = sample_mask(seq, 0.5, 22);
    const auto a = generate_edit(seq, apply_mask(seq, pattern), gen, 23);
    const auto b = generate_edit(seq, apply_mask(seq, pattern), gen, 23);
    CHECK(a.seq.ids == b.seq.ids);
    CHECK(a.labels == b.labels);
}

TEST_CASE("generate_edit rejects malformed distributions") {
    class BadGenerator : public GeneratorModel {
    public:
        std::vector<std::vector<double>> fill_distributions(const TokenSequence& masked) const override {
            std::vector<std::vector<double>> out;
            for (int64_t t = 0; t < masked.content_len; ++t)
                if (masked.ids[static_cast<size_t>(t)] == Vocabulary::kMask)
                    out.push_back(std::vector<double>(60, 0.5));  // sums to 30
            return out;
        }
        int64_t vocab_size() const override { return 60; }
    };
    const auto seq = make_sequence(6, 12, 31);
    const auto pattern = sample_mask(seq, 0.5, 32);
    BadGenerator bad;
    CHECK_THROWS(generate_edit(seq, apply_mask(seq, pattern), bad, 33));
}

TEST_CASE("insert_augment basics") {
    const int64_t vocab = 60;
    ConstantGenerator gen(7, vocab);

    const auto seq = make_sequence(4, 16, 41);
    const auto none = insert_augment(seq, 0.0, gen, 42);
    CHECK(none.seq.ids == seq.ids);
    for (uint8_t l : none.labels) CHECK(l == 0);

    // one insertion into 4 content tokens (round(0.25*4) = 1)
    const auto one = insert_augment(seq, 0.25, gen, 43);
    CHECK(one.seq.content_len == seq.content_len + 1);
    int64_t labelled = 0;
    for (size_t t = 0; t < one.labels.size(); ++t) {
        if (one.labels[t]) {
            ++labelled;
            CHECK(one.seq.ids[t] == 7);  // the constant fill token
        }
    }
    CHECK(labelled == 1);
}

TEST_CASE("insert label count equals the number of surviving insertions on 500 draws") {
    const int64_t vocab = 60;
    UniformGenerator gen(vocab);
    for (uint64_t trial = 0; trial < 500; ++trial) {
        rng::Stream s(rng::derive(777, trial));
        const int64_t words = 2 + static_cast<int64_t>(s.next_below(10));
        const int64_t max_len = 16;
        const auto seq = make_sequence(words, max_len, rng::derive(5, trial), vocab);
        const double ratio = s.next_double();
        const auto skeleton = insert_skeleton(seq, ratio, rng::derive(6, trial));
        // counting oracle: surviving MASK slots in the skeleton
        const int64_t inserted = static_cast<int64_t>(mask_positions(skeleton.seq).size());
        const auto edited = insert_augment(seq, ratio, gen, rng::derive(6, trial));
        int64_t labelled = 0;
        for (uint8_t l : edited.labels) labelled += l;
        CHECK(labelled == inserted);
        CHECK(edited.seq.content_len <= max_len);
    }
}

TEST_CASE("delete_augment basics and the a-b-c example") {
    const auto seq = make_sequence(3, 10, 51);

    const auto none = delete_augment(seq, 0.0, 52);
    CHECK(none.seq.ids == seq.ids);
    for (uint8_t l : none.labels) CHECK(l == 0);

    // force deletion of the middle word: try seeds until position 1 is chosen
    // (content [a, b, c]; survivors [a, c]; label on c)
    bool found = false;
    for (uint64_t seed = 0; seed < 64 && !found; ++seed) {
        const auto edited = delete_augment(seq, 1.0 / 3.0, seed);
        REQUIRE(edited.seq.content_len == 4);
        if (edited.seq.ids[1] == seq.ids[1] && edited.seq.ids[2] == seq.ids[3]) {
            CHECK(edited.labels[1] == 0);  // "a": nothing before it deleted
            CHECK(edited.labels[2] == 1);  // "c": "b" right before it deleted
            found = true;
        }
    }
    CHECK(found);

    CHECK_THROWS(delete_augment(seq, 1.0, 53));  // would delete every word
}

TEST_CASE("delete labels match a brute-force alignment oracle on 500 draws") {
    for (uint64_t trial = 0; trial < 500; ++trial) {
        rng::Stream s(rng::derive(888, trial));
        const int64_t words = 3 + static_cast<int64_t>(s.next_below(12));
        const auto seq = make_sequence(words, 24, rng::derive(7, trial));
        const double ratio = 0.1 + 0.6 * s.next_double();
        const int64_t k = scaled_count(ratio, words);
        if (k >= words) continue;
        const auto edited = delete_augment(seq, ratio, rng::derive(8, trial));

        // Oracle: re-derive the deletion set from the seed, then simulate the
        // deletion from scratch and recompute every label.
        rng::Stream ds(rng::derive(8, trial));
        const auto removed = ds.sample_without_replacement(words, k);
        std::vector<uint8_t> deleted(static_cast<size_t>(words), 0);
        for (int64_t w : removed) deleted[static_cast<size_t>(w)] = 1;
        int64_t out = 1;
        for (int64_t w = 0; w < words; ++w) {
            if (deleted[static_cast<size_t>(w)]) continue;
            CHECK(edited.seq.ids[static_cast<size_t>(out)] == seq.ids[static_cast<size_t>(1 + w)]);
            const uint8_t expect = (w > 0 && deleted[static_cast<size_t>(w - 1)]) ? 1 : 0;
            CHECK(edited.labels[static_cast<size_t>(out)] == expect);
            ++out;
        }
        CHECK(out == edited.seq.content_len - 1);
    }
}

TEST_CASE("content_mask marks exactly the word positions") {
    const auto seq = make_sequence(4, 12);
    const auto cm = content_mask(seq, 12);
    for (int64_t t = 0; t < 12; ++t) {
        const bool is_word = t >= 1 && t <= 4;
        CHECK(cm[static_cast<size_t>(t)] == (is_word ? 1 : 0));
    }
}
