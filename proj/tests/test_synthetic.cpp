#include <set>

#include "doctest.h"
#include "sentdiff/corpus.hpp"
#include "sentdiff/synthetic.hpp"

using namespace sentdiff;

TEST_CASE("synthetic corpus is deterministic and non-degenerate") {
    SynthGrammar grammar;
    const auto a = grammar.corpus(200, 9);
    const auto b = grammar.corpus(200, 9);
    CHECK(a == b);
    const auto c = grammar.corpus(200, 10);
    CHECK(a != c);

    std::set<std::string> distinct(a.begin(), a.end());
    CHECK(distinct.size() > 150);
    CHECK(grammar.lexicon_size() > 1500);
}

TEST_CASE("pair sets carry graded scores with overlap tracking the gold") {
    SynthGrammar grammar;
    const auto set = grammar.pairs(400, 3, "dev");
    REQUIRE(set.pairs.size() == 400);
    std::set<double> scores;
    for (const auto& p : set.pairs) {
        CHECK(p.gold >= 0.0);
        CHECK(p.gold <= 5.0);
        scores.insert(p.gold);
    }
    CHECK(scores.size() == 6);  // all grades 0..5 appear in 400 draws

    // content-word overlap grows with gold score
    auto overlap = [](const std::string& a, const std::string& b) {
        const auto ta = tokenize(a);
        const auto tb = tokenize(b);
        const std::set<std::string> sa(ta.begin(), ta.end());
        int64_t hits = 0;
        for (const auto& t : tb) hits += sa.count(t) ? 1 : 0;
        return static_cast<double>(hits) / static_cast<double>(tb.size());
    };
    double low = 0, high = 0;
    int64_t nlow = 0, nhigh = 0;
    for (const auto& p : set.pairs) {
        if (p.gold <= 1.0) {
            low += overlap(p.sentence_a, p.sentence_b);
            ++nlow;
        } else if (p.gold >= 4.0) {
            high += overlap(p.sentence_a, p.sentence_b);
            ++nhigh;
        }
    }
    REQUIRE(nlow > 0);
    REQUIRE(nhigh > 0);
    CHECK(high / static_cast<double>(nhigh) > low / static_cast<double>(nlow) + 0.3);
}

TEST_CASE("labeled corpus assigns topics in range") {
    SynthGrammar grammar;
    const auto [sentences, labels] = grammar.labeled_corpus(100, 4);
    REQUIRE(sentences.size() == 100);
    REQUIRE(labels.size() == 100);
    std::set<int64_t> seen;
    for (int64_t l : labels) {
        CHECK(l >= 0);
        CHECK(l < grammar.num_topics());
        seen.insert(l);
    }
    CHECK(seen.size() > 1);
}

TEST_CASE("pair sentences stay within the training grammar's lexicon") {
    SynthGrammar grammar;
    const auto lines = grammar.corpus(5000, 77);
    const auto vocab = build_vocab_from_lines(lines, 1);
    const auto set = grammar.pairs(100, 78, "test");
    int64_t oov = 0, total = 0;
    for (const auto& p : set.pairs) {
        for (const auto& t : tokenize(p.sentence_a)) {
            oov += vocab.contains(t) ? 0 : 1;
            ++total;
        }
    }
    // a large corpus should cover nearly every concept
    CHECK(static_cast<double>(oov) / static_cast<double>(total) < 0.05);
}
