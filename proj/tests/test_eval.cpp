#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "sentdiff/eval.hpp"
#include "sentdiff/rng.hpp"

using namespace sentdiff;

namespace {

// O(n^2) counting ranks: rank = 1 + #less + (#equal - 1) / 2.
std::vector<double> oracle_ranks(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        int64_t less = 0, equal = 0;
        for (size_t j = 0; j < v.size(); ++j) {
            if (v[j] < v[i]) ++less;
            if (v[j] == v[i]) ++equal;
        }
        out[i] = 1.0 + static_cast<double>(less) + (static_cast<double>(equal) - 1.0) / 2.0;
    }
    return out;
}

double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

Vec random_vec(int64_t d, rng::Stream& s) {
    Vec v(static_cast<size_t>(d));
    for (auto& x : v) x = s.next_normal();
    return v;
}

}  // namespace

TEST_CASE("spearman on exact and reversed orderings") {
    std::vector<double> up = {1, 2, 3, 4, 5};
    std::vector<double> gold = {10, 20, 30, 40, 50};
    CHECK(spearman(up, gold) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> down = {5, 4, 3, 2, 1};
    CHECK(spearman(down, gold) == doctest::Approx(-1.0).epsilon(1e-12));
    std::vector<double> flat = {2, 2, 2};
    std::vector<double> g3 = {1, 2, 3};
    CHECK_THROWS_WITH(spearman(flat, g3), doctest::Contains("zero rank variance"));
}

TEST_CASE("spearman agrees with the counting-rank oracle on 500 random lists") {
    rng::Stream s(1);
    for (int trial = 0; trial < 500; ++trial) {
        const size_t n = 2 + s.next_below(29);
        std::vector<double> a(n), b(n);
        bool ok = false;
        while (!ok) {
            for (auto& x : a) x = static_cast<double>(s.next_below(8));  // forces ties
            for (auto& x : b) x = static_cast<double>(s.next_below(8));
            auto distinct = [](const std::vector<double>& v) {
                for (double x : v)
                    if (x != v[0]) return true;
                return false;
            };
            ok = distinct(a) && distinct(b);
        }
        const double got = spearman(a, b);
        const double want = oracle_pearson(oracle_ranks(a), oracle_ranks(b));
        CHECK(std::abs(got - want) < 1e-12);
    }
}

TEST_CASE("spearman is invariant under strictly increasing transforms") {
    rng::Stream s(2);
    std::vector<double> a(20), b(20);
    for (auto& x : a) x = s.next_normal();
    for (auto& x : b) x = s.next_normal();
    const double base = spearman(a, b);
    auto a2 = a;
    for (auto& x : a2) x = std::exp(3.0 * x) + 7.0;
    auto b2 = b;
    for (auto& x : b2) x = std::atan(x) * 5.0;
    CHECK(spearman(a2, b2) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("alignment closed forms and rescaling invariance") {
    rng::Stream s(3);
    const Vec u = random_vec(6, s);
    CHECK(alignment({{u, u}, {u, u}}) == doctest::Approx(0.0));

    Vec nu = u;
    for (auto& x : nu) x = -x;
    CHECK(alignment({{u, nu}}) == doctest::Approx(4.0).epsilon(1e-12));

    const Vec v = random_vec(6, s);
    const double base = alignment({{u, v}});
    Vec us = u, vs = v;
    for (auto& x : us) x *= 12.5;
    for (auto& x : vs) x *= 0.004;
    CHECK(alignment({{us, vs}}) == doctest::Approx(base).epsilon(1e-12));

    CHECK_THROWS(alignment({{Vec{0, 0}, Vec{1, 0}}}));
}

TEST_CASE("uniformity closed forms and the double-loop oracle") {
    Vec a = {0.3, -0.4, 1.0};
    CHECK(uniformity({a, a, a}) == doctest::Approx(0.0).epsilon(1e-12));

    Vec e1 = {2.0, 0.0};
    Vec ne1 = {-0.5, 0.0};
    CHECK(uniformity({e1, ne1}) == doctest::Approx(-8.0).epsilon(1e-9));

    rng::Stream s(4);
    std::vector<Vec> embs;
    for (int i = 0; i < 50; ++i) embs.push_back(random_vec(7, s));
    // literal O(n^2) oracle
    auto normalize = [](Vec v) {
        double sq = 0;
        for (double x : v) sq += x * x;
        for (auto& x : v) x /= std::sqrt(sq);
        return v;
    };
    double sum = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < embs.size(); ++i)
        for (size_t j = i + 1; j < embs.size(); ++j) {
            const Vec ui = normalize(embs[i]), uj = normalize(embs[j]);
            double d = 0;
            for (size_t c = 0; c < ui.size(); ++c) d += (ui[c] - uj[c]) * (ui[c] - uj[c]);
            sum += std::exp(-2.0 * d);
            ++pairs;
        }
    CHECK(std::abs(uniformity(embs) - std::log(sum / static_cast<double>(pairs))) < 1e-9);

    CHECK_THROWS(uniformity({a}));
}

TEST_CASE("uniformity improves when a duplicated point moves away") {
    Vec a = {1.0, 0.0, 0.0};
    Vec b = {0.0, 1.0, 0.0};
    const double dup = uniformity({a, a, b});
    Vec moved = {std::cos(0.8), std::sin(0.8), 0.0};
    const double spread = uniformity({a, moved, b});
    CHECK(spread < dup);
}

TEST_CASE("retrieval recall on toy corpora") {
    // corpus of exactly the two partners
    std::vector<Vec> two = {{1.0, 0.2}, {0.9, 0.3}};
    const auto r = retrieval_recall(two, {{0, 1}}, {1});
    CHECK(r.at(1) == doctest::Approx(1.0));

    // partner embedding equals the query embedding: cosine 1 is maximal
    rng::Stream s(5);
    std::vector<Vec> corpus;
    for (int i = 0; i < 30; ++i) corpus.push_back(random_vec(4, s));
    corpus.push_back(corpus[3]);  // index 30 duplicates index 3
    const auto r2 = retrieval_recall(corpus, {{3, 30}}, {1});
    CHECK(r2.at(1) == doctest::Approx(1.0));
}

TEST_CASE("retrieval recall matches an exhaustive sort oracle on 200 sentences") {
    rng::Stream s(6);
    std::vector<Vec> corpus;
    for (int i = 0; i < 200; ++i) corpus.push_back(random_vec(5, s));
    std::vector<std::pair<int64_t, int64_t>> pairs;
    for (int i = 0; i < 40; ++i) {
        const int64_t a = static_cast<int64_t>(s.next_below(200));
        int64_t b = static_cast<int64_t>(s.next_below(200));
        if (b == a) b = (b + 1) % 200;
        pairs.emplace_back(a, b);
    }
    const std::vector<int64_t> ks = {1, 5, 10};
    const auto got = retrieval_recall(corpus, pairs, ks);

    auto cosine = [&](int64_t i, int64_t j) {
        double dot = 0, ni = 0, nj = 0;
        for (size_t c = 0; c < corpus[0].size(); ++c) {
            dot += corpus[static_cast<size_t>(i)][c] * corpus[static_cast<size_t>(j)][c];
            ni += corpus[static_cast<size_t>(i)][c] * corpus[static_cast<size_t>(i)][c];
            nj += corpus[static_cast<size_t>(j)][c] * corpus[static_cast<size_t>(j)][c];
        }
        return dot / std::sqrt(ni * nj);
    };
    std::map<int64_t, double> want;
    for (int64_t k : ks) {
        int64_t hits = 0;
        for (const auto& [qa, qb] : pairs) {
            const std::vector<std::pair<int64_t, int64_t>> directions = {{qa, qb}, {qb, qa}};
            for (const auto& [q, p] : directions) {
                // exhaustive sort of all candidates by (cosine desc, index asc)
                std::vector<int64_t> cands;
                for (int64_t c = 0; c < 200; ++c)
                    if (c != q) cands.push_back(c);
                std::stable_sort(cands.begin(), cands.end(), [&](int64_t x, int64_t y) {
                    const double cx = cosine(q, x), cy = cosine(q, y);
                    if (cx != cy) return cx > cy;
                    return x < y;
                });
                const auto pos = std::find(cands.begin(), cands.end(), p) - cands.begin();
                if (pos + 1 <= k) ++hits;
            }
        }
        want[k] = static_cast<double>(hits) / (2.0 * static_cast<double>(pairs.size()));
    }
    for (int64_t k : ks) CHECK(got.at(k) == doctest::Approx(want.at(k)).epsilon(1e-12));
}

TEST_CASE("retrieval ranking is invariant under rescaling and rotation") {
    rng::Stream s(7);
    std::vector<Vec> corpus;
    for (int i = 0; i < 40; ++i) corpus.push_back(random_vec(3, s));
    std::vector<std::pair<int64_t, int64_t>> pairs = {{0, 5}, {7, 12}, {20, 33}};
    const auto base = retrieval_recall(corpus, pairs, {1, 5, 10});

    auto scaled = corpus;
    for (size_t i = 0; i < scaled.size(); ++i)
        for (auto& x : scaled[i]) x *= 0.5 + static_cast<double>(i % 7);
    CHECK(retrieval_recall(scaled, pairs, {1, 5, 10}) == base);

    // rotation about the z axis by 1.1 rad
    const double c = std::cos(1.1), sn = std::sin(1.1);
    auto rotated = corpus;
    for (auto& v : rotated) {
        const double x = v[0], y = v[1];
        v[0] = c * x - sn * y;
        v[1] = sn * x + c * y;
    }
    CHECK(retrieval_recall(rotated, pairs, {1, 5, 10}) == base);
}

TEST_CASE("cosine histogram buckets by rating group and partitions pairs") {
    EvalPairSet set;
    std::vector<Vec> a, b;
    rng::Stream s(8);
    for (int i = 0; i < 60; ++i) {
        PairExample p;
        p.sentence_a = "a" + std::to_string(i);
        p.sentence_b = "b" + std::to_string(i);
        p.gold = static_cast<double>(s.next_below(6));  // 0..5
        set.pairs.push_back(p);
        a.push_back(random_vec(4, s));
        b.push_back(random_vec(4, s));
    }
    const auto hist = cosine_histogram(set, a, b, 0.1);
    int64_t total = 0;
    for (const auto& [group, counts] : hist.counts) {
        CHECK(group >= 0);
        CHECK(group <= 4);
        int64_t gsum = 0;
        for (int64_t c : counts) gsum += c;
        CHECK(gsum == hist.group_totals.at(group));
        total += gsum;
    }
    CHECK(total == 60);

    // identical embeddings spike at the bin containing cosine 1
    EvalPairSet same;
    std::vector<Vec> ea, eb;
    for (int i = 0; i < 5; ++i) {
        PairExample p;
        p.sentence_a = p.sentence_b = "s" + std::to_string(i);
        p.gold = 5.0;
        same.pairs.push_back(p);
        const Vec v = random_vec(4, s);
        ea.push_back(v);
        eb.push_back(v);
    }
    const auto spike = cosine_histogram(same, ea, eb, 0.1);
    REQUIRE(spike.counts.count(4) == 1);
    CHECK(spike.counts.at(4).back() == 5);  // last bin holds cosine 1.0
    CHECK_THROWS(cosine_histogram(same, ea, eb, 0.0));
}

TEST_CASE("transfer probe separates separable data and collapses on shuffled labels") {
    rng::Stream s(9);
    std::vector<Vec> x;
    std::vector<int64_t> y;
    for (int i = 0; i < 120; ++i) {
        const int64_t cls = static_cast<int64_t>(s.next_below(2));
        Vec v = random_vec(4, s);
        v[0] += cls == 0 ? -4.0 : 4.0;  // linearly separable
        x.push_back(v);
        y.push_back(cls);
    }
    std::vector<int64_t> train_idx, test_idx;
    for (int64_t i = 0; i < 120; ++i) (i % 3 == 0 ? test_idx : train_idx).push_back(i);
    CHECK(transfer_probe(x, y, train_idx, test_idx, 1e-4) == doctest::Approx(1.0));

    // shuffled labels: mean accuracy within 5 points of chance over 10 shuffles
    double total = 0;
    for (uint64_t r = 0; r < 10; ++r) {
        auto shuffled = y;
        rng::Stream rs(100 + r);
        rs.shuffle(shuffled);
        total += transfer_probe(x, shuffled, train_idx, test_idx, 1e-2);
    }
    CHECK(std::abs(total / 10.0 - 0.5) < 0.05);

    std::vector<int64_t> ones(y.size(), 1);
    CHECK_THROWS(transfer_probe(x, ones, train_idx, test_idx, 1e-4));
}

TEST_CASE("logistic fit converges to the same loss from any init") {
    rng::Stream s(10);
    std::vector<Vec> x;
    std::vector<int64_t> y;
    for (int i = 0; i < 60; ++i) {
        const int64_t cls = static_cast<int64_t>(s.next_below(3));
        Vec v = random_vec(3, s);
        v[static_cast<size_t>(cls)] += 1.5;
        x.push_back(v);
        y.push_back(cls);
    }
    double first = 0;
    for (uint64_t init = 0; init < 3; ++init) {
        std::vector<double> w0(3 * 4);
        rng::Stream ws(200 + init);
        for (auto& v : w0) v = ws.next_normal();
        const auto fit = fit_logistic(x, y, 3, 1e-3, &w0);
        CHECK(fit.converged);
        if (init == 0)
            first = fit.final_loss;
        else
            CHECK(std::abs(fit.final_loss - first) < 1e-6);
    }
}

TEST_CASE("pair TSV and embedding dump round-trips") {
    EvalPairSet set;
    set.pairs.push_back({"the first sentence", "its graded partner", 3.0});
    set.pairs.push_back({"another one", "and its partner", 5.0});
    const std::string pair_path = "eval_test_pairs.tsv";
    save_pair_tsv(set, pair_path);
    const auto loaded = load_pair_tsv(pair_path);
    REQUIRE(loaded.pairs.size() == 2);
    CHECK(loaded.pairs[0].sentence_a == "the first sentence");
    CHECK(loaded.pairs[1].gold == 5.0);
    std::remove(pair_path.c_str());

    rng::Stream s(11);
    std::vector<Vec> embs;
    for (int i = 0; i < 7; ++i) embs.push_back(random_vec(5, s));
    const std::string emb_path = "eval_test_embs.txt";
    save_embeddings(embs, emb_path);
    const auto loaded_embs = load_embeddings(emb_path);
    REQUIRE(loaded_embs.size() == 7);
    for (size_t i = 0; i < embs.size(); ++i)
        for (size_t c = 0; c < embs[i].size(); ++c)
            CHECK(loaded_embs[i][c] == doctest::Approx(embs[i][c]).epsilon(1e-15));
    std::remove(emb_path.c_str());
}

TEST_CASE("compute_metrics assembles a consistent report") {
    rng::Stream s(12);
    EvalPairSet set;
    std::vector<Vec> a, b;
    for (int i = 0; i < 30; ++i) {
        PairExample p;
        p.sentence_a = "left " + std::to_string(i);
        p.sentence_b = "right " + std::to_string(i);
        p.gold = static_cast<double>(i % 6);
        set.pairs.push_back(p);
        Vec va = random_vec(6, s);
        Vec vb = va;
        // higher gold -> closer partner
        for (auto& x : vb) x += (5.0 - p.gold) * 0.4 * s.next_normal();
        a.push_back(va);
        b.push_back(vb);
    }
    const auto report = compute_metrics(set, a, b, 0.2);
    CHECK(report.num_pairs == 30);
    CHECK(report.spearman_rho > 0.3);
    CHECK(report.spearman_rho <= 1.0);
    CHECK(report.num_positive_pairs == 5);
    CHECK(report.recall_at.count(1) == 1);
    CHECK(report.alignment_loss >= 0.0);
    const auto text = format_metrics(report);
    CHECK(text.find("spearman") != std::string::npos);
}
