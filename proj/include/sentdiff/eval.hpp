#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sentdiff {

// STS-style sentence pair with a human-rating stand-in on a 0..5 scale.
struct PairExample {
    std::string sentence_a;
    std::string sentence_b;
    double gold = 0.0;
};

struct EvalPairSet {
    std::vector<PairExample> pairs;
    std::string role = "dev";  // dev | test

    size_t size() const { return pairs.size(); }
};

// TSV: sentenceA<TAB>sentenceB<TAB>score
EvalPairSet load_pair_tsv(const std::string& path);
void save_pair_tsv(const EvalPairSet& set, const std::string& path);

// Embedding dump: header `n dim`, then one vector per line.
void save_embeddings(const std::vector<std::vector<double>>& embeddings, const std::string& path);
std::vector<std::vector<double>> load_embeddings(const std::string& path);

using Vec = std::vector<double>;

// Spearman rank correlation with tie-averaged ranks. Throws on constant
// inputs ("zero rank variance").
double spearman(const std::vector<double>& pred, const std::vector<double>& gold);

// Tie-averaged fractional ranks (1-based).
std::vector<double> fractional_ranks(const std::vector<double>& values);

// Mean squared distance between L2-normalized embeddings of positive pairs.
double alignment(const std::vector<std::pair<Vec, Vec>>& positive_pairs);

// log mean over unordered distinct pairs of exp(-2 * ||u_i - u_j||^2),
// vectors L2-normalized first.
double uniformity(const std::vector<Vec>& embeddings);

// For each direction of each positive pair, ranks all other corpus sentences
// by cosine similarity (query excluded, ties broken by lower index) and
// reports the fraction of queries whose partner lands in the top k.
std::map<int64_t, double> retrieval_recall(const std::vector<Vec>& corpus_embeddings,
                                           const std::vector<std::pair<int64_t, int64_t>>& positive_pairs,
                                           const std::vector<int64_t>& k_list);

// Cosine-similarity histograms per rating group. Pairs are bucketed by
// floor(gold) into groups 0..4 (a gold of 5 joins group 4); bins partition
// [-1, 1] with the given width.
struct CosineHistogram {
    double bin_width = 0.1;
    int64_t num_bins = 20;
    // group -> per-bin counts; groups with no pairs are absent.
    std::map<int64_t, std::vector<int64_t>> counts;
    std::map<int64_t, int64_t> group_totals;

    double bin_lo(int64_t b) const { return -1.0 + static_cast<double>(b) * bin_width; }
    double bin_hi(int64_t b) const { return -1.0 + static_cast<double>(b + 1) * bin_width; }
};

CosineHistogram cosine_histogram(const EvalPairSet& set, const std::vector<Vec>& emb_a,
                                 const std::vector<Vec>& emb_b, double bin_width);

void save_histogram_csv(const CosineHistogram& hist, const std::string& path);

// Renders the per-group histograms as stacked bar rows, x axis fixed [-1, 1].
void save_histogram_svg(const CosineHistogram& hist, const std::string& path);

// Multinomial logistic regression on frozen embeddings, full-batch gradient
// descent to convergence (gradient norm < 1e-6 or 10k iterations).
struct LogisticFit {
    std::vector<double> weights;  // classes x (dim + 1), bias last
    double final_loss = 0.0;
    int64_t iterations = 0;
    bool converged = false;
};

LogisticFit fit_logistic(const std::vector<Vec>& x, const std::vector<int64_t>& y,
                         int64_t num_classes, double l2_penalty,
                         const std::vector<double>* init_weights = nullptr);

double transfer_probe(const std::vector<Vec>& embeddings, const std::vector<int64_t>& labels,
                      const std::vector<int64_t>& train_idx, const std::vector<int64_t>& test_idx,
                      double l2_penalty);

// Full metric bundle over a pair set: Spearman of cosines vs gold, alignment
// over gold-5 pairs, uniformity over the sentence multiset, recall@1/5/10
// over the deduplicated corpus, and the per-group cosine histograms.
struct MetricReport {
    double spearman_rho = 0.0;
    double alignment_loss = 0.0;
    double uniformity_loss = 0.0;
    std::map<int64_t, double> recall_at;
    CosineHistogram histogram;
    int64_t num_pairs = 0;
    int64_t num_positive_pairs = 0;
};

MetricReport compute_metrics(const EvalPairSet& set, const std::vector<Vec>& emb_a,
                             const std::vector<Vec>& emb_b, double bin_width = 0.1);

std::string format_metrics(const MetricReport& report);

}  // namespace sentdiff
