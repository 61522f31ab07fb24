#include "sentdiff/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "sentdiff/losses.hpp"

namespace sentdiff {

namespace {

std::vector<double> normalize(const Vec& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (!(sq > 0.0)) throw std::domain_error("cannot normalize zero-norm embedding");
    const double inv = 1.0 / std::sqrt(sq);
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
    return out;
}

double squared_distance(const Vec& a, const Vec& b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        d += diff * diff;
    }
    return d;
}

}  // namespace

EvalPairSet load_pair_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pair file: " + path);
    EvalPairSet set;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw std::runtime_error("malformed pair line " + std::to_string(lineno) + " in " + path);
        PairExample p;
        p.sentence_a = line.substr(0, t1);
        p.sentence_b = line.substr(t1 + 1, t2 - t1 - 1);
        p.gold = std::stod(line.substr(t2 + 1));
        if (!std::isfinite(p.gold)) throw std::runtime_error("non-finite gold score in " + path);
        set.pairs.push_back(std::move(p));
    }
    if (set.pairs.empty()) throw std::runtime_error("empty pair file: " + path);
    return set;
}

void save_pair_tsv(const EvalPairSet& set, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open pair file for writing: " + path);
    out.precision(17);
    for (const auto& p : set.pairs)
        out << p.sentence_a << '\t' << p.sentence_b << '\t' << p.gold << '\n';
}

void save_embeddings(const std::vector<std::vector<double>>& embeddings, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open embedding file for writing: " + path);
    out.precision(17);
    const size_t dim = embeddings.empty() ? 0 : embeddings.front().size();
    out << embeddings.size() << ' ' << dim << '\n';
    for (const auto& v : embeddings) {
        for (size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
        out << '\n';
    }
}

std::vector<std::vector<double>> load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);
    size_t n = 0, dim = 0;
    in >> n >> dim;
    std::vector<std::vector<double>> out(n, std::vector<double>(dim));
    for (auto& v : out)
        for (auto& x : v)
            if (!(in >> x)) throw std::runtime_error("truncated embedding file: " + path);
    return out;
}

std::vector<double> fractional_ranks(const std::vector<double>& values) {
    const size_t n = values.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        // Elements i..j of the ordering are tied; assign the average rank.
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& pred, const std::vector<double>& gold) {
    if (pred.size() != gold.size()) throw std::invalid_argument("spearman: length mismatch");
    if (pred.size() < 2) throw std::invalid_argument("spearman requires at least two points");
    const auto rp = fractional_ranks(pred);
    const auto rg = fractional_ranks(gold);
    const double n = static_cast<double>(pred.size());
    double mp = 0.0, mg = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        mp += rp[i];
        mg += rg[i];
    }
    mp /= n;
    mg /= n;
    double cov = 0.0, vp = 0.0, vg = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double dp = rp[i] - mp;
        const double dg = rg[i] - mg;
        cov += dp * dg;
        vp += dp * dp;
        vg += dg * dg;
    }
    if (!(vp > 0.0) || !(vg > 0.0)) throw std::domain_error("spearman: zero rank variance");
    return cov / std::sqrt(vp * vg);
}

double alignment(const std::vector<std::pair<Vec, Vec>>& positive_pairs) {
    if (positive_pairs.empty()) throw std::invalid_argument("alignment requires at least one pair");
    double sum = 0.0;
    for (const auto& [u, v] : positive_pairs) sum += squared_distance(normalize(u), normalize(v));
    return sum / static_cast<double>(positive_pairs.size());
}

double uniformity(const std::vector<Vec>& embeddings) {
    const int64_t n = static_cast<int64_t>(embeddings.size());
    if (n < 2) throw std::invalid_argument("uniformity requires at least two embeddings");
    std::vector<Vec> unit(embeddings.size());
    for (size_t i = 0; i < embeddings.size(); ++i) unit[i] = normalize(embeddings[i]);
    // Partial sums per i keep the accumulation order fixed under OpenMP.
    std::vector<double> partial(embeddings.size(), 0.0);
#pragma omp parallel for schedule(dynamic, 16)
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t j = i + 1; j < n; ++j)
            acc += std::exp(-2.0 * squared_distance(unit[static_cast<size_t>(i)],
                                                    unit[static_cast<size_t>(j)]));
        partial[static_cast<size_t>(i)] = acc;
    }
    double sum = 0.0;
    for (double p : partial) sum += p;
    const double num_pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    return std::log(sum / num_pairs);
}

std::map<int64_t, double> retrieval_recall(const std::vector<Vec>& corpus_embeddings,
                                           const std::vector<std::pair<int64_t, int64_t>>& positive_pairs,
                                           const std::vector<int64_t>& k_list) {
    const int64_t n = static_cast<int64_t>(corpus_embeddings.size());
    for (const auto& [a, b] : positive_pairs)
        if (a < 0 || b < 0 || a >= n || b >= n) throw std::out_of_range("retrieval pair index");
    for (int64_t k : k_list)
        if (k < 1) throw std::invalid_argument("recall k must be at least 1");

    std::vector<Vec> unit(corpus_embeddings.size());
    for (size_t i = 0; i < corpus_embeddings.size(); ++i) unit[i] = normalize(corpus_embeddings[i]);

    // Queries: both directions of each pair.
    std::vector<std::pair<int64_t, int64_t>> queries;
    for (const auto& [a, b] : positive_pairs) {
        queries.emplace_back(a, b);
        queries.emplace_back(b, a);
    }

    std::vector<int64_t> partner_rank(queries.size(), 0);
    const int64_t nq = static_cast<int64_t>(queries.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (int64_t qi = 0; qi < nq; ++qi) {
        const auto [q, p] = queries[static_cast<size_t>(qi)];
        const auto& qv = unit[static_cast<size_t>(q)];
        double sim_p = 0.0;
        for (size_t d = 0; d < qv.size(); ++d) sim_p += qv[d] * unit[static_cast<size_t>(p)][d];
        int64_t rank = 1;
        for (int64_t c = 0; c < n; ++c) {
            if (c == q || c == p) continue;
            double sim_c = 0.0;
            const auto& cv = unit[static_cast<size_t>(c)];
            for (size_t d = 0; d < qv.size(); ++d) sim_c += qv[d] * cv[d];
            if (sim_c > sim_p || (sim_c == sim_p && c < p)) ++rank;
        }
        partner_rank[static_cast<size_t>(qi)] = rank;
    }

    std::map<int64_t, double> out;
    for (int64_t k : k_list) {
        int64_t hits = 0;
        for (int64_t r : partner_rank) hits += r <= k ? 1 : 0;
        out[k] = queries.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(queries.size());
    }
    return out;
}

CosineHistogram cosine_histogram(const EvalPairSet& set, const std::vector<Vec>& emb_a,
                                 const std::vector<Vec>& emb_b, double bin_width) {
    if (!(bin_width > 0.0) || bin_width > 2.0)
        throw std::invalid_argument("bin width must be in (0, 2]");
    if (emb_a.size() != set.pairs.size() || emb_b.size() != set.pairs.size())
        throw std::invalid_argument("one embedding per pair side required");
    CosineHistogram hist;
    hist.bin_width = bin_width;
    hist.num_bins = static_cast<int64_t>(std::ceil(2.0 / bin_width));
    for (size_t i = 0; i < set.pairs.size(); ++i) {
        const double gold = set.pairs[i].gold;
        int64_t group = static_cast<int64_t>(std::floor(gold));
        group = std::clamp<int64_t>(group, 0, 4);  // a gold of 5 joins group 4
        const double c = cosine_sim(emb_a[i], emb_b[i]);
        int64_t bin = static_cast<int64_t>(std::floor((c + 1.0) / bin_width));
        bin = std::clamp<int64_t>(bin, 0, hist.num_bins - 1);
        auto& counts = hist.counts[group];
        if (counts.empty()) counts.assign(static_cast<size_t>(hist.num_bins), 0);
        ++counts[static_cast<size_t>(bin)];
        ++hist.group_totals[group];
    }
    return hist;
}

void save_histogram_csv(const CosineHistogram& hist, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open histogram file for writing: " + path);
    out << "group,bin_lo,bin_hi,count\n";
    out.precision(10);
    for (const auto& [group, counts] : hist.counts)
        for (int64_t b = 0; b < hist.num_bins; ++b)
            out << group << ',' << hist.bin_lo(b) << ',' << hist.bin_hi(b) << ','
                << counts[static_cast<size_t>(b)] << '\n';
}

void save_histogram_svg(const CosineHistogram& hist, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open svg file for writing: " + path);
    const int width = 640, row_height = 90, margin = 40;
    const int height = margin * 2 + row_height * 5;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const double plot_w = width - 2.0 * margin;
    for (int64_t group = 0; group < 5; ++group) {
        const double y0 = margin + static_cast<double>(4 - group) * row_height;
        out << "<line x1=\"" << margin << "\" y1=\"" << y0 + row_height - 10 << "\" x2=\""
            << width - margin << "\" y2=\"" << y0 + row_height - 10
            << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
        out << "<text x=\"8\" y=\"" << y0 + row_height / 2 << "\" font-size=\"12\">" << group
            << "</text>\n";
        auto it = hist.counts.find(group);
        if (it == hist.counts.end()) continue;
        int64_t peak = 1;
        for (int64_t c : it->second) peak = std::max(peak, c);
        for (int64_t b = 0; b < hist.num_bins; ++b) {
            const int64_t c = it->second[static_cast<size_t>(b)];
            if (c == 0) continue;
            const double x = margin + (hist.bin_lo(b) + 1.0) / 2.0 * plot_w;
            const double w = hist.bin_width / 2.0 * plot_w;
            const double h = static_cast<double>(c) / static_cast<double>(peak) * (row_height - 20);
            out << "<rect x=\"" << x << "\" y=\"" << y0 + row_height - 10 - h << "\" width=\""
                << w << "\" height=\"" << h << "\" fill=\"steelblue\" stroke=\"none\"/>\n";
        }
    }
    // x axis labels at -1, 0, 1
    for (int i = 0; i <= 2; ++i) {
        const double x = margin + static_cast<double>(i) / 2.0 * plot_w;
        out << "<text x=\"" << x - 8 << "\" y=\"" << height - 12 << "\" font-size=\"12\">"
            << (i - 1) << "</text>\n";
    }
    out << "</svg>\n";
}

LogisticFit fit_logistic(const std::vector<Vec>& x, const std::vector<int64_t>& y,
                         int64_t num_classes, double l2_penalty,
                         const std::vector<double>* init_weights) {
    if (x.empty() || x.size() != y.size()) throw std::invalid_argument("fit_logistic: bad inputs");
    const int64_t n = static_cast<int64_t>(x.size());
    const int64_t d = static_cast<int64_t>(x.front().size());
    const int64_t wlen = num_classes * (d + 1);

    std::set<int64_t> seen(y.begin(), y.end());
    if (static_cast<int64_t>(seen.size()) < 2)
        throw std::invalid_argument("degenerate single-class training set");

    LogisticFit fit;
    fit.weights.assign(static_cast<size_t>(wlen), 0.0);
    if (init_weights) {
        if (static_cast<int64_t>(init_weights->size()) != wlen)
            throw std::invalid_argument("fit_logistic: init weight size mismatch");
        fit.weights = *init_weights;
    }

    auto loss_and_grad = [&](const std::vector<double>& w, std::vector<double>* grad) {
        if (grad) std::fill(grad->begin(), grad->end(), 0.0);
        double loss = 0.0;
        std::vector<double> logits(static_cast<size_t>(num_classes));
        for (int64_t i = 0; i < n; ++i) {
            const auto& xi = x[static_cast<size_t>(i)];
            for (int64_t c = 0; c < num_classes; ++c) {
                const double* wc = w.data() + c * (d + 1);
                double z = wc[d];  // bias
                for (int64_t j = 0; j < d; ++j) z += wc[j] * xi[static_cast<size_t>(j)];
                logits[static_cast<size_t>(c)] = z;
            }
            double mx = logits[0];
            for (double z : logits) mx = std::max(mx, z);
            double sum = 0.0;
            for (double& z : logits) {
                z = std::exp(z - mx);
                sum += z;
            }
            loss += std::log(sum) + mx;
            const int64_t yi = y[static_cast<size_t>(i)];
            {
                // subtract the target logit (recover it from the softmax pieces)
                const double* wc = w.data() + yi * (d + 1);
                double z = wc[d];
                for (int64_t j = 0; j < d; ++j) z += wc[j] * xi[static_cast<size_t>(j)];
                loss -= z;
            }
            if (grad) {
                for (int64_t c = 0; c < num_classes; ++c) {
                    const double p = logits[static_cast<size_t>(c)] / sum;
                    const double coef = (p - (c == yi ? 1.0 : 0.0)) / static_cast<double>(n);
                    double* gc = grad->data() + c * (d + 1);
                    for (int64_t j = 0; j < d; ++j) gc[j] += coef * xi[static_cast<size_t>(j)];
                    gc[d] += coef;
                }
            }
        }
        loss /= static_cast<double>(n);
        // L2 on the non-bias weights.
        for (int64_t c = 0; c < num_classes; ++c) {
            const double* wc = w.data() + c * (d + 1);
            for (int64_t j = 0; j < d; ++j) loss += 0.5 * l2_penalty * wc[j] * wc[j];
            if (grad)
                for (int64_t j = 0; j < d; ++j)
                    (*grad)[static_cast<size_t>(c * (d + 1) + j)] += l2_penalty * wc[j];
        }
        return loss;
    };

    std::vector<double> grad(static_cast<size_t>(wlen));
    double step = 1.0;
    double loss = loss_and_grad(fit.weights, &grad);
    const int64_t max_iters = 10000;
    for (fit.iterations = 0; fit.iterations < max_iters; ++fit.iterations) {
        double gnorm = 0.0;
        for (double g : grad) gnorm += g * g;
        gnorm = std::sqrt(gnorm);
        if (gnorm < 1e-6) {
            fit.converged = true;
            break;
        }
        // Backtracking line search on the gradient direction.
        std::vector<double> trial(fit.weights.size());
        double new_loss = loss;
        for (int bt = 0; bt < 60; ++bt) {
            for (size_t i = 0; i < trial.size(); ++i) trial[i] = fit.weights[i] - step * grad[i];
            new_loss = loss_and_grad(trial, nullptr);
            if (new_loss <= loss - 0.5 * step * gnorm * gnorm) break;
            step *= 0.5;
        }
        fit.weights = trial;
        loss = loss_and_grad(fit.weights, &grad);
        step = std::min(step * 2.0, 1e6);
    }
    fit.final_loss = loss;
    return fit;
}

double transfer_probe(const std::vector<Vec>& embeddings, const std::vector<int64_t>& labels,
                      const std::vector<int64_t>& train_idx, const std::vector<int64_t>& test_idx,
                      double l2_penalty) {
    if (train_idx.empty() || test_idx.empty())
        throw std::invalid_argument("transfer_probe: empty split");
    int64_t num_classes = 0;
    for (int64_t l : labels) num_classes = std::max(num_classes, l + 1);

    std::vector<Vec> xtr;
    std::vector<int64_t> ytr;
    for (int64_t i : train_idx) {
        xtr.push_back(embeddings.at(static_cast<size_t>(i)));
        ytr.push_back(labels.at(static_cast<size_t>(i)));
    }
    const auto fit = fit_logistic(xtr, ytr, num_classes, l2_penalty);

    const int64_t d = static_cast<int64_t>(embeddings.front().size());
    int64_t correct = 0;
    for (int64_t i : test_idx) {
        const auto& xi = embeddings.at(static_cast<size_t>(i));
        int64_t best = 0;
        double best_z = -1e300;
        for (int64_t c = 0; c < num_classes; ++c) {
            const double* wc = fit.weights.data() + c * (d + 1);
            double z = wc[d];
            for (int64_t j = 0; j < d; ++j) z += wc[j] * xi[static_cast<size_t>(j)];
            if (z > best_z) {
                best_z = z;
                best = c;
            }
        }
        if (best == labels.at(static_cast<size_t>(i))) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test_idx.size());
}

MetricReport compute_metrics(const EvalPairSet& set, const std::vector<Vec>& emb_a,
                             const std::vector<Vec>& emb_b, double bin_width) {
    if (emb_a.size() != set.pairs.size() || emb_b.size() != set.pairs.size())
        throw std::invalid_argument("one embedding per pair side required");
    MetricReport report;
    report.num_pairs = static_cast<int64_t>(set.pairs.size());

    std::vector<double> cosines(set.pairs.size());
    std::vector<double> golds(set.pairs.size());
    for (size_t i = 0; i < set.pairs.size(); ++i) {
        cosines[i] = cosine_sim(emb_a[i], emb_b[i]);
        golds[i] = set.pairs[i].gold;
    }
    report.spearman_rho = spearman(cosines, golds);

    // Alignment over the gold-5 pairs.
    std::vector<std::pair<Vec, Vec>> positives;
    for (size_t i = 0; i < set.pairs.size(); ++i)
        if (set.pairs[i].gold == 5.0) positives.emplace_back(emb_a[i], emb_b[i]);
    report.num_positive_pairs = static_cast<int64_t>(positives.size());
    if (!positives.empty()) report.alignment_loss = alignment(positives);

    // Uniformity over the sentence multiset (both sides of every pair).
    std::vector<Vec> all;
    all.reserve(2 * set.pairs.size());
    for (const auto& v : emb_a) all.push_back(v);
    for (const auto& v : emb_b) all.push_back(v);
    report.uniformity_loss = uniformity(all);

    // Retrieval over the deduplicated sentence corpus with gold-5 partners.
    std::unordered_map<std::string, int64_t> index;
    std::vector<Vec> corpus;
    auto intern = [&](const std::string& s, const Vec& v) {
        auto it = index.find(s);
        if (it != index.end()) return it->second;
        const int64_t id = static_cast<int64_t>(corpus.size());
        index.emplace(s, id);
        corpus.push_back(v);
        return id;
    };
    std::vector<std::pair<int64_t, int64_t>> pos_idx;
    for (size_t i = 0; i < set.pairs.size(); ++i) {
        const int64_t ia = intern(set.pairs[i].sentence_a, emb_a[i]);
        const int64_t ib = intern(set.pairs[i].sentence_b, emb_b[i]);
        if (set.pairs[i].gold == 5.0 && ia != ib) pos_idx.emplace_back(ia, ib);
    }
    if (!pos_idx.empty()) report.recall_at = retrieval_recall(corpus, pos_idx, {1, 5, 10});

    report.histogram = cosine_histogram(set, emb_a, emb_b, bin_width);
    return report;
}

std::string format_metrics(const MetricReport& report) {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed;
    out << "pairs          " << report.num_pairs << "\n";
    out << "spearman       " << report.spearman_rho << "\n";
    out << "alignment      " << report.alignment_loss << "  (" << report.num_positive_pairs
        << " gold-5 pairs)\n";
    out << "uniformity     " << report.uniformity_loss << "\n";
    for (const auto& [k, r] : report.recall_at) out << "recall@" << k << "      " << r << "\n";
    return out.str();
}

}  // namespace sentdiff
