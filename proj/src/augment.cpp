#include "sentdiff/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sentdiff {

MaskPattern sample_mask(const TokenSequence& seq, double ratio, uint64_t rng_seed) {
    if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("mask ratio must be in [0,1]");
    MaskPattern pattern;
    pattern.ratio = ratio;
    pattern.flags.assign(seq.ids.size(), 0);

    const int64_t words = seq.content_tokens();
    if (ratio == 0.0 || words <= 0) return pattern;

    rng::Stream stream(rng_seed);
    // Unbiased stochastic rounding of ratio * words: the fractional part is
    // resolved by one draw, so the masked count averages to the exact ratio.
    const double exact = ratio * static_cast<double>(words);
    int64_t k = static_cast<int64_t>(std::floor(exact));
    if (stream.next_double() < exact - std::floor(exact)) ++k;
    k = std::max<int64_t>(k, 1);
    k = std::min(k, words);

    for (int64_t w : stream.sample_without_replacement(words, k))
        pattern.flags[static_cast<size_t>(1 + w)] = 1;  // words start after CLS
    return pattern;
}

TokenSequence apply_mask(const TokenSequence& seq, const MaskPattern& pattern) {
    if (pattern.flags.size() != seq.ids.size())
        throw std::invalid_argument("mask pattern length mismatch");
    TokenSequence out = seq;
    for (size_t t = 0; t < out.ids.size(); ++t)
        if (pattern.flags[t]) out.ids[t] = Vocabulary::kMask;
    return out;
}

std::vector<int64_t> mask_positions(const TokenSequence& seq) {
    std::vector<int64_t> pos;
    for (int64_t t = 0; t < seq.content_len; ++t)
        if (seq.ids[static_cast<size_t>(t)] == Vocabulary::kMask) pos.push_back(t);
    return pos;
}

std::vector<uint8_t> content_mask(const TokenSequence& seq, int64_t t) {
    std::vector<uint8_t> mask(static_cast<size_t>(t), 0);
    for (int64_t p = 1; p < std::min(t, seq.content_len - 1); ++p) mask[static_cast<size_t>(p)] = 1;
    return mask;
}

int32_t sample_categorical(const std::vector<double>& dist, rng::Stream& stream) {
    double sum = 0.0;
    for (double d : dist) {
        if (!std::isfinite(d) || d < 0.0)
            throw std::domain_error("malformed generator distribution");
        sum += d;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw std::domain_error("generator distribution does not sum to 1");
    const double u = stream.next_double() * sum;
    double acc = 0.0;
    for (size_t j = 0; j < dist.size(); ++j) {
        acc += dist[j];
        if (u < acc) return static_cast<int32_t>(j);
    }
    // Rounding pushed u past the final cumulative value; take the last
    // positive-mass entry.
    for (size_t j = dist.size(); j-- > 0;)
        if (dist[j] > 0.0) return static_cast<int32_t>(j);
    throw std::domain_error("generator distribution has no mass");
}

EditedSequence generate_edit_with_distributions(const TokenSequence& x,
                                                const TokenSequence& x_masked,
                                                const std::vector<std::vector<double>>& dists,
                                                uint64_t rng_seed) {
    if (x_masked.ids.size() != x.ids.size() || x_masked.content_len != x.content_len)
        throw std::invalid_argument("masked sequence does not derive from the original");
    const auto positions = mask_positions(x_masked);
    if (positions.size() != dists.size())
        throw std::invalid_argument("one distribution per masked position required");

    EditedSequence edited;
    edited.origin = x;
    edited.seq = x_masked;
    rng::Stream stream(rng_seed);
    for (size_t i = 0; i < positions.size(); ++i)
        edited.seq.ids[static_cast<size_t>(positions[i])] = sample_categorical(dists[i], stream);

    edited.labels.assign(x.ids.size(), 0);
    for (size_t t = 0; t < x.ids.size(); ++t)
        edited.labels[t] = edited.seq.ids[t] != x.ids[t] ? 1 : 0;
    return edited;
}

EditedSequence generate_edit(const TokenSequence& x, const TokenSequence& x_masked,
                             const GeneratorModel& gen, uint64_t rng_seed) {
    return generate_edit_with_distributions(x, x_masked, gen.fill_distributions(x_masked),
                                            rng_seed);
}

EditedSequence insert_skeleton(const TokenSequence& x, double ratio, uint64_t rng_seed) {
    if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("insert ratio must be in [0,1]");
    const int64_t max_len = x.max_len();
    const int64_t words = x.content_tokens();
    const int64_t k = words > 0 ? scaled_count(ratio, words) : 0;

    EditedSequence edited;
    edited.origin = x;
    if (k == 0) {
        edited.seq = x;
        edited.labels.assign(x.ids.size(), 0);
        return edited;
    }

    // Word list plus an inserted-flag per slot; each insertion picks a gap in
    // the current list, so later insertions can land next to earlier ones.
    std::vector<int32_t> toks(x.ids.begin() + 1, x.ids.begin() + x.content_len - 1);
    std::vector<uint8_t> inserted(toks.size(), 0);
    rng::Stream stream(rng_seed);
    for (int64_t j = 0; j < k; ++j) {
        const size_t gap = static_cast<size_t>(stream.next_below(toks.size() + 1));
        toks.insert(toks.begin() + static_cast<int64_t>(gap), Vocabulary::kMask);
        inserted.insert(inserted.begin() + static_cast<int64_t>(gap), 1);
    }
    if (static_cast<int64_t>(toks.size()) + 2 > max_len) {
        toks.resize(static_cast<size_t>(max_len - 2));
        inserted.resize(static_cast<size_t>(max_len - 2));
    }

    edited.seq.ids.assign(static_cast<size_t>(max_len), Vocabulary::kPad);
    edited.labels.assign(static_cast<size_t>(max_len), 0);
    edited.seq.ids[0] = Vocabulary::kCls;
    for (size_t i = 0; i < toks.size(); ++i) {
        edited.seq.ids[i + 1] = toks[i];
        edited.labels[i + 1] = inserted[i];
    }
    edited.seq.ids[toks.size() + 1] = Vocabulary::kSep;
    edited.seq.content_len = static_cast<int64_t>(toks.size()) + 2;
    return edited;
}

void fill_masks(EditedSequence& edited, const std::vector<std::vector<double>>& dists,
                uint64_t rng_seed) {
    const auto positions = mask_positions(edited.seq);
    if (dists.size() != positions.size())
        throw std::invalid_argument("one distribution per masked position required");
    rng::Stream stream(rng_seed);
    for (size_t i = 0; i < positions.size(); ++i)
        edited.seq.ids[static_cast<size_t>(positions[i])] = sample_categorical(dists[i], stream);
}

EditedSequence insert_augment(const TokenSequence& x, double ratio, const GeneratorModel& gen,
                              uint64_t rng_seed) {
    EditedSequence edited = insert_skeleton(x, ratio, rng_seed);
    if (mask_positions(edited.seq).empty()) return edited;
    fill_masks(edited, gen.fill_distributions(edited.seq), rng::derive(rng_seed, kInsertFillTag));
    return edited;
}

EditedSequence delete_augment(const TokenSequence& x, double ratio, uint64_t rng_seed) {
    if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("delete ratio must be in [0,1]");
    const int64_t words = x.content_tokens();
    const int64_t k = words > 0 ? scaled_count(ratio, words) : 0;

    EditedSequence edited;
    edited.origin = x;
    if (k == 0) {
        edited.seq = x;
        edited.labels.assign(x.ids.size(), 0);
        return edited;
    }
    if (k >= words) throw std::invalid_argument("deletion would remove all content tokens");

    rng::Stream stream(rng_seed);
    const auto removed = stream.sample_without_replacement(words, k);
    std::vector<uint8_t> is_removed(static_cast<size_t>(words), 0);
    for (int64_t w : removed) is_removed[static_cast<size_t>(w)] = 1;

    edited.seq.ids.assign(x.ids.size(), Vocabulary::kPad);
    edited.labels.assign(x.ids.size(), 0);
    edited.seq.ids[0] = Vocabulary::kCls;
    int64_t out = 1;
    for (int64_t w = 0; w < words; ++w) {
        if (is_removed[static_cast<size_t>(w)]) continue;
        edited.seq.ids[static_cast<size_t>(out)] = x.ids[static_cast<size_t>(1 + w)];
        edited.labels[static_cast<size_t>(out)] = (w > 0 && is_removed[static_cast<size_t>(w - 1)]) ? 1 : 0;
        ++out;
    }
    edited.seq.ids[static_cast<size_t>(out)] = Vocabulary::kSep;
    edited.seq.content_len = out + 1;
    return edited;
}

}  // namespace sentdiff
