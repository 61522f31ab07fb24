#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sentdiff/corpus.hpp"
#include "sentdiff/generator.hpp"
#include "sentdiff/rng.hpp"

namespace sentdiff {

// Which positions of a sequence get masked. Flags align with seq.ids and are
// always 0 at CLS/SEP/PAD positions.
struct MaskPattern {
    std::vector<uint8_t> flags;
    double ratio = 0.0;

    int64_t count() const {
        int64_t c = 0;
        for (uint8_t f : flags) c += f;
        return c;
    }
};

// Generator-edited sequence plus per-token replaced/original labels.
// labels[t] = 1 iff position t of seq differs from the corresponding original
// token (for insert: the token was inserted; for delete: a deleted token
// immediately preceded it).
struct EditedSequence {
    TokenSequence seq;
    std::vector<uint8_t> labels;
    TokenSequence origin;
};

// Round-half-up of ratio * content.
inline int64_t scaled_count(double ratio, int64_t content) {
    return static_cast<int64_t>(std::floor(ratio * static_cast<double>(content) + 0.5));
}

// Uniform sample without replacement of ratio * content word positions,
// stochastically rounded so the masked fraction is unbiased; at least one
// position when ratio > 0 and any word exists.
MaskPattern sample_mask(const TokenSequence& seq, double ratio, uint64_t rng_seed);

// x' = x with MASK written at flagged positions.
TokenSequence apply_mask(const TokenSequence& seq, const MaskPattern& pattern);

// Fills each MASK slot of x_masked by sampling the generator distribution at
// temperature 1; labels by elementwise comparison against x.
EditedSequence generate_edit(const TokenSequence& x, const TokenSequence& x_masked,
                             const GeneratorModel& gen, uint64_t rng_seed);

// Same as generate_edit but with the generator distributions precomputed (one
// per MASK position, ascending). Lets callers batch the generator forward.
EditedSequence generate_edit_with_distributions(const TokenSequence& x,
                                                const TokenSequence& x_masked,
                                                const std::vector<std::vector<double>>& dists,
                                                uint64_t rng_seed);

// Inserts round(ratio * content) MASK tokens at uniform random word slots,
// fills them with the generator, labels inserted positions 1. Truncates from
// the end if the sequence would exceed its max length.
EditedSequence insert_augment(const TokenSequence& x, double ratio, const GeneratorModel& gen,
                              uint64_t rng_seed);

// Builds the insertion skeleton only (MASK tokens in place, labels set);
// the caller fills the MASK slots. Used to batch generator forwards.
EditedSequence insert_skeleton(const TokenSequence& x, double ratio, uint64_t rng_seed);

// Samples one distribution per MASK slot of edited.seq, in position order.
void fill_masks(EditedSequence& edited, const std::vector<std::vector<double>>& dists,
                uint64_t rng_seed);

// Seed tag separating insert-fill sampling from gap placement.
inline constexpr uint64_t kInsertFillTag = 0x1f111u;

// Removes round(ratio * content) words; labels a surviving token 1 iff the
// original token immediately before it was deleted.
EditedSequence delete_augment(const TokenSequence& x, double ratio, uint64_t rng_seed);

// Samples a token id from a categorical distribution. Validates that the
// distribution is finite and sums to 1 within 1e-6.
int32_t sample_categorical(const std::vector<double>& dist, rng::Stream& stream);

// Positions of MASK tokens within the content of a sequence.
std::vector<int64_t> mask_positions(const TokenSequence& seq);

// 1 at word positions (excludes CLS, SEP, PAD) for a sequence padded to t.
std::vector<uint8_t> content_mask(const TokenSequence& seq, int64_t t);

}  // namespace sentdiff
