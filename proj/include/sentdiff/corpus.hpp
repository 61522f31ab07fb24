#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace sentdiff {

// Token universe for all pipelines. Ids are stable and deterministic:
// specials first, then corpus tokens by descending frequency, ties broken
// lexicographically.
class Vocabulary {
public:
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kCls = 1;
    static constexpr int32_t kSep = 2;
    static constexpr int32_t kMask = 3;
    static constexpr int32_t kUnk = 4;
    static constexpr int32_t kNumSpecials = 5;

    Vocabulary();

    int64_t size() const { return static_cast<int64_t>(id_to_token_.size()); }
    const std::string& token(int32_t id) const { return id_to_token_.at(static_cast<size_t>(id)); }
    int32_t id(const std::string& token) const;  // kUnk for unknown tokens
    bool contains(const std::string& token) const;
    static bool is_special(int32_t id) { return id < kNumSpecials; }

    void add_token(const std::string& token);

    // Serialized form: one token per line, line number = id.
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int32_t> token_to_id_;
};

// Integer-encoded sentence: [CLS] tokens... [SEP] PAD...; ids.size() is the
// model max length, content_len counts everything before the padding.
struct TokenSequence {
    std::vector<int32_t> ids;
    int64_t content_len = 0;

    int64_t max_len() const { return static_cast<int64_t>(ids.size()); }
    // Number of real word tokens (excludes CLS and SEP).
    int64_t content_tokens() const { return content_len - 2; }
};

struct SentenceBatch {
    std::vector<TokenSequence> sequences;
    int64_t size() const { return static_cast<int64_t>(sequences.size()); }
};

// Whitespace tokenization with lowercasing.
std::vector<std::string> tokenize(const std::string& text);

// Builds a vocabulary from a UTF-8 file with one sentence per line, keeping
// tokens with frequency >= min_freq. Throws on unreadable or empty corpora.
Vocabulary build_vocab(const std::string& corpus_path, int64_t min_freq);

Vocabulary build_vocab_from_lines(const std::vector<std::string>& lines, int64_t min_freq);

// [CLS] + ids (UNK for OOV) truncated to max_len-2 + [SEP], PAD-filled.
TokenSequence encode(const std::string& text, const Vocabulary& vocab, int64_t max_len);

// Token strings of the content positions (specials dropped).
std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab);

std::vector<std::string> read_lines(const std::string& path);

// Deterministic shuffle given the seed; the final partial batch is dropped so
// every batch carries exactly `batch_size` in-batch negatives.
std::vector<SentenceBatch> make_batches(const std::vector<TokenSequence>& sequences,
                                        int64_t batch_size, uint64_t shuffle_seed);

}  // namespace sentdiff
