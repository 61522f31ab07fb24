#include "sentdiff/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sentdiff/rng.hpp"

namespace sentdiff {

namespace {

const char* kSpecialTokens[] = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};

std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

Vocabulary::Vocabulary() {
    for (const char* tok : kSpecialTokens) add_token(tok);
}

int32_t Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
}

void Vocabulary::add_token(const std::string& token) {
    if (token_to_id_.count(token)) throw std::invalid_argument("duplicate vocabulary token: " + token);
    token_to_id_[token] = static_cast<int32_t>(id_to_token_.size());
    id_to_token_.push_back(token);
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open vocabulary file for writing: " + path);
    for (const auto& tok : id_to_token_) out << tok << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
    Vocabulary vocab;
    std::string line;
    int32_t idx = 0;
    while (std::getline(in, line)) {
        if (idx < kNumSpecials) {
            if (line != kSpecialTokens[idx])
                throw std::runtime_error("vocabulary file missing special token at line " +
                                         std::to_string(idx));
        } else {
            vocab.add_token(line);
        }
        ++idx;
    }
    if (idx < kNumSpecials) throw std::runtime_error("vocabulary file truncated: " + path);
    return vocab;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream iss(lowercase(text));
    std::string tok;
    while (iss >> tok) tokens.push_back(tok);
    return tokens;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

Vocabulary build_vocab_from_lines(const std::vector<std::string>& lines, int64_t min_freq) {
    std::unordered_map<std::string, int64_t> freq;
    bool any_token = false;
    for (const auto& line : lines) {
        for (const auto& tok : tokenize(line)) {
            ++freq[tok];
            any_token = true;
        }
    }
    if (!any_token) throw std::runtime_error("empty corpus");

    std::vector<std::pair<std::string, int64_t>> kept;
    kept.reserve(freq.size());
    for (auto& [tok, n] : freq) {
        if (n >= min_freq) kept.emplace_back(tok, n);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    for (auto& [tok, n] : kept) vocab.add_token(tok);
    return vocab;
}

Vocabulary build_vocab(const std::string& corpus_path, int64_t min_freq) {
    return build_vocab_from_lines(read_lines(corpus_path), min_freq);
}

TokenSequence encode(const std::string& text, const Vocabulary& vocab, int64_t max_len) {
    if (max_len < 3) throw std::invalid_argument("max_len must be at least 3");
    TokenSequence seq;
    seq.ids.assign(static_cast<size_t>(max_len), Vocabulary::kPad);
    seq.ids[0] = Vocabulary::kCls;
    int64_t pos = 1;
    for (const auto& tok : tokenize(text)) {
        if (pos > max_len - 2) break;
        seq.ids[static_cast<size_t>(pos++)] = vocab.id(tok);
    }
    seq.ids[static_cast<size_t>(pos++)] = Vocabulary::kSep;
    seq.content_len = pos;
    return seq;
}

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
    std::vector<std::string> tokens;
    for (int64_t t = 0; t < seq.content_len; ++t) {
        int32_t id = seq.ids[static_cast<size_t>(t)];
        if (!Vocabulary::is_special(id)) tokens.push_back(vocab.token(id));
    }
    return tokens;
}

std::vector<SentenceBatch> make_batches(const std::vector<TokenSequence>& sequences,
                                        int64_t batch_size, uint64_t shuffle_seed) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (static_cast<int64_t>(sequences.size()) < batch_size)
        throw std::runtime_error("corpus smaller than batch");

    std::vector<int64_t> order(sequences.size());
    std::iota(order.begin(), order.end(), int64_t{0});
    rng::Stream stream(shuffle_seed);
    stream.shuffle(order);

    const int64_t num_batches = static_cast<int64_t>(sequences.size()) / batch_size;
    std::vector<SentenceBatch> batches(static_cast<size_t>(num_batches));
    for (int64_t b = 0; b < num_batches; ++b) {
        auto& batch = batches[static_cast<size_t>(b)];
        batch.sequences.reserve(static_cast<size_t>(batch_size));
        for (int64_t i = 0; i < batch_size; ++i) {
            batch.sequences.push_back(sequences[static_cast<size_t>(order[static_cast<size_t>(b * batch_size + i)])]);
        }
    }
    return batches;
}

}  // namespace sentdiff
