#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace radreport {

// Uncased WordPiece vocabulary. Continuation pieces carry the "##" prefix,
// specials occupy ids 0..4.
struct Vocab {
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kUnk = 1;
    static constexpr int32_t kCls = 2;
    static constexpr int32_t kSep = 3;
    static constexpr int32_t kMask = 4;
    static constexpr int kNumSpecials = 5;

    std::vector<std::string> tokens;

    int32_t size() const { return static_cast<int32_t>(tokens.size()); }
    int32_t id_of(const std::string& token) const;
    bool is_special(int32_t id) const { return id >= 0 && id < kNumSpecials; }

    // FNV-1a over the token list; recorded in checkpoint headers so a
    // checkpoint can be matched to the vocabulary it was trained with.
    uint64_t content_hash() const;

    void rebuild_index();

    static const std::vector<std::string>& special_tokens();

private:
    std::unordered_map<std::string, int32_t> index_;
    size_t max_token_chars_ = 0;
    friend Vocab make_vocab(std::vector<std::string> tokens);
};

// Validates the special block and duplicate-freeness, builds the lookup
// index.
Vocab make_vocab(std::vector<std::string> tokens);

struct TokenSequence {
    std::vector<int32_t> ids;
    std::vector<int32_t> attention_mask;

    int32_t length() const { return static_cast<int32_t>(ids.size()); }
};

// Lowercased words with punctuation isolated as single-character words.
std::vector<std::string> pretokenize(const std::string& text);

// Greedy likelihood-gain pair merging (score = count(ab)/(count(a)count(b)))
// over the pretokenized corpus; ties broken by the lexicographically
// smallest merged token. Emits min(vocab_size, attainable) tokens.
Vocab train_wordpiece(const std::vector<std::string>& corpus_texts, int vocab_size,
                      int min_freq);

// Greedy longest-match-first pieces for one (already lowercased) word;
// empty result means the word cannot be covered and becomes [UNK].
std::vector<int32_t> wordpiece_pieces(const std::string& word, const Vocab& vocab);

TokenSequence encode(const std::string& text, const Vocab& vocab, int max_seq_len);

std::string decode(const std::vector<int32_t>& ids, const Vocab& vocab);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

}  // namespace radreport
