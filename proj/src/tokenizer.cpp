#include "radreport/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

#include "radreport/corpus.hpp"

namespace radreport {

const std::vector<std::string>& Vocab::special_tokens() {
    static const std::vector<std::string> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                      "[MASK]"};
    return specials;
}

int32_t Vocab::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

void Vocab::rebuild_index() {
    index_.clear();
    max_token_chars_ = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        index_.emplace(tokens[i], static_cast<int32_t>(i));
        max_token_chars_ = std::max(max_token_chars_, tokens[i].size());
    }
}

uint64_t Vocab::content_hash() const {
    uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](char c) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    };
    for (const auto& t : tokens) {
        for (char c : t) mix(c);
        mix('\n');
    }
    return h;
}

Vocab make_vocab(std::vector<std::string> tokens) {
    const auto& specials = Vocab::special_tokens();
    if (tokens.size() < specials.size()) {
        throw std::invalid_argument("vocabulary must contain the 5 special tokens");
    }
    for (size_t i = 0; i < specials.size(); ++i) {
        if (tokens[i] != specials[i]) {
            throw std::invalid_argument("special tokens must occupy ids 0..4 in order");
        }
    }
    Vocab v;
    v.tokens = std::move(tokens);
    v.rebuild_index();
    if (v.index_.size() != v.tokens.size()) {
        throw std::invalid_argument("duplicate token in vocabulary");
    }
    return v;
}

// ---------------------------------------------------------------------------
// pre-tokenization

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

// UTF-8 code point boundaries (continuation bytes have the 10xxxxxx form).
bool is_continuation_byte(unsigned char c) { return (c & 0xC0) == 0x80; }

std::vector<std::string> split_code_points(const std::string& s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        size_t j = i + 1;
        while (j < s.size() && is_continuation_byte(static_cast<unsigned char>(s[j]))) ++j;
        out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

std::vector<std::string> pretokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            words.push_back(current);
            current.clear();
        }
    };
    size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            flush();
            ++i;
        } else if (is_word_char(c)) {
            size_t j = i + 1;
            while (j < text.size() && is_continuation_byte(static_cast<unsigned char>(text[j])))
                ++j;
            if (c < 0x80) {
                current.push_back(static_cast<char>(std::tolower(c)));
            } else {
                current.append(text, i, j - i);
            }
            i = j;
        } else {
            // punctuation: its own single-character word
            flush();
            words.push_back(std::string(1, static_cast<char>(c)));
            ++i;
        }
    }
    flush();
    return words;
}

// ---------------------------------------------------------------------------
// WordPiece training

namespace {

struct WordEntry {
    std::vector<std::string> symbols;
    int64_t count = 0;
};

std::string strip_continuation(const std::string& s) {
    return s.rfind("##", 0) == 0 ? s.substr(2) : s;
}

}  // namespace

Vocab train_wordpiece(const std::vector<std::string>& corpus_texts, int vocab_size,
                      int min_freq) {
    if (min_freq < 1) throw ConfigError("min_freq must be at least 1");

    std::map<std::string, int64_t> word_counts;
    for (const auto& text : corpus_texts) {
        for (const auto& w : pretokenize(text)) ++word_counts[w];
    }
    if (word_counts.empty()) throw ConfigError("cannot train a tokenizer on an empty corpus");

    // Alphabet: every code point seen at least min_freq times, in both
    // word-initial and continuation form.
    std::map<std::string, int64_t> char_counts;
    for (const auto& [word, count] : word_counts) {
        for (const auto& cp : split_code_points(word)) char_counts[cp] += count;
    }
    std::vector<std::string> alphabet;
    for (const auto& [cp, count] : char_counts) {
        if (count >= min_freq) alphabet.push_back(cp);
    }

    std::vector<std::string> tokens = Vocab::special_tokens();
    for (const auto& cp : alphabet) tokens.push_back(cp);
    for (const auto& cp : alphabet) tokens.push_back("##" + cp);
    if (static_cast<size_t>(vocab_size) <= tokens.size()) {
        throw ConfigError("vocab_size must exceed specials plus alphabet (" +
                          std::to_string(tokens.size()) + ")");
    }

    // Words containing dropped (rare) characters cannot take part in merges;
    // they encode to [UNK] later.
    std::vector<WordEntry> entries;
    for (const auto& [word, count] : word_counts) {
        WordEntry e;
        e.count = count;
        bool ok = true;
        const auto cps = split_code_points(word);
        for (size_t i = 0; i < cps.size(); ++i) {
            if (char_counts[cps[i]] < min_freq) {
                ok = false;
                break;
            }
            e.symbols.push_back(i == 0 ? cps[i] : "##" + cps[i]);
        }
        if (ok) entries.push_back(std::move(e));
    }

    std::unordered_map<std::string, bool> token_set;
    for (const auto& t : tokens) token_set[t] = true;

    while (static_cast<int>(tokens.size()) < vocab_size) {
        std::map<std::pair<std::string, std::string>, int64_t> pair_counts;
        std::map<std::string, int64_t> symbol_counts;
        for (const auto& e : entries) {
            for (size_t i = 0; i < e.symbols.size(); ++i) {
                symbol_counts[e.symbols[i]] += e.count;
                if (i + 1 < e.symbols.size()) {
                    pair_counts[{e.symbols[i], e.symbols[i + 1]}] += e.count;
                }
            }
        }

        // Likelihood gain of merging (a,b): count(ab) / (count(a)count(b)).
        bool found = false;
        double best_score = 0.0;
        std::pair<std::string, std::string> best_pair;
        std::string best_merged;
        for (const auto& [pair, count] : pair_counts) {
            if (count < min_freq) continue;
            const double score =
                static_cast<double>(count) /
                (static_cast<double>(symbol_counts[pair.first]) *
                 static_cast<double>(symbol_counts[pair.second]));
            const std::string merged = pair.first + strip_continuation(pair.second);
            if (!found || score > best_score ||
                (score == best_score && merged < best_merged)) {
                found = true;
                best_score = score;
                best_pair = pair;
                best_merged = merged;
            }
        }
        if (!found) break;

        // Two merge paths can occasionally produce the same string; the
        // rewrite still applies but the token is only emitted once.
        if (!token_set[best_merged]) {
            token_set[best_merged] = true;
            tokens.push_back(best_merged);
        }
        for (auto& e : entries) {
            std::vector<std::string> merged_symbols;
            size_t i = 0;
            while (i < e.symbols.size()) {
                if (i + 1 < e.symbols.size() && e.symbols[i] == best_pair.first &&
                    e.symbols[i + 1] == best_pair.second) {
                    merged_symbols.push_back(best_merged);
                    i += 2;
                } else {
                    merged_symbols.push_back(e.symbols[i]);
                    ++i;
                }
            }
            e.symbols = std::move(merged_symbols);
        }
    }

    return make_vocab(std::move(tokens));
}

// ---------------------------------------------------------------------------
// encoding / decoding

std::vector<int32_t> wordpiece_pieces(const std::string& word, const Vocab& vocab) {
    std::vector<int32_t> pieces;
    size_t start = 0;
    while (start < word.size()) {
        int32_t match = -1;
        size_t match_len = 0;
        for (size_t len = word.size() - start; len >= 1; --len) {
            std::string candidate = word.substr(start, len);
            if (start > 0) candidate = "##" + candidate;
            const int32_t id = vocab.id_of(candidate);
            if (id >= 0) {
                match = id;
                match_len = len;
                break;
            }
        }
        if (match < 0) return {};
        pieces.push_back(match);
        start += match_len;
    }
    return pieces;
}

TokenSequence encode(const std::string& text, const Vocab& vocab, int max_seq_len) {
    if (max_seq_len < 2) throw std::invalid_argument("max_seq_len must be at least 2");

    std::vector<int32_t> body;
    for (const auto& word : pretokenize(text)) {
        const auto pieces = wordpiece_pieces(word, vocab);
        if (pieces.empty()) {
            body.push_back(Vocab::kUnk);
        } else {
            body.insert(body.end(), pieces.begin(), pieces.end());
        }
    }
    const size_t budget = static_cast<size_t>(max_seq_len) - 2;
    if (body.size() > budget) body.resize(budget);

    TokenSequence seq;
    seq.ids.reserve(static_cast<size_t>(max_seq_len));
    seq.ids.push_back(Vocab::kCls);
    seq.ids.insert(seq.ids.end(), body.begin(), body.end());
    seq.ids.push_back(Vocab::kSep);
    seq.ids.resize(static_cast<size_t>(max_seq_len), Vocab::kPad);
    seq.attention_mask.assign(static_cast<size_t>(max_seq_len), 0);
    for (size_t i = 0; i < body.size() + 2; ++i) seq.attention_mask[i] = 1;
    return seq;
}

std::string decode(const std::vector<int32_t>& ids, const Vocab& vocab) {
    std::string out;
    for (int32_t id : ids) {
        if (id < 0 || id >= vocab.size()) {
            throw std::out_of_range("token id out of range: " + std::to_string(id));
        }
        if (vocab.is_special(id)) continue;
        const std::string& tok = vocab.tokens[static_cast<size_t>(id)];
        if (tok.rfind("##", 0) == 0) {
            out += tok.substr(2);
        } else {
            if (!out.empty()) out += ' ';
            out += tok;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// persistence: one token per line, line number = id

void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& t : vocab.tokens) out << t << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    if (tokens.empty()) throw ParseError("empty vocabulary file", 1);
    try {
        return make_vocab(std::move(tokens));
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("invalid vocabulary file ") + path + ": " +
                                 e.what());
    }
}

}  // namespace radreport
