#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "radreport/corpus.hpp"
#include "radreport/tokenizer.hpp"

using namespace radreport;

namespace {

std::vector<std::string> domain_texts(int n_reports, uint64_t seed) {
    std::vector<std::string> texts;
    for (const auto& r : generate_corpus(CorpusSpec::defaults(n_reports, seed))) {
        texts.push_back(r.text);
    }
    return texts;
}

// Generic English with full letter coverage and no imaging vocabulary.
std::vector<std::string> generic_texts() {
    const std::string paragraph =
        "the quick brown fox jumps over the lazy dog while the village people "
        "gather in the market square to trade grain and wool for copper pots "
        "every morning a group of children runs along the river bank counting "
        "boats and the old gardener trims the hedge near the gate before noon "
        "music from the main hall drifts across the lawn as members of the "
        "club argue about the margin of error in their last game of cards";
    return std::vector<std::string>(40, paragraph);
}

std::string piece_string(const std::vector<int32_t>& pieces, const Vocab& v) {
    std::string out;
    for (auto id : pieces) {
        if (!out.empty()) out += ' ';
        out += v.tokens[static_cast<size_t>(id)];
    }
    return out;
}

}  // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("single-symbol closure on a one-word corpus") {
    const Vocab v = train_wordpiece({"aaa aaa aaa aaa"}, 32, 2);
    for (int32_t i = Vocab::kNumSpecials; i < v.size(); ++i) {
        for (char c : v.tokens[static_cast<size_t>(i)]) {
            CHECK((c == 'a' || c == '#'));
        }
    }
    CHECK(v.id_of("a") >= 0);
    CHECK(v.id_of("aaa") >= 0);
    const auto pieces = wordpiece_pieces("aaa", v);
    REQUIRE(pieces.size() == 1);
    CHECK(v.tokens[static_cast<size_t>(pieces[0])] == "aaa");
}

TEST_CASE("domain vocabulary keeps mammogram whole, generic splits it") {
    const Vocab domain = train_wordpiece(domain_texts(120, 17), 800, 2);
    const auto domain_pieces = wordpiece_pieces("mammogram", domain);
    REQUIRE(domain_pieces.size() == 1);
    CHECK(domain.tokens[static_cast<size_t>(domain_pieces[0])] == "mammogram");

    const Vocab generic = train_wordpiece(generic_texts(), 800, 2);
    const auto generic_pieces = wordpiece_pieces("mammogram", generic);
    INFO("generic pieces: " << piece_string(generic_pieces, generic));
    REQUIRE(generic_pieces.size() >= 2);
    CHECK(generic.tokens[static_cast<size_t>(generic_pieces[0])].rfind("##", 0) != 0);
    for (size_t i = 1; i < generic_pieces.size(); ++i) {
        CHECK(generic.tokens[static_cast<size_t>(generic_pieces[i])].rfind("##", 0) == 0);
    }
}

TEST_CASE("greedy longest-match: no longer in-vocab prefix exists at any step") {
    const Vocab v = train_wordpiece(domain_texts(60, 23), 500, 2);
    const std::vector<std::string> words = {"mammogram", "ultrasound", "bilateral",
                                            "enhancement", "screening", "benign"};
    for (const auto& word : words) {
        const auto pieces = wordpiece_pieces(word, v);
        if (pieces.empty()) continue;
        size_t start = 0;
        for (auto id : pieces) {
            const std::string& tok = v.tokens[static_cast<size_t>(id)];
            const size_t len = tok.size() - (start > 0 ? 2 : 0);
            // brute force: every longer prefix must be absent from the vocab
            for (size_t longer = len + 1; longer <= word.size() - start; ++longer) {
                std::string cand = word.substr(start, longer);
                if (start > 0) cand = "##" + cand;
                CHECK(v.id_of(cand) < 0);
            }
            start += len;
        }
        CHECK(start == word.size());
    }
}

TEST_CASE("piece count never grows when the vocab budget grows") {
    const auto texts = domain_texts(100, 29);
    const std::vector<std::string> words = {"mammogram",   "ultrasound", "bilateral",
                                            "enhancement", "parenchymal", "calcification",
                                            "screening",   "biopsy"};
    std::vector<size_t> prev_counts(words.size(), SIZE_MAX);
    for (int budget : {200, 400, 800, 1600}) {
        const Vocab v = train_wordpiece(texts, budget, 2);
        for (size_t i = 0; i < words.size(); ++i) {
            const auto pieces = wordpiece_pieces(words[i], v);
            REQUIRE(!pieces.empty());
            INFO(words[i] << " at budget " << budget);
            CHECK(pieces.size() <= prev_counts[i]);
            prev_counts[i] = pieces.size();
        }
    }
}

TEST_CASE("encode basics") {
    const Vocab v = train_wordpiece(domain_texts(60, 31), 500, 2);

    SUBCASE("empty text") {
        const auto seq = encode("", v, 8);
        CHECK(seq.ids == std::vector<int32_t>{Vocab::kCls, Vocab::kSep, 0, 0, 0, 0, 0, 0});
        CHECK(seq.attention_mask == std::vector<int32_t>{1, 1, 0, 0, 0, 0, 0, 0});
    }
    SUBCASE("unsplittable word becomes a single UNK") {
        const auto seq = encode("\xC3\xA9\xC3\xA9", v, 8);  // accented chars absent from corpus
        CHECK(seq.ids[1] == Vocab::kUnk);
        CHECK(seq.ids[2] == Vocab::kSep);
    }
    SUBCASE("round trip for in-vocab text") {
        const std::string text = "bilateral mammogram";
        const auto seq = encode(text, v, 16);
        CHECK(decode(seq.ids, v) == text);
    }
    SUBCASE("lowercasing is applied and idempotent") {
        const auto a = encode("BILATERAL MAMMOGRAM", v, 16);
        const auto b = encode("bilateral mammogram", v, 16);
        CHECK(a.ids == b.ids);
    }
    SUBCASE("truncation keeps the earliest pieces") {
        const auto seq = encode("bilateral mammogram and targeted ultrasound", v, 6);
        CHECK(seq.ids.size() == 6);
        CHECK(seq.ids[0] == Vocab::kCls);
        CHECK(seq.ids[5] == Vocab::kSep);
        for (auto m : seq.attention_mask) CHECK(m == 1);
    }
    SUBCASE("mask marks exactly the non-PAD positions") {
        const auto seq = encode("benign cyst.", v, 12);
        for (size_t i = 0; i < seq.ids.size(); ++i) {
            CHECK(seq.attention_mask[i] == (seq.ids[i] != Vocab::kPad ? 1 : 0));
        }
    }
}

TEST_CASE("decode basics") {
    Vocab v = make_vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "ma", "##mm", "gram"});
    SUBCASE("prefix join") {
        CHECK(decode({Vocab::kCls, 5, 6, Vocab::kSep}, v) == "mamm");
    }
    SUBCASE("all pad is empty") {
        CHECK(decode({0, 0, 0}, v).empty());
    }
    SUBCASE("word boundary between plain tokens") {
        CHECK(decode({5, 7}, v) == "ma gram");
    }
    SUBCASE("out of range id throws") {
        CHECK_THROWS_AS(decode({99}, v), std::out_of_range);
    }
}

TEST_CASE("vocab persistence") {
    const auto path =
        (std::filesystem::temp_directory_path() / "radreport_vocab_test.txt").string();
    const Vocab v = train_wordpiece(domain_texts(40, 37), 300, 2);

    SUBCASE("round trip identity") {
        save_vocab(v, path);
        const Vocab loaded = load_vocab(path);
        CHECK(loaded.tokens == v.tokens);
        CHECK(loaded.content_hash() == v.content_hash());
    }
    SUBCASE("specials occupy lines 0..4") {
        save_vocab(v, path);
        std::ifstream in(path);
        std::string line;
        for (const auto& expected : Vocab::special_tokens()) {
            REQUIRE(std::getline(in, line));
            CHECK(line == expected);
        }
    }
    SUBCASE("empty file is an error") {
        std::ofstream(path).close();
        CHECK_THROWS(load_vocab(path));
    }
    SUBCASE("duplicate line is an error") {
        std::ofstream out(path);
        out << "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\na\n";
        out.close();
        CHECK_THROWS(load_vocab(path));
    }
    std::remove(path.c_str());
}

TEST_CASE("training rejects degenerate inputs") {
    CHECK_THROWS_AS(train_wordpiece({}, 100, 2), ConfigError);
    CHECK_THROWS_AS(train_wordpiece({"   "}, 100, 2), ConfigError);
    CHECK_THROWS_AS(train_wordpiece({"abc abc"}, 5, 2), ConfigError);  // budget below alphabet
}

}  // TEST_SUITE
