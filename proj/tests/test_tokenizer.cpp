#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ctxsent/error.hpp"
#include "ctxsent/tokenizer.hpp"

using namespace ctxsent;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("word split lowercases and strips punctuation") {
    auto words = Vocab::word_split("Harga BBM naik, rakyat resah!!!");
    REQUIRE(words.size() == 5);
    CHECK(words[0] == "harga");
    CHECK(words[1] == "bbm");
    CHECK(words[2] == "naik");
    CHECK(words[3] == "rakyat");
    CHECK(words[4] == "resah");
    CHECK(Vocab::word_split("   \t\n ").empty());
    CHECK(Vocab::word_split("a1b2").size() == 1);
}

TEST_CASE("vocab training orders by frequency then lexicographically") {
    std::vector<std::string> corpus = {"b b b a a c", "a c d"};
    Vocab v = Vocab::train(corpus, 8);
    // Specials occupy 0..3; then a(3), b(3), c(2), d(1).
    CHECK(v.size() == 8);
    CHECK(v.token_of(Vocab::kPad) == "[PAD]");
    CHECK(v.token_of(Vocab::kUnk) == "[UNK]");
    CHECK(v.token_of(Vocab::kCls) == "[CLS]");
    CHECK(v.token_of(Vocab::kSep) == "[SEP]");
    CHECK(v.token_of(4) == "a");
    CHECK(v.token_of(5) == "b");
    CHECK(v.token_of(6) == "c");
    CHECK(v.token_of(7) == "d");
    CHECK(v.id_of("a") == 4);
    CHECK(v.id_of("zzz") == Vocab::kUnk);
}

TEST_CASE("vocab truncates to target size keeping the most frequent") {
    std::vector<std::string> corpus = {"x x x y y z w v u"};
    Vocab v = Vocab::train(corpus, 8);
    CHECK(v.size() == 8);
    CHECK(v.id_of("x") == 4);
    CHECK(v.id_of("y") == 5);
    // Frequency ties resolve lexicographically: u, v before w, z.
    CHECK(v.id_of("u") == 6);
    CHECK(v.id_of("v") == 7);
    CHECK(v.id_of("w") == Vocab::kUnk);
    CHECK(v.id_of("z") == Vocab::kUnk);
}

TEST_CASE("vocab save/load round trip preserves ids and hash") {
    std::vector<std::string> corpus = {"merah putih biru", "merah putih", "merah"};
    Vocab v = Vocab::train(corpus, 16);
    auto path = temp_path("ctxsent_vocab_rt.txt");
    v.save(path);
    Vocab w = Vocab::load(path);
    CHECK(w.size() == v.size());
    CHECK(w.content_hash() == v.content_hash());
    for (int i = 0; i < v.size(); ++i) CHECK(w.token_of(i) == v.token_of(i));
    std::remove(path.c_str());
}

TEST_CASE("vocab load validates the special-token header") {
    auto path = temp_path("ctxsent_vocab_bad.txt");
    {
        FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("[PAD]\n[CLS]\n[UNK]\n[SEP]\nword\n", f); // CLS/UNK swapped
        std::fclose(f);
    }
    CHECK_THROWS_AS(Vocab::load(path), ValidationError);
    std::remove(path.c_str());
}

TEST_CASE("pair encoding layout: CLS context SEP text SEP padding") {
    Vocab v = Vocab::train({"aa bb cc dd ee"}, 16);
    Encoding e = encode_pair(v, "aa bb", "cc dd ee", 12);
    REQUIRE(e.token_ids.size() == 12);
    REQUIRE(e.segment_ids.size() == 12);
    REQUIRE(e.attention_mask.size() == 12);

    CHECK(e.token_ids[0] == Vocab::kCls);
    CHECK(e.token_ids[1] == v.id_of("aa"));
    CHECK(e.token_ids[2] == v.id_of("bb"));
    CHECK(e.token_ids[3] == Vocab::kSep);
    CHECK(e.token_ids[4] == v.id_of("cc"));
    CHECK(e.token_ids[5] == v.id_of("dd"));
    CHECK(e.token_ids[6] == v.id_of("ee"));
    CHECK(e.token_ids[7] == Vocab::kSep);
    for (int i = 8; i < 12; ++i) CHECK(e.token_ids[i] == Vocab::kPad);

    // Segment 0 covers CLS, context, first SEP; segment 1 the text span and
    // its SEP; padding stays 0.
    for (int i = 0; i <= 3; ++i) CHECK(e.segment_ids[i] == 0);
    for (int i = 4; i <= 7; ++i) CHECK(e.segment_ids[i] == 1);
    for (int i = 8; i < 12; ++i) CHECK(e.segment_ids[i] == 0);

    for (int i = 0; i <= 7; ++i) CHECK(e.attention_mask[i] == 1);
    for (int i = 8; i < 12; ++i) CHECK(e.attention_mask[i] == 0);
}

TEST_CASE("truncation trims the text tail first, then the context") {
    Vocab v = Vocab::train({"c1 c2 c3 t1 t2 t3 t4"}, 16);

    // Budget 8-3 = 5: context 3 + text 4 = 7 -> text loses its tail.
    Encoding e = encode_pair(v, "c1 c2 c3", "t1 t2 t3 t4", 8);
    CHECK(e.token_ids[1] == v.id_of("c1"));
    CHECK(e.token_ids[2] == v.id_of("c2"));
    CHECK(e.token_ids[3] == v.id_of("c3"));
    CHECK(e.token_ids[4] == Vocab::kSep);
    CHECK(e.token_ids[5] == v.id_of("t1"));
    CHECK(e.token_ids[6] == v.id_of("t2"));
    CHECK(e.token_ids[7] == Vocab::kSep);

    // At minimum length the text keeps exactly one token and the context
    // absorbs the rest of the cut.
    Encoding tiny = encode_pair(v, "c1 c2 c3 c1 c2 c3", "t1 t2 t3 t4", 8);
    CHECK(tiny.token_ids[0] == Vocab::kCls);
    // context keeps 4 of 6, text keeps 1.
    int sep_count = 0;
    for (int id : tiny.token_ids)
        if (id == Vocab::kSep) ++sep_count;
    CHECK(sep_count == 2);
    CHECK(tiny.token_ids[5] == Vocab::kSep);
    CHECK(tiny.token_ids[6] == v.id_of("t1"));
    CHECK(tiny.token_ids[7] == Vocab::kSep);
}

TEST_CASE("encoding rejects unusable inputs") {
    Vocab v = Vocab::train({"kata"}, 8);
    CHECK_THROWS_AS(encode_pair(v, "", "kata", 16), ValidationError);
    CHECK_THROWS_AS(encode_pair(v, "kata", "...", 16), ValidationError); // no word tokens
    CHECK_THROWS_AS(encode_pair(v, "kata", "kata", 4), ValidationError); // max_len too small
}

TEST_CASE("unknown words map to UNK, never crash") {
    Vocab v = Vocab::train({"dikenal"}, 8);
    Encoding e = encode_pair(v, "dikenal", "katabaru lain", 10);
    CHECK(e.token_ids[1] == v.id_of("dikenal"));
    CHECK(e.token_ids[3] == Vocab::kUnk);
    CHECK(e.token_ids[4] == Vocab::kUnk);
}

TEST_CASE("content hash detects drift") {
    Vocab a = Vocab::train({"satu dua tiga"}, 8);
    Vocab b = Vocab::train({"satu dua empat"}, 8);
    CHECK(a.content_hash() != b.content_hash());
}

} // TEST_SUITE
