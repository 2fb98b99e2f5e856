#include "sqe/corpus.hpp"
#include "sqe/vocab.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace sqe;
using Catch::Approx;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "sqe_test_data";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string write_temp(const std::string & name, const std::string & content) {
    const auto path = temp_dir() / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path.string();
}

} // namespace

TEST_CASE("build_vocab ordering and counts") {
    const Vocab v = Vocab::build({"a b b"}, TokenMode::Whitespace, 1);
    // reserved block, then b (count 2), then a (count 1)
    REQUIRE(v.size() == kNumReserved + 2);
    REQUIRE(v.token(kNumReserved) == "b");
    REQUIRE(v.count(kNumReserved) == 2);
    REQUIRE(v.token(kNumReserved + 1) == "a");
    REQUIRE(v.count(kNumReserved + 1) == 1);
}

TEST_CASE("build_vocab char mode") {
    const Vocab v = Vocab::build({"aa"}, TokenMode::Char, 1);
    REQUIRE(v.size() == kNumReserved + 1);
    REQUIRE(v.token(kNumReserved) == "a");
    REQUIRE(v.count(kNumReserved) == 2);
}

TEST_CASE("build_vocab min_count folds into UNK") {
    const Vocab v = Vocab::build({"a b b"}, TokenMode::Whitespace, 3);
    REQUIRE(v.size() == kNumReserved);
    REQUIRE(v.count(UNK) == 3);
    REQUIRE(v.id_of("a") == UNK);
    REQUIRE(v.id_of("b") == UNK);
}

TEST_CASE("build_vocab rejects empty corpus") {
    REQUIRE_THROWS_AS(Vocab::build({}, TokenMode::Whitespace, 1), invalid_input);
}

TEST_CASE("vocab ties break lexicographically") {
    const Vocab v = Vocab::build({"z y x"}, TokenMode::Whitespace, 1);
    REQUIRE(v.token(kNumReserved) == "x");
    REQUIRE(v.token(kNumReserved + 1) == "y");
    REQUIRE(v.token(kNumReserved + 2) == "z");
}

TEST_CASE("encode decode round trip") {
    const Vocab v = Vocab::build({"a b"}, TokenMode::Whitespace, 1);
    REQUIRE(v.decode(v.encode("b a")) == "b a");
    REQUIRE(v.encode("zzz")[0] == UNK);
    REQUIRE(v.encode("").empty());

    const Vocab c = Vocab::build({"ab cd"}, TokenMode::Char, 1);
    REQUIRE(c.decode(c.encode("ab cd")) == "ab cd");
}

TEST_CASE("vocab ids and frequency table are a pure function of the corpus") {
    const std::vector<std::string> corpus = {"c a a", "b b c c"};
    const Vocab v1 = Vocab::build(corpus, TokenMode::Whitespace, 1);
    const Vocab v2 = Vocab::build(corpus, TokenMode::Whitespace, 1);
    REQUIRE(v1.serialize() == v2.serialize());
    const FrequencyTable f1 = unigram_distribution(v1);
    const FrequencyTable f2 = unigram_distribution(v2);
    REQUIRE(f1.probs == f2.probs);
}

TEST_CASE("unigram distribution") {
    SECTION("proportional to counts") {
        const Vocab v = Vocab::build({"a a a b"}, TokenMode::Whitespace, 1);
        const FrequencyTable t = unigram_distribution(v);
        REQUIRE(t.probs[v.id_of("a")] == Approx(0.75));
        REQUIRE(t.probs[v.id_of("b")] == Approx(0.25));
        for (int id = 0; id < kNumReserved; ++id) {
            REQUIRE(t.probs[id] == 0.0);
        }
    }
    SECTION("hand normalization") {
        const Vocab v = Vocab::build({"a b c c"}, TokenMode::Whitespace, 1);
        const FrequencyTable t = unigram_distribution(v);
        REQUIRE(t.probs[v.id_of("a")] == Approx(0.25));
        REQUIRE(t.probs[v.id_of("b")] == Approx(0.25));
        REQUIRE(t.probs[v.id_of("c")] == Approx(0.5));
    }
    SECTION("sums to one") {
        const Vocab v = Vocab::build({"q w e r t y u i o p"}, TokenMode::Whitespace, 1);
        const FrequencyTable t = unigram_distribution(v);
        double sum = 0.0;
        for (double p : t.probs) {
            sum += p;
        }
        REQUIRE(sum == Approx(1.0).margin(1e-9));
    }
    SECTION("all-zero counts rejected") {
        // every token below min_count: only UNK carries counts
        const Vocab v = Vocab::build({"a b"}, TokenMode::Whitespace, 5);
        REQUIRE_THROWS_AS(unigram_distribution(v), invalid_input);
    }
}

TEST_CASE("vocab file round trip is byte identical") {
    const Vocab v = Vocab::build({"a b b c c c"}, TokenMode::Whitespace, 1);
    const std::string path = write_temp("vocab_rt.tsv", "");
    v.save(path);
    const Vocab loaded = Vocab::load(path, TokenMode::Whitespace);
    REQUIRE(loaded.serialize() == v.serialize());
    REQUIRE(loaded.size() == v.size());
    for (int id = 0; id < v.size(); ++id) {
        REQUIRE(loaded.token(id) == v.token(id));
        REQUIRE(loaded.count(id) == v.count(id));
    }
    const std::string path2 = write_temp("vocab_rt2.tsv", "");
    loaded.save(path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    REQUIRE(sa == sb);
}

TEST_CASE("load_parallel") {
    const Vocab v = Vocab::build({"hello world"}, TokenMode::Whitespace, 1);
    SECTION("single example") {
        const std::string path = write_temp("par_ok.tsv", "hello\tworld\n");
        const auto examples = load_parallel(path, v);
        REQUIRE(examples.size() == 1);
        REQUIRE(examples[0].input_ids == std::vector<int>{v.id_of("hello")});
        REQUIRE(examples[0].output_ids == std::vector<int>{v.id_of("world"), EOS});
    }
    SECTION("wrong column count reports the line") {
        const std::string path = write_temp("par_bad.tsv", "a\tb\nc\nd\te\tf\n");
        try {
            load_parallel(path, v);
            FAIL("expected data_error");
        } catch (const data_error & e) {
            const std::string msg = e.what();
            REQUIRE(msg.find("line 2") != std::string::npos);
            REQUIRE(msg.find("line 3") != std::string::npos);
        }
    }
    SECTION("empty output rejected") {
        const std::string path = write_temp("par_empty.tsv", "a\t\n");
        REQUIRE_THROWS_AS(load_parallel(path, v), data_error);
    }
}

TEST_CASE("load_candidates") {
    SECTION("gold score parsed") {
        const std::string path = write_temp("cand_gold.tsv", "in\tcand text\t0.83\n");
        const auto records = load_candidates(path);
        REQUIRE(records.size() == 1);
        REQUIRE(records[0].gold.has_value());
        REQUIRE(*records[0].gold == Approx(0.83));
        REQUIRE_FALSE(records[0].word_labels.has_value());
    }
    SECTION("word labels parsed and validated") {
        const std::string path = write_temp("cand_labels.tsv", "in\ta b c\t0.5\tOK BAD OK\n");
        const auto records = load_candidates(path);
        REQUIRE(records[0].word_labels.has_value());
        REQUIRE(*records[0].word_labels == std::vector<bool>{true, false, true});
    }
    SECTION("label count mismatch rejected with line number") {
        const std::string path = write_temp("cand_mismatch.tsv", "in\ta b c\t0.5\tOK BAD\n");
        try {
            load_candidates(path);
            FAIL("expected data_error");
        } catch (const data_error & e) {
            REQUIRE(std::string(e.what()).find("line 1") != std::string::npos);
        }
    }
    SECTION("non-numeric gold rejected") {
        const std::string path = write_temp("cand_badgold.tsv", "in\tcand\tnotanumber\n");
        REQUIRE_THROWS_AS(load_candidates(path), data_error);
    }
    SECTION("bad label token rejected") {
        const std::string path = write_temp("cand_badlabel.tsv", "in\ta b\t1\tOK MAYBE\n");
        REQUIRE_THROWS_AS(load_candidates(path), data_error);
    }
    SECTION("candidates round trip through save") {
        const std::string path = write_temp("cand_rt.tsv", "in a\tx y\t0.5\tOK BAD\nin b\tz\n");
        const auto records = load_candidates(path);
        const std::string path2 = write_temp("cand_rt2.tsv", "");
        save_candidates(path2, records);
        const auto again = load_candidates(path2);
        REQUIRE(again.size() == records.size());
        REQUIRE(again[0].candidate == records[0].candidate);
        REQUIRE(again[0].gold == records[0].gold);
        REQUIRE(again[0].word_labels == records[0].word_labels);
        REQUIRE_FALSE(again[1].gold.has_value());
    }
}

TEST_CASE("word spans partition the token sequence") {
    SECTION("whitespace mode: one token per word") {
        const Vocab v = Vocab::build({"a b c"}, TokenMode::Whitespace, 1);
        const EncodedWords enc = encode_words("a c b", v);
        REQUIRE(enc.ids.size() == 3);
        REQUIRE(enc.spans.size() == 3);
        for (size_t w = 0; w < 3; ++w) {
            REQUIRE(enc.spans[w] == std::make_pair(w, w + 1));
        }
    }
    SECTION("char mode: separator space belongs to the preceding word") {
        const Vocab v = Vocab::build({"ab cd"}, TokenMode::Char, 1);
        const EncodedWords enc = encode_words("ab cd", v);
        REQUIRE(enc.ids.size() == 5);  // a b ' ' c d
        REQUIRE(enc.spans.size() == 2);
        REQUIRE(enc.spans[0] == std::make_pair<size_t, size_t>(0, 3));
        REQUIRE(enc.spans[1] == std::make_pair<size_t, size_t>(3, 5));
        // spans are contiguous, ordered and cover every token
        size_t covered = 0;
        for (const auto & [b, e] : enc.spans) {
            REQUIRE(b == covered);
            covered = e;
        }
        REQUIRE(covered == enc.ids.size());
        REQUIRE(enc.ids == v.encode("ab cd"));
    }
}

TEST_CASE("reserved token strings in text fold to UNK") {
    const Vocab v = Vocab::build({"a <unk> b"}, TokenMode::Whitespace, 1);
    const std::vector<int> ids = v.encode("a <pad> <bos>");
    REQUIRE(ids[1] == UNK);
    REQUIRE(ids[2] == UNK);
}
