#include "sqe/synth.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <set>

using namespace sqe;
using Catch::Approx;

namespace {

AmbiguitySpec base_spec() {
    AmbiguitySpec spec;
    spec.n_inputs = 6;
    spec.k_synonyms = 2;
    spec.synonym_weights = {0.5, 0.5};
    spec.template_length = 4;
    spec.ambiguous_position = 1;
    spec.template_pool = 8;
    return spec;
}

} // namespace

TEST_CASE("largest remainder allocation") {
    REQUIRE(largest_remainder_counts(2, {0.5, 0.5}) == std::vector<int>{1, 1});
    REQUIRE(largest_remainder_counts(4, {0.5, 0.25, 0.25}) == std::vector<int>{2, 1, 1});
    REQUIRE(largest_remainder_counts(10, {0.3, 0.25, 0.2, 0.15, 0.1}) == std::vector<int>{3, 3, 2, 1, 1});
    REQUIRE(largest_remainder_counts(20, {0.3, 0.25, 0.2, 0.15, 0.1}) == std::vector<int>{6, 5, 4, 3, 2});
}

TEST_CASE("gen_ambiguous_corpus basics") {
    RngStream rng(1);
    const SynthCorpus corpus = gen_ambiguous_corpus(base_spec(), rng);

    SECTION("each input appears with each variant in exact proportion") {
        REQUIRE(corpus.copies_per_input == 2);  // smallest count realizing 0.5/0.5
        REQUIRE(corpus.lines.size() == 12);
        std::map<std::string, std::map<std::string, int>> per_input;
        for (const auto & [in_text, out_text] : corpus.lines) {
            per_input[in_text][out_text] += 1;
        }
        REQUIRE(per_input.size() == 6);
        for (const auto & [in_text, variants] : per_input) {
            (void)in_text;
            REQUIRE(variants.size() == 2);  // 50/50 split per input
            for (const auto & [out_text, count] : variants) {
                (void)out_text;
                REQUIRE(count == 1);
            }
        }
    }

    SECTION("variants differ at exactly one output position") {
        for (const SynthTruth & truth : corpus.truth) {
            const std::vector<int> a = corpus.vocab.encode(truth.variant_texts[0]);
            const std::vector<int> b = corpus.vocab.encode(truth.variant_texts[1]);
            REQUIRE(a.size() == b.size());
            int diffs = 0;
            for (size_t i = 0; i < a.size(); ++i) {
                diffs += a[i] != b[i];
            }
            REQUIRE(diffs == 1);
            REQUIRE(a[truth.ambiguous_step] != b[truth.ambiguous_step]);
            REQUIRE(static_cast<size_t>(truth.synonym_ids[0]) < static_cast<size_t>(corpus.vocab.size()));
            REQUIRE(a[truth.ambiguous_step] == truth.synonym_ids[0]);
            REQUIRE(b[truth.ambiguous_step] == truth.synonym_ids[1]);
        }
    }

    SECTION("generation is deterministic given the seed") {
        RngStream r1(9), r2(9);
        const SynthCorpus c1 = gen_ambiguous_corpus(base_spec(), r1);
        const SynthCorpus c2 = gen_ambiguous_corpus(base_spec(), r2);
        REQUIRE(c1.lines == c2.lines);
        REQUIRE(c1.vocab.serialize() == c2.vocab.serialize());
    }
}

TEST_CASE("gen_ambiguous_corpus weighted variants") {
    AmbiguitySpec spec = base_spec();
    spec.k_synonyms = 3;
    spec.synonym_weights = {0.5, 0.25, 0.25};
    spec.copies_per_input = 4;
    RngStream rng(2);
    const SynthCorpus corpus = gen_ambiguous_corpus(spec, rng);
    std::map<std::string, std::map<std::string, int>> per_input;
    for (const auto & [in_text, out_text] : corpus.lines) {
        per_input[in_text][out_text] += 1;
    }
    for (const SynthTruth & truth : corpus.truth) {
        const auto & variants = per_input.at(truth.input_text);
        REQUIRE(variants.at(truth.variant_texts[0]) == 2);
        REQUIRE(variants.at(truth.variant_texts[1]) == 1);
        REQUIRE(variants.at(truth.variant_texts[2]) == 1);
    }
}

TEST_CASE("gen_ambiguous_corpus rejections") {
    RngStream rng(3);
    SECTION("k=1 has no ambiguity") {
        AmbiguitySpec spec = base_spec();
        spec.k_synonyms = 1;
        spec.synonym_weights = {1.0};
        REQUIRE_THROWS_AS(gen_ambiguous_corpus(spec, rng), invalid_input);
    }
    SECTION("unrealizable proportions") {
        AmbiguitySpec spec = base_spec();
        spec.synonym_weights = {0.9, 0.1};
        spec.copies_per_input = 2;  // 0.1 of 2 copies rounds to zero
        REQUIRE_THROWS_AS(gen_ambiguous_corpus(spec, rng), invalid_input);
    }
    SECTION("weights must sum to one") {
        AmbiguitySpec spec = base_spec();
        spec.synonym_weights = {0.5, 0.4};
        REQUIRE_THROWS_AS(gen_ambiguous_corpus(spec, rng), invalid_input);
    }
    SECTION("ambiguous position must be inside the template") {
        AmbiguitySpec spec = base_spec();
        spec.ambiguous_position = 4;
        REQUIRE_THROWS_AS(gen_ambiguous_corpus(spec, rng), invalid_input);
    }
}

TEST_CASE("char mode keeps single-character surfaces") {
    AmbiguitySpec spec = base_spec();
    spec.n_inputs = 3;
    spec.vocab_mode = TokenMode::Char;
    spec.template_pool = 6;
    RngStream rng(4);
    const SynthCorpus corpus = gen_ambiguous_corpus(spec, rng);
    for (const SynthTruth & truth : corpus.truth) {
        for (const std::string & s : truth.synonyms) {
            REQUIRE(s.size() == 1);
        }
        // amb step accounts for the space tokens between the 1-char words
        REQUIRE(truth.ambiguous_step == static_cast<size_t>(2 * spec.ambiguous_position));
    }
}

TEST_CASE("input fillers enlarge the vocabulary without changing outputs") {
    AmbiguitySpec spec = base_spec();
    spec.input_fillers = 3;
    spec.filler_pool = 50;
    RngStream rng(5);
    const SynthCorpus corpus = gen_ambiguous_corpus(spec, rng);
    for (const SynthTruth & truth : corpus.truth) {
        REQUIRE(tokenize(truth.input_text, TokenMode::Whitespace).size() == 4);  // marker + 3 fillers
    }
    AmbiguitySpec plain = base_spec();
    RngStream rng2(5);
    const SynthCorpus small = gen_ambiguous_corpus(plain, rng2);
    REQUIRE(corpus.vocab.size() > small.vocab.size());
}

TEST_CASE("gen_graded_candidates") {
    RngStream rng(6);
    const SynthCorpus corpus = gen_ambiguous_corpus(base_spec(), rng);

    SECTION("rate 0 keeps the reference, gold 1, all words OK") {
        GradedCandidateSpec spec;
        spec.error_rates = {0.0};
        RngStream crng(7);
        const auto records = gen_graded_candidates(corpus, spec, crng);
        REQUIRE(records.size() == corpus.truth.size());
        for (size_t i = 0; i < records.size(); ++i) {
            REQUIRE(*records[i].gold == 1.0);
            const auto & labels = *records[i].word_labels;
            REQUIRE(std::all_of(labels.begin(), labels.end(), [](bool b) { return b; }));
            const auto & variants = corpus.truth[i].variant_texts;
            REQUIRE(std::find(variants.begin(), variants.end(), records[i].candidate) != variants.end());
        }
    }

    SECTION("rate 1 corrupts every position, gold 0") {
        GradedCandidateSpec spec;
        spec.error_rates = {1.0};
        RngStream crng(8);
        const auto records = gen_graded_candidates(corpus, spec, crng);
        for (const auto & rec : records) {
            REQUIRE(*rec.gold == 0.0);
            const auto & labels = *rec.word_labels;
            REQUIRE(std::none_of(labels.begin(), labels.end(), [](bool b) { return b; }));
        }
    }

    SECTION("rate 0.25 over 4 words corrupts exactly one, gold 0.75") {
        GradedCandidateSpec spec;
        spec.error_rates = {0.25};
        RngStream crng(9);
        const auto records = gen_graded_candidates(corpus, spec, crng);
        for (const auto & rec : records) {
            REQUIRE(*rec.gold == Approx(0.75));
            int bad = 0;
            for (bool ok : *rec.word_labels) {
                bad += !ok;
            }
            REQUIRE(bad == 1);
        }
    }

    SECTION("corruption never reproduces the original token") {
        GradedCandidateSpec spec;
        spec.error_rates = {0.5, 1.0};
        spec.candidates_per_rate = 3;
        RngStream crng(10);
        const auto records = gen_graded_candidates(corpus, spec, crng);
        size_t record_idx = 0;
        for (const SynthTruth & truth : corpus.truth) {
            for (size_t r = 0; r < 2 * 3; ++r) {
                const CandidateRecord & rec = records[record_idx++];
                const auto cand_words = tokenize(rec.candidate, TokenMode::Whitespace);
                // find the closest variant and check corrupted words differ
                for (size_t w = 0; w < cand_words.size(); ++w) {
                    if (!(*rec.word_labels)[w]) {
                        for (const std::string & variant : truth.variant_texts) {
                            const auto ref_words = tokenize(variant, TokenMode::Whitespace);
                            REQUIRE(cand_words[w] != ref_words[w]);
                        }
                    }
                }
            }
        }
        REQUIRE(record_idx == records.size());
    }

    SECTION("gold is a deterministic function of the corruption mask") {
        GradedCandidateSpec spec;
        spec.error_rates = {0.0, 0.25, 0.5, 0.75, 1.0};
        RngStream crng(11);
        const auto records = gen_graded_candidates(corpus, spec, crng);
        for (const auto & rec : records) {
            int bad = 0;
            for (bool ok : *rec.word_labels) {
                bad += !ok;
            }
            REQUIRE(*rec.gold == Approx(1.0 - static_cast<double>(bad) / rec.word_labels->size()));
        }
    }
}

TEST_CASE("truth sidecar json") {
    RngStream rng(12);
    const SynthCorpus corpus = gen_ambiguous_corpus(base_spec(), rng);
    const nlohmann::json j = synth_truth_json(corpus);
    REQUIRE(j.is_array());
    REQUIRE(j.size() == corpus.truth.size());
    REQUIRE(j[0].contains("synonym_ids"));
    REQUIRE(j[0].contains("ambiguous_step"));
}

TEST_CASE("noise-line augmentation") {
    RngStream rng(20);
    SynthCorpus corpus = gen_ambiguous_corpus(base_spec(), rng);
    const size_t before = corpus.lines.size();
    RngStream nrng(21);
    augment_with_noise_lines(corpus, 3, nrng);
    REQUIRE(corpus.lines.size() == before + 3 * corpus.truth.size());

    // every noise line differs from some valid variant in exactly one word
    for (size_t i = before; i < corpus.lines.size(); ++i) {
        const auto & [in_text, out_text] = corpus.lines[i];
        const auto cand_words = tokenize(out_text, TokenMode::Whitespace);
        const SynthTruth * truth = nullptr;
        for (const SynthTruth & t : corpus.truth) {
            if (t.input_text == in_text) {
                truth = &t;
            }
        }
        REQUIRE(truth != nullptr);
        int best_diff = 1000;
        for (const std::string & variant : truth->variant_texts) {
            const auto ref_words = tokenize(variant, TokenMode::Whitespace);
            int diffs = 0;
            for (size_t w = 0; w < ref_words.size(); ++w) {
                diffs += cand_words[w] != ref_words[w];
            }
            best_diff = std::min(best_diff, diffs);
        }
        REQUIRE(best_diff == 1);
    }

    // truth ids stay valid against the rebuilt vocabulary
    for (const SynthTruth & truth : corpus.truth) {
        for (size_t j = 0; j < truth.synonyms.size(); ++j) {
            REQUIRE(corpus.vocab.id_of(truth.synonyms[j]) == truth.synonym_ids[j]);
            REQUIRE(truth.synonym_ids[j] != UNK);
        }
    }
}

TEST_CASE("distractor-line augmentation grows the vocabulary tail") {
    RngStream rng(22);
    SynthCorpus corpus = gen_ambiguous_corpus(base_spec(), rng);
    const int vocab_before = corpus.vocab.size();
    const size_t lines_before = corpus.lines.size();
    RngStream drng(23);
    augment_with_distractor_lines(corpus, 50, 3, drng);
    REQUIRE(corpus.lines.size() == lines_before + 50);
    REQUIRE(corpus.vocab.size() == vocab_before + 50 * 4);  // input token + 3 output tokens
    // every distractor token occurs exactly once
    const FrequencyTable freq = unigram_distribution(corpus.vocab);
    size_t singles = 0;
    for (int id = kNumReserved; id < corpus.vocab.size(); ++id) {
        singles += corpus.vocab.count(id) == 1;
    }
    REQUIRE(singles >= 200);
    for (const SynthTruth & truth : corpus.truth) {
        for (size_t j = 0; j < truth.synonyms.size(); ++j) {
            REQUIRE(corpus.vocab.id_of(truth.synonyms[j]) == truth.synonym_ids[j]);
        }
    }
}
