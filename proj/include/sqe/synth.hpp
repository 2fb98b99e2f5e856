#pragma once

#include "sqe/common.hpp"
#include "sqe/corpus.hpp"
#include "sqe/ops.hpp"
#include "sqe/rng.hpp"
#include "sqe/vocab.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace sqe {

// Synthetic ambiguous parallel corpus: every input has k valid outputs
// that differ at exactly one position, emitted in proportions given by
// synonym_weights. Inputs may carry extra rare filler tokens so the
// vocabulary can be made much larger than the set of plausible outputs.
struct AmbiguitySpec {
    int n_inputs = 24;
    int k_synonyms = 2;
    std::vector<double> synonym_weights;  // length k, sums to 1
    int copies_per_input = 0;             // 0 = smallest count that realizes the weights
    int template_length = 4;
    int ambiguous_position = 1;
    TokenMode vocab_mode = TokenMode::Whitespace;
    int template_pool = 20;      // distinct surface tokens used in output templates
    int input_fillers = 0;       // rare tokens appended to each input (fixed per input)
    int filler_pool = 0;         // size of the filler surface pool

    void validate() const {
        require(n_inputs >= 1, "AmbiguitySpec: n_inputs must be >= 1");
        require(k_synonyms >= 2, "AmbiguitySpec: need at least 2 synonyms (k=1 has no ambiguity)");
        require(static_cast<int>(synonym_weights.size()) == k_synonyms,
                "AmbiguitySpec: one weight per synonym");
        double sum = 0.0;
        for (double w : synonym_weights) {
            require(w > 0.0, "AmbiguitySpec: weights must be positive");
            sum += w;
        }
        require(std::fabs(sum - 1.0) <= 1e-9, "AmbiguitySpec: weights must sum to 1");
        require(template_length >= 1, "AmbiguitySpec: template_length must be >= 1");
        require(ambiguous_position >= 0 && ambiguous_position < template_length,
                "AmbiguitySpec: ambiguous_position out of range");
        require(template_pool >= 2, "AmbiguitySpec: template_pool must be >= 2");
        require(input_fillers >= 0 && filler_pool >= 0, "AmbiguitySpec: bad filler settings");
        require(input_fillers == 0 || filler_pool > 0, "AmbiguitySpec: fillers need a filler pool");
    }
};

// Exact integer allocation of `total` into proportions `weights`
// (largest-remainder rounding, ties to the lower index).
inline std::vector<int> largest_remainder_counts(int total, const std::vector<double> & weights) {
    std::vector<int> counts(weights.size());
    std::vector<std::pair<double, size_t>> rema(weights.size());
    int used = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
        const double exact = total * weights[i];
        counts[i] = static_cast<int>(std::floor(exact));
        used += counts[i];
        rema[i] = {exact - std::floor(exact), i};
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto & a, const auto & b) { return a.first > b.first; });
    for (int r = 0; r < total - used; ++r) {
        ++counts[rema[r].second];
    }
    return counts;
}

struct SynthTruth {
    std::string input_text;
    std::vector<std::string> synonyms;       // surface forms, one per variant
    std::vector<int> synonym_ids;            // ids in the emitted vocab
    std::vector<std::string> variant_texts;  // full output text per variant
    size_t ambiguous_step = 0;               // index in output_ids where variants differ
};

struct SynthCorpus {
    AmbiguitySpec spec;
    std::vector<std::pair<std::string, std::string>> lines;  // input, output
    Vocab vocab;
    std::vector<SynthTruth> truth;
    std::vector<std::string> template_surfaces;  // corruption replacement pool
    int copies_per_input = 0;
};

namespace detail {

// Closed pseudo-word surface set. Char mode uses single letters/digits,
// whitespace mode short generated words.
inline std::vector<std::string> make_surfaces(TokenMode mode, const std::string & prefix, int count, size_t offset) {
    std::vector<std::string> out;
    out.reserve(count);
    if (mode == TokenMode::Char) {
        static const std::string chars =
            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
        require(offset + count <= chars.size(),
                "gen_ambiguous_corpus: char mode supports at most 62 distinct surface tokens");
        for (int i = 0; i < count; ++i) {
            out.emplace_back(1, chars[offset + i]);
        }
    } else {
        for (int i = 0; i < count; ++i) {
            out.push_back(prefix + std::to_string(i));
        }
    }
    return out;
}

inline std::string join_words(const std::vector<std::string> & words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += words[i];
    }
    return out;
}

} // namespace detail

inline int resolve_copies_per_input(const AmbiguitySpec & spec) {
    if (spec.copies_per_input > 0) {
        return spec.copies_per_input;
    }
    for (int c = spec.k_synonyms; c <= 4 * spec.k_synonyms + 64; ++c) {
        const std::vector<int> counts = largest_remainder_counts(c, spec.synonym_weights);
        if (*std::min_element(counts.begin(), counts.end()) >= 1) {
            return c;
        }
    }
    throw invalid_input("gen_ambiguous_corpus: cannot realize synonym weights with a small copy count");
}

inline SynthCorpus gen_ambiguous_corpus(const AmbiguitySpec & spec, RngStream & rng) {
    spec.validate();
    const int copies = resolve_copies_per_input(spec);
    const std::vector<int> variant_counts = largest_remainder_counts(copies, spec.synonym_weights);
    for (size_t j = 0; j < variant_counts.size(); ++j) {
        if (variant_counts[j] < 1) {
            throw invalid_input("gen_ambiguous_corpus: unrealizable proportions, variant " + std::to_string(j) +
                                " would get 0 of " + std::to_string(copies) + " copies per input");
        }
    }

    SynthCorpus out;
    out.spec = spec;
    out.copies_per_input = copies;

    size_t offset = 0;
    const std::vector<std::string> markers = detail::make_surfaces(spec.vocab_mode, "q", spec.n_inputs, offset);
    offset += markers.size();
    out.template_surfaces = detail::make_surfaces(spec.vocab_mode, "w", spec.template_pool, offset);
    offset += out.template_surfaces.size();
    const std::vector<std::string> synonym_pool =
        detail::make_surfaces(spec.vocab_mode, "s", spec.n_inputs * spec.k_synonyms, offset);
    offset += synonym_pool.size();
    const std::vector<std::string> fillers =
        spec.filler_pool > 0 ? detail::make_surfaces(spec.vocab_mode, "f", spec.filler_pool, offset)
                             : std::vector<std::string>{};

    out.truth.resize(spec.n_inputs);
    for (int i = 0; i < spec.n_inputs; ++i) {
        SynthTruth & truth = out.truth[i];

        std::vector<std::string> input_words = {markers[i]};
        for (int f = 0; f < spec.input_fillers; ++f) {
            input_words.push_back(fillers[rng.below(fillers.size())]);
        }
        truth.input_text = detail::join_words(input_words);

        // Deterministic template; the ambiguous slot takes this input's k
        // dedicated synonym tokens.
        std::vector<std::string> template_words(spec.template_length);
        for (int pos = 0; pos < spec.template_length; ++pos) {
            template_words[pos] = out.template_surfaces[rng.below(out.template_surfaces.size())];
        }
        truth.synonyms.assign(spec.k_synonyms, "");
        for (int j = 0; j < spec.k_synonyms; ++j) {
            truth.synonyms[j] = synonym_pool[i * spec.k_synonyms + j];
        }

        truth.variant_texts.resize(spec.k_synonyms);
        for (int j = 0; j < spec.k_synonyms; ++j) {
            std::vector<std::string> words = template_words;
            words[spec.ambiguous_position] = truth.synonyms[j];
            truth.variant_texts[j] = detail::join_words(words);
        }
        for (int j = 0; j < spec.k_synonyms; ++j) {
            for (int c = 0; c < variant_counts[j]; ++c) {
                out.lines.emplace_back(truth.input_text, truth.variant_texts[j]);
            }
        }
    }

    std::vector<std::string> corpus_text;
    corpus_text.reserve(out.lines.size());
    for (const auto & [in_text, out_text] : out.lines) {
        corpus_text.push_back(in_text + "\t" + out_text);
    }
    out.vocab = Vocab::build(corpus_text, spec.vocab_mode, 1);

    for (SynthTruth & truth : out.truth) {
        truth.synonym_ids.clear();
        for (const std::string & s : truth.synonyms) {
            const int id = truth.synonym_ids.emplace_back(out.vocab.id_of(s));
            require(id != UNK, "gen_ambiguous_corpus: synonym missing from vocabulary");
        }
        // The ambiguous token index is where the first two variant
        // encodings differ (identical elsewhere by construction).
        const std::vector<int> a = out.vocab.encode(truth.variant_texts[0]);
        const std::vector<int> b = out.vocab.encode(truth.variant_texts[1]);
        require(a.size() == b.size(), "gen_ambiguous_corpus: variant encodings differ in length");
        size_t step = a.size();
        for (size_t t = 0; t < a.size(); ++t) {
            if (a[t] != b[t]) {
                step = t;
                break;
            }
        }
        require(step < a.size(), "gen_ambiguous_corpus: variants do not differ");
        truth.ambiguous_step = step;
    }
    return out;
}

// Appends, per input, extra lines that corrupt one (or a few) slots of a
// weight-sampled valid variant. Memorizable corpora drive the base model's
// softmax to extreme logits where sigmoid-head training barely moves; a
// slice of slot noise keeps every template token's probability (and so the
// head's gradients) alive, the way natural-language entropy does at scale,
// while continuations after a bad token stay predictable. The vocabulary
// is rebuilt so counts reflect the augmented corpus.
inline void augment_with_noise_lines(SynthCorpus & corpus, int per_input, RngStream & rng,
                                     int slots_per_line = 1) {
    require(per_input >= 0, "augment_with_noise_lines: per_input must be >= 0");
    require(slots_per_line >= 1 && slots_per_line <= corpus.spec.template_length,
            "augment_with_noise_lines: bad slots_per_line");
    if (per_input == 0) {
        return;
    }
    for (const SynthTruth & truth : corpus.truth) {
        for (int n = 0; n < per_input; ++n) {
            const size_t variant = categorical_sample(corpus.spec.synonym_weights, rng);
            std::vector<std::string> words = tokenize(truth.variant_texts[variant], TokenMode::Whitespace);
            std::vector<size_t> slots(words.size());
            for (size_t i = 0; i < slots.size(); ++i) {
                slots[i] = i;
            }
            rng.shuffle(slots);
            for (int c = 0; c < slots_per_line; ++c) {
                const size_t pos = slots[c];
                std::string repl;
                do {
                    repl = corpus.template_surfaces[rng.below(corpus.template_surfaces.size())];
                } while (repl == words[pos]);
                words[pos] = repl;
            }
            corpus.lines.emplace_back(truth.input_text, detail::join_words(words));
        }
    }

    std::vector<std::string> corpus_text;
    corpus_text.reserve(corpus.lines.size());
    for (const auto & [in_text, out_text] : corpus.lines) {
        corpus_text.push_back(in_text + "\t" + out_text);
    }
    corpus.vocab = Vocab::build(corpus_text, corpus.spec.vocab_mode, 1);
    for (SynthTruth & truth : corpus.truth) {
        for (size_t j = 0; j < truth.synonyms.size(); ++j) {
            truth.synonym_ids[j] = corpus.vocab.id_of(truth.synonyms[j]);
        }
    }
}

// Appends parallel lines built from once-used rare tokens. They give the
// vocabulary the long tail real corpora have: under random negative
// sampling most draws land in the tail, which is exactly what starves the
// sampler of useful negatives. The vocabulary is rebuilt afterwards.
inline void augment_with_distractor_lines(SynthCorpus & corpus, int n_lines, int tokens_per_line,
                                          RngStream & rng) {
    require(n_lines >= 0 && tokens_per_line >= 1, "augment_with_distractor_lines: bad settings");
    if (n_lines == 0) {
        return;
    }
    require(corpus.spec.vocab_mode == TokenMode::Whitespace,
            "augment_with_distractor_lines: char mode has no room for a long tail");
    (void)rng;  // surfaces are sequential; reserved for future shuffling
    size_t next = 0;
    for (int i = 0; i < n_lines; ++i) {
        const std::string input = "r" + std::to_string(next++);
        std::vector<std::string> words(tokens_per_line);
        for (auto & w : words) {
            w = "r" + std::to_string(next++);
        }
        corpus.lines.emplace_back(input, detail::join_words(words));
    }

    std::vector<std::string> corpus_text;
    corpus_text.reserve(corpus.lines.size());
    for (const auto & [in_text, out_text] : corpus.lines) {
        corpus_text.push_back(in_text + "\t" + out_text);
    }
    corpus.vocab = Vocab::build(corpus_text, corpus.spec.vocab_mode, 1);
    for (SynthTruth & truth : corpus.truth) {
        for (size_t j = 0; j < truth.synonyms.size(); ++j) {
            truth.synonym_ids[j] = corpus.vocab.id_of(truth.synonyms[j]);
        }
    }
}

// Graded candidates: for each error rate, corrupt ceil(r * W) word
// positions with random wrong template tokens. Gold is the uncorrupted
// fraction; corrupted words carry BAD labels.
struct GradedCandidateSpec {
    std::vector<double> error_rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    int candidates_per_rate = 1;

    void validate() const {
        require(!error_rates.empty(), "GradedCandidateSpec: no error rates");
        for (size_t i = 0; i < error_rates.size(); ++i) {
            require(error_rates[i] >= 0.0 && error_rates[i] <= 1.0,
                    "GradedCandidateSpec: rates must lie in [0,1]");
            require(i == 0 || error_rates[i] >= error_rates[i - 1],
                    "GradedCandidateSpec: rates must be sorted ascending");
        }
        require(candidates_per_rate >= 1, "GradedCandidateSpec: candidates_per_rate must be >= 1");
    }
};

inline std::vector<CandidateRecord> gen_graded_candidates(const SynthCorpus & corpus,
                                                          const GradedCandidateSpec & spec, RngStream & rng) {
    spec.validate();
    require(!corpus.truth.empty(), "gen_graded_candidates: empty corpus");

    std::vector<CandidateRecord> out;
    for (const SynthTruth & truth : corpus.truth) {
        for (double rate : spec.error_rates) {
            for (int rep = 0; rep < spec.candidates_per_rate; ++rep) {
                // Base output drawn from the valid variants by weight, the
                // way a competent translator would distribute phrasings.
                const size_t variant = categorical_sample(corpus.spec.synonym_weights, rng);
                std::vector<std::string> words = tokenize(truth.variant_texts[variant], TokenMode::Whitespace);
                const int n_words = static_cast<int>(words.size());
                const int n_corrupt = static_cast<int>(std::ceil(rate * n_words));

                std::vector<size_t> positions(words.size());
                for (size_t i = 0; i < positions.size(); ++i) {
                    positions[i] = i;
                }
                rng.shuffle(positions);
                std::vector<bool> ok(words.size(), true);
                for (int c = 0; c < n_corrupt; ++c) {
                    const size_t pos = positions[c];
                    std::string repl;
                    do {
                        repl = corpus.template_surfaces[rng.below(corpus.template_surfaces.size())];
                    } while (repl == words[pos]);
                    words[pos] = repl;
                    ok[pos] = false;
                }

                CandidateRecord rec;
                rec.input = truth.input_text;
                rec.candidate = detail::join_words(words);
                rec.gold = 1.0 - static_cast<double>(n_corrupt) / static_cast<double>(n_words);
                rec.word_labels = ok;
                out.push_back(std::move(rec));
            }
        }
    }
    return out;
}

inline nlohmann::json synth_truth_json(const SynthCorpus & corpus) {
    nlohmann::json j = nlohmann::json::array();
    for (const SynthTruth & t : corpus.truth) {
        j.push_back({{"input", t.input_text},
                     {"synonyms", t.synonyms},
                     {"synonym_ids", t.synonym_ids},
                     {"ambiguous_step", t.ambiguous_step},
                     {"variants", t.variant_texts}});
    }
    return j;
}

} // namespace sqe
