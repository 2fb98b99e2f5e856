#pragma once

#include "sqe/corpus.hpp"
#include "sqe/decode.hpp"
#include "sqe/dominant.hpp"
#include "sqe/head.hpp"
#include "sqe/metrics.hpp"
#include "sqe/model.hpp"
#include "sqe/vocab.hpp"

#include <json.hpp>

#include <algorithm>
#include <type_traits>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace sqe {

enum class Aggregation { ArithMean, GeoMean };

inline const char * to_string(Aggregation a) { return a == Aggregation::ArithMean ? "arith_mean" : "geo_mean"; }

inline Aggregation aggregation_from_string(const std::string & s) {
    if (s == "arith_mean") {
        return Aggregation::ArithMean;
    }
    if (s == "geo_mean") {
        return Aggregation::GeoMean;
    }
    throw invalid_input("unknown aggregation: " + s);
}

// Token-to-sequence pooling. GeoMean works in the log domain and applies
// the usual 1e-12 floor there.
inline double aggregate(const std::vector<double> & per_token, Aggregation mode) {
    require(!per_token.empty(), "aggregate: empty score list");
    for (double p : per_token) {
        require(std::isfinite(p) && p >= 0.0 && p <= 1.0, "aggregate: scores must lie in [0,1]");
    }
    if (mode == Aggregation::ArithMean) {
        double sum = 0.0;
        for (double p : per_token) {
            sum += p;
        }
        return sum / static_cast<double>(per_token.size());
    }
    double log_sum = 0.0;
    for (double p : per_token) {
        log_sum += std::log(std::max(p, kLogFloor));
    }
    return std::exp(log_sum / static_cast<double>(per_token.size()));
}

enum class ScoreMethod { SoftmaxProb, BoostedProb, SigmoidHead, MCEntropy };

inline const char * to_string(ScoreMethod m) {
    switch (m) {
        case ScoreMethod::SoftmaxProb:
            return "softmax_prob";
        case ScoreMethod::BoostedProb:
            return "boosted_prob";
        case ScoreMethod::SigmoidHead:
            return "sigmoid_head";
        case ScoreMethod::MCEntropy:
            return "mc_entropy";
    }
    return "?";
}

struct QEScore {
    ScoreMethod method = ScoreMethod::SoftmaxProb;
    Aggregation aggregation = Aggregation::ArithMean;
    std::vector<double> per_token;  // empty for MCEntropy
    double sequence = 0.0;
};

struct ScoreOptions {
    Aggregation aggregation = Aggregation::ArithMean;
    DominantConfig dominant;
    int mc_samples = 10;
    int mc_max_len = 64;
    bool mc_length_normalized = true;
};

// Per-token scores for an already-decoded trace; step.ref holds the token
// being scored. One trace serves every requested method.
template <typename T>
std::map<ScoreMethod, QEScore> score_trace(const StepTrace<T> & trace, const std::vector<ScoreMethod> & methods,
                                           const std::type_identity_t<HeadParams<T>> * head,
                                           const ScoreOptions & opt) {
    require(!trace.empty(), "score_trace: empty trace");
    std::map<ScoreMethod, QEScore> out;
    for (ScoreMethod m : methods) {
        if (m == ScoreMethod::MCEntropy) {
            continue;  // needs sampling over the input, handled by eval_*
        }
        require(m != ScoreMethod::SigmoidHead || head != nullptr, "score_trace: SigmoidHead needs a head");
        QEScore s;
        s.method = m;
        s.aggregation = opt.aggregation;
        s.per_token.reserve(trace.size());
        for (const Step<T> & step : trace) {
            require(step.ref >= 0 && step.ref < static_cast<int>(step.dist.size()),
                    "score_trace: step has no valid token");
            double v = 0.0;
            switch (m) {
                case ScoreMethod::SoftmaxProb:
                    v = static_cast<double>(step.dist[step.ref]);
                    break;
                case ScoreMethod::BoostedProb:
                    v = boosted_prob(step.dist, step.ref, opt.dominant);
                    break;
                case ScoreMethod::SigmoidHead:
                    v = static_cast<double>(head_score(*head, step.hidden, step.ref));
                    break;
                case ScoreMethod::MCEntropy:
                    break;
            }
            s.per_token.push_back(v);
        }
        s.sequence = aggregate(s.per_token, opt.aggregation);
        out.emplace(m, std::move(s));
    }
    return out;
}

// Force-decodes the candidate once and scores it with every requested
// method off the shared trace.
template <typename T>
std::map<ScoreMethod, QEScore> score_candidate(const LmParams<T> & lm,
                                               const std::type_identity_t<HeadParams<T>> * head,
                                               const std::vector<int> & input_ids,
                                               const std::vector<int> & candidate_ids,
                                               const std::vector<ScoreMethod> & methods, const ScoreOptions & opt) {
    const StepTrace<T> trace = force_decode(lm, input_ids, candidate_ids);
    return score_trace(trace, methods, head, opt);
}

// Monte-Carlo sequence entropy: the negated mean length-normalized
// log-probability of sampled outputs. Higher means more uncertain; negate
// before correlating with quality.
template <typename T>
double mc_sequence_entropy(const LmParams<T> & lm, const std::vector<int> & input_ids, int n_samples, RngStream & rng,
                           int max_len = 64, bool length_normalized = true) {
    require(n_samples >= 1, "mc_sequence_entropy: n_samples must be >= 1");
    require(max_len >= 1, "mc_sequence_entropy: max_len must be >= 1");
    double total = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        std::vector<int> seq = pack_sequence(input_ids, {});
        require(seq.size() <= static_cast<size_t>(lm.config.max_seq_len), "mc_sequence_entropy: input too long");
        double logp = 0.0;
        int len = 0;
        while (len < max_len && seq.size() < static_cast<size_t>(lm.config.max_seq_len)) {
            const StepTrace<T> trace = forward(lm, seq);
            const std::vector<T> & dist = trace.back().dist;
            const int tok = static_cast<int>(categorical_sample(dist, rng));
            logp += std::log(std::max(static_cast<double>(dist[tok]), kLogFloor));
            ++len;
            if (tok == EOS) {
                break;
            }
            seq.push_back(tok);
        }
        total += length_normalized ? logp / static_cast<double>(len) : logp;
    }
    return -total / static_cast<double>(n_samples);
}

struct EvalReport {
    struct Example {
        size_t id = 0;
        double gold = 0.0;
        std::map<std::string, double> scores;
    };
    struct MethodMetrics {
        std::optional<double> pearson;
        std::optional<double> bce;
    };

    std::vector<Example> examples;
    std::map<std::string, MethodMetrics> metrics;
    size_t failures = 0;
    std::vector<size_t> failed_ids;
    nlohmann::json metadata;

    void compute_metrics() {
        metrics.clear();
        if (examples.empty()) {
            return;
        }
        bool gold_binary = true;
        for (const Example & ex : examples) {
            if (ex.gold != 0.0 && ex.gold != 1.0) {
                gold_binary = false;
                break;
            }
        }
        for (const auto & [name, unused] : examples.front().scores) {
            (void)unused;
            std::vector<double> gold, pred;
            gold.reserve(examples.size());
            pred.reserve(examples.size());
            for (const Example & ex : examples) {
                gold.push_back(ex.gold);
                pred.push_back(ex.scores.at(name));
            }
            MethodMetrics m;
            if (gold.size() >= 2) {
                m.pearson = pearson(pred, gold);
            }
            if (gold_binary) {
                m.bce = bce(pred, gold);
            }
            metrics[name] = m;
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["metadata"] = metadata;
        j["failures"] = failures;
        j["failed_ids"] = failed_ids;
        nlohmann::json jm = nlohmann::json::object();
        for (const auto & [name, m] : metrics) {
            nlohmann::json e;
            e["pearson"] = m.pearson ? nlohmann::json(*m.pearson) : nlohmann::json(nullptr);
            e["pearson_defined"] = m.pearson.has_value();
            e["bce"] = m.bce ? nlohmann::json(*m.bce) : nlohmann::json(nullptr);
            jm[name] = e;
        }
        j["metrics"] = jm;
        nlohmann::json je = nlohmann::json::array();
        for (const Example & ex : examples) {
            je.push_back({{"id", ex.id}, {"gold", ex.gold}, {"scores", ex.scores}});
        }
        j["examples"] = je;
        return j;
    }

    void save(const std::string & path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw data_error("cannot open report file for writing: " + path);
        }
        out << to_json().dump(2) << '\n';
    }

    // gold,predicted,method rows for scatter plots.
    void save_scatter_csv(const std::string & path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw data_error("cannot open scatter file for writing: " + path);
        }
        out << "gold,predicted,method\n";
        for (const Example & ex : examples) {
            for (const auto & [name, score] : ex.scores) {
                out << ex.gold << ',' << score << ',' << name << '\n';
            }
        }
    }
};

namespace detail {

inline void parallel_for(size_t n, int jobs, const std::function<void(size_t)> & fn) {
    if (jobs <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error;
    std::mutex error_mutex;
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= n || failed.load()) {
                return;
            }
            try {
                fn(i);
            } catch (const std::exception & e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!failed.exchange(true)) {
                    error = e.what();
                }
            }
        }
    };
    std::vector<std::thread> threads;
    const int count = std::min<int>(jobs, static_cast<int>(n));
    threads.reserve(count);
    for (int t = 0; t < count; ++t) {
        threads.emplace_back(worker);
    }
    for (std::thread & t : threads) {
        t.join();
    }
    if (failed.load()) {
        throw data_error("parallel evaluation failed: " + error);
    }
}

// Sequence-entropy scores per record, computed once per distinct input in
// first-occurrence order so the result is independent of --jobs.
template <typename T>
std::vector<double> mc_scores_per_record(const LmParams<T> & lm, const std::vector<CandidateRecord> & records,
                                         const Vocab & vocab, const ScoreOptions & opt, const RngStream & base_rng) {
    std::vector<double> out(records.size(), 0.0);
    std::map<std::string, double> cache;
    size_t unique_index = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        auto it = cache.find(records[i].input);
        if (it == cache.end()) {
            RngStream rng = base_rng.child(900000 + unique_index);
            ++unique_index;
            const double entropy = mc_sequence_entropy(lm, vocab.encode(records[i].input), opt.mc_samples, rng,
                                                       opt.mc_max_len, opt.mc_length_normalized);
            it = cache.emplace(records[i].input, entropy).first;
        }
        out[i] = -it->second;  // negated: higher = better quality
    }
    return out;
}

} // namespace detail

// Force-decodes every candidate and correlates sequence scores with the
// gold annotations.
template <typename T>
EvalReport eval_others(const LmParams<T> & lm, const std::type_identity_t<HeadParams<T>> * head,
                       const std::vector<CandidateRecord> & records, const Vocab & vocab,
                       const std::vector<ScoreMethod> & methods, const ScoreOptions & opt,
                       const RngStream * mc_rng = nullptr, int jobs = 1) {
    require(!records.empty(), "eval_others: no records");
    for (const CandidateRecord & rec : records) {
        require(rec.gold.has_value(), "eval_others: every record needs a gold score");
    }
    const bool want_mc =
        std::find(methods.begin(), methods.end(), ScoreMethod::MCEntropy) != methods.end();
    require(!want_mc || mc_rng != nullptr, "eval_others: MCEntropy needs an rng");

    std::vector<double> mc;
    if (want_mc) {
        mc = detail::mc_scores_per_record(lm, records, vocab, opt, *mc_rng);
    }

    EvalReport report;
    report.examples.resize(records.size());
    detail::parallel_for(records.size(), jobs, [&](size_t i) {
        const CandidateRecord & rec = records[i];
        const std::vector<int> input_ids = vocab.encode(rec.input);
        const std::vector<int> cand_ids = vocab.encode(rec.candidate);
        const auto scores = score_candidate(lm, head, input_ids, cand_ids, methods, opt);
        EvalReport::Example ex;
        ex.id = i;
        ex.gold = *rec.gold;
        for (const auto & [m, s] : scores) {
            ex.scores[to_string(m)] = s.sequence;
        }
        if (want_mc) {
            ex.scores[to_string(ScoreMethod::MCEntropy)] = mc[i];
        }
        report.examples[i] = std::move(ex);
    });
    report.metadata["granularity"] = "sequence";
    report.metadata["aggregation"] = to_string(opt.aggregation);
    report.metadata["n_examples"] = records.size();
    report.compute_metrics();
    return report;
}

// Word-level evaluation: one report row per word, gold = OK(1)/BAD(0),
// scores pooled over each word's tokens.
enum class WordPool { Min, Mean };

inline std::vector<double> word_level_scores(const std::vector<double> & per_token,
                                             const std::vector<std::pair<size_t, size_t>> & spans,
                                             WordPool pool = WordPool::Min) {
    size_t covered = 0;
    std::vector<double> out;
    out.reserve(spans.size());
    for (const auto & [begin, end] : spans) {
        require(begin == covered && end > begin && end <= per_token.size(),
                "word_level_scores: spans must partition the token sequence");
        covered = end;
        if (pool == WordPool::Min) {
            double m = per_token[begin];
            for (size_t i = begin + 1; i < end; ++i) {
                m = std::min(m, per_token[i]);
            }
            out.push_back(m);
        } else {
            double s = 0.0;
            for (size_t i = begin; i < end; ++i) {
                s += per_token[i];
            }
            out.push_back(s / static_cast<double>(end - begin));
        }
    }
    require(covered == per_token.size(), "word_level_scores: spans must cover every token");
    return out;
}

template <typename T>
EvalReport eval_others_word_level(const LmParams<T> & lm,
                                  const std::type_identity_t<HeadParams<T>> * head,
                                  const std::vector<CandidateRecord> & records, const Vocab & vocab,
                                  const std::vector<ScoreMethod> & methods, const ScoreOptions & opt,
                                  WordPool pool = WordPool::Min, int jobs = 1) {
    require(!records.empty(), "eval_others_word_level: no records");
    for (const CandidateRecord & rec : records) {
        require(rec.word_labels.has_value(), "eval_others_word_level: every record needs word labels");
    }
    for (ScoreMethod m : methods) {
        require(m != ScoreMethod::MCEntropy, "eval_others_word_level: MCEntropy has no word-level scores");
    }

    std::vector<std::vector<EvalReport::Example>> per_record(records.size());
    detail::parallel_for(records.size(), jobs, [&](size_t i) {
        const CandidateRecord & rec = records[i];
        const EncodedWords enc = encode_words(rec.candidate, vocab);
        require(enc.spans.size() == rec.word_labels->size(), "eval_others_word_level: label/word mismatch");
        const auto scores = score_candidate(lm, head, vocab.encode(rec.input), enc.ids, methods, opt);
        std::vector<EvalReport::Example> rows(enc.spans.size());
        for (size_t w = 0; w < enc.spans.size(); ++w) {
            rows[w].gold = (*rec.word_labels)[w] ? 1.0 : 0.0;
        }
        for (const auto & [m, s] : scores) {
            const std::vector<double> ws = word_level_scores(s.per_token, enc.spans, pool);
            for (size_t w = 0; w < ws.size(); ++w) {
                rows[w].scores[to_string(m)] = ws[w];
            }
        }
        per_record[i] = std::move(rows);
    });

    EvalReport report;
    for (auto & rows : per_record) {
        for (auto & row : rows) {
            row.id = report.examples.size();
            report.examples.push_back(std::move(row));
        }
    }
    report.metadata["granularity"] = "word";
    report.metadata["aggregation"] = to_string(opt.aggregation);
    report.metadata["word_pool"] = pool == WordPool::Min ? "min" : "mean";
    report.metadata["n_examples"] = records.size();
    report.metadata["n_words"] = report.examples.size();
    report.compute_metrics();
    return report;
}

// Self-evaluation: generate for each input, score the generated trace
// directly (no second forward pass), correlate with the provided gold.
template <typename T>
EvalReport eval_self(const LmParams<T> & lm, const std::type_identity_t<HeadParams<T>> * head,
                     const std::vector<CandidateRecord> & records,
                     const Vocab & vocab, GenMode mode, int max_len, const std::vector<ScoreMethod> & methods,
                     const ScoreOptions & opt, const RngStream & base_rng, int topk = 0, int jobs = 1) {
    require(!records.empty(), "eval_self: no records");
    for (const CandidateRecord & rec : records) {
        require(rec.gold.has_value(), "eval_self: every record needs a gold score");
    }
    const bool want_mc =
        std::find(methods.begin(), methods.end(), ScoreMethod::MCEntropy) != methods.end();
    std::vector<double> mc;
    if (want_mc) {
        mc = detail::mc_scores_per_record(lm, records, vocab, opt, base_rng);
    }

    std::vector<std::optional<EvalReport::Example>> rows(records.size());
    detail::parallel_for(records.size(), jobs, [&](size_t i) {
        const CandidateRecord & rec = records[i];
        RngStream rng = base_rng.child(i);
        try {
            const Generation<T> gen = generate(lm, vocab.encode(rec.input), mode, max_len, rng, topk);
            if (gen.trace.empty()) {
                return;  // empty generation, recorded as a failure
            }
            const auto scores = score_trace(gen.trace, methods, head, opt);
            EvalReport::Example ex;
            ex.id = i;
            ex.gold = *rec.gold;
            for (const auto & [m, s] : scores) {
                ex.scores[to_string(m)] = s.sequence;
            }
            if (want_mc) {
                ex.scores[to_string(ScoreMethod::MCEntropy)] = mc[i];
            }
            rows[i] = std::move(ex);
        } catch (const invalid_input &) {
            // Per-example generation failure; excluded from metrics.
        }
    });

    EvalReport report;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i]) {
            report.examples.push_back(std::move(*rows[i]));
        } else {
            ++report.failures;
            report.failed_ids.push_back(i);
        }
    }
    report.metadata["granularity"] = "sequence";
    report.metadata["aggregation"] = to_string(opt.aggregation);
    report.metadata["n_examples"] = records.size();
    report.compute_metrics();
    return report;
}

} // namespace sqe
