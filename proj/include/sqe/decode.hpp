#pragma once

#include "sqe/model.hpp"

#include <algorithm>
#include <vector>

namespace sqe {

enum class GenMode { Greedy, Sample, TopK };

inline GenMode gen_mode_from_string(const std::string & s) {
    if (s == "greedy") {
        return GenMode::Greedy;
    }
    if (s == "sample") {
        return GenMode::Sample;
    }
    if (s == "topk") {
        return GenMode::TopK;
    }
    throw invalid_input("unknown generation mode: " + s);
}

template <typename T>
struct Generation {
    std::vector<int> output_ids;  // EOS not included
    StepTrace<T> trace;           // one step per emitted token
};

template <typename T>
int argmax_token(const std::vector<T> & dist) {
    int best = 0;
    for (size_t v = 1; v < dist.size(); ++v) {
        if (dist[v] > dist[best]) {
            best = static_cast<int>(v);
        }
    }
    return best;
}

namespace detail {

template <typename T>
int pick_token(const std::vector<T> & dist, GenMode mode, int topk, RngStream & rng) {
    switch (mode) {
        case GenMode::Greedy:
            return argmax_token(dist);
        case GenMode::Sample:
            return static_cast<int>(categorical_sample(dist, rng));
        case GenMode::TopK: {
            require(topk > 0, "generate: topk must be positive");
            const size_t k = std::min<size_t>(topk, dist.size());
            std::vector<int> idx(dist.size());
            for (size_t v = 0; v < dist.size(); ++v) {
                idx[v] = static_cast<int>(v);
            }
            std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
                if (dist[a] != dist[b]) {
                    return dist[a] > dist[b];
                }
                return a < b;
            });
            double mass = 0.0;
            for (size_t j = 0; j < k; ++j) {
                mass += static_cast<double>(dist[idx[j]]);
            }
            require(mass > 0.0, "generate: zero mass in top-k");
            std::vector<T> top(k);
            for (size_t j = 0; j < k; ++j) {
                top[j] = static_cast<T>(static_cast<double>(dist[idx[j]]) / mass);
            }
            return idx[categorical_sample(top, rng)];
        }
    }
    throw invalid_input("generate: bad mode");
}

} // namespace detail

// Ancestral decoding. Stops at EOS (not emitted) or after max_len tokens.
// The trace covers exactly the emitted tokens and its per-step numbers are
// bitwise identical to force-decoding the same output.
template <typename T>
Generation<T> generate(const LmParams<T> & p, const std::vector<int> & input_ids, GenMode mode, int max_len,
                       RngStream & rng, int topk = 0) {
    require(max_len > 0, "generate: max_len must be positive");
    std::vector<int> seq = pack_sequence(input_ids, {});
    require(seq.size() <= static_cast<size_t>(p.config.max_seq_len), "generate: input too long for max_seq_len");

    Generation<T> out;
    while (static_cast<int>(out.output_ids.size()) < max_len &&
           seq.size() < static_cast<size_t>(p.config.max_seq_len)) {
        const StepTrace<T> trace = forward(p, seq);
        const Step<T> & last = trace.back();
        const int tok = detail::pick_token(last.dist, mode, topk, rng);
        if (tok == EOS) {
            break;
        }
        Step<T> step;
        step.hidden = last.hidden;
        step.dist = last.dist;
        step.ref = tok;
        out.trace.push_back(std::move(step));
        out.output_ids.push_back(tok);
        seq.push_back(tok);
    }
    return out;
}

// Teacher-forces a candidate and returns one step per candidate token.
// The product of step probabilities equals the probability of obtaining
// the candidate by ancestral sampling.
template <typename T>
StepTrace<T> force_decode(const LmParams<T> & p, const std::vector<int> & input_ids,
                          const std::vector<int> & candidate_ids) {
    const std::vector<int> ids = pack_sequence(input_ids, candidate_ids);
    require(ids.size() <= static_cast<size_t>(p.config.max_seq_len), "force_decode: sequence too long");
    const StepTrace<T> full = forward(p, ids);
    const size_t start = 1 + input_ids.size();  // SEP position predicts candidate[0]
    StepTrace<T> out(candidate_ids.size());
    for (size_t t = 0; t < candidate_ids.size(); ++t) {
        out[t] = full[start + t];
        out[t].ref = candidate_ids[t];
    }
    return out;
}

} // namespace sqe
