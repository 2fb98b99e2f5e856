#pragma once

#include "sqe/common.hpp"
#include "sqe/dominant.hpp"
#include "sqe/rng.hpp"
#include "sqe/vocab.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace sqe {

enum class NsStrategy { Random, TokenFreq, SoftmaxDist, Mixture };

inline const char * to_string(NsStrategy s) {
    switch (s) {
        case NsStrategy::Random:
            return "random";
        case NsStrategy::TokenFreq:
            return "tokenfreq";
        case NsStrategy::SoftmaxDist:
            return "softmax";
        case NsStrategy::Mixture:
            return "mixture";
    }
    return "?";
}

struct SamplerSpec {
    NsStrategy strategy = NsStrategy::TokenFreq;
    double temperature = 1.0;  // SoftmaxDist: samples from softmax^(1/t), renormalized
    std::vector<SamplerSpec> components;
    std::vector<double> weights;  // mixture weights, sum to 1
    bool avoid_dominant = true;
    int n_negatives = 10;

    void validate() const {
        require(n_negatives >= 1, "SamplerSpec: n_negatives must be >= 1");
        require(temperature > 0.0, "SamplerSpec: temperature must be positive");
        if (strategy == NsStrategy::Mixture) {
            require(!components.empty(), "SamplerSpec: mixture needs components");
            require(components.size() == weights.size(), "SamplerSpec: one weight per component");
            double sum = 0.0;
            for (double w : weights) {
                require(w > 0.0, "SamplerSpec: mixture weights must be positive");
                sum += w;
            }
            require(std::fabs(sum - 1.0) <= 1e-9, "SamplerSpec: mixture weights must sum to 1");
            for (const SamplerSpec & c : components) {
                require(c.strategy != NsStrategy::Mixture, "SamplerSpec: mixtures cannot nest");
                c.validate();
            }
        } else {
            require(components.empty() && weights.empty(), "SamplerSpec: components only valid for mixture");
        }
    }

    // Human-readable setting name in the ablation-table convention, e.g.
    // "Softmax t2 + Token Freq + Avoid Dominant".
    std::string label() const {
        std::string out = base_label();
        if (avoid_dominant) {
            out += " + Avoid Dominant";
        }
        return out;
    }

  private:
    std::string base_label() const {
        switch (strategy) {
            case NsStrategy::Random:
                return "Random";
            case NsStrategy::TokenFreq:
                return "Token Freq";
            case NsStrategy::SoftmaxDist: {
                std::string s = "Softmax";
                if (temperature != 1.0) {
                    std::string t = std::to_string(temperature);
                    t.erase(t.find_last_not_of('0') + 1);
                    if (!t.empty() && t.back() == '.') {
                        t.pop_back();
                    }
                    s += " t" + t;
                }
                return s;
            }
            case NsStrategy::Mixture: {
                std::string s;
                for (size_t i = 0; i < components.size(); ++i) {
                    if (i > 0) {
                        s += " + ";
                    }
                    s += components[i].base_label();
                }
                return s;
            }
        }
        return "?";
    }
};

inline void to_json(nlohmann::json & j, const SamplerSpec & s) {
    j = nlohmann::json{{"strategy", to_string(s.strategy)},
                       {"avoid_dominant", s.avoid_dominant},
                       {"n_negatives", s.n_negatives}};
    if (s.strategy == NsStrategy::SoftmaxDist) {
        j["temperature"] = s.temperature;
    }
    if (s.strategy == NsStrategy::Mixture) {
        j["components"] = s.components;
        j["weights"] = s.weights;
    }
}

inline NsStrategy ns_strategy_from_string(const std::string & s) {
    if (s == "random") {
        return NsStrategy::Random;
    }
    if (s == "tokenfreq") {
        return NsStrategy::TokenFreq;
    }
    if (s == "softmax") {
        return NsStrategy::SoftmaxDist;
    }
    if (s == "mixture") {
        return NsStrategy::Mixture;
    }
    throw invalid_input("unknown negative-sampling strategy: " + s);
}

inline void from_json(const nlohmann::json & j, SamplerSpec & s) {
    s.strategy = ns_strategy_from_string(j.at("strategy").get<std::string>());
    s.avoid_dominant = j.at("avoid_dominant").get<bool>();
    s.n_negatives = j.at("n_negatives").get<int>();
    s.temperature = j.value("temperature", 1.0);
    if (j.contains("components")) {
        j.at("components").get_to(s.components);
        j.at("weights").get_to(s.weights);
    }
}

// One generation step as seen by the sampler: the reference token, the
// base model's softmax distribution and its dominant set.
template <typename T>
struct StepContext {
    int reference = -1;
    const std::vector<T> * softmax_dist = nullptr;
    const DominantSet * dominant = nullptr;
};

namespace detail {

inline bool reserved_excluded(int v) { return v == PAD || v == BOS || v == SEP || v == UNK; }

// Unrestricted sampling weights of one pure strategy over the vocabulary.
template <typename T>
std::vector<double> strategy_weights(const SamplerSpec & spec, const StepContext<T> & ctx,
                                     const FrequencyTable & freq, int vocab_size) {
    std::vector<double> w(vocab_size, 0.0);
    switch (spec.strategy) {
        case NsStrategy::Random:
            std::fill(w.begin(), w.end(), 1.0);
            break;
        case NsStrategy::TokenFreq:
            require(static_cast<int>(freq.probs.size()) == vocab_size,
                    "draw_negatives: frequency table size mismatch");
            w = freq.probs;
            break;
        case NsStrategy::SoftmaxDist: {
            require(ctx.softmax_dist != nullptr, "draw_negatives: softmax strategy needs a distribution");
            require(static_cast<int>(ctx.softmax_dist->size()) == vocab_size,
                    "draw_negatives: distribution size mismatch");
            const double inv_t = 1.0 / spec.temperature;
            for (int v = 0; v < vocab_size; ++v) {
                const double p = static_cast<double>((*ctx.softmax_dist)[v]);
                w[v] = p > 0.0 ? std::pow(p, inv_t) : 0.0;
            }
            break;
        }
        case NsStrategy::Mixture:
            throw invalid_input("strategy_weights: mixture is not a pure strategy");
    }
    return w;
}

struct ComponentCdf {
    std::vector<double> cdf;
    double total = 0.0;

    void build(const std::vector<double> & w) {
        cdf.resize(w.size());
        double acc = 0.0;
        for (size_t i = 0; i < w.size(); ++i) {
            acc += w[i];
            cdf[i] = acc;
        }
        total = acc;
    }

    int draw(RngStream & rng) const {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        return static_cast<int>(std::min<size_t>(it - cdf.begin(), cdf.size() - 1));
    }
};

} // namespace detail

inline constexpr int kRejectionCap = 1000;

// Draws n_negatives distinct token ids. The reference token, the reserved
// block (except EOS) and, when avoid_dominant is set, every dominant token
// are never returned. Sampling rejects excluded ids and duplicates; after
// kRejectionCap failed attempts for a single draw the eligible set is
// materialized and sampled exactly.
template <typename T>
std::vector<int> draw_negatives(const SamplerSpec & spec, const StepContext<T> & ctx, const FrequencyTable & freq,
                                RngStream & rng) {
    spec.validate();
    const int vocab_size = static_cast<int>(freq.probs.size());
    require(ctx.reference >= 0 && ctx.reference < vocab_size, "draw_negatives: reference out of range");
    if (spec.avoid_dominant) {
        require(ctx.dominant != nullptr, "draw_negatives: avoid_dominant needs a dominant set");
    }

    auto excluded = [&](int v) {
        return v == ctx.reference || detail::reserved_excluded(v) ||
               (spec.avoid_dominant && ctx.dominant->contains(v));
    };

    // Per-component unrestricted weights and CDFs.
    std::vector<const SamplerSpec *> comps;
    std::vector<double> comp_weights;
    if (spec.strategy == NsStrategy::Mixture) {
        for (size_t i = 0; i < spec.components.size(); ++i) {
            comps.push_back(&spec.components[i]);
            comp_weights.push_back(spec.weights[i]);
        }
    } else {
        comps.push_back(&spec);
        comp_weights.push_back(1.0);
    }
    std::vector<std::vector<double>> weights(comps.size());
    std::vector<detail::ComponentCdf> cdfs(comps.size());
    for (size_t c = 0; c < comps.size(); ++c) {
        weights[c] = detail::strategy_weights(*comps[c], ctx, freq, vocab_size);
        cdfs[c].build(weights[c]);
        require(cdfs[c].total > 0.0, "draw_negatives: component '" + comps[c]->label() + "' has zero total mass");
    }

    // Feasibility: enough eligible ids with positive probability under at
    // least one component.
    int eligible = 0;
    for (int v = 0; v < vocab_size; ++v) {
        if (excluded(v)) {
            continue;
        }
        for (size_t c = 0; c < comps.size(); ++c) {
            if (weights[c][v] > 0.0) {
                ++eligible;
                break;
            }
        }
    }
    if (eligible < spec.n_negatives) {
        throw invalid_input("draw_negatives: infeasible, " + std::to_string(eligible) +
                            " eligible tokens with positive probability but n_negatives=" +
                            std::to_string(spec.n_negatives) + " (strategy '" + spec.label() + "')");
    }

    std::vector<char> picked(vocab_size, 0);
    std::vector<int> out;
    out.reserve(spec.n_negatives);
    for (int k = 0; k < spec.n_negatives; ++k) {
        int token = -1;
        for (int attempt = 0; attempt < kRejectionCap; ++attempt) {
            size_t c = 0;
            if (comps.size() > 1) {
                const double u = rng.uniform();
                double acc = 0.0;
                for (size_t i = 0; i < comps.size(); ++i) {
                    acc += comp_weights[i];
                    if (u < acc) {
                        c = i;
                        break;
                    }
                    c = i;
                }
            }
            const int v = cdfs[c].draw(rng);
            if (!excluded(v) && !picked[v] && weights[c][v] > 0.0) {
                token = v;
                break;
            }
        }
        if (token < 0) {
            // Exact fallback: the rejection-equivalent marginal restricted
            // to eligible, still-unpicked ids.
            std::vector<double> w(vocab_size, 0.0);
            double total = 0.0;
            for (int v = 0; v < vocab_size; ++v) {
                if (excluded(v) || picked[v]) {
                    continue;
                }
                double m = 0.0;
                for (size_t c = 0; c < comps.size(); ++c) {
                    m += comp_weights[c] * weights[c][v] / cdfs[c].total;
                }
                w[v] = m;
                total += m;
            }
            if (total <= 0.0) {
                throw invalid_input("draw_negatives: no eligible tokens left with positive probability");
            }
            const double u = rng.uniform() * total;
            double acc = 0.0;
            token = -1;
            for (int v = 0; v < vocab_size; ++v) {
                acc += w[v];
                if (w[v] > 0.0 && u < acc) {
                    token = v;
                    break;
                }
            }
            if (token < 0) {
                for (int v = vocab_size - 1; v >= 0; --v) {
                    if (w[v] > 0.0) {
                        token = v;
                        break;
                    }
                }
            }
        }
        picked[token] = 1;
        out.push_back(token);
    }
    return out;
}

} // namespace sqe
