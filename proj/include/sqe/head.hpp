#pragma once

#include "sqe/checkpoint.hpp"
#include "sqe/dump.hpp"
#include "sqe/model.hpp"
#include "sqe/neg_sampling.hpp"
#include "sqe/ops.hpp"

#include <functional>
#include <type_traits>
#include <numeric>
#include <unordered_map>
#include <vector>

namespace sqe {

// The second unembedding head. Scores are independent per token: sigmoid
// activation, no sum-to-one constraint.
template <typename T>
struct HeadParams {
    Tensor<T> w;  // [V x d]
    Tensor<T> b;  // [V], empty when the head has no bias

    bool has_bias() const { return !b.empty(); }
    int vocab_size() const { return static_cast<int>(w.rows()); }
    int hidden_dim() const { return static_cast<int>(w.cols()); }
};

// Exact copy of the softmax head, so before any update the head logits
// equal the base model's output logits for every hidden state.
template <typename T>
HeadParams<T> init_from_softmax_head(const LmParams<T> & lm) {
    HeadParams<T> head;
    head.w = lm.unembedding();
    if (lm.config.use_out_bias) {
        head.b = lm.b_out;
    }
    return head;
}

template <typename T>
T head_score(const HeadParams<T> & head, const std::vector<T> & hidden, int id) {
    require(id >= 0 && id < head.vocab_size(), "head_score: token id out of range");
    require(static_cast<int>(hidden.size()) == head.hidden_dim(), "head_score: hidden size mismatch");
    double z = dot(head.w.row(static_cast<size_t>(id)), hidden.data(), hidden.size());
    if (head.has_bias()) {
        z += static_cast<double>(head.b[id]);
    }
    return sigmoid_scalar(static_cast<T>(z));
}

// Sparse evaluation: only the requested rows are touched; the full
// vocabulary is never materialized.
template <typename T>
std::vector<T> head_scores(const HeadParams<T> & head, const std::vector<T> & hidden, const std::vector<int> & ids) {
    std::vector<T> out(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        out[i] = head_score(head, hidden, ids[i]);
    }
    return out;
}

// Binary cross-entropy over the reference (label 1) and the sampled
// negatives (label 0). Probabilities are clamped only inside the logs.
template <typename T>
double bce_step_loss(const HeadParams<T> & head, const std::vector<T> & hidden, int ref,
                     const std::vector<int> & negatives, double clamp_eps = 1e-7) {
    require(clamp_eps > 0.0 && clamp_eps < 0.01, "bce_step_loss: clamp_eps out of range");
    for (int v : negatives) {
        require(v != ref, "bce_step_loss: reference token drawn as negative");
    }
    const double p_ref = static_cast<double>(head_score(head, hidden, ref));
    double loss = -std::log(std::min(std::max(p_ref, clamp_eps), 1.0 - clamp_eps));
    for (int v : negatives) {
        const double p = static_cast<double>(head_score(head, hidden, v));
        loss -= std::log(1.0 - std::min(std::max(p, clamp_eps), 1.0 - clamp_eps));
    }
    return loss;
}

// Gradient rows for the sampled tokens only. For token v with target t:
// d/dw_v = (p_v - t) * h, d/db_v = (p_v - t). No other row is touched.
template <typename T>
struct SparseRowGrads {
    std::vector<int> ids;
    std::vector<std::vector<T>> dw;  // per id, length d
    std::vector<T> db;               // per id
};

template <typename T>
SparseRowGrads<T> bce_step_grads(const HeadParams<T> & head, const std::vector<T> & hidden, int ref,
                                 const std::vector<int> & negatives) {
    for (int v : negatives) {
        require(v != ref, "bce_step_grads: reference token drawn as negative");
    }
    SparseRowGrads<T> g;
    g.ids.reserve(negatives.size() + 1);
    g.ids.push_back(ref);
    g.ids.insert(g.ids.end(), negatives.begin(), negatives.end());
    g.dw.resize(g.ids.size());
    g.db.resize(g.ids.size());
    for (size_t i = 0; i < g.ids.size(); ++i) {
        const double target = i == 0 ? 1.0 : 0.0;
        const double p = static_cast<double>(head_score(head, hidden, g.ids[i]));
        const double err = p - target;
        g.db[i] = static_cast<T>(err);
        g.dw[i].resize(hidden.size());
        for (size_t c = 0; c < hidden.size(); ++c) {
            g.dw[i][c] = static_cast<T>(err * static_cast<double>(hidden[c]));
        }
    }
    return g;
}

struct HeadTrainConfig {
    SamplerSpec sampler;
    double learning_rate = 0.05;
    int epochs = 30;
    std::string optimizer = "adam";  // adam | sgd
    double clamp_eps = 1e-7;
    std::string source = "live";  // live | dump, provenance only
    DominantConfig dominant;

    void validate() const {
        sampler.validate();
        require(learning_rate > 0.0, "HeadTrainConfig: learning_rate must be positive");
        require(epochs >= 0, "HeadTrainConfig: epochs must be >= 0");
        require(optimizer == "adam" || optimizer == "sgd", "HeadTrainConfig: unknown optimizer");
        require(clamp_eps > 0.0 && clamp_eps < 0.01, "HeadTrainConfig: clamp_eps out of range");
        dominant.validate();
    }
};

inline void to_json(nlohmann::json & j, const HeadTrainConfig & c) {
    j = nlohmann::json{{"sampler", c.sampler},
                       {"learning_rate", c.learning_rate},
                       {"epochs", c.epochs},
                       {"optimizer", c.optimizer},
                       {"clamp_eps", c.clamp_eps},
                       {"source", c.source},
                       {"dominant", {{"rel", c.dominant.rel}, {"abs", c.dominant.abs}, {"scan_cap", c.dominant.scan_cap}}}};
}

inline void from_json(const nlohmann::json & j, HeadTrainConfig & c) {
    j.at("sampler").get_to(c.sampler);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("epochs").get_to(c.epochs);
    j.at("optimizer").get_to(c.optimizer);
    j.at("clamp_eps").get_to(c.clamp_eps);
    j.at("source").get_to(c.source);
    c.dominant.rel = j.at("dominant").at("rel").get<double>();
    c.dominant.abs = j.at("dominant").at("abs").get<double>();
    c.dominant.scan_cap = j.at("dominant").at("scan_cap").get<int>();
}

struct HeadTrainStats {
    std::vector<double> epoch_loss;
    size_t steps_per_epoch = 0;
};

// Called once per training step after negatives are drawn; used by the
// acceptance suite to audit exclusion soundness.
template <typename T>
using HeadStepObserver =
    std::function<void(size_t example, size_t step, const StepContext<T> & ctx, const std::vector<int> & negatives)>;

namespace detail {

// Adam state exists only for rows an update has touched.
template <typename T>
struct HeadAdamRow {
    std::vector<T> m_w, v_w;
    T m_b = T(0), v_b = T(0);
    long t = 0;
};

template <typename T>
class HeadOptimizer {
  public:
    HeadOptimizer(const HeadTrainConfig & cfg, int hidden_dim) : cfg_(cfg), d_(hidden_dim) {}

    void apply(HeadParams<T> & head, const SparseRowGrads<T> & g) {
        if (cfg_.optimizer == "sgd") {
            for (size_t i = 0; i < g.ids.size(); ++i) {
                T * row = head.w.row(static_cast<size_t>(g.ids[i]));
                for (int c = 0; c < d_; ++c) {
                    row[c] = static_cast<T>(static_cast<double>(row[c]) -
                                            cfg_.learning_rate * static_cast<double>(g.dw[i][c]));
                }
                if (head.has_bias()) {
                    head.b[g.ids[i]] = static_cast<T>(static_cast<double>(head.b[g.ids[i]]) -
                                                      cfg_.learning_rate * static_cast<double>(g.db[i]));
                }
            }
            return;
        }
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        for (size_t i = 0; i < g.ids.size(); ++i) {
            HeadAdamRow<T> & st = rows_.try_emplace(g.ids[i]).first->second;
            if (st.m_w.empty()) {
                st.m_w.assign(d_, T(0));
                st.v_w.assign(d_, T(0));
            }
            ++st.t;
            const double bc1 = 1.0 - std::pow(b1, st.t);
            const double bc2 = 1.0 - std::pow(b2, st.t);
            T * row = head.w.row(static_cast<size_t>(g.ids[i]));
            for (int c = 0; c < d_; ++c) {
                const double gr = static_cast<double>(g.dw[i][c]);
                const double m = b1 * static_cast<double>(st.m_w[c]) + (1.0 - b1) * gr;
                const double v = b2 * static_cast<double>(st.v_w[c]) + (1.0 - b2) * gr * gr;
                st.m_w[c] = static_cast<T>(m);
                st.v_w[c] = static_cast<T>(v);
                row[c] = static_cast<T>(static_cast<double>(row[c]) -
                                        cfg_.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + eps));
            }
            if (head.has_bias()) {
                const double gr = static_cast<double>(g.db[i]);
                const double m = b1 * static_cast<double>(st.m_b) + (1.0 - b1) * gr;
                const double v = b2 * static_cast<double>(st.v_b) + (1.0 - b2) * gr * gr;
                st.m_b = static_cast<T>(m);
                st.v_b = static_cast<T>(v);
                head.b[g.ids[i]] = static_cast<T>(static_cast<double>(head.b[g.ids[i]]) -
                                                  cfg_.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + eps));
            }
        }
    }

  private:
    HeadTrainConfig cfg_;
    int d_;
    std::unordered_map<int, HeadAdamRow<T>> rows_;
};

} // namespace detail

// Core head-training loop over pre-extracted steps. Both the live path and
// the activation-dump path feed this with identical data, which is what
// makes dump-based training bitwise equal to live training.
template <typename T>
HeadParams<T> train_head_on_steps(HeadParams<T> head, const std::vector<StepTrace<T>> & samples,
                                  const FrequencyTable & freq, const HeadTrainConfig & cfg, RngStream & rng,
                                  HeadTrainStats * stats = nullptr,
                                  const std::type_identity_t<HeadStepObserver<T>> & observer = nullptr) {
    cfg.validate();

    // The base model is frozen, so each step's dominant set is fixed and
    // computed once up front.
    std::vector<std::vector<DominantSet>> dominant(samples.size());
    if (cfg.sampler.avoid_dominant) {
        for (size_t s = 0; s < samples.size(); ++s) {
            dominant[s].reserve(samples[s].size());
            for (const Step<T> & step : samples[s]) {
                dominant[s].push_back(find_dominant_truncated(step.dist, cfg.dominant));
            }
        }
    }

    size_t total_steps = 0;
    for (const auto & s : samples) {
        total_steps += s.size();
    }
    if (stats != nullptr) {
        stats->steps_per_epoch = total_steps;
    }

    detail::HeadOptimizer<T> opt(cfg, head.hidden_dim());
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (size_t oi = 0; oi < order.size(); ++oi) {
            const size_t s = order[oi];
            for (size_t t = 0; t < samples[s].size(); ++t) {
                const Step<T> & step = samples[s][t];
                StepContext<T> ctx;
                ctx.reference = step.ref;
                ctx.softmax_dist = &step.dist;
                ctx.dominant = cfg.sampler.avoid_dominant ? &dominant[s][t] : nullptr;
                std::vector<int> negatives;
                try {
                    negatives = draw_negatives(cfg.sampler, ctx, freq, rng);
                } catch (const invalid_input & e) {
                    throw invalid_input("train_head: sample " + std::to_string(s) + " step " + std::to_string(t) +
                                        ": " + e.what());
                }
                if (observer) {
                    observer(s, t, ctx, negatives);
                }
                loss_sum += bce_step_loss(head, step.hidden, step.ref, negatives, cfg.clamp_eps);
                const SparseRowGrads<T> g = bce_step_grads(head, step.hidden, step.ref, negatives);
                opt.apply(head, g);
            }
        }
        if (stats != nullptr) {
            stats->epoch_loss.push_back(loss_sum / static_cast<double>(total_steps));
        }
    }
    return head;
}

// Live-LM source: hidden states and softmax distributions come from
// forward passes over the frozen base model.
template <typename T>
HeadParams<T> train_head(const LmParams<T> & lm, const std::vector<ParallelExample> & corpus,
                         const FrequencyTable & freq, const HeadTrainConfig & cfg, RngStream & rng,
                         HeadTrainStats * stats = nullptr,
                         const std::type_identity_t<HeadStepObserver<T>> & observer = nullptr) {
    const std::vector<StepTrace<T>> samples = extract_head_steps(lm, corpus);
    return train_head_on_steps(init_from_softmax_head(lm), samples, freq, cfg, rng, stats, observer);
}

// Activation-dump source. With a full (top_k = |V|) dump this matches the
// live path bit for bit under the same seed.
inline HeadParams<float> train_head_from_dump(const LmParams<float> & lm, const ActivationDump & dump,
                                              const FrequencyTable & freq, const HeadTrainConfig & cfg,
                                              RngStream & rng, HeadTrainStats * stats = nullptr,
                                              const HeadStepObserver<float> & observer = nullptr) {
    require(dump.header.vocab_size == static_cast<uint32_t>(lm.config.vocab_size),
            "train_head_from_dump: vocab size mismatch");
    require(dump.header.hidden_dim == static_cast<uint32_t>(lm.config.d_model),
            "train_head_from_dump: hidden size mismatch");
    return train_head_on_steps(init_from_softmax_head(lm), dump.samples, freq, cfg, rng, stats, observer);
}

// Head checkpoint in the SQE1 container, tensors head.W_qe / head.b_qe.
template <typename T>
void save_head(const std::string & path, const HeadParams<T> & head, const HeadTrainConfig & cfg,
               const nlohmann::json & extra = {}) {
    Checkpoint c;
    c.meta["kind"] = "head";
    c.meta["train"] = cfg;
    c.meta["sampler_label"] = cfg.sampler.label();
    c.meta["rng_algorithm"] = kRngAlgorithm;
    if (!extra.is_null() && !extra.empty()) {
        c.meta["provenance"] = extra;
    }
    c.tensors.emplace_back("head.W_qe", to_f32(head.w));
    if (head.has_bias()) {
        c.tensors.emplace_back("head.b_qe", to_f32(head.b));
    }
    c.save(path);
}

template <typename T>
HeadParams<T> load_head(const std::string & path, HeadTrainConfig * cfg_out = nullptr) {
    const Checkpoint c = Checkpoint::load(path);
    if (c.meta.value("kind", "") != "head") {
        throw data_error(path + ": not a head checkpoint");
    }
    const Tensor<float> * w = c.find("head.W_qe");
    if (w == nullptr || w->dims().size() != 2) {
        throw data_error(path + ": missing head.W_qe tensor");
    }
    HeadParams<T> head;
    head.w = from_f32<T>(*w);
    if (const Tensor<float> * b = c.find("head.b_qe")) {
        head.b = from_f32<T>(*b);
    }
    if (cfg_out != nullptr && c.meta.contains("train")) {
        *cfg_out = c.meta.at("train").get<HeadTrainConfig>();
    }
    return head;
}

} // namespace sqe
