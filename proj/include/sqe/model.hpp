#pragma once

#include "sqe/common.hpp"
#include "sqe/ops.hpp"
#include "sqe/rng.hpp"
#include "sqe/tensor.hpp"
#include "sqe/vocab.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace sqe {

struct LmConfig {
    int d_model = 32;
    int n_layers = 1;
    int n_heads = 2;
    int d_ff = 64;
    int max_seq_len = 32;
    int vocab_size = 0;

    double learning_rate = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int batch_size = 8;
    int epochs = 100;

    bool tie_unembedding = false;
    bool use_out_bias = true;
    std::string token_mode = "whitespace";

    void validate() const {
        require(d_model > 0 && n_layers > 0 && n_heads > 0 && d_ff > 0, "LmConfig: dims must be positive");
        require(max_seq_len > 0 && vocab_size > kNumReserved, "LmConfig: bad max_seq_len or vocab_size");
        require(d_model % n_heads == 0, "LmConfig: d_model must be divisible by n_heads");
        require(learning_rate > 0 && batch_size > 0 && epochs >= 0, "LmConfig: bad training settings");
        require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0,
                "LmConfig: bad adam settings");
    }

    int head_dim() const { return d_model / n_heads; }
};

inline constexpr double kLnEps = 1e-5;

template <typename T>
struct LmLayer {
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> wq, wk, wv, wo;  // [d x d], no bias
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> fc1_w, fc1_b;  // [d_ff x d], [d_ff]
    Tensor<T> fc2_w, fc2_b;  // [d x d_ff], [d]
};

template <typename T>
struct LmParams {
    LmConfig config;
    Tensor<T> tok_emb;  // [V x d]
    Tensor<T> pos_emb;  // [max_seq x d]
    std::vector<LmLayer<T>> layers;
    Tensor<T> lnf_g, lnf_b;
    Tensor<T> w_out;  // [V x d]; absent when tied to tok_emb
    Tensor<T> b_out;  // [V]; absent when use_out_bias is false

    const Tensor<T> & unembedding() const { return config.tie_unembedding ? tok_emb : w_out; }

    static LmParams zeros_like(const LmConfig & cfg) {
        cfg.validate();
        const auto d = static_cast<size_t>(cfg.d_model);
        const auto v = static_cast<size_t>(cfg.vocab_size);
        const auto ff = static_cast<size_t>(cfg.d_ff);
        LmParams p;
        p.config = cfg;
        p.tok_emb = Tensor<T>({v, d});
        p.pos_emb = Tensor<T>({static_cast<size_t>(cfg.max_seq_len), d});
        p.layers.resize(cfg.n_layers);
        for (auto & l : p.layers) {
            l.ln1_g = Tensor<T>({d});
            l.ln1_b = Tensor<T>({d});
            l.wq = Tensor<T>({d, d});
            l.wk = Tensor<T>({d, d});
            l.wv = Tensor<T>({d, d});
            l.wo = Tensor<T>({d, d});
            l.ln2_g = Tensor<T>({d});
            l.ln2_b = Tensor<T>({d});
            l.fc1_w = Tensor<T>({ff, d});
            l.fc1_b = Tensor<T>({ff});
            l.fc2_w = Tensor<T>({d, ff});
            l.fc2_b = Tensor<T>({d});
        }
        p.lnf_g = Tensor<T>({d});
        p.lnf_b = Tensor<T>({d});
        if (!cfg.tie_unembedding) {
            p.w_out = Tensor<T>({v, d});
        }
        if (cfg.use_out_bias) {
            p.b_out = Tensor<T>({v});
        }
        return p;
    }

    // Visits every parameter tensor in a fixed order; the same order is
    // used by the optimizer, the checkpoint writer and the grad checks.
    template <typename Fn>
    void for_each_tensor(Fn && fn) {
        fn("tok_emb", tok_emb);
        fn("pos_emb", pos_emb);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string pre = "layer" + std::to_string(i) + ".";
            auto & l = layers[i];
            fn(pre + "ln1_g", l.ln1_g);
            fn(pre + "ln1_b", l.ln1_b);
            fn(pre + "wq", l.wq);
            fn(pre + "wk", l.wk);
            fn(pre + "wv", l.wv);
            fn(pre + "wo", l.wo);
            fn(pre + "ln2_g", l.ln2_g);
            fn(pre + "ln2_b", l.ln2_b);
            fn(pre + "fc1_w", l.fc1_w);
            fn(pre + "fc1_b", l.fc1_b);
            fn(pre + "fc2_w", l.fc2_w);
            fn(pre + "fc2_b", l.fc2_b);
        }
        fn("lnf_g", lnf_g);
        fn("lnf_b", lnf_b);
        if (!config.tie_unembedding) {
            fn("w_out", w_out);
        }
        if (config.use_out_bias) {
            fn("b_out", b_out);
        }
    }

    template <typename Fn>
    void for_each_tensor(Fn && fn) const {
        const_cast<LmParams *>(this)->for_each_tensor(
            [&](const std::string & name, Tensor<T> & t) { fn(name, static_cast<const Tensor<T> &>(t)); });
    }
};

// Scaled normal init; projections that feed residual sums get the usual
// 1/sqrt(2*n_layers) shrink. Layer norms start at scale 1, shift 0.
template <typename T>
LmParams<T> init_lm(const LmConfig & cfg, RngStream & rng) {
    LmParams<T> p = LmParams<T>::zeros_like(cfg);
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * cfg.n_layers);

    auto fill_normal = [&rng](Tensor<T> & t, double std) {
        for (size_t i = 0; i < t.size(); ++i) {
            t[i] = static_cast<T>(rng.normal(0.0, std));
        }
    };

    p.for_each_tensor([&](const std::string & name, Tensor<T> & t) {
        const bool is_resid_proj = name.ends_with(".wo") || name.ends_with(".fc2_w");
        const bool is_norm_scale = name.ends_with("ln1_g") || name.ends_with("ln2_g") || name == "lnf_g";
        const bool is_bias = name.ends_with("_b") || name == "b_out";
        if (is_norm_scale) {
            t.fill(T(1));
        } else if (is_bias) {
            t.fill(T(0));
        } else if (is_resid_proj) {
            fill_normal(t, resid_std);
        } else {
            fill_normal(t, base_std);
        }
    });
    return p;
}

// One generation step: the hidden state that feeds the unembedding heads,
// the softmax distribution and the reference (next) token, -1 if unknown.
template <typename T>
struct Step {
    std::vector<T> hidden;
    std::vector<T> dist;
    int ref = -1;
};

template <typename T>
using StepTrace = std::vector<Step<T>>;

namespace detail {

template <typename T>
struct LnCache {
    std::vector<std::vector<T>> xhat;  // normalized input per position
    std::vector<T> rstd;
    std::vector<std::vector<T>> out;  // scale/shift applied
};

template <typename T>
void layer_norm_fwd(const std::vector<std::vector<T>> & x, const Tensor<T> & g, const Tensor<T> & b,
                    LnCache<T> & cache) {
    const size_t n = x.size();
    const size_t d = g.size();
    cache.xhat.assign(n, std::vector<T>(d));
    cache.rstd.assign(n, T(0));
    cache.out.assign(n, std::vector<T>(d));
    for (size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (size_t c = 0; c < d; ++c) {
            mean += static_cast<double>(x[i][c]);
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t c = 0; c < d; ++c) {
            const double dv = static_cast<double>(x[i][c]) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        cache.rstd[i] = static_cast<T>(rstd);
        for (size_t c = 0; c < d; ++c) {
            const double xh = (static_cast<double>(x[i][c]) - mean) * rstd;
            cache.xhat[i][c] = static_cast<T>(xh);
            cache.out[i][c] = static_cast<T>(xh * static_cast<double>(g[c]) + static_cast<double>(b[c]));
        }
    }
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / M_SQRT2)); }

inline double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x / M_SQRT2)) + x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

template <typename T>
struct LayerCache {
    std::vector<std::vector<T>> x_in;
    LnCache<T> ln1;
    std::vector<std::vector<T>> q, k, v;
    // att[i] holds, per head, the attention row over positions 0..i.
    std::vector<std::vector<T>> att;
    std::vector<std::vector<T>> ctx;
    std::vector<std::vector<T>> x_mid;
    LnCache<T> ln2;
    std::vector<std::vector<T>> u;  // fc1 pre-activation
    std::vector<std::vector<T>> g;  // gelu output
};

template <typename T>
struct FwdCache {
    std::vector<int> ids;
    std::vector<std::vector<T>> emb;
    std::vector<LayerCache<T>> layers;
    LnCache<T> lnf;
    std::vector<std::vector<T>> logits;
    std::vector<std::vector<T>> probs;
};

template <typename T>
std::vector<T> matvec(const Tensor<T> & w, const std::vector<T> & x) {
    std::vector<T> y(w.rows());
    for (size_t r = 0; r < w.rows(); ++r) {
        y[r] = static_cast<T>(dot(w.row(r), x.data(), x.size()));
    }
    return y;
}

// Causal forward pass over a packed sequence. Position i only ever reads
// positions <= i, so per-position results are identical for any suffix.
template <typename T>
void forward_cache(const LmParams<T> & p, const std::vector<int> & ids, FwdCache<T> & cache) {
    const LmConfig & cfg = p.config;
    const size_t n = ids.size();
    require(n > 0, "forward: empty sequence");
    require(n <= static_cast<size_t>(cfg.max_seq_len), "forward: sequence longer than max_seq_len");
    const size_t d = static_cast<size_t>(cfg.d_model);
    const size_t nh = static_cast<size_t>(cfg.n_heads);
    const size_t dh = static_cast<size_t>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.ids = ids;
    cache.emb.assign(n, std::vector<T>(d));
    for (size_t i = 0; i < n; ++i) {
        require(ids[i] >= 0 && ids[i] < cfg.vocab_size, "forward: token id out of range");
        const T * te = p.tok_emb.row(static_cast<size_t>(ids[i]));
        const T * pe = p.pos_emb.row(i);
        for (size_t c = 0; c < d; ++c) {
            cache.emb[i][c] = static_cast<T>(static_cast<double>(te[c]) + static_cast<double>(pe[c]));
        }
    }

    std::vector<std::vector<T>> x = cache.emb;
    cache.layers.assign(p.layers.size(), LayerCache<T>{});
    for (size_t li = 0; li < p.layers.size(); ++li) {
        const LmLayer<T> & l = p.layers[li];
        LayerCache<T> & lc = cache.layers[li];
        lc.x_in = x;
        layer_norm_fwd(lc.x_in, l.ln1_g, l.ln1_b, lc.ln1);

        lc.q.resize(n);
        lc.k.resize(n);
        lc.v.resize(n);
        for (size_t i = 0; i < n; ++i) {
            lc.q[i] = matvec(l.wq, lc.ln1.out[i]);
            lc.k[i] = matvec(l.wk, lc.ln1.out[i]);
            lc.v[i] = matvec(l.wv, lc.ln1.out[i]);
        }

        lc.att.assign(n, {});
        lc.ctx.assign(n, std::vector<T>(d, T(0)));
        for (size_t i = 0; i < n; ++i) {
            lc.att[i].assign(nh * (i + 1), T(0));
            for (size_t h = 0; h < nh; ++h) {
                const size_t off = h * dh;
                std::vector<T> scores(i + 1);
                for (size_t j = 0; j <= i; ++j) {
                    scores[j] = static_cast<T>(dot(lc.q[i].data() + off, lc.k[j].data() + off, dh) * scale);
                }
                const std::vector<T> w = softmax(scores);
                for (size_t j = 0; j <= i; ++j) {
                    lc.att[i][h * (i + 1) + j] = w[j];
                }
                for (size_t c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (size_t j = 0; j <= i; ++j) {
                        acc += static_cast<double>(w[j]) * static_cast<double>(lc.v[j][off + c]);
                    }
                    lc.ctx[i][off + c] = static_cast<T>(acc);
                }
            }
        }

        lc.x_mid.assign(n, std::vector<T>(d));
        for (size_t i = 0; i < n; ++i) {
            const std::vector<T> ao = matvec(l.wo, lc.ctx[i]);
            for (size_t c = 0; c < d; ++c) {
                lc.x_mid[i][c] = static_cast<T>(static_cast<double>(lc.x_in[i][c]) + static_cast<double>(ao[c]));
            }
        }

        layer_norm_fwd(lc.x_mid, l.ln2_g, l.ln2_b, lc.ln2);
        lc.u.resize(n);
        lc.g.resize(n);
        x.assign(n, std::vector<T>(d));
        for (size_t i = 0; i < n; ++i) {
            lc.u[i] = affine(l.fc1_w, lc.ln2.out[i], &l.fc1_b.vec());
            lc.g[i].resize(lc.u[i].size());
            for (size_t c = 0; c < lc.u[i].size(); ++c) {
                lc.g[i][c] = static_cast<T>(gelu(static_cast<double>(lc.u[i][c])));
            }
            const std::vector<T> m = affine(l.fc2_w, lc.g[i], &l.fc2_b.vec());
            for (size_t c = 0; c < d; ++c) {
                x[i][c] = static_cast<T>(static_cast<double>(lc.x_mid[i][c]) + static_cast<double>(m[c]));
            }
        }
    }

    layer_norm_fwd(x, p.lnf_g, p.lnf_b, cache.lnf);
    cache.logits.resize(n);
    cache.probs.resize(n);
    const Tensor<T> & wu = p.unembedding();
    for (size_t i = 0; i < n; ++i) {
        cache.logits[i] = matvec(wu, cache.lnf.out[i]);
        if (cfg.use_out_bias) {
            for (size_t v = 0; v < cache.logits[i].size(); ++v) {
                cache.logits[i][v] =
                    static_cast<T>(static_cast<double>(cache.logits[i][v]) + static_cast<double>(p.b_out[v]));
            }
        }
        cache.probs[i] = softmax(cache.logits[i]);
    }
}

} // namespace detail

// Full-sequence forward pass. The returned trace has one step per input
// position; hidden states are the exact unembedding inputs (post final
// layer norm) and ref holds the next token where one exists.
template <typename T>
StepTrace<T> forward(const LmParams<T> & p, const std::vector<int> & ids) {
    detail::FwdCache<T> cache;
    detail::forward_cache(p, ids, cache);
    StepTrace<T> trace(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        trace[i].hidden = cache.lnf.out[i];
        trace[i].dist = cache.probs[i];
        trace[i].ref = i + 1 < ids.size() ? ids[i + 1] : -1;
    }
    return trace;
}

// BOS input SEP output packing shared by training and decoding.
inline std::vector<int> pack_sequence(const std::vector<int> & input_ids, const std::vector<int> & output_ids) {
    std::vector<int> ids;
    ids.reserve(input_ids.size() + output_ids.size() + 2);
    ids.push_back(BOS);
    ids.insert(ids.end(), input_ids.begin(), input_ids.end());
    ids.push_back(SEP);
    ids.insert(ids.end(), output_ids.begin(), output_ids.end());
    return ids;
}

} // namespace sqe
