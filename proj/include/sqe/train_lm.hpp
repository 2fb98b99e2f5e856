#pragma once

#include "sqe/corpus.hpp"
#include "sqe/model.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace sqe {

namespace detail {

template <typename T>
void layer_norm_bwd(const std::vector<std::vector<T>> & dy, const LnCache<T> & cache, const Tensor<T> & g,
                    Tensor<T> & dg, Tensor<T> & db, std::vector<std::vector<T>> & dx) {
    const size_t n = dy.size();
    const size_t d = g.size();
    dx.assign(n, std::vector<T>(d));
    for (size_t i = 0; i < n; ++i) {
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        std::vector<double> dxhat(d);
        for (size_t c = 0; c < d; ++c) {
            const double dyc = static_cast<double>(dy[i][c]);
            const double xh = static_cast<double>(cache.xhat[i][c]);
            dg[c] = static_cast<T>(static_cast<double>(dg[c]) + dyc * xh);
            db[c] = static_cast<T>(static_cast<double>(db[c]) + dyc);
            dxhat[c] = dyc * static_cast<double>(g[c]);
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh;
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        const double rstd = static_cast<double>(cache.rstd[i]);
        for (size_t c = 0; c < d; ++c) {
            const double xh = static_cast<double>(cache.xhat[i][c]);
            dx[i][c] = static_cast<T>(rstd * (dxhat[c] - mean_dxhat - xh * mean_dxhat_xhat));
        }
    }
}

// dW += dy (x) x, outer product accumulate.
template <typename T>
void outer_acc(Tensor<T> & dw, const std::vector<T> & dy, const std::vector<T> & x) {
    for (size_t r = 0; r < dy.size(); ++r) {
        T * row = dw.row(r);
        const double dr = static_cast<double>(dy[r]);
        for (size_t c = 0; c < x.size(); ++c) {
            row[c] = static_cast<T>(static_cast<double>(row[c]) + dr * static_cast<double>(x[c]));
        }
    }
}

// y = W^T dy accumulated into out.
template <typename T>
void matvec_t_acc(const Tensor<T> & w, const std::vector<T> & dy, std::vector<T> & out) {
    for (size_t c = 0; c < w.cols(); ++c) {
        double acc = static_cast<double>(out[c]);
        for (size_t r = 0; r < w.rows(); ++r) {
            acc += static_cast<double>(w.at(r, c)) * static_cast<double>(dy[r]);
        }
        out[c] = static_cast<T>(acc);
    }
}

// Backpropagates dlogits through the whole network, accumulating into g.
template <typename T>
void backward_sequence(const LmParams<T> & p, const FwdCache<T> & cache,
                       const std::vector<std::vector<T>> & dlogits, LmParams<T> & g) {
    const LmConfig & cfg = p.config;
    const size_t n = cache.ids.size();
    const size_t d = static_cast<size_t>(cfg.d_model);
    const size_t nh = static_cast<size_t>(cfg.n_heads);
    const size_t dh = static_cast<size_t>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Unembedding head.
    const Tensor<T> & wu = p.unembedding();
    Tensor<T> & dwu = cfg.tie_unembedding ? g.tok_emb : g.w_out;
    std::vector<std::vector<T>> dh_final(n, std::vector<T>(d, T(0)));
    for (size_t i = 0; i < n; ++i) {
        bool any = false;
        for (const T & v : dlogits[i]) {
            if (v != T(0)) {
                any = true;
                break;
            }
        }
        if (!any) {
            continue;
        }
        outer_acc(dwu, dlogits[i], cache.lnf.out[i]);
        if (cfg.use_out_bias) {
            for (size_t v = 0; v < dlogits[i].size(); ++v) {
                g.b_out[v] = static_cast<T>(static_cast<double>(g.b_out[v]) + static_cast<double>(dlogits[i][v]));
            }
        }
        matvec_t_acc(wu, dlogits[i], dh_final[i]);
    }

    std::vector<std::vector<T>> dx;
    layer_norm_bwd(dh_final, cache.lnf, p.lnf_g, g.lnf_g, g.lnf_b, dx);

    for (size_t li = p.layers.size(); li-- > 0;) {
        const LmLayer<T> & l = p.layers[li];
        const LayerCache<T> & lc = cache.layers[li];
        LmLayer<T> & gl = g.layers[li];

        // MLP branch: x_out = x_mid + fc2(gelu(fc1(ln2(x_mid)))).
        std::vector<std::vector<T>> dln2_out(n, std::vector<T>(d, T(0)));
        for (size_t i = 0; i < n; ++i) {
            const std::vector<T> & dm = dx[i];
            outer_acc(gl.fc2_w, dm, lc.g[i]);
            for (size_t c = 0; c < d; ++c) {
                gl.fc2_b[c] = static_cast<T>(static_cast<double>(gl.fc2_b[c]) + static_cast<double>(dm[c]));
            }
            std::vector<T> dgv(lc.g[i].size(), T(0));
            matvec_t_acc(l.fc2_w, dm, dgv);
            std::vector<T> du(dgv.size());
            for (size_t c = 0; c < dgv.size(); ++c) {
                du[c] = static_cast<T>(static_cast<double>(dgv[c]) * gelu_grad(static_cast<double>(lc.u[i][c])));
            }
            outer_acc(gl.fc1_w, du, lc.ln2.out[i]);
            for (size_t c = 0; c < du.size(); ++c) {
                gl.fc1_b[c] = static_cast<T>(static_cast<double>(gl.fc1_b[c]) + static_cast<double>(du[c]));
            }
            matvec_t_acc(l.fc1_w, du, dln2_out[i]);
        }
        std::vector<std::vector<T>> dx_mid;
        layer_norm_bwd(dln2_out, lc.ln2, l.ln2_g, gl.ln2_g, gl.ln2_b, dx_mid);
        for (size_t i = 0; i < n; ++i) {
            for (size_t c = 0; c < d; ++c) {
                dx_mid[i][c] = static_cast<T>(static_cast<double>(dx_mid[i][c]) + static_cast<double>(dx[i][c]));
            }
        }

        // Attention branch: x_mid = x_in + wo(ctx).
        std::vector<std::vector<T>> dq(n, std::vector<T>(d, T(0)));
        std::vector<std::vector<T>> dk(n, std::vector<T>(d, T(0)));
        std::vector<std::vector<T>> dv(n, std::vector<T>(d, T(0)));
        for (size_t i = 0; i < n; ++i) {
            const std::vector<T> & dao = dx_mid[i];
            outer_acc(gl.wo, dao, lc.ctx[i]);
            std::vector<T> dctx(d, T(0));
            matvec_t_acc(l.wo, dao, dctx);
            for (size_t h = 0; h < nh; ++h) {
                const size_t off = h * dh;
                const T * att = lc.att[i].data() + h * (i + 1);
                std::vector<double> datt(i + 1, 0.0);
                for (size_t j = 0; j <= i; ++j) {
                    datt[j] = dot(dctx.data() + off, lc.v[j].data() + off, dh);
                    for (size_t c = 0; c < dh; ++c) {
                        dv[j][off + c] = static_cast<T>(static_cast<double>(dv[j][off + c]) +
                                                        static_cast<double>(att[j]) *
                                                            static_cast<double>(dctx[off + c]));
                    }
                }
                double datt_dot = 0.0;
                for (size_t j = 0; j <= i; ++j) {
                    datt_dot += static_cast<double>(att[j]) * datt[j];
                }
                for (size_t j = 0; j <= i; ++j) {
                    const double dscore = static_cast<double>(att[j]) * (datt[j] - datt_dot) * scale;
                    for (size_t c = 0; c < dh; ++c) {
                        dq[i][off + c] = static_cast<T>(static_cast<double>(dq[i][off + c]) +
                                                        dscore * static_cast<double>(lc.k[j][off + c]));
                        dk[j][off + c] = static_cast<T>(static_cast<double>(dk[j][off + c]) +
                                                        dscore * static_cast<double>(lc.q[i][off + c]));
                    }
                }
            }
        }

        std::vector<std::vector<T>> dln1_out(n, std::vector<T>(d, T(0)));
        for (size_t i = 0; i < n; ++i) {
            outer_acc(gl.wq, dq[i], lc.ln1.out[i]);
            outer_acc(gl.wk, dk[i], lc.ln1.out[i]);
            outer_acc(gl.wv, dv[i], lc.ln1.out[i]);
            matvec_t_acc(l.wq, dq[i], dln1_out[i]);
            matvec_t_acc(l.wk, dk[i], dln1_out[i]);
            matvec_t_acc(l.wv, dv[i], dln1_out[i]);
        }
        std::vector<std::vector<T>> dx_in;
        layer_norm_bwd(dln1_out, lc.ln1, l.ln1_g, gl.ln1_g, gl.ln1_b, dx_in);
        for (size_t i = 0; i < n; ++i) {
            for (size_t c = 0; c < d; ++c) {
                dx_in[i][c] = static_cast<T>(static_cast<double>(dx_in[i][c]) + static_cast<double>(dx_mid[i][c]));
            }
        }
        dx = std::move(dx_in);
    }

    for (size_t i = 0; i < n; ++i) {
        T * dte = g.tok_emb.row(static_cast<size_t>(cache.ids[i]));
        T * dpe = g.pos_emb.row(i);
        for (size_t c = 0; c < d; ++c) {
            dte[c] = static_cast<T>(static_cast<double>(dte[c]) + static_cast<double>(dx[i][c]));
            dpe[c] = static_cast<T>(static_cast<double>(dpe[c]) + static_cast<double>(dx[i][c]));
        }
    }
}

// First predicted output position of a packed example: the SEP position.
inline size_t output_start(const ParallelExample & ex) { return 1 + ex.input_ids.size(); }

} // namespace detail

// Mean cross-entropy over output-segment positions. Input prefix and
// padding never contribute to the loss.
template <typename T>
double ce_loss(const LmParams<T> & p, const std::vector<ParallelExample> & batch) {
    require(!batch.empty(), "ce_loss: empty batch");
    double total = 0.0;
    size_t count = 0;
    for (const ParallelExample & ex : batch) {
        require(!ex.output_ids.empty(), "ce_loss: example with no output positions");
        const std::vector<int> ids = pack_sequence(ex.input_ids, ex.output_ids);
        detail::FwdCache<T> cache;
        detail::forward_cache(p, ids, cache);
        const size_t start = detail::output_start(ex);
        for (size_t i = start; i + 1 < ids.size(); ++i) {
            const int ref = ids[i + 1];
            const double pr = std::max(static_cast<double>(cache.probs[i][ref]), kLogFloor);
            total -= std::log(pr);
            ++count;
        }
    }
    require(count > 0, "ce_loss: batch has no output positions");
    return total / static_cast<double>(count);
}

template <typename T>
struct LossAndGrads {
    double loss = 0.0;
    LmParams<T> grads;
};

// Loss plus hand-derived gradients for every parameter tensor.
template <typename T>
LossAndGrads<T> ce_loss_and_grads(const LmParams<T> & p, const std::vector<ParallelExample> & batch) {
    require(!batch.empty(), "ce_loss_and_grads: empty batch");
    size_t count = 0;
    for (const ParallelExample & ex : batch) {
        require(!ex.output_ids.empty(), "ce_loss_and_grads: example with no output positions");
        count += ex.output_ids.size();
    }
    require(count > 0, "ce_loss_and_grads: batch has no output positions");

    LossAndGrads<T> out;
    out.grads = LmParams<T>::zeros_like(p.config);
    const double inv = 1.0 / static_cast<double>(count);
    double total = 0.0;

    for (const ParallelExample & ex : batch) {
        const std::vector<int> ids = pack_sequence(ex.input_ids, ex.output_ids);
        detail::FwdCache<T> cache;
        detail::forward_cache(p, ids, cache);

        std::vector<std::vector<T>> dlogits(ids.size());
        for (size_t i = 0; i < ids.size(); ++i) {
            dlogits[i].assign(p.config.vocab_size, T(0));
        }
        const size_t start = detail::output_start(ex);
        for (size_t i = start; i + 1 < ids.size(); ++i) {
            const int ref = ids[i + 1];
            const double pr = std::max(static_cast<double>(cache.probs[i][ref]), kLogFloor);
            total -= std::log(pr);
            for (int v = 0; v < p.config.vocab_size; ++v) {
                dlogits[i][v] = static_cast<T>(static_cast<double>(cache.probs[i][v]) * inv);
            }
            dlogits[i][ref] = static_cast<T>(static_cast<double>(dlogits[i][ref]) - inv);
        }
        detail::backward_sequence(p, cache, dlogits, out.grads);
    }
    out.loss = total * inv;
    return out;
}

template <typename T>
std::vector<Tensor<T> *> tensor_list(LmParams<T> & p) {
    std::vector<Tensor<T> *> out;
    p.for_each_tensor([&](const std::string &, Tensor<T> & t) { out.push_back(&t); });
    return out;
}

// Dense Adam over the full parameter set, with global-norm clipping.
template <typename T>
class AdamOptimizer {
  public:
    explicit AdamOptimizer(const LmConfig & cfg)
        : cfg_(cfg), m_(LmParams<T>::zeros_like(cfg)), v_(LmParams<T>::zeros_like(cfg)) {}

    void step(LmParams<T> & params, LmParams<T> & grads) {
        clip_global_norm(grads, cfg_.grad_clip);
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
        const auto ps = tensor_list(params);
        const auto gs = tensor_list(grads);
        const auto ms = tensor_list(m_);
        const auto vs = tensor_list(v_);
        for (size_t ti = 0; ti < ps.size(); ++ti) {
            Tensor<T> & pt = *ps[ti];
            Tensor<T> & gt = *gs[ti];
            Tensor<T> & mt = *ms[ti];
            Tensor<T> & vt = *vs[ti];
            for (size_t i = 0; i < pt.size(); ++i) {
                const double g = static_cast<double>(gt[i]);
                const double mi = cfg_.adam_beta1 * static_cast<double>(mt[i]) + (1.0 - cfg_.adam_beta1) * g;
                const double vi = cfg_.adam_beta2 * static_cast<double>(vt[i]) + (1.0 - cfg_.adam_beta2) * g * g;
                mt[i] = static_cast<T>(mi);
                vt[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                pt[i] = static_cast<T>(static_cast<double>(pt[i]) -
                                       cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
            }
        }
    }

    static void clip_global_norm(LmParams<T> & grads, double max_norm) {
        if (max_norm <= 0.0) {
            return;
        }
        double sq = 0.0;
        grads.for_each_tensor([&](const std::string &, const Tensor<T> & t) {
            for (size_t i = 0; i < t.size(); ++i) {
                sq += static_cast<double>(t[i]) * static_cast<double>(t[i]);
            }
        });
        const double norm = std::sqrt(sq);
        if (norm <= max_norm) {
            return;
        }
        const double s = max_norm / norm;
        grads.for_each_tensor([&](const std::string &, Tensor<T> & t) {
            for (size_t i = 0; i < t.size(); ++i) {
                t[i] = static_cast<T>(static_cast<double>(t[i]) * s);
            }
        });
    }

  private:
    LmConfig cfg_;
    LmParams<T> m_, v_;
    long t_ = 0;
};

struct TrainLog {
    std::vector<double> epoch_loss;
    double final_loss = 0.0;
};

// Deterministic single-threaded training: per-epoch shuffling and every
// update are fully determined by (seed, data, config).
template <typename T>
LmParams<T> train_lm(const std::vector<ParallelExample> & corpus, const LmConfig & cfg, RngStream & rng,
                     TrainLog * log = nullptr,
                     const std::function<void(int, double)> & on_epoch = nullptr) {
    require(!corpus.empty(), "train_lm: empty corpus");
    for (const ParallelExample & ex : corpus) {
        require(ex.input_ids.size() + ex.output_ids.size() + 2 <= static_cast<size_t>(cfg.max_seq_len),
                "train_lm: example longer than max_seq_len");
    }

    LmParams<T> params = init_lm<T>(cfg, rng);
    AdamOptimizer<T> opt(cfg);

    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t epoch_positions = 0;
        for (size_t off = 0; off < order.size(); off += cfg.batch_size) {
            std::vector<ParallelExample> batch;
            for (size_t i = off; i < std::min(order.size(), off + cfg.batch_size); ++i) {
                batch.push_back(corpus[order[i]]);
            }
            LossAndGrads<T> lg;
            try {
                lg = ce_loss_and_grads(params, batch);
            } catch (const invalid_input & e) {
                // Inputs were validated up front; a precondition failure
                // mid-training means activations blew up.
                throw data_error("train_lm: training diverged (non-finite values) at epoch " +
                                 std::to_string(epoch) + ": " + e.what());
            }
            if (!std::isfinite(lg.loss)) {
                throw data_error("train_lm: loss diverged (non-finite) at epoch " + std::to_string(epoch));
            }
            size_t batch_positions = 0;
            for (const ParallelExample & ex : batch) {
                batch_positions += ex.output_ids.size();
            }
            epoch_loss += lg.loss * static_cast<double>(batch_positions);
            epoch_positions += batch_positions;
            opt.step(params, lg.grads);
        }
        const double mean_loss = epoch_loss / static_cast<double>(epoch_positions);
        if (log != nullptr) {
            log->epoch_loss.push_back(mean_loss);
            log->final_loss = mean_loss;
        }
        if (on_epoch) {
            on_epoch(epoch, mean_loss);
        }
    }
    return params;
}

} // namespace sqe
