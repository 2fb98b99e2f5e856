#pragma once

#include "sqe/checkpoint.hpp"
#include "sqe/corpus.hpp"
#include "sqe/decode.hpp"
#include "sqe/model.hpp"

#include <algorithm>
#include <vector>

namespace sqe {

// Per-example output-segment steps as consumed by head training: the
// hidden state feeding the unembedding heads, the softmax distribution
// and the reference token. Shared by the live path and the dump writer,
// so training from a full dump is bitwise identical to live training.
template <typename T>
std::vector<StepTrace<T>> extract_head_steps(const LmParams<T> & lm, const std::vector<ParallelExample> & corpus,
                                             int top_k = 0) {
    const int v = lm.config.vocab_size;
    if (top_k <= 0 || top_k > v) {
        top_k = v;
    }
    std::vector<StepTrace<T>> out;
    out.reserve(corpus.size());
    for (const ParallelExample & ex : corpus) {
        StepTrace<T> steps = force_decode(lm, ex.input_ids, ex.output_ids);
        if (top_k < v) {
            for (Step<T> & s : steps) {
                std::vector<int> idx(s.dist.size());
                for (size_t i = 0; i < idx.size(); ++i) {
                    idx[i] = static_cast<int>(i);
                }
                std::partial_sort(idx.begin(), idx.begin() + top_k, idx.end(), [&](int a, int b) {
                    if (s.dist[a] != s.dist[b]) {
                        return s.dist[a] > s.dist[b];
                    }
                    return a < b;
                });
                std::vector<T> trunc(s.dist.size(), T(0));
                for (int i = 0; i < top_k; ++i) {
                    trunc[idx[i]] = s.dist[idx[i]];
                }
                s.dist = std::move(trunc);
            }
        }
        out.push_back(std::move(steps));
    }
    return out;
}

struct DumpHeader {
    uint32_t vocab_size = 0;
    uint32_t hidden_dim = 0;
    uint16_t top_k = 0;
};

// SQED activation dump: header, then one record per output step with the
// hidden state, the reference token and the softmax top-k (ids, probs)
// plus the remaining tail mass.
inline void write_activation_dump(const std::string & path, const LmParams<float> & lm,
                                  const std::vector<ParallelExample> & corpus, int top_k) {
    const int v = lm.config.vocab_size;
    if (top_k <= 0 || top_k > v) {
        top_k = v;
    }
    const std::vector<StepTrace<float>> samples = extract_head_steps(lm, corpus, v);

    std::string out;
    out += "SQED";
    detail::put_u32(out, 1);  // version
    detail::put_u32(out, static_cast<uint32_t>(v));
    detail::put_u32(out, static_cast<uint32_t>(lm.config.d_model));
    detail::put_u16(out, static_cast<uint16_t>(top_k));

    for (size_t sample = 0; sample < samples.size(); ++sample) {
        const StepTrace<float> & steps = samples[sample];
        for (size_t t = 0; t < steps.size(); ++t) {
            const Step<float> & s = steps[t];
            detail::put_u64(out, sample);
            detail::put_u32(out, static_cast<uint32_t>(t));
            detail::put_u32(out, static_cast<uint32_t>(s.ref));
            for (float h : s.hidden) {
                detail::put_f32(out, h);
            }
            std::vector<int> idx(s.dist.size());
            for (size_t i = 0; i < idx.size(); ++i) {
                idx[i] = static_cast<int>(i);
            }
            std::partial_sort(idx.begin(), idx.begin() + top_k, idx.end(), [&](int a, int b) {
                if (s.dist[a] != s.dist[b]) {
                    return s.dist[a] > s.dist[b];
                }
                return a < b;
            });
            double kept = 0.0;
            for (int i = 0; i < top_k; ++i) {
                detail::put_u32(out, static_cast<uint32_t>(idx[i]));
                detail::put_f32(out, s.dist[idx[i]]);
                kept += static_cast<double>(s.dist[idx[i]]);
            }
            // Storing the whole vocabulary leaves no tail by definition.
            const float tail = top_k == v ? 0.0f : static_cast<float>(std::max(0.0, 1.0 - kept));
            detail::put_f32(out, tail);
        }
    }
    detail::write_file(path, out);
}

struct ActivationDump {
    DumpHeader header;
    // One trace per sample; dists are reconstructed over the full
    // vocabulary with zeros outside the stored top-k.
    std::vector<StepTrace<float>> samples;
    std::vector<std::vector<float>> tail_mass;  // per sample, per step
};

inline ActivationDump read_activation_dump(const std::string & path) {
    detail::ByteReader r(detail::read_file(path), path);
    if (r.bytes(4) != "SQED") {
        throw data_error(path + ": not an SQED activation dump");
    }
    const uint32_t version = r.u32();
    if (version != 1) {
        throw data_error(path + ": unsupported dump version " + std::to_string(version));
    }
    ActivationDump dump;
    dump.header.vocab_size = r.u32();
    dump.header.hidden_dim = r.u32();
    dump.header.top_k = r.u16();
    if (dump.header.top_k == 0 || dump.header.top_k > dump.header.vocab_size) {
        throw data_error(path + ": bad top_k in header");
    }

    uint64_t expected_sample = 0;
    uint32_t expected_step = 0;
    while (!r.eof()) {
        const uint64_t sample = r.u64();
        const uint32_t step = r.u32();
        if (sample == expected_sample + 1 && step == 0) {
            ++expected_sample;
            expected_step = 0;
        }
        if (sample != expected_sample || step != expected_step) {
            throw data_error(path + ": records out of order");
        }
        ++expected_step;

        Step<float> s;
        s.ref = static_cast<int>(r.u32());
        s.hidden.resize(dump.header.hidden_dim);
        for (float & h : s.hidden) {
            h = r.f32();
        }
        s.dist.assign(dump.header.vocab_size, 0.0f);
        for (uint16_t i = 0; i < dump.header.top_k; ++i) {
            const uint32_t tok = r.u32();
            const float prob = r.f32();
            if (tok >= dump.header.vocab_size) {
                throw data_error(path + ": token id out of range in record");
            }
            s.dist[tok] = prob;
        }
        const float tail = r.f32();
        if (dump.samples.size() <= sample) {
            dump.samples.resize(sample + 1);
            dump.tail_mass.resize(sample + 1);
        }
        dump.samples[sample].push_back(std::move(s));
        dump.tail_mass[sample].push_back(tail);
    }
    return dump;
}

} // namespace sqe
