#pragma once

#include "sqe/model.hpp"
#include "sqe/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace sqe {

inline void to_json(nlohmann::json & j, const LmConfig & c) {
    j = nlohmann::json{{"d_model", c.d_model},
                       {"n_layers", c.n_layers},
                       {"n_heads", c.n_heads},
                       {"d_ff", c.d_ff},
                       {"max_seq_len", c.max_seq_len},
                       {"vocab_size", c.vocab_size},
                       {"learning_rate", c.learning_rate},
                       {"adam_beta1", c.adam_beta1},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_eps", c.adam_eps},
                       {"grad_clip", c.grad_clip},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"tie_unembedding", c.tie_unembedding},
                       {"use_out_bias", c.use_out_bias},
                       {"token_mode", c.token_mode}};
}

inline void from_json(const nlohmann::json & j, LmConfig & c) {
    j.at("d_model").get_to(c.d_model);
    j.at("n_layers").get_to(c.n_layers);
    j.at("n_heads").get_to(c.n_heads);
    j.at("d_ff").get_to(c.d_ff);
    j.at("max_seq_len").get_to(c.max_seq_len);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("adam_beta1").get_to(c.adam_beta1);
    j.at("adam_beta2").get_to(c.adam_beta2);
    j.at("adam_eps").get_to(c.adam_eps);
    j.at("grad_clip").get_to(c.grad_clip);
    j.at("batch_size").get_to(c.batch_size);
    j.at("epochs").get_to(c.epochs);
    j.at("tie_unembedding").get_to(c.tie_unembedding);
    j.at("use_out_bias").get_to(c.use_out_bias);
    j.at("token_mode").get_to(c.token_mode);
}

namespace detail {

inline void put_u32(std::string & out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64(std::string & out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v & 0xffffffffull));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

inline void put_u16(std::string & out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_f32(std::string & out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class ByteReader {
  public:
    ByteReader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

    bool eof() const { return pos_ >= data_.size(); }
    size_t remaining() const { return data_.size() - pos_; }

    uint8_t u8() { return static_cast<uint8_t>(need(1)[0]); }

    uint16_t u16() {
        const char * p = need(2);
        return static_cast<uint16_t>(static_cast<uint8_t>(p[0])) |
               static_cast<uint16_t>(static_cast<uint8_t>(p[1])) << 8;
    }

    uint32_t u32() {
        const char * p = need(4);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<uint8_t>(p[i]);
        }
        return v;
    }

    uint64_t u64() {
        const uint64_t lo = u32();
        const uint64_t hi = u32();
        return lo | (hi << 32);
    }

    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::string bytes(size_t n) { return std::string(need(n), n); }

  private:
    const char * need(size_t n) {
        if (pos_ + n > data_.size()) {
            throw data_error(name_ + ": truncated file");
        }
        const char * p = data_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::string data_;
    std::string name_;
    size_t pos_ = 0;
};

inline std::string read_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw data_error("cannot open file: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string & path, const std::string & bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw data_error("cannot open file for writing: " + path);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw data_error("write failed: " + path);
    }
}

} // namespace detail

// SQE1 container: magic, version, length-prefixed JSON metadata, then
// named f32 tensors. Writing a loaded checkpoint reproduces it byte for
// byte.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    static constexpr uint32_t kVersion = 1;

    std::string serialize() const {
        std::string out;
        out += "SQE1";
        detail::put_u32(out, kVersion);
        const std::string meta_str = meta.dump();
        detail::put_u32(out, static_cast<uint32_t>(meta_str.size()));
        out += meta_str;
        detail::put_u32(out, static_cast<uint32_t>(tensors.size()));
        for (const auto & [name, t] : tensors) {
            detail::put_u32(out, static_cast<uint32_t>(name.size()));
            out += name;
            out.push_back(static_cast<char>(t.dims().size()));
            for (size_t d : t.dims()) {
                detail::put_u32(out, static_cast<uint32_t>(d));
            }
            for (size_t i = 0; i < t.size(); ++i) {
                detail::put_f32(out, t[i]);
            }
        }
        return out;
    }

    void save(const std::string & path) const { detail::write_file(path, serialize()); }

    static Checkpoint parse(std::string bytes, const std::string & name) {
        detail::ByteReader r(std::move(bytes), name);
        if (r.bytes(4) != "SQE1") {
            throw data_error(name + ": not an SQE1 checkpoint");
        }
        const uint32_t version = r.u32();
        if (version != kVersion) {
            throw data_error(name + ": unsupported checkpoint version " + std::to_string(version));
        }
        Checkpoint c;
        const uint32_t meta_len = r.u32();
        try {
            c.meta = nlohmann::json::parse(r.bytes(meta_len));
        } catch (const nlohmann::json::exception & e) {
            throw data_error(name + ": bad metadata JSON: " + e.what());
        }
        const uint32_t count = r.u32();
        for (uint32_t i = 0; i < count; ++i) {
            const uint32_t name_len = r.u32();
            std::string tname = r.bytes(name_len);
            const uint8_t rank = r.u8();
            std::vector<size_t> dims(rank);
            size_t total = 1;
            for (uint8_t d = 0; d < rank; ++d) {
                dims[d] = r.u32();
                total *= dims[d];
            }
            Tensor<float> t(dims);
            for (size_t k = 0; k < total; ++k) {
                t[k] = r.f32();
            }
            c.tensors.emplace_back(std::move(tname), std::move(t));
        }
        return c;
    }

    static Checkpoint load(const std::string & path) { return parse(detail::read_file(path), path); }

    const Tensor<float> * find(const std::string & name) const {
        for (const auto & [n, t] : tensors) {
            if (n == name) {
                return &t;
            }
        }
        return nullptr;
    }
};

template <typename T>
Tensor<float> to_f32(const Tensor<T> & t) {
    Tensor<float> out(t.dims());
    for (size_t i = 0; i < t.size(); ++i) {
        out[i] = static_cast<float>(t[i]);
    }
    return out;
}

template <typename T>
Tensor<T> from_f32(const Tensor<float> & t) {
    Tensor<T> out(t.dims());
    for (size_t i = 0; i < t.size(); ++i) {
        out[i] = static_cast<T>(t[i]);
    }
    return out;
}

// LM checkpoint. `extra` carries provenance (resolved run config, input
// hashes); it is stored under "provenance" and ignored by the loader.
template <typename T>
void save_lm(const std::string & path, const LmParams<T> & params, const nlohmann::json & extra = {}) {
    Checkpoint c;
    c.meta["kind"] = "lm";
    c.meta["config"] = params.config;
    c.meta["rng_algorithm"] = kRngAlgorithm;
    if (!extra.is_null() && !extra.empty()) {
        c.meta["provenance"] = extra;
    }
    params.for_each_tensor(
        [&](const std::string & name, const Tensor<T> & t) { c.tensors.emplace_back(name, to_f32(t)); });
    c.save(path);
}

template <typename T>
LmParams<T> lm_from_checkpoint(const Checkpoint & c, const std::string & name) {
    if (c.meta.value("kind", "") != "lm") {
        throw data_error(name + ": not an LM checkpoint");
    }
    LmConfig cfg = c.meta.at("config").get<LmConfig>();
    LmParams<T> p = LmParams<T>::zeros_like(cfg);
    size_t idx = 0;
    p.for_each_tensor([&](const std::string & tname, Tensor<T> & t) {
        if (idx >= c.tensors.size() || c.tensors[idx].first != tname) {
            throw data_error(name + ": tensor mismatch, expected '" + tname + "'");
        }
        const Tensor<float> & src = c.tensors[idx].second;
        if (src.dims() != t.dims()) {
            throw data_error(name + ": shape mismatch for tensor '" + tname + "'");
        }
        t = from_f32<T>(src);
        ++idx;
    });
    if (idx != c.tensors.size()) {
        throw data_error(name + ": unexpected extra tensors");
    }
    return p;
}

template <typename T>
LmParams<T> load_lm(const std::string & path) {
    return lm_from_checkpoint<T>(Checkpoint::load(path), path);
}

inline uint64_t file_hash(const std::string & path) {
    const std::string bytes = detail::read_file(path);
    return fnv1a64(bytes.data(), bytes.size());
}

} // namespace sqe
