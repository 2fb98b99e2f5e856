#pragma once

#include "sqe/common.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace sqe {

enum class TokenMode { Char, Whitespace };

inline const char * to_string(TokenMode m) {
    return m == TokenMode::Char ? "char" : "whitespace";
}

inline TokenMode token_mode_from_string(const std::string & s) {
    if (s == "char") {
        return TokenMode::Char;
    }
    if (s == "whitespace") {
        return TokenMode::Whitespace;
    }
    throw invalid_input("unknown token mode: " + s);
}

// Reserved ids occupy a fixed low block.
enum ReservedId : int { PAD = 0, BOS = 1, EOS = 2, SEP = 3, UNK = 4 };
inline constexpr int kNumReserved = 5;
inline constexpr std::array<const char *, kNumReserved> kReservedTokens = {
    "<pad>", "<bos>", "<eos>", "<sep>", "<unk>",
};

// Splits a text into surface tokens. Char mode emits one token per byte
// (tabs and line breaks are treated as separators and skipped, so TSV
// fields always round-trip).
inline std::vector<std::string> tokenize(const std::string & text, TokenMode mode) {
    std::vector<std::string> out;
    if (mode == TokenMode::Whitespace) {
        std::istringstream in(text);
        std::string tok;
        while (in >> tok) {
            out.push_back(tok);
        }
    } else {
        for (char c : text) {
            if (c == '\t' || c == '\n' || c == '\r') {
                continue;
            }
            out.emplace_back(1, c);
        }
    }
    return out;
}

class Vocab {
  public:
    Vocab() = default;

    // Ids are dense: the reserved block first, then content tokens in
    // descending count order with lexicographic tie-breaking.
    static Vocab build(const std::vector<std::string> & corpus_lines, TokenMode mode, long min_count = 1) {
        require(!corpus_lines.empty(), "build_vocab: empty corpus");
        require(min_count >= 1, "build_vocab: min_count must be >= 1");

        std::map<std::string, long> raw;
        for (const std::string & line : corpus_lines) {
            for (const std::string & tok : tokenize(line, mode)) {
                ++raw[tok];
            }
        }

        // UNK folding happens before the final counts so the frequency
        // table reflects the post-UNK token stream.
        long unk_count = 0;
        std::vector<std::pair<std::string, long>> kept;
        for (const auto & [tok, count] : raw) {
            if (count < min_count || is_reserved_string(tok)) {
                unk_count += count;
            } else {
                kept.emplace_back(tok, count);
            }
        }
        std::stable_sort(kept.begin(), kept.end(), [](const auto & a, const auto & b) {
            if (a.second != b.second) {
                return a.second > b.second;
            }
            return a.first < b.first;
        });

        Vocab v;
        v.mode_ = mode;
        v.init_reserved();
        v.counts_[UNK] = unk_count;
        for (const auto & [tok, count] : kept) {
            v.push_token(tok, count);
        }
        return v;
    }

    TokenMode mode() const { return mode_; }
    int size() const { return static_cast<int>(tokens_.size()); }

    const std::string & token(int id) const {
        require(id >= 0 && id < size(), "Vocab::token: id out of range");
        return tokens_[id];
    }

    long count(int id) const {
        require(id >= 0 && id < size(), "Vocab::count: id out of range");
        return counts_[id];
    }

    static bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

    int id_of(const std::string & tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? UNK : it->second;
    }

    bool contains(const std::string & tok) const { return index_.count(tok) != 0; }

    std::vector<int> encode(const std::string & text) const {
        std::vector<int> ids;
        for (const std::string & tok : tokenize(text, mode_)) {
            ids.push_back(is_reserved_string(tok) ? UNK : id_of(tok));
        }
        return ids;
    }

    std::string decode(const std::vector<int> & ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (mode_ == TokenMode::Whitespace && i > 0) {
                out += ' ';
            }
            out += token(ids[i]);
        }
        return out;
    }

    // token<TAB>count per line, content tokens only; line order defines
    // the ids after the reserved block. Rewrites are byte-identical.
    void save(const std::string & path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw data_error("cannot open vocab file for writing: " + path);
        }
        out << serialize();
    }

    std::string serialize() const {
        std::string s;
        for (int id = kNumReserved; id < size(); ++id) {
            s += tokens_[id];
            s += '\t';
            s += std::to_string(counts_[id]);
            s += '\n';
        }
        // The UNK count is not derivable from the content lines.
        s += "<unk>\t" + std::to_string(counts_[UNK]) + '\n';
        return s;
    }

    static Vocab load(const std::string & path, TokenMode mode) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw data_error("cannot open vocab file: " + path);
        }
        Vocab v;
        v.mode_ = mode;
        v.init_reserved();
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            const size_t tab = line.find('\t');
            if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
                throw data_error("vocab file " + path + " line " + std::to_string(line_no) +
                                 ": expected token<TAB>count");
            }
            const std::string tok = line.substr(0, tab);
            long count = 0;
            try {
                size_t pos = 0;
                count = std::stol(line.substr(tab + 1), &pos);
                if (pos != line.size() - tab - 1) {
                    throw std::invalid_argument("trailing");
                }
            } catch (const std::exception &) {
                throw data_error("vocab file " + path + " line " + std::to_string(line_no) +
                                 ": non-numeric count");
            }
            if (count < 0) {
                throw data_error("vocab file " + path + " line " + std::to_string(line_no) +
                                 ": negative count");
            }
            if (tok == "<unk>") {
                v.counts_[UNK] = count;
                continue;
            }
            if (is_reserved_string(tok) || v.contains(tok)) {
                throw data_error("vocab file " + path + " line " + std::to_string(line_no) +
                                 ": duplicate or reserved token '" + tok + "'");
            }
            v.push_token(tok, count);
        }
        return v;
    }

  private:
    static bool is_reserved_string(const std::string & tok) {
        for (const char * r : kReservedTokens) {
            if (tok == r) {
                return true;
            }
        }
        return false;
    }

    void init_reserved() {
        for (const char * r : kReservedTokens) {
            push_token(r, 0);
        }
    }

    void push_token(const std::string & tok, long count) {
        index_.emplace(tok, static_cast<int>(tokens_.size()));
        tokens_.push_back(tok);
        counts_.push_back(count);
    }

    TokenMode mode_ = TokenMode::Whitespace;
    std::vector<std::string> tokens_;
    std::vector<long> counts_;
    std::unordered_map<std::string, int> index_;
};

// Unigram distribution over the vocabulary, proportional to raw corpus
// counts. Reserved tokens always have probability zero.
struct FrequencyTable {
    std::vector<double> probs;

    bool positive(int id) const { return probs[id] > 0.0; }
};

inline FrequencyTable unigram_distribution(const Vocab & vocab) {
    double total = 0.0;
    for (int id = kNumReserved; id < vocab.size(); ++id) {
        total += static_cast<double>(vocab.count(id));
    }
    require(total > 0.0, "unigram_distribution: all content counts are zero");
    FrequencyTable t;
    t.probs.assign(vocab.size(), 0.0);
    for (int id = kNumReserved; id < vocab.size(); ++id) {
        t.probs[id] = static_cast<double>(vocab.count(id)) / total;
    }
    return t;
}

// Token ids of a candidate plus one contiguous token span per whitespace
// word. In char mode a word's span also covers the separator space that
// follows it, so the spans partition the token sequence exactly.
struct EncodedWords {
    std::vector<int> ids;
    std::vector<std::pair<size_t, size_t>> spans;  // [begin, end) per word
};

inline EncodedWords encode_words(const std::string & text, const Vocab & vocab) {
    EncodedWords out;
    const std::vector<std::string> words = tokenize(text, TokenMode::Whitespace);
    for (size_t w = 0; w < words.size(); ++w) {
        const size_t begin = out.ids.size();
        if (vocab.mode() == TokenMode::Whitespace) {
            std::vector<int> ids = vocab.encode(words[w]);
            out.ids.insert(out.ids.end(), ids.begin(), ids.end());
        } else {
            for (char c : words[w]) {
                out.ids.push_back(vocab.id_of(std::string(1, c)));
            }
            if (w + 1 < words.size()) {
                out.ids.push_back(vocab.id_of(" "));
            }
        }
        out.spans.emplace_back(begin, out.ids.size());
    }
    return out;
}

} // namespace sqe
