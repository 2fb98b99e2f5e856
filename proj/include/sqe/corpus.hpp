#pragma once

#include "sqe/common.hpp"
#include "sqe/vocab.hpp"

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sqe {

// One training pair, already encoded. The output is EOS-terminated.
struct ParallelExample {
    std::vector<int> input_ids;
    std::vector<int> output_ids;
};

// One evaluation candidate. Word labels, when present, are OK=true per
// whitespace word of the candidate.
struct CandidateRecord {
    std::string input;
    std::string candidate;
    std::optional<double> gold;
    std::optional<std::vector<bool>> word_labels;
};

inline std::vector<std::string> read_lines(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw data_error("cannot open file: " + path);
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        lines.push_back(line);
    }
    return lines;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string & line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        const size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

// Collects per-line diagnostics and throws once the whole file has been
// scanned, so a malformed file reports every offending line number.
class LineErrors {
  public:
    explicit LineErrors(std::string path) : path_(std::move(path)) {}

    void add(size_t line_no, const std::string & msg) {
        ++count_;
        if (shown_ < 8) {
            ++shown_;
            text_ += "\n  line " + std::to_string(line_no) + ": " + msg;
        }
    }

    void finish() const {
        if (count_ == 0) {
            return;
        }
        std::string msg = path_ + ": " + std::to_string(count_) + " malformed line(s)" + text_;
        if (count_ > shown_) {
            msg += "\n  ...";
        }
        throw data_error(msg);
    }

  private:
    std::string path_;
    size_t count_ = 0;
    size_t shown_ = 0;
    std::string text_;
};

inline std::optional<double> parse_score(const std::string & s) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) {
            return std::nullopt;
        }
        return v;
    } catch (const std::exception &) {
        return std::nullopt;
    }
}

} // namespace detail

// input<TAB>output, one example per line. Every line must parse; errors
// carry line numbers.
inline std::vector<ParallelExample> load_parallel(const std::string & path, const Vocab & vocab) {
    const std::vector<std::string> lines = read_lines(path);
    detail::LineErrors errors(path);
    std::vector<ParallelExample> out;
    out.reserve(lines.size());
    for (size_t i = 0; i < lines.size(); ++i) {
        const auto fields = detail::split_tabs(lines[i]);
        if (fields.size() != 2) {
            errors.add(i + 1, "expected input<TAB>output, got " + std::to_string(fields.size()) + " field(s)");
            continue;
        }
        ParallelExample ex;
        ex.input_ids = vocab.encode(fields[0]);
        ex.output_ids = vocab.encode(fields[1]);
        if (ex.output_ids.empty()) {
            errors.add(i + 1, "empty output");
            continue;
        }
        ex.output_ids.push_back(EOS);
        out.push_back(std::move(ex));
    }
    errors.finish();
    return out;
}

// input<TAB>candidate[<TAB>gold_score[<TAB>OK|BAD word labels]]
inline std::vector<CandidateRecord> load_candidates(const std::string & path) {
    const std::vector<std::string> lines = read_lines(path);
    detail::LineErrors errors(path);
    std::vector<CandidateRecord> out;
    out.reserve(lines.size());
    for (size_t i = 0; i < lines.size(); ++i) {
        const auto fields = detail::split_tabs(lines[i]);
        if (fields.size() < 2 || fields.size() > 4) {
            errors.add(i + 1, "expected 2-4 tab-separated fields, got " + std::to_string(fields.size()));
            continue;
        }
        CandidateRecord rec;
        rec.input = fields[0];
        rec.candidate = fields[1];
        bool bad = false;
        if (fields.size() >= 3 && !fields[2].empty()) {
            rec.gold = detail::parse_score(fields[2]);
            if (!rec.gold) {
                errors.add(i + 1, "non-numeric gold score '" + fields[2] + "'");
                bad = true;
            }
        }
        if (!bad && fields.size() == 4) {
            std::vector<bool> labels;
            std::istringstream in(fields[3]);
            std::string lab;
            while (in >> lab) {
                if (lab == "OK") {
                    labels.push_back(true);
                } else if (lab == "BAD") {
                    labels.push_back(false);
                } else {
                    errors.add(i + 1, "bad word label '" + lab + "' (expected OK or BAD)");
                    bad = true;
                    break;
                }
            }
            const size_t words = tokenize(rec.candidate, TokenMode::Whitespace).size();
            if (!bad && labels.size() != words) {
                errors.add(i + 1, "label count " + std::to_string(labels.size()) +
                                      " does not match word count " + std::to_string(words));
                bad = true;
            }
            if (!bad) {
                rec.word_labels = std::move(labels);
            }
        }
        if (!bad) {
            out.push_back(std::move(rec));
        }
    }
    errors.finish();
    return out;
}

inline void save_parallel(const std::string & path, const std::vector<std::pair<std::string, std::string>> & pairs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw data_error("cannot open file for writing: " + path);
    }
    for (const auto & [in_text, out_text] : pairs) {
        out << in_text << '\t' << out_text << '\n';
    }
}

inline void save_candidates(const std::string & path, const std::vector<CandidateRecord> & records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw data_error("cannot open file for writing: " + path);
    }
    for (const CandidateRecord & rec : records) {
        out << rec.input << '\t' << rec.candidate;
        if (rec.gold) {
            std::ostringstream gold;
            gold << *rec.gold;
            out << '\t' << gold.str();
        }
        if (rec.word_labels) {
            out << '\t';
            for (size_t i = 0; i < rec.word_labels->size(); ++i) {
                out << (i > 0 ? " " : "") << ((*rec.word_labels)[i] ? "OK" : "BAD");
            }
        }
        out << '\n';
    }
}

} // namespace sqe
