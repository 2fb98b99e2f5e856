#pragma once

#include "sqe/common.hpp"
#include "sqe/qe.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sqe {

// Cross-run comparison assembled from saved evaluation reports: one row
// per run, one column per scoring method.
struct Comparison {
    struct Row {
        std::string label;
        std::string source;
        std::map<std::string, std::optional<double>> pearson;
        std::map<std::string, std::optional<double>> bce;
    };
    std::vector<Row> rows;
    std::vector<std::string> methods;

    static Comparison from_report_files(const std::vector<std::string> & paths,
                                        const std::vector<std::string> & labels = {}) {
        require(!paths.empty(), "report: no input reports");
        require(labels.empty() || labels.size() == paths.size(), "report: one label per report");
        Comparison cmp;
        std::set<std::string> methods;
        for (size_t i = 0; i < paths.size(); ++i) {
            std::ifstream in(paths[i], std::ios::binary);
            if (!in) {
                throw data_error("cannot open report: " + paths[i]);
            }
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception & e) {
                throw data_error(paths[i] + ": bad report JSON: " + e.what());
            }
            Row row;
            row.source = paths[i];
            row.label = !labels.empty() ? labels[i]
                                        : j["metadata"].value("label", paths[i]);
            if (!j.contains("metrics")) {
                throw data_error(paths[i] + ": report has no metrics");
            }
            for (const auto & [name, m] : j["metrics"].items()) {
                methods.insert(name);
                row.pearson[name] =
                    m.contains("pearson") && !m["pearson"].is_null()
                        ? std::optional<double>(m["pearson"].get<double>())
                        : std::nullopt;
                row.bce[name] = m.contains("bce") && !m["bce"].is_null()
                                    ? std::optional<double>(m["bce"].get<double>())
                                    : std::nullopt;
            }
            cmp.rows.push_back(std::move(row));
        }
        cmp.methods.assign(methods.begin(), methods.end());
        return cmp;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["methods"] = methods;
        nlohmann::json rows_json = nlohmann::json::array();
        for (const Row & row : rows) {
            nlohmann::json r;
            r["label"] = row.label;
            r["source"] = row.source;
            for (const std::string & m : methods) {
                nlohmann::json cell;
                const auto p = row.pearson.find(m);
                const auto b = row.bce.find(m);
                cell["pearson"] = p != row.pearson.end() && p->second ? nlohmann::json(*p->second)
                                                                      : nlohmann::json(nullptr);
                cell["bce"] =
                    b != row.bce.end() && b->second ? nlohmann::json(*b->second) : nlohmann::json(nullptr);
                r["metrics"][m] = cell;
            }
            rows_json.push_back(std::move(r));
        }
        j["rows"] = rows_json;
        return j;
    }

    std::string to_csv() const {
        std::ostringstream out;
        out << "label";
        for (const std::string & m : methods) {
            out << ",pearson:" << m << ",bce:" << m;
        }
        out << "\n";
        for (const Row & row : rows) {
            out << row.label;
            for (const std::string & m : methods) {
                const auto p = row.pearson.find(m);
                const auto b = row.bce.find(m);
                out << ",";
                if (p != row.pearson.end() && p->second) {
                    out << *p->second;
                }
                out << ",";
                if (b != row.bce.end() && b->second) {
                    out << *b->second;
                }
            }
            out << "\n";
        }
        return out.str();
    }

    // Fixed-width text table (Pearson); undefined cells print "undef".
    std::string to_text() const {
        size_t label_w = 5;
        for (const Row & row : rows) {
            label_w = std::max(label_w, row.label.size());
        }
        std::ostringstream out;
        out << std::left << std::setw(static_cast<int>(label_w) + 2) << "label";
        for (const std::string & m : methods) {
            out << std::right << std::setw(std::max<int>(12, static_cast<int>(m.size()) + 2)) << m;
        }
        out << "\n";
        for (const Row & row : rows) {
            out << std::left << std::setw(static_cast<int>(label_w) + 2) << row.label;
            for (const std::string & m : methods) {
                const int w = std::max<int>(12, static_cast<int>(m.size()) + 2);
                const auto p = row.pearson.find(m);
                std::ostringstream cell;
                if (p != row.pearson.end() && p->second) {
                    cell << std::fixed << std::setprecision(4) << *p->second;
                } else {
                    cell << "undef";
                }
                out << std::right << std::setw(w) << cell.str();
            }
            out << "\n";
        }
        return out.str();
    }
};

} // namespace sqe
