#include "layerprobe/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace layerprobe {

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, ptr);
}

double parse_double(const std::string& text) {
    if (text == "nan") return std::nan("");
    if (text == "inf") return std::numeric_limits<double>::infinity();
    if (text == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw std::invalid_argument("'" + text + "' is not a number");
    }
    return v;
}

namespace {

void check_cell(const std::string& cell) {
    if (cell.find_first_of("\t\n\r") != std::string::npos) {
        throw std::invalid_argument("table cell contains a tab or newline: '" + cell + "'");
    }
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

bool numeric(const std::string& cell) {
    if (cell.empty()) return false;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    return ec == std::errc() && ptr == cell.data() + cell.size();
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::size_t column_index(const Table& t, const std::string& name) {
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
        if (t.columns[i] == name) return i;
    }
    throw std::invalid_argument("table lacks column '" + name + "'");
}

}  // namespace

std::string to_tsv(const Table& table) {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        if (cells.size() != table.columns.size()) {
            throw std::invalid_argument("table row has " + std::to_string(cells.size()) + " cells, header has " +
                                        std::to_string(table.columns.size()));
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            check_cell(cells[i]);
            if (i) out += '\t';
            out += cells[i];
        }
        out += '\n';
    };
    line(table.columns);
    for (const auto& row : table.rows) line(row);
    return out;
}

Table parse_tsv(const std::string& text, const std::string& kind) {
    Table t;
    t.kind = kind;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (number == 1) {
            t.columns = split_tabs(line);
            continue;
        }
        if (line.empty()) continue;
        auto cells = split_tabs(line);
        if (cells.size() != t.columns.size()) {
            throw std::invalid_argument("line " + std::to_string(number) + " has " + std::to_string(cells.size()) +
                                        " cells, header has " + std::to_string(t.columns.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    if (number == 0) throw std::invalid_argument("empty table");
    return t;
}

std::string to_json_document(const Table& table) {
    nlohmann::ordered_json doc;
    doc["kind"] = table.kind;
    doc["columns"] = table.columns;
    doc["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : table.rows) {
        nlohmann::ordered_json r = nlohmann::ordered_json::object();
        for (std::size_t i = 0; i < row.size() && i < table.columns.size(); ++i) {
            if (numeric(row[i])) {
                r[table.columns[i]] = parse_double(row[i]);
            } else {
                r[table.columns[i]] = row[i];
            }
        }
        doc["rows"].push_back(std::move(r));
    }
    return doc.dump(2) + "\n";
}

void write_tsv(const Table& table, const std::filesystem::path& path) { write_file(path, to_tsv(table)); }

Table read_tsv(const std::filesystem::path& path, const std::string& kind) { return parse_tsv(read_file(path), kind); }

void write_json_document(const Table& table, const std::filesystem::path& path) {
    write_file(path, to_json_document(table));
}

void write_report(const Table& table, const std::filesystem::path& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    write_tsv(table, dir / (stem + ".tsv"));
    write_json_document(table, dir / (stem + ".json"));
}

Table experiment_table(const std::vector<ExperimentReport>& reports, const std::vector<std::string>& segment_names) {
    Table t;
    t.kind = "experiments";
    t.columns = {"descriptor", "pretrain_mode", "retrain_mode"};
    for (const auto& s : segment_names) t.columns.push_back("train_" + s);
    t.columns.insert(t.columns.end(), {"clean_acc", "robust_acc", "seed"});
    for (const auto& r : reports) {
        if (r.segment_trainable.size() != segment_names.size()) {
            throw std::invalid_argument("report '" + r.descriptor + "' has " +
                                        std::to_string(r.segment_trainable.size()) + " segment flags, expected " +
                                        std::to_string(segment_names.size()));
        }
        std::vector<std::string> row{r.descriptor, r.pretrain_mode, r.retrain_mode};
        for (bool f : r.segment_trainable) row.push_back(f ? "1" : "0");
        row.push_back(format_double(r.clean_acc));
        row.push_back(format_double(r.robust_acc));
        row.push_back(std::to_string(r.seed));
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::vector<ExperimentReport> experiments_from_table(const Table& table) {
    const auto descriptor = column_index(table, "descriptor");
    const auto pretrain = column_index(table, "pretrain_mode");
    const auto retrain = column_index(table, "retrain_mode");
    const auto clean = column_index(table, "clean_acc");
    const auto robust = column_index(table, "robust_acc");
    const auto seed = column_index(table, "seed");
    std::vector<std::size_t> flags;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (table.columns[i].rfind("train_", 0) == 0) flags.push_back(i);
    }
    std::vector<ExperimentReport> out;
    for (const auto& row : table.rows) {
        ExperimentReport r;
        r.descriptor = row[descriptor];
        r.pretrain_mode = row[pretrain];
        r.retrain_mode = row[retrain];
        for (auto f : flags) r.segment_trainable.push_back(row[f] == "1");
        r.clean_acc = parse_double(row[clean]);
        r.robust_acc = parse_double(row[robust]);
        r.seed = std::stoull(row[seed]);
        out.push_back(std::move(r));
    }
    return out;
}

Table reinit_table(const std::vector<ReinitEntry>& entries) {
    Table t;
    t.kind = "reinit";
    t.columns = {"layer", "layer_index", "clean_acc", "robust_acc"};
    for (const auto& e : entries) {
        t.rows.push_back({e.layer, std::to_string(e.layer_index), format_double(e.clean_acc), format_double(e.robust_acc)});
    }
    return t;
}

Table robustness_table(const RobustnessReport& report, const std::vector<std::string>& class_names) {
    Table t;
    t.kind = "attack_eval";
    t.columns = {"class", "clean_acc", "robust_acc"};
    t.rows.push_back({"all", format_double(report.clean_acc), format_double(report.robust_acc)});
    for (std::size_t c = 0; c < report.per_class_clean_acc.size(); ++c) {
        std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
        t.rows.push_back({name, format_double(report.per_class_clean_acc[c]), format_double(report.per_class_robust_acc[c])});
    }
    return t;
}

Table history_table(const TrainHistory& history) {
    Table t;
    t.kind = "history";
    t.columns = {"epoch", "train_loss", "clean_acc", "robust_acc", "lr"};
    for (const auto& e : history.epochs) {
        t.rows.push_back({std::to_string(e.epoch), format_double(e.train_loss), format_double(e.clean_acc),
                          format_double(e.robust_acc), format_double(e.lr)});
    }
    return t;
}

Table embedding_table(const std::vector<EmbeddingSummary>& summaries) {
    Table t;
    t.kind = "embedding";
    t.columns = {"segment", "clean_samples", "adversarial_samples", "pca_dims", "perplexity", "iterations",
                 "kl_after_exaggeration", "kl", "js_divergence"};
    for (const auto& s : summaries) {
        const auto& r = s.result;
        t.rows.push_back({s.segment, std::to_string(s.clean_samples), std::to_string(s.adversarial_samples),
                          std::to_string(r.pca_dims), format_double(r.perplexity), std::to_string(r.iterations),
                          format_double(r.kl_after_exaggeration), format_double(r.kl), format_double(r.js)});
    }
    return t;
}

Table merge_tables(const std::vector<Table>& tables) {
    if (tables.empty()) throw std::invalid_argument("merge_tables: nothing to merge");
    Table out;
    out.kind = tables.front().kind;
    out.columns = tables.front().columns;
    for (const auto& t : tables) {
        if (t.columns != out.columns) throw std::invalid_argument("merge_tables: column headers differ");
        out.rows.insert(out.rows.end(), t.rows.begin(), t.rows.end());
    }
    return out;
}

}  // namespace layerprobe
