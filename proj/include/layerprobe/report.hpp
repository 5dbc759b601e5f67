#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "layerprobe/analysis.hpp"
#include "layerprobe/attacks.hpp"
#include "layerprobe/protocol.hpp"
#include "layerprobe/training.hpp"

namespace layerprobe {

/// Tab-separated table with a fixed header row. Cells never contain tabs or newlines.
struct Table {
    std::string kind;  // e.g. "experiments", "reinit"; stored in the JSON document only
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    bool operator==(const Table&) const = default;
};

/// Shortest text that parses back to the same double, '.' as decimal separator.
std::string format_double(double value);
double parse_double(const std::string& text);

std::string to_tsv(const Table& table);
/// Parses a TSV produced by to_tsv; `kind` is attached to the result.
Table parse_tsv(const std::string& text, const std::string& kind);
/// JSON document {"kind": ..., "columns": [...], "rows": [{column: value}]} with numeric cells as numbers.
std::string to_json_document(const Table& table);

void write_tsv(const Table& table, const std::filesystem::path& path);
Table read_tsv(const std::filesystem::path& path, const std::string& kind);
void write_json_document(const Table& table, const std::filesystem::path& path);
/// Writes <stem>.tsv and <stem>.json into `dir`.
void write_report(const Table& table, const std::filesystem::path& dir, const std::string& stem);

/// Fixed columns: descriptor, pretrain_mode, retrain_mode, one 0/1 column per segment, clean_acc,
/// robust_acc, seed. Wall time is kept out of the table so that reruns compare byte for byte.
Table experiment_table(const std::vector<ExperimentReport>& reports, const std::vector<std::string>& segment_names);
std::vector<ExperimentReport> experiments_from_table(const Table& table);

Table reinit_table(const std::vector<ReinitEntry>& entries);
Table robustness_table(const RobustnessReport& report, const std::vector<std::string>& class_names);
Table history_table(const TrainHistory& history);

struct EmbeddingSummary {
    std::string segment;
    std::size_t clean_samples = 0;
    std::size_t adversarial_samples = 0;
    EmbeddingResult result;
};
Table embedding_table(const std::vector<EmbeddingSummary>& summaries);

/// Concatenates tables with identical columns, in argument order.
Table merge_tables(const std::vector<Table>& tables);

}  // namespace layerprobe
