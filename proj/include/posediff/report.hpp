#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace posediff {

/// Per-sample metric rows plus aggregates. Serialized as comment-prefixed
/// metadata, CSV rows, a summary block (column means), and a wall-clock line
/// that is excluded from reproducibility comparisons. Loading re-derives the
/// aggregates from the rows and rejects a file whose stored summary drifted.
struct Report {
    std::string command;
    std::string task;
    uint64_t seed = 0;
    std::string config_echo;               // single-line JSON
    std::vector<std::string> columns;       // first column is "id"
    std::vector<std::vector<double>> rows;
    std::map<std::string, double> summary;  // mean per non-id column
    double wallclock_s = 0.0;

    void recompute_summary();
};

void write_report(const std::string& path, const Report& report);
Report load_report(const std::string& path);

/// Side-by-side aggregate comparison: aligned text block followed by
/// machine-readable CSV (metric, one column per report, deltas vs the first).
std::string render_comparison(const std::vector<Report>& reports);

}  // namespace posediff
