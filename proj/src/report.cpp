#include "posediff/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace posediff {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

void Report::recompute_summary() {
    summary.clear();
    if (columns.empty() || rows.empty()) return;
    for (size_t c = 1; c < columns.size(); ++c) {
        double acc = 0.0;
        for (const auto& row : rows) acc += row.at(c);
        summary[columns[c]] = acc / static_cast<double>(rows.size());
    }
}

void write_report(const std::string& path, const Report& report) {
    for (const auto& row : report.rows) {
        if (row.size() != report.columns.size()) {
            throw std::invalid_argument("report row width does not match columns");
        }
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "# posediff-report 1\n";
    out << "# command " << report.command << "\n";
    out << "# task " << report.task << "\n";
    out << "# seed " << report.seed << "\n";
    out << "# config " << report.config_echo << "\n";
    out << "# columns ";
    for (size_t i = 0; i < report.columns.size(); ++i) {
        if (i) out << ",";
        out << report.columns[i];
    }
    out << "\n";
    for (const auto& row : report.rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out << ",";
            out << fmt(row[i]);
        }
        out << "\n";
    }
    for (const auto& [name, value] : report.summary) {
        out << "# summary " << name << " " << fmt(value) << "\n";
    }
    out << "# wallclock_s " << fmt(report.wallclock_s) << "\n";
    if (!out) throw std::runtime_error("write failed for " + path);
}

Report load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report " + path);
    std::string line;
    if (!std::getline(in, line) || line != "# posediff-report 1") {
        throw std::runtime_error(path + ": not a posediff report");
    }
    Report rep;
    std::map<std::string, double> stored_summary;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ss(line.substr(1));
            std::string key;
            ss >> key;
            if (key == "command") {
                ss >> rep.command;
            } else if (key == "task") {
                ss >> rep.task;
            } else if (key == "seed") {
                ss >> rep.seed;
            } else if (key == "config") {
                std::getline(ss, rep.config_echo);
                if (!rep.config_echo.empty() && rep.config_echo[0] == ' ') {
                    rep.config_echo.erase(0, 1);
                }
            } else if (key == "columns") {
                std::string cols;
                ss >> cols;
                std::istringstream cs(cols);
                std::string col;
                while (std::getline(cs, col, ',')) rep.columns.push_back(col);
            } else if (key == "summary") {
                std::string name;
                double value;
                ss >> name >> value;
                stored_summary[name] = value;
            } else if (key == "wallclock_s") {
                ss >> rep.wallclock_s;
            }
            continue;
        }
        std::istringstream rs(line);
        std::vector<double> row;
        std::string cell;
        while (std::getline(rs, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != rep.columns.size()) {
            throw std::runtime_error(path + ": row width " + std::to_string(row.size()) +
                                     " does not match " + std::to_string(rep.columns.size()) +
                                     " columns");
        }
        rep.rows.push_back(std::move(row));
    }
    rep.recompute_summary();
    // Self-audit: the stored aggregates must match recomputation from rows.
    for (const auto& [name, value] : stored_summary) {
        auto it = rep.summary.find(name);
        if (it == rep.summary.end()) {
            throw std::runtime_error(path + ": summary entry '" + name + "' has no column");
        }
        double denom = std::max(1.0, std::abs(it->second));
        if (std::abs(it->second - value) / denom > 1e-9) {
            throw std::runtime_error(path + ": stored summary '" + name +
                                     "' disagrees with recomputation from rows");
        }
    }
    return rep;
}

std::string render_comparison(const std::vector<Report>& reports) {
    if (reports.empty()) throw std::invalid_argument("render_comparison: no reports");
    // Union of metrics, first-report order first.
    std::vector<std::string> metrics;
    for (const Report& r : reports) {
        for (const auto& [name, _] : r.summary) {
            if (std::find(metrics.begin(), metrics.end(), name) == metrics.end()) {
                metrics.push_back(name);
            }
        }
    }
    std::ostringstream out;
    size_t width = 14;
    for (const std::string& m : metrics) width = std::max(width, m.size() + 2);
    out << std::left << std::setw(static_cast<int>(width)) << "metric";
    for (size_t i = 0; i < reports.size(); ++i) {
        std::string label = reports[i].task.empty() ? ("report" + std::to_string(i))
                                                    : reports[i].task + "#" + std::to_string(i);
        out << std::right << std::setw(16) << label;
    }
    if (reports.size() > 1) {
        for (size_t i = 1; i < reports.size(); ++i) {
            out << std::right << std::setw(16) << ("delta#" + std::to_string(i));
        }
    }
    out << "\n";
    std::ostringstream csv;
    csv << "metric";
    for (size_t i = 0; i < reports.size(); ++i) csv << ",report" << i;
    for (size_t i = 1; i < reports.size(); ++i) csv << ",delta" << i;
    csv << "\n";
    for (const std::string& m : metrics) {
        out << std::left << std::setw(static_cast<int>(width)) << m;
        csv << m;
        std::vector<double> vals(reports.size(), std::nan(""));
        for (size_t i = 0; i < reports.size(); ++i) {
            auto it = reports[i].summary.find(m);
            if (it != reports[i].summary.end()) vals[i] = it->second;
            if (std::isnan(vals[i])) {
                out << std::right << std::setw(16) << "-";
                csv << ",";
            } else {
                out << std::right << std::setw(16) << fmt(vals[i]);
                csv << "," << fmt(vals[i]);
            }
        }
        for (size_t i = 1; i < reports.size(); ++i) {
            if (std::isnan(vals[0]) || std::isnan(vals[i])) {
                out << std::right << std::setw(16) << "-";
                csv << ",";
            } else {
                out << std::right << std::setw(16) << fmt(vals[i] - vals[0]);
                csv << "," << fmt(vals[i] - vals[0]);
            }
        }
        out << "\n";
        csv << "\n";
    }
    out << "\n" << csv.str();
    return out.str();
}

}  // namespace posediff
