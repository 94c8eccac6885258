/// @file csv.hpp Numeric CSV tables with a header row, written with 17
/// significant digits so values round-trip exactly.

#pragma once

#include "types.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace lap {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_csv(std::ostream& out, const CsvTable& t) {
    for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
    out << "\n";
    for (const auto& r : t.rows) {
        if (r.size() != t.header.size()) throw Error("write_csv: row width does not match header");
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_number(r[i]);
        out << "\n";
    }
}

inline void write_csv(const std::string& path, const CsvTable& t) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    write_csv(out, t);
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    CsvTable t;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (t.header.empty()) {
            t.header = cells;
            continue;
        }
        if (cells.size() != t.header.size())
            throw Error(path + ":" + std::to_string(n) + ": expected " + std::to_string(t.header.size()) + " columns");
        std::vector<double> row;
        for (const auto& c : cells) {
            std::size_t used = 0;
            double v = 0;
            try {
                v = std::stod(c, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (!used) throw Error(path + ":" + std::to_string(n) + ": '" + c + "' is not a number");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    if (t.header.empty()) throw Error(path + ": empty file");
    return t;
}

/// Event times, one per line; blank lines and '#' comments are skipped.
inline std::vector<double> read_event_times(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::vector<double> times;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ss(line);
        double v;
        if (!(ss >> v)) {
            std::string rest;
            if (std::istringstream(line) >> rest) throw Error(path + ":" + std::to_string(n) + ": not a number");
            continue;
        }
        times.push_back(v);
    }
    return times;
}

inline void write_event_times(const std::string& path, const std::vector<double>& times) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    for (double t : times) out << format_number(t) << "\n";
}

} // namespace lap
