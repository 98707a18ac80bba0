#include "metaptq/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace metaptq {

void MetricsTable::add_row(const std::string& name, std::vector<double> values) {
    if (values.size() != columns.size()) {
        throw DataError("metrics: row '" + name + "' has " + std::to_string(values.size()) +
                        " values for " + std::to_string(columns.size()) + " columns");
    }
    row_names.push_back(name);
    rows.push_back(std::move(values));
}

double MetricsTable::at(const std::string& row, const std::string& column) const {
    auto r = std::find(row_names.begin(), row_names.end(), row);
    auto c = std::find(columns.begin(), columns.end(), column);
    if (r == row_names.end()) throw DataError("metrics: no row '" + row + "'");
    if (c == columns.end()) throw DataError("metrics: no column '" + column + "'");
    return rows[r - row_names.begin()][c - columns.begin()];
}

std::string metrics_to_tsv(const MetricsTable& t) {
    std::ostringstream out;
    out << "name";
    for (const auto& c : t.columns) out << "\t" << c;
    out << "\n";
    out << std::setprecision(17);
    for (size_t i = 0; i < t.rows.size(); ++i) {
        out << t.row_names[i];
        for (double v : t.rows[i]) out << "\t" << v;
        out << "\n";
    }
    return out.str();
}

MetricsTable metrics_from_tsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("metrics: empty table");
    MetricsTable t;
    {
        std::istringstream ss(line);
        std::string cell;
        bool first = true;
        while (std::getline(ss, cell, '\t')) {
            if (first) {
                if (cell != "name") throw DataError("metrics: header must start with 'name'");
                first = false;
            } else {
                t.columns.push_back(cell);
            }
        }
        if (first) throw DataError("metrics: malformed header");
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, '\t')) throw DataError("metrics: malformed row");
        std::string name = cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, '\t')) {
            try {
                size_t used = 0;
                vals.push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw DataError("metrics: non-numeric cell '" + cell + "' in row '" + name + "'");
            }
        }
        t.add_row(name, std::move(vals));
    }
    return t;
}

void save_metrics(const std::string& path, const MetricsTable& t) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << metrics_to_tsv(t);
    if (!out) throw IoError("write failed for '" + path + "'");
}

MetricsTable load_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return metrics_from_tsv(ss.str());
}

}  // namespace metaptq
