#pragma once

#include <string>
#include <vector>

#include "metaptq/errors.hpp"

namespace metaptq {

// Tab-separated results table: one string-keyed row per run, double-valued
// columns serialized losslessly (17 significant digits).
struct MetricsTable {
    std::vector<std::string> columns;  // value columns; the key column is implicit
    std::vector<std::string> row_names;
    std::vector<std::vector<double>> rows;

    void add_row(const std::string& name, std::vector<double> values);
    double at(const std::string& row, const std::string& column) const;
};

std::string metrics_to_tsv(const MetricsTable& t);
MetricsTable metrics_from_tsv(const std::string& text);

void save_metrics(const std::string& path, const MetricsTable& t);
MetricsTable load_metrics(const std::string& path);

}  // namespace metaptq
