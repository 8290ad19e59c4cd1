#pragma once

#include <string>
#include <vector>

namespace bkd {

// Grid of values drawn as coloured cells with a diverging scale centred on
// zero (or a sequential one when all values are non-negative).
struct Heatmap {
    std::string title;
    std::string row_label;
    std::string col_label;
    std::vector<std::string> row_names;
    std::vector<std::string> col_names;
    std::vector<std::vector<double>> values;  // [row][col]
};

std::string render_heatmap(const Heatmap& h);

struct LineSeries {
    std::string name;
    std::vector<double> y;  // one point per x position
    bool dashed = false;
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<std::string> x_names;
    double y_min = 0.0;
    double y_max = 1.0;
    std::vector<LineSeries> series;
};

std::string render_line_plot(const LinePlot& p);

}  // namespace bkd
