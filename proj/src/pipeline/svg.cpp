#include "bkdattr/pipeline/svg.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "bkdattr/core/errors.hpp"

namespace bkd {

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string rgb(double r, double g, double b) {
    auto c = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    return fmt::format("#{:02x}{:02x}{:02x}", c(r), c(g), c(b));
}

// t in [-1, 1]: blue - white - red.
std::string diverging(double t) {
    t = std::clamp(t, -1.0, 1.0);
    if (t >= 0) return rgb(1.0, 1.0 - 0.8 * t, 1.0 - 0.8 * t);
    return rgb(1.0 + 0.8 * t, 1.0 + 0.8 * t, 1.0);
}

constexpr const char* kPalette[] = {"#c0392b", "#2471a3", "#239b56", "#7d3c98", "#b9770e", "#566573"};

}  // namespace

std::string render_heatmap(const Heatmap& h) {
    const std::size_t rows = h.values.size(), cols = rows ? h.values[0].size() : 0;
    require(h.row_names.size() == rows && h.col_names.size() == cols, "heatmap: label counts do not match values");
    for (const auto& r : h.values) require(r.size() == cols, "heatmap: ragged value rows");

    double lo = 0.0, hi = 0.0;
    for (const auto& r : h.values)
        for (double v : r) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double span = std::max({std::abs(lo), std::abs(hi), 1e-12});

    const int cell = 44, left = 70, top = 50;
    const int width = left + static_cast<int>(cols) * cell + 30, height = top + static_cast<int>(rows) * cell + 50;
    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
        "font-size=\"11\">\n",
        width, height);
    s += fmt::format("<text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n", width / 2,
                     escape(h.title));
    for (std::size_t r = 0; r < rows; ++r) {
        const int y = top + static_cast<int>(r) * cell;
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", left - 6, y + cell / 2 + 4,
                         escape(h.row_names[r]));
        for (std::size_t c = 0; c < cols; ++c) {
            const int x = left + static_cast<int>(c) * cell;
            const double v = h.values[r][c];
            s += fmt::format(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#888\" stroke-width=\"0.5\"/>\n",
                x, y, cell, cell, diverging(v / span));
            s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\">{:.3f}</text>\n",
                             x + cell / 2, y + cell / 2 + 3, v);
        }
    }
    for (std::size_t c = 0; c < cols; ++c)
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                         left + static_cast<int>(c) * cell + cell / 2, top - 6, escape(h.col_names[c]));
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                     left + static_cast<int>(cols) * cell / 2, height - 15, escape(h.col_label));
    s += fmt::format("<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
                     top + static_cast<int>(rows) * cell / 2, top + static_cast<int>(rows) * cell / 2,
                     escape(h.row_label));
    s += "</svg>\n";
    return s;
}

std::string render_line_plot(const LinePlot& p) {
    const std::size_t n = p.x_names.size();
    require(n >= 1, "line plot: no x positions");
    for (const auto& ser : p.series) require(ser.y.size() == n, "line plot: series length differs from x axis");
    require(p.y_max > p.y_min, "line plot: empty y range");

    const int left = 60, top = 40, plot_w = std::max<int>(240, static_cast<int>(n) * 60), plot_h = 220;
    const int width = left + plot_w + 170, height = top + plot_h + 60;
    auto px = [&](std::size_t i) {
        return left + (n == 1 ? plot_w / 2.0 : static_cast<double>(i) * plot_w / static_cast<double>(n - 1));
    };
    auto py = [&](double v) {
        const double t = (std::clamp(v, p.y_min, p.y_max) - p.y_min) / (p.y_max - p.y_min);
        return top + plot_h * (1.0 - t);
    };

    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
        "font-size=\"11\">\n",
        width, height);
    s += fmt::format("<text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
                     left + plot_w / 2, escape(p.title));
    s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n", left, top,
                     plot_w, plot_h);
    for (int t = 0; t <= 4; ++t) {
        const double v = p.y_min + (p.y_max - p.y_min) * t / 4.0;
        s += fmt::format("<line x1=\"{}\" x2=\"{}\" y1=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n", left,
                         left + plot_w, py(v), py(v));
        s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.2f}</text>\n", left - 4, py(v) + 4, v);
    }
    for (std::size_t i = 0; i < n; ++i)
        s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px(i), top + plot_h + 16,
                         escape(p.x_names[i]));
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", left + plot_w / 2, height - 12,
                     escape(p.x_label));
    s += fmt::format("<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
                     top + plot_h / 2, top + plot_h / 2, escape(p.y_label));
    for (std::size_t k = 0; k < p.series.size(); ++k) {
        const auto& ser = p.series[k];
        const char* colour = kPalette[k % std::size(kPalette)];
        std::string pts;
        for (std::size_t i = 0; i < n; ++i) pts += fmt::format("{:.1f},{:.1f} ", px(i), py(ser.y[i]));
        s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{}/>\n", pts, colour,
                         ser.dashed ? " stroke-dasharray=\"5,4\"" : "");
        for (std::size_t i = 0; i < n; ++i)
            s += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", px(i), py(ser.y[i]), colour);
        const int ly = top + 10 + static_cast<int>(k) * 18;
        s += fmt::format("<line x1=\"{}\" x2=\"{}\" y1=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"{}/>\n",
                         left + plot_w + 12, left + plot_w + 32, ly, ly, colour,
                         ser.dashed ? " stroke-dasharray=\"5,4\"" : "");
        s += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", left + plot_w + 38, ly + 4, escape(ser.name));
    }
    s += "</svg>\n";
    return s;
}

}  // namespace bkd
