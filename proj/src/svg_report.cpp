#include "leakbench/svg_report.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "leakbench/common.hpp"

namespace leakbench {

namespace {

struct Bar {
    std::string cell;
    std::string metric;  // "plcc" | "srocc"
    double mean = 0.0;
    double stddev = 0.0;
};

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
}

}  // namespace

std::string render_report_svg(const std::string& report_json_text) {
    nlohmann::json report;
    try {
        report = nlohmann::json::parse(report_json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("report json parse error: ") + e.what());
    }

    std::vector<Bar> bars;
    for (const auto& cell : report.at("cells")) {
        const std::string name = cell.at("protocol").at("name").get<std::string>();
        const auto& summary = cell.at("summary");
        bars.push_back({name, "plcc", summary.at("plcc_mean").get<double>(),
                        summary.at("plcc_std").get<double>()});
        bars.push_back({name, "srocc", summary.at("srocc_mean").get<double>(),
                        summary.at("srocc_std").get<double>()});
    }
    if (bars.empty()) throw DataError("report has no cells to plot");

    double lo = 0.0, hi = 1.0;
    for (const Bar& b : bars) {
        lo = std::min(lo, b.mean - b.stddev);
        hi = std::max(hi, b.mean + b.stddev);
    }
    lo = std::floor(lo * 5.0) / 5.0;
    hi = std::ceil(hi * 5.0) / 5.0;

    const double margin_left = 60.0, margin_right = 20.0, margin_top = 40.0, margin_bottom = 90.0;
    const double bar_width = 34.0, bar_gap = 8.0, group_gap = 30.0;
    const std::size_t n_cells = bars.size() / 2;
    const double plot_w =
        static_cast<double>(n_cells) * (2.0 * bar_width + bar_gap) +
        static_cast<double>(n_cells - 1) * group_gap;
    const double plot_h = 320.0;
    const double width = margin_left + plot_w + margin_right;
    const double height = margin_top + plot_h + margin_bottom;

    const auto y_of = [&](double v) {
        return margin_top + plot_h * (1.0 - (v - lo) / (hi - lo));
    };

    std::string svg;
    svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<!-- generator: leakbench report -->\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
           fmt(height) + "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + fmt(width / 2.0) +
           "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
           "Test correlation by protocol (error bars: one standard deviation)</text>\n";

    // horizontal grid and axis labels
    for (double tick = lo; tick <= hi + 1e-9; tick += 0.2) {
        const double y = y_of(tick);
        svg += "<line x1=\"" + fmt(margin_left) + "\" y1=\"" + fmt(y) + "\" x2=\"" +
               fmt(margin_left + plot_w) + "\" y2=\"" + fmt(y) +
               "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        svg += "<text x=\"" + fmt(margin_left - 8.0) + "\" y=\"" + fmt(y + 4.0) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(tick) +
               "</text>\n";
    }
    if (lo < 0.0) {
        const double y0 = y_of(0.0);
        svg += "<line x1=\"" + fmt(margin_left) + "\" y1=\"" + fmt(y0) + "\" x2=\"" +
               fmt(margin_left + plot_w) + "\" y2=\"" + fmt(y0) +
               "\" stroke=\"#888888\" stroke-width=\"1\"/>\n";
    }

    for (std::size_t c = 0; c < n_cells; ++c) {
        const double group_x =
            margin_left + static_cast<double>(c) * (2.0 * bar_width + bar_gap + group_gap);
        for (int m = 0; m < 2; ++m) {
            const Bar& b = bars[c * 2 + static_cast<std::size_t>(m)];
            const double x = group_x + static_cast<double>(m) * (bar_width + bar_gap);
            const double y_base = y_of(std::min(0.0, b.mean));
            const double y_top = y_of(std::max(0.0, b.mean));
            const std::string color = m == 0 ? "#4878a8" : "#e49444";
            svg += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y_top) + "\" width=\"" +
                   fmt(bar_width) + "\" height=\"" + fmt(std::max(0.5, y_base - y_top)) +
                   "\" fill=\"" + color + "\" data-cell=\"" + xml_escape(b.cell) +
                   "\" data-metric=\"" + b.metric + "\" data-mean=\"" + format_double(b.mean) +
                   "\" data-std=\"" + format_double(b.stddev) + "\"/>\n";
            // error bar
            const double cx = x + bar_width / 2.0;
            const double y_lo = y_of(b.mean - b.stddev);
            const double y_hi = y_of(b.mean + b.stddev);
            svg += "<line x1=\"" + fmt(cx) + "\" y1=\"" + fmt(y_lo) + "\" x2=\"" + fmt(cx) +
                   "\" y2=\"" + fmt(y_hi) + "\" stroke=\"#333333\" stroke-width=\"1.5\"/>\n";
            for (double ye : {y_lo, y_hi})
                svg += "<line x1=\"" + fmt(cx - 5.0) + "\" y1=\"" + fmt(ye) + "\" x2=\"" +
                       fmt(cx + 5.0) + "\" y2=\"" + fmt(ye) +
                       "\" stroke=\"#333333\" stroke-width=\"1.5\"/>\n";
            svg += "<text x=\"" + fmt(cx) + "\" y=\"" + fmt(y_hi - 6.0) +
                   "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
                   fmt(b.mean) + "</text>\n";
        }
        const double label_x = group_x + bar_width + bar_gap / 2.0;
        svg += "<text x=\"" + fmt(label_x) + "\" y=\"" + fmt(margin_top + plot_h + 16.0) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-35 " +
               fmt(label_x) + " " + fmt(margin_top + plot_h + 16.0) + ")\">" +
               xml_escape(bars[c * 2].cell) + "</text>\n";
    }

    // legend
    const double legend_x = margin_left;
    const double legend_y = height - 22.0;
    svg += "<rect x=\"" + fmt(legend_x) + "\" y=\"" + fmt(legend_y - 10.0) +
           "\" width=\"12\" height=\"12\" fill=\"#4878a8\"/>\n";
    svg += "<text x=\"" + fmt(legend_x + 18.0) + "\" y=\"" + fmt(legend_y) +
           "\" font-family=\"sans-serif\" font-size=\"12\">PLCC</text>\n";
    svg += "<rect x=\"" + fmt(legend_x + 80.0) + "\" y=\"" + fmt(legend_y - 10.0) +
           "\" width=\"12\" height=\"12\" fill=\"#e49444\"/>\n";
    svg += "<text x=\"" + fmt(legend_x + 98.0) + "\" y=\"" + fmt(legend_y) +
           "\" font-family=\"sans-serif\" font-size=\"12\">SROCC</text>\n";
    svg += "</svg>\n";
    return svg;
}

}  // namespace leakbench
