#pragma once

// Grouped bar chart (PLCC / SROCC per protocol cell, error bars at one
// standard deviation) rendered as standalone SVG from a matrix report.

#include <string>

namespace leakbench {

// Takes the JSON text produced by matrix_result_to_json. Every plotted mean
// and std is embedded verbatim in data-* attributes.
std::string render_report_svg(const std::string& report_json_text);

}  // namespace leakbench
