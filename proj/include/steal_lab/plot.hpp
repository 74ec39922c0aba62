#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "steal_lab/report.hpp"

namespace steal_lab {

/// SVG line chart of variance against epoch for one family/trunk curve.
std::string render_curve_svg(const std::string& family, const std::string& trunk,
                             const std::vector<CurvePoint>& points);

/// Writes variance_<family>_<trunk>.svg into `out` for every curve in
/// `points` and returns the paths in sorted order. Throws on empty input.
std::vector<std::filesystem::path> plot_curves(const std::vector<CurvePoint>& points,
                                               const std::filesystem::path& out);

}  // namespace steal_lab
