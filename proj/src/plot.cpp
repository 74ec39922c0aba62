#include "steal_lab/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "steal_lab/errors.hpp"

namespace steal_lab {
namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 80, kRight = 20, kTop = 40, kBottom = 50;

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string file_token(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_';
  return out;
}

}  // namespace

std::string render_curve_svg(const std::string& family, const std::string& trunk,
                             const std::vector<CurvePoint>& points) {
  if (points.empty()) throw DomainError("no points to plot for " + family + "/" + trunk);
  std::vector<CurvePoint> pts = points;
  std::sort(pts.begin(), pts.end(),
            [](const CurvePoint& a, const CurvePoint& b) { return a.epoch < b.epoch; });

  const double x_min = static_cast<double>(pts.front().epoch);
  const double x_max = std::max(x_min + 1.0, static_cast<double>(pts.back().epoch));
  double y_max = 0.0;
  for (const auto& p : pts) y_max = std::max(y_max, p.variance);
  y_max = y_max > 0.0 ? y_max * 1.1 : 1e-3;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * pw; };
  auto sy = [&](double y) { return kTop + ph - y / y_max * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
       "viewBox=\"0 0 640 400\">\n";
  s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\">Prediction variance: " +
       escape(family) + " / " + escape(trunk) + "</text>\n";
  // Axes.
  s += "<path d=\"M" + fmt("%.2f", kLeft) + " " + fmt("%.2f", kTop) + " V" +
       fmt("%.2f", kTop + ph) + " H" + fmt("%.2f", kLeft + pw) +
       "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y_max * i / 4.0;
    const double y = sy(yv);
    s += "<path d=\"M" + fmt("%.2f", kLeft - 5) + " " + fmt("%.2f", y) + " H" +
         fmt("%.2f", kLeft) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt("%.2f", kLeft - 8) + "\" y=\"" + fmt("%.2f", y + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt("%.2e", yv) +
         "</text>\n";
  }
  const int ticks = static_cast<int>(std::min(5.0, x_max - x_min));
  for (int i = 0; i <= ticks; ++i) {
    const double xv = std::round(x_min + (x_max - x_min) * i / ticks);
    const double x = sx(xv);
    s += "<path d=\"M" + fmt("%.2f", x) + " " + fmt("%.2f", kTop + ph) + " V" +
         fmt("%.2f", kTop + ph + 5) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", kTop + ph + 20) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
         fmt("%.0f", xv) + "</text>\n";
  }
  s += "<text x=\"" + fmt("%.2f", kLeft + pw / 2) + "\" y=\"" + fmt("%.2f", kHeight - 8) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">epoch</text>\n";
  s += "<text x=\"16\" y=\"" + fmt("%.2f", kTop + ph / 2) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
       "transform=\"rotate(-90 16 " +
       fmt("%.2f", kTop + ph / 2) + ")\">variance</text>\n";
  // Curve.
  s += "<path d=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    s += (i ? " L" : "M") + fmt("%.2f", sx(static_cast<double>(pts[i].epoch))) + " " +
         fmt("%.2f", sy(pts[i].variance));
  }
  s += "\" stroke=\"#1f77b4\" stroke-width=\"2\" fill=\"none\"/>\n";
  s += "</svg>\n";
  return s;
}

std::vector<std::filesystem::path> plot_curves(const std::vector<CurvePoint>& points,
                                               const std::filesystem::path& out) {
  if (points.empty()) throw DomainError("no curve points to plot");
  std::map<std::pair<std::string, std::string>, std::vector<CurvePoint>> curves;
  for (const auto& p : points) curves[{p.family, p.trunk}].push_back(p);
  std::vector<std::filesystem::path> written;
  for (const auto& [key, pts] : curves) {
    const auto path =
        out / ("variance_" + file_token(key.first) + "_" + file_token(key.second) + ".svg");
    write_text(path, render_curve_svg(key.first, key.second, pts));
    written.push_back(path);
  }
  return written;
}

}  // namespace steal_lab
