#include "steal_lab/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "steal_lab/errors.hpp"

namespace steal_lab {
namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

void write_report_csv(const std::vector<FidelityRow>& rows, const std::filesystem::path& path) {
  std::string s = "dataset,target_size,family,trunk,M,seed,fidelity,target_acc,queries\n";
  for (const auto& r : rows) {
    s += csv_field(r.dataset) + ',' + csv_field(r.target_size) + ',' + r.family + ',' +
         csv_field(r.trunk) + ',' + std::to_string(r.m) + ',' + std::to_string(r.seed) + ',' +
         (r.fidelity ? format_double(*r.fidelity) : "") + ',' +
         (r.target_acc ? format_double(*r.target_acc) : "") + ',' + std::to_string(r.queries) +
         '\n';
  }
  write_text(path, s);
}

void write_timings_csv(const std::vector<TimingRow>& rows, const std::filesystem::path& path) {
  std::string s = "dataset,target_size,family,trunk,seed,train_seconds\n";
  for (const auto& r : rows) {
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.6f", r.train_seconds);
    s += csv_field(r.dataset) + ',' + csv_field(r.target_size) + ',' + r.family + ',' +
         csv_field(r.trunk) + ',' + std::to_string(r.seed) + ',' + secs + '\n';
  }
  write_text(path, s);
}

void write_errors_csv(const std::vector<CellError>& errors, const std::filesystem::path& path) {
  std::string s = "target_size,family,trunk,seed,message\n";
  for (const auto& e : errors) {
    s += csv_field(e.target_size) + ',' + e.family + ',' + csv_field(e.trunk) + ',' +
         std::to_string(e.seed) + ',' + csv_field(e.message) + '\n';
  }
  write_text(path, s);
}

void write_curves_csv(const std::vector<CurvePoint>& points, const std::filesystem::path& path) {
  std::string s = "family,trunk,epoch,variance\n";
  for (const auto& p : points) {
    s += p.family + ',' + csv_field(p.trunk) + ',' + std::to_string(p.epoch) + ',' +
         format_double(p.variance) + '\n';
  }
  write_text(path, s);
}

std::vector<CurvePoint> read_curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open curves file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty curves file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "family,trunk,epoch,variance") {
    throw ParseError(path.string() + ": expected header family,trunk,epoch,variance", 1);
  }
  std::vector<CurvePoint> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) {
      throw ParseError(path.string() + ": expected 4 fields on line " + std::to_string(lineno),
                       lineno);
    }
    CurvePoint p{f[0], f[1], 0, 0.0};
    const auto e = std::from_chars(f[2].data(), f[2].data() + f[2].size(), p.epoch);
    const auto v = std::from_chars(f[3].data(), f[3].data() + f[3].size(), p.variance);
    if (e.ec != std::errc() || e.ptr != f[2].data() + f[2].size() || v.ec != std::errc() ||
        v.ptr != f[3].data() + f[3].size()) {
      throw ParseError(path.string() + ": bad number on line " + std::to_string(lineno), lineno);
    }
    out.push_back(p);
  }
  if (out.empty()) throw ParseError(path.string() + ": no curve points", lineno);
  return out;
}

std::vector<CurvePoint> curve_points(const std::vector<CurveRow>& curves,
                                     const std::string& target_size, std::uint64_t seed) {
  std::vector<CurvePoint> out;
  for (const auto& c : curves) {
    if (c.target_size != target_size || c.seed != seed) continue;
    for (std::size_t e = 0; e < c.curve.variance.size(); ++e) {
      out.push_back(CurvePoint{c.family, c.trunk, e + 1, c.curve.variance[e]});
    }
  }
  return out;
}

std::vector<CurvePoint> median_curve_points(const std::vector<CurveRow>& curves,
                                            const std::string& target_size) {
  std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<double>> by_epoch;
  for (const auto& c : curves) {
    if (c.target_size != target_size) continue;
    for (std::size_t e = 0; e < c.curve.variance.size(); ++e) {
      by_epoch[{c.family, c.trunk, e + 1}].push_back(c.curve.variance[e]);
    }
  }
  std::vector<CurvePoint> out;
  for (const auto& [key, values] : by_epoch) {
    out.push_back(CurvePoint{std::get<0>(key), std::get<1>(key), std::get<2>(key), median(values)});
  }
  return out;
}

std::string summarize(const ExperimentResult& result) {
  std::map<std::tuple<std::string, std::string, std::string, std::string>,
           std::map<std::size_t, std::vector<double>>>
      fid;
  std::map<std::string, std::vector<double>> acc;
  std::set<std::pair<std::string, std::uint64_t>> seen_acc;
  for (const auto& r : result.rows) {
    if (r.fidelity) fid[{r.dataset, r.target_size, r.family, r.trunk}][r.m].push_back(*r.fidelity);
    if (r.target_acc && seen_acc.insert({r.target_size, r.seed}).second) {
      acc[r.target_size].push_back(*r.target_acc);
    }
  }
  std::ostringstream s;
  char buf[160];
  s << "median target accuracy\n";
  for (const auto& [size, v] : acc) {
    std::snprintf(buf, sizeof buf, "  %-8s %.4f (%zu seeds)\n", size.c_str(), median(v), v.size());
    s << buf;
  }
  s << "median fidelity\n";
  for (const auto& [key, per_m] : fid) {
    std::snprintf(buf, sizeof buf, "  %-8s %-8s %-14s %-8s", std::get<0>(key).c_str(),
                  std::get<1>(key).c_str(), std::get<2>(key).c_str(), std::get<3>(key).c_str());
    s << buf;
    for (const auto& [m, v] : per_m) {
      std::snprintf(buf, sizeof buf, "  M=%zu %.4f", m, median(v));
      s << buf;
    }
    s << '\n';
  }
  s << "failed cells: " << result.errors.size() << '\n';
  for (const auto& e : result.errors) {
    s << "  " << e.target_size << ' ' << e.family << ' ' << e.trunk << " seed " << e.seed << ": "
      << e.message << '\n';
  }
  return s.str();
}

void write_experiment(const ExperimentResult& result, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  write_report_csv(result.rows, out / "report.csv");
  write_timings_csv(result.timings, out / "timings.csv");
  write_text(out / "summary.txt", summarize(result));
  if (!result.errors.empty()) {
    write_errors_csv(result.errors, out / "errors.csv");
  } else {
    std::filesystem::remove(out / "errors.csv");
  }

  std::vector<std::string> sizes;
  std::set<std::pair<std::string, std::uint64_t>> runs;
  for (const auto& r : result.rows) {
    if (std::find(sizes.begin(), sizes.end(), r.target_size) == sizes.end()) {
      sizes.push_back(r.target_size);
    }
  }
  for (const auto& c : result.curves) runs.insert({c.target_size, c.seed});
  for (const auto& [size, seed] : runs) {
    write_curves_csv(curve_points(result.curves, size, seed),
                     out / "curves" / (size + "_seed" + std::to_string(seed) + ".csv"));
  }
  // Headline curves come from the small target when it is part of the grid.
  std::string headline = sizes.empty() ? "" : sizes.front();
  if (std::find(sizes.begin(), sizes.end(), "small") != sizes.end()) headline = "small";
  for (const auto& size : sizes) {
    write_curves_csv(median_curve_points(result.curves, size),
                     out / "curves" / (size + "_median.csv"));
  }
  write_curves_csv(median_curve_points(result.curves, headline), out / "curves.csv");
}

}  // namespace steal_lab
