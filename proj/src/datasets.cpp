#include "steal_lab/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "steal_lab/errors.hpp"
#include "steal_lab/rng.hpp"

namespace steal_lab {
namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view cell, T& out) {
  cell = trim(cell);
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc{} && ptr == cell.data() + cell.size();
}

void append_double(std::string& out, double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

void Dataset::validate() const {
  if (features.rows() != labels.size()) {
    throw DomainError("dataset '" + name + "' has " + std::to_string(features.rows()) +
                      " feature rows but " + std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 2) throw DomainError("dataset '" + name + "' needs at least two classes");
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DomainError("dataset '" + name + "' label " + std::to_string(y) + " outside [0," +
                        std::to_string(num_classes) + ")");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw DomainError("dataset '" + name + "' has no sample of class " + std::to_string(c));
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = features.select_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  out.num_classes = num_classes;
  out.name = name;
  return out;
}

Dataset gen_blobs(std::size_t k, std::size_t d, std::size_t n, double spread, std::uint64_t seed) {
  if (k < 2) throw DomainError("gen_blobs: need k >= 2");
  if (d < 1) throw DomainError("gen_blobs: need d >= 1");
  if (n < 10 * k) throw DomainError("gen_blobs: need n >= 10k");
  if (!(spread >= 0.0)) throw DomainError("gen_blobs: spread must be non-negative");

  Matrix means(k, d);
  for (std::size_t j = 0; j < k; ++j) {
    if (d == 1) {
      means(j, 0) = static_cast<double>(j) - 0.5 * static_cast<double>(k - 1);
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(k);
      means(j, 0) = std::cos(angle);
      means(j, 1) = std::sin(angle);
    }
  }

  Rng rng(derive_seed(seed, 0xb10b5));
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.features = Matrix(n, d);
  ds.labels.resize(n);
  ds.num_classes = k;
  ds.name = "blobs";
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    ds.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < d; ++j) ds.features(i, j) = means(c, j) + spread * noise(rng);
  }
  return ds;
}

double spiral_angle(std::size_t j, std::size_t k, double t) {
  return 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(k) +
         3.0 * std::numbers::pi * t;
}

Dataset gen_spirals(std::size_t k, std::size_t n, double noise, std::uint64_t seed) {
  if (k != 2 && k != 3) throw DomainError("gen_spirals: k must be 2 or 3");
  if (n < 50 * k) throw DomainError("gen_spirals: need n >= 50k");
  if (!(noise >= 0.0)) throw DomainError("gen_spirals: noise must be non-negative");

  Rng rng(derive_seed(seed, 0x5b12a1));
  std::uniform_real_distribution<double> param(0.1, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  Dataset ds;
  ds.features = Matrix(n, 2);
  ds.labels.resize(n);
  ds.num_classes = k;
  ds.name = "spirals";
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    const double t = param(rng);
    const double angle = spiral_angle(c, k, t);
    ds.labels[i] = static_cast<int>(c);
    ds.features(i, 0) = t * std::cos(angle);
    ds.features(i, 1) = t * std::sin(angle);
    if (noise > 0.0) {
      ds.features(i, 0) += noise * jitter(rng);
      ds.features(i, 1) += noise * jitter(rng);
    }
  }
  return ds;
}

SplitPlan split_halves(const Dataset& train, const Dataset& test, std::uint64_t seed) {
  if (train.size() == 0 || test.size() == 0) throw DomainError("split_halves: empty dataset");
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5711));
  std::shuffle(order.begin(), order.end(), rng);

  SplitPlan plan;
  const std::size_t train_first = (train.size() + 1) / 2;
  plan.target_train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_first));
  plan.surrogate_query.assign(order.begin() + static_cast<std::ptrdiff_t>(train_first), order.end());

  const std::size_t test_first = (test.size() + 1) / 2;
  for (std::size_t i = 0; i < test.size(); ++i) {
    (i < test_first ? plan.target_test : plan.fidelity_test).push_back(i);
  }
  return plan;
}

Dataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw ParseError(path.string() + ": empty file, expected header", 1);
  }
  const auto header = split_commas(trim(line));
  if (header.size() < 2 || trim(header.back()) != "label") {
    throw ParseError(path.string() + ": header must be f0,...,f{d-1},label", 1);
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (trim(header[j]) != "f" + std::to_string(j)) {
      throw ParseError(path.string() + ": header column " + std::to_string(j) + " must be f" +
                           std::to_string(j),
                       1);
    }
  }

  std::vector<double> values;
  LabelVector labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(trim(line));
    if (cells.size() != d + 1) {
      throw ParseError(path.string() + ": expected " + std::to_string(d + 1) + " cells, got " +
                           std::to_string(cells.size()),
                       line_no);
    }
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      if (!parse_number(cells[j], v) || !std::isfinite(v)) {
        throw ParseError(path.string() + ": non-numeric feature '" + std::string(cells[j]) + "'",
                         line_no);
      }
      values.push_back(v);
    }
    int y = 0;
    if (!parse_number(cells[d], y) || y < 0) {
      throw ParseError(path.string() + ": invalid label '" + std::string(cells[d]) + "'", line_no);
    }
    if (num_classes && static_cast<std::size_t>(y) >= *num_classes) {
      throw ParseError(path.string() + ": label " + std::to_string(y) + " >= num_classes " +
                           std::to_string(*num_classes),
                       line_no);
    }
    labels.push_back(y);
  }
  if (labels.empty()) throw ParseError(path.string() + ": no data rows", line_no);

  Dataset ds;
  ds.features = Matrix(labels.size(), d, std::move(values));
  ds.num_classes = num_classes.value_or(
      static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1);
  ds.labels = std::move(labels);
  ds.name = path.stem().string();
  try {
    ds.validate();
  } catch (const DomainError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return ds;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::string out;
  for (std::size_t j = 0; j < dataset.dims(); ++j) out += "f" + std::to_string(j) + ",";
  out += "label\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (double v : dataset.features.row(i)) {
      append_double(out, v);
      out += ',';
    }
    out += std::to_string(dataset.labels[i]);
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << out;
}

}  // namespace steal_lab
