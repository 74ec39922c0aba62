#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steal_lab/matrix.hpp"

namespace steal_lab {

struct Dataset {
  Matrix features;  // N x d
  LabelVector labels;
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t dims() const { return features.cols(); }

  /// Throws DomainError unless labels lie in [0,k), sizes agree and every
  /// class has at least one sample.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;

  /// Compares contents; the name is metadata and is ignored.
  bool operator==(const Dataset& other) const {
    return features == other.features && labels == other.labels &&
           num_classes == other.num_classes;
  }
};

/// Index sets into the training and test datasets. target_train and
/// surrogate_query index the training set; target_test and fidelity_test the test set.
struct SplitPlan {
  std::vector<std::size_t> target_train;
  std::vector<std::size_t> surrogate_query;
  std::vector<std::size_t> target_test;
  std::vector<std::size_t> fidelity_test;

  bool operator==(const SplitPlan&) const = default;
};

/// k isotropic Gaussian clusters with standard deviation `spread`. Means sit
/// on the unit circle in the first two coordinates (evenly spaced on a line
/// when d == 1). Sample i belongs to class i mod k.
Dataset gen_blobs(std::size_t k, std::size_t d, std::size_t n, double spread, std::uint64_t seed);

/// k interleaved 2-D spiral arms. Arm j is r = t, angle = 2*pi*j/k + 3*pi*t
/// for t in [0.1, 1], plus isotropic Gaussian noise.
Dataset gen_spirals(std::size_t k, std::size_t n, double noise, std::uint64_t seed);

/// Angle offset of the arm of class j; exposed for construction checks.
double spiral_angle(std::size_t j, std::size_t k, double t);

/// Shuffles training indices with `seed` and halves them (target_train first);
/// halves the test set positionally (target_test first). Odd sizes give the
/// extra element to the first half.
SplitPlan split_halves(const Dataset& train, const Dataset& test, std::uint64_t seed);

/// CSV with header f0,...,f{d-1},label. Without `num_classes`, k is inferred
/// as max label + 1.
Dataset load_csv(const std::filesystem::path& path,
                 std::optional<std::size_t> num_classes = std::nullopt);
void save_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace steal_lab
