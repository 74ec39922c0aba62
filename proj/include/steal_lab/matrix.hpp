#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace steal_lab {

using LabelVector = std::vector<int>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool operator==(const Matrix& other) const = default;

  static Matrix identity(std::size_t n);
  /// Copies the listed rows, in order.
  Matrix select_rows(std::span<const std::size_t> indices) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Non-owning read-only view with matrix shape; lets layers treat slices of a
/// flat parameter vector as matrices.
struct MatrixRef {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const double> data;

  MatrixRef() = default;
  MatrixRef(std::size_t r, std::size_t c, std::span<const double> d) : rows(r), cols(c), data(d) {}
  MatrixRef(const Matrix& m)  // NOLINT(google-explicit-constructor)
      : rows(m.rows()), cols(m.cols()), data(m.data()) {}

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

}  // namespace steal_lab
