// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace adaptmerge {

using Vector = std::vector<double>;

// Dense row-major matrix of binary64 values.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// C[p, q] = squared Euclidean distance between row p of a and row q of b.
Matrix pairwise_sq_dist(const Matrix& a, const Matrix& b);

// diag(v) * a and a * diag(v). A zero entry in v is rejected.
Matrix diag_scale_left(std::span<const double> v, const Matrix& a);
Matrix diag_scale_right(const Matrix& a, std::span<const double> v);

// diag(1 / v) * a and a * diag(1 / v), computed by division so that
// v[i] == a(i, j) yields exactly 1.
Matrix diag_inv_scale_left(std::span<const double> v, const Matrix& a);
Matrix diag_inv_scale_right(const Matrix& a, std::span<const double> v);

// a * x for a column vector x.
Vector matvec(const Matrix& a, std::span<const double> x);

// Elementwise helpers used by the merge and training code.
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const Matrix& a);

Vector row_sums(const Matrix& a);
Vector col_sums(const Matrix& a);

}  // namespace adaptmerge
