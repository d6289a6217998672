// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adaptmerge/errors.hpp"

namespace adaptmerge {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

void require_nonzero(std::span<const double> v, const char* op) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == 0.0) {
      throw DegenerateMarginalError(std::string(op) + ": zero entry at index " + std::to_string(i));
    }
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_str(a) + " * " + shape_str(b) + ")");
  }
  Matrix c(a.rows(), b.cols());
  // i-k-j order: each c(i, j) still accumulates over k = 0, 1, ... in sequence.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix pairwise_sq_dist(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("pairwise_sq_dist: column counts differ (" + shape_str(a) + " vs " + shape_str(b) + ")");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t p = 0; p < a.rows(); ++p) {
    auto ap = a.row(p);
    for (std::size_t q = 0; q < b.rows(); ++q) {
      auto bq = b.row(q);
      double s = 0.0;
      for (std::size_t k = 0; k < ap.size(); ++k) {
        const double diff = ap[k] - bq[k];
        s += diff * diff;
      }
      c(p, q) = s;
    }
  }
  return c;
}

Matrix diag_scale_left(std::span<const double> v, const Matrix& a) {
  if (v.size() != a.rows()) throw ShapeError("diag_scale_left: vector length does not match rows");
  require_nonzero(v, "diag_scale_left");
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (double& x : out.row(i)) x *= v[i];
  return out;
}

Matrix diag_scale_right(const Matrix& a, std::span<const double> v) {
  if (v.size() != a.cols()) throw ShapeError("diag_scale_right: vector length does not match cols");
  require_nonzero(v, "diag_scale_right");
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] *= v[j];
  }
  return out;
}

Matrix diag_inv_scale_left(std::span<const double> v, const Matrix& a) {
  if (v.size() != a.rows()) throw ShapeError("diag_inv_scale_left: vector length does not match rows");
  require_nonzero(v, "diag_inv_scale_left");
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (double& x : out.row(i)) x /= v[i];
  return out;
}

Matrix diag_inv_scale_right(const Matrix& a, std::span<const double> v) {
  if (v.size() != a.cols()) throw ShapeError("diag_inv_scale_right: vector length does not match cols");
  require_nonzero(v, "diag_inv_scale_right");
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] /= v[j];
  }
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (x.size() != a.cols()) throw ShapeError("matvec: vector length does not match cols");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) s += r[k] * x[k];
    y[i] = s;
  }
  return y;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  auto od = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& x : out.data()) x *= s;
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  return max_abs_diff(a.data(), b.data());
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return std::sqrt(s);
}

Vector row_sums(const Matrix& a) {
  Vector s(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (double x : a.row(i)) s[i] += x;
  return s;
}

Vector col_sums(const Matrix& a) {
  Vector s(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) s[j] += r[j];
  }
  return s;
}

}  // namespace adaptmerge
