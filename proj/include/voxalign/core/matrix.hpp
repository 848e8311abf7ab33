#pragma once

// Dense row-major double matrix. The whole library trains in double so that
// finite-difference gradient checks are meaningful at 1e-4 tolerances.

#include <Eigen/Dense>

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace voxalign {

using EigenMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstEigenMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

class Matrix {
 public:
  Matrix() : rows_(0), cols_(0) {}
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      assert(row.size() == m.cols_);
      std::size_t c = 0;
      for (double v : row) m(r, c++) = v;
      ++r;
    }
    return m;
  }

  static Matrix row(const std::vector<double>& v) {
    Matrix m(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
    return m;
  }

  static Matrix column(const std::vector<double>& v) {
    Matrix m(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double& operator[](std::size_t i) {
    assert(i < data_.size());
    return data_[i];
  }
  double operator[](std::size_t i) const {
    assert(i < data_.size());
    return data_[i];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  EigenMap map() { return EigenMap(data_.data(), (Eigen::Index)rows_, (Eigen::Index)cols_); }
  ConstEigenMap map() const {
    return ConstEigenMap(data_.data(), (Eigen::Index)rows_, (Eigen::Index)cols_);
  }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }
  friend bool operator!=(const Matrix& a, const Matrix& b) { return !(a == b); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    t.map() = map().transpose();
    return t;
  }

  std::vector<double> row_vec(std::size_t r) const {
    assert(r < rows_);
    return std::vector<double>(data_.begin() + (std::ptrdiff_t)(r * cols_),
                               data_.begin() + (std::ptrdiff_t)((r + 1) * cols_));
  }

  void set_row(std::size_t r, const std::vector<double>& v) {
    assert(r < rows_ && v.size() == cols_);
    std::copy(v.begin(), v.end(), data_.begin() + (std::ptrdiff_t)(r * cols_));
  }

  double sum() const { return map().sum(); }
  double max_abs() const { return data_.empty() ? 0.0 : map().cwiseAbs().maxCoeff(); }
  double frobenius() const { return map().norm(); }

  const std::vector<double>& storage() const { return data_; }
  std::vector<double>& storage() { return data_; }

 private:
  std::size_t rows_, cols_;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims differ");
  Matrix out(a.rows(), b.cols());
  out.map().noalias() = a.map() * b.map();
  return out;
}

// a * b^T without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dims differ");
  Matrix out(a.rows(), b.rows());
  out.map().noalias() = a.map() * b.map().transpose();
  return out;
}

// a^T * b.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: inner dims differ");
  Matrix out(a.cols(), b.cols());
  out.map().noalias() = a.map().transpose() * b.map();
  return out;
}

}  // namespace voxalign
