#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ssalign {

/// Dense row-major matrix of doubles. Rows are samples, columns are features.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Takes ownership of `data`; throws DimensionError on a size mismatch and
  /// ArgumentError if any entry is non-finite.
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);
  /// Nested-list literal, mostly for tests: Tensor2{{1, 2}, {3, 4}}.
  Tensor2(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor2 row(std::span<const double> values);
  static Tensor2 identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  /// Copy of row `r` as a 1×cols tensor.
  Tensor2 row_copy(std::size_t r) const;
  void set_row(std::size_t r, std::span<const double> values);

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor2& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
  bool all_finite() const;
  std::string shape_string() const;

  Tensor2& operator+=(const Tensor2& other);
  Tensor2& operator-=(const Tensor2& other);
  Tensor2& operator*=(double s);
  /// this += s * other
  Tensor2& add_scaled(const Tensor2& other, double s);
  void fill(double v);

  friend bool operator==(const Tensor2& a, const Tensor2& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Tensor2 operator+(Tensor2 a, const Tensor2& b);
Tensor2 operator-(Tensor2 a, const Tensor2& b);
Tensor2 operator*(double s, Tensor2 a);

/// a (r×k) times b (k×c).
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
/// aᵀ (k×r)ᵀ times b (k×c) without materializing the transpose.
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);
/// a (r×k) times bᵀ where b is (c×k).
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);
Tensor2 transpose(const Tensor2& a);
/// Column sums as a 1×cols row.
Tensor2 column_sum(const Tensor2& a);
double sum(const Tensor2& a);
double frobenius_sq(const Tensor2& a);
double max_abs_diff(const Tensor2& a, const Tensor2& b);
std::size_t argmax_row(const Tensor2& a, std::size_t r);

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what);

}  // namespace ssalign
