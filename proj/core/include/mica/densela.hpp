#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace mica {

// Dense row-major matrix of doubles. A default-constructed matrix is empty
// (0 x 0); every other matrix has positive dimensions and finite entries.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix column(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Matrix transposed() const;
  Matrix col_range(std::size_t begin, std::size_t end) const;
  Matrix select_cols(std::span<const std::size_t> indices) const;

  double frobenius_norm() const;
  double squared_norm() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double scalar);

  // Exact element-wise equality (bitwise for non-NaN values).
  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double scalar, Matrix m);

Matrix matmul(const Matrix& a, const Matrix& b);
// aᵀ · b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a · bᵀ without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix hadamard(const Matrix& a, const Matrix& b);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& m);

// Throws NumericalError naming `where` if m has a NaN or Inf entry.
void require_finite(const Matrix& m, const char* where);

// Full singular value decomposition W = U · diag(S) · Vt with U square
// (rows x rows), Vt square (cols x cols) and S descending, length
// min(rows, cols).
struct SvdFactors {
  Matrix u;
  std::vector<double> s;
  Matrix vt;

  std::size_t rank_dim() const noexcept { return s.size(); }
};

// Computes the full SVD by one-sided Jacobi rotations.
//
// Sign convention: the largest-magnitude entry of every column of U is
// nonnegative (first such entry on ties); the matching row of Vt is flipped
// with it. Rows of Vt spanning the null space of W follow the same rule.
// The result is a pure function of the input bits.
SvdFactors full_svd(const Matrix& w);

// rows x cols matrix with `s` on the leading diagonal.
Matrix diag_embed(std::span<const double> s, std::size_t rows, std::size_t cols);

Matrix reconstruct(const SvdFactors& f);

// ‖MᵀM − I‖_F with I of size cols x cols.
double orthonormality_defect(const Matrix& m);

// X − B(BᵀX). Requires B with orthonormal columns (defect ≤ 1e-8).
Matrix project_off_span(const Matrix& x, const Matrix& b);

// Solves S · X = rhs for symmetric positive definite S via Cholesky.
Matrix solve_spd(const Matrix& s, const Matrix& rhs);

// Orthonormal basis of the column space of a (full column rank) matrix by
// twice-iterated modified Gram-Schmidt.
Matrix orthonormalize_columns(const Matrix& a);

// Number of singular values above rel_tol · σ_max.
std::size_t numerical_rank(const Matrix& m, double rel_tol);

// FNV-1a over the raw bytes of the elements and the shape.
std::uint64_t content_hash(const Matrix& m);

}  // namespace mica
