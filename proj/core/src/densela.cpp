#include "mica/densela.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "mica/error.hpp"

namespace mica {

namespace {

void require_positive_dims(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ContractViolation("Matrix: dimensions must be positive, got " + std::to_string(rows) + "x" +
                            std::to_string(cols));
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
  }
}

std::string shape_str(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols) {
  require_positive_dims(rows, cols);
  if (!std::isfinite(fill)) throw NumericalError("Matrix: non-finite fill value");
  data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_positive_dims(rows, cols);
  if (data_.size() != rows * cols) {
    throw ContractViolation("Matrix: element count " + std::to_string(data_.size()) + " != " +
                            std::to_string(rows) + "x" + std::to_string(cols));
  }
  require_finite(*this, "Matrix construction");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  require_finite(m, "Matrix::diagonal");
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ContractViolation("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  }
  return t;
}

Matrix Matrix::col_range(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > cols_) {
    throw ContractViolation("Matrix::col_range: [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") out of range for " + std::to_string(cols_) + " columns");
  }
  Matrix out(rows_, end - begin);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = (*this)(i, j);
  }
  return out;
}

Matrix Matrix::select_cols(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ContractViolation("Matrix::select_cols: empty index set");
  Matrix out(rows_, indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= cols_) throw ContractViolation("Matrix::select_cols: index out of range");
    for (std::size_t i = 0; i < rows_; ++i) out(i, k) = (*this)(i, indices[k]);
  }
  return out;
}

double Matrix::squared_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return acc;
}

double Matrix::frobenius_norm() const { return std::sqrt(squared_norm()); }

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  require_finite(*this, "operator+=");
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  require_finite(*this, "operator-=");
  return *this;
}

Matrix& Matrix::operator*=(double scalar) {
  for (double& v : data_) v *= scalar;
  require_finite(*this, "operator*=");
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double scalar, Matrix m) { return m *= scalar; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ContractViolation("matmul: inner dimensions differ (" + shape_str(a) + " * " + shape_str(b) + ")");
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix c(n, m);
  auto cd = c.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = cd.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bd.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  require_finite(c, "matmul");
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ContractViolation("matmul_tn: row counts differ (" + shape_str(a) + "ᵀ * " + shape_str(b) + ")");
  }
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  Matrix c(n, m);
  auto cd = c.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = ad.data() + p * n;
    const double* brow = bd.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double api = arow[i];
      if (api == 0.0) continue;
      double* crow = cd.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += api * brow[j];
    }
  }
  require_finite(c, "matmul_tn");
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ContractViolation("matmul_nt: column counts differ (" + shape_str(a) + " * " + shape_str(b) + "ᵀ)");
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Matrix c(n, m);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = ad.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = bd.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) = acc;
    }
  }
  require_finite(c, "matmul_nt");
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] *= bd[i];
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, const char* where) {
  if (!all_finite(m)) throw NumericalError(std::string(where) + ": non-finite entry");
}

Matrix diag_embed(std::span<const double> s, std::size_t rows, std::size_t cols) {
  if (s.size() > std::min(rows, cols)) throw ContractViolation("diag_embed: too many diagonal values");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < s.size(); ++i) m(i, i) = s[i];
  return m;
}

Matrix reconstruct(const SvdFactors& f) {
  return matmul(matmul(f.u, diag_embed(f.s, f.u.rows(), f.vt.rows())), f.vt);
}

double orthonormality_defect(const Matrix& m) {
  Matrix gram = matmul_tn(m, m);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) -= 1.0;
  return gram.frobenius_norm();
}

Matrix project_off_span(const Matrix& x, const Matrix& b) {
  if (b.rows() != x.rows()) {
    throw ContractViolation("project_off_span: basis has " + std::to_string(b.rows()) + " rows, x has " +
                            std::to_string(x.rows()));
  }
  const double defect = orthonormality_defect(b);
  if (!(defect <= 1e-8)) {
    throw ContractViolation("project_off_span: basis columns not orthonormal (defect " + std::to_string(defect) +
                            ")");
  }
  return x - matmul(b, matmul_tn(b, x));
}

Matrix solve_spd(const Matrix& s, const Matrix& rhs) {
  const std::size_t n = s.rows();
  if (s.cols() != n || rhs.rows() != n) throw ContractViolation("solve_spd: shape mismatch");
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = s(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NumericalError("solve_spd: matrix is not positive definite");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = s(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / l(j, j);
    }
  }
  Matrix x = rhs;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double v = x(i, c);
      for (std::size_t k = 0; k < i; ++k) v -= l(i, k) * x(k, c);
      x(i, c) = v / l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double v = x(i, c);
      for (std::size_t k = i + 1; k < n; ++k) v -= l(k, i) * x(k, c);
      x(i, c) = v / l(i, i);
    }
  }
  require_finite(x, "solve_spd");
  return x;
}

Matrix orthonormalize_columns(const Matrix& a) {
  Matrix q = a;
  const std::size_t m = q.rows(), n = q.cols();
  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += q(i, k) * q(i, j);
        for (std::size_t i = 0; i < m; ++i) q(i, j) -= dot * q(i, k);
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw NumericalError("orthonormalize_columns: rank-deficient input");
    for (std::size_t i = 0; i < m; ++i) q(i, j) /= norm;
  }
  return q;
}

std::size_t numerical_rank(const Matrix& m, double rel_tol) {
  const SvdFactors f = full_svd(m);
  if (f.s.empty() || f.s.front() == 0.0) return 0;
  const double cutoff = rel_tol * f.s.front();
  return static_cast<std::size_t>(std::count_if(f.s.begin(), f.s.end(), [&](double v) { return v > cutoff; }));
}

std::uint64_t content_hash(const Matrix& m) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  };
  const std::uint64_t dims[2] = {m.rows(), m.cols()};
  mix(dims, sizeof(dims));
  mix(m.data().data(), m.size() * sizeof(double));
  return h;
}

}  // namespace mica
