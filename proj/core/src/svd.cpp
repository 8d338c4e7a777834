#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mica/densela.hpp"
#include "mica/error.hpp"

namespace mica {

namespace {

constexpr std::size_t kMaxSweeps = 100;

// Column-major scratch matrix; Jacobi rotations act on whole columns.
struct ColumnStore {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double* col(std::size_t j) { return data.data() + j * rows; }
  const double* col(std::size_t j) const { return data.data() + j * rows; }
};

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void rotate(double* x, double* y, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

// Extends the first `filled` orthonormal columns of q (column-major, n x n)
// to a full orthonormal basis. Each new column starts from the standard basis
// vector least represented in the current span, then is orthogonalized twice.
void complete_basis(ColumnStore& q, std::size_t filled) {
  const std::size_t n = q.rows;
  std::vector<double> coverage(n, 0.0);
  for (std::size_t k = 0; k < filled; ++k) {
    const double* c = q.col(k);
    for (std::size_t i = 0; i < n; ++i) coverage[i] += c[i] * c[i];
  }
  for (std::size_t k = filled; k < n; ++k) {
    const std::size_t pick = static_cast<std::size_t>(std::min_element(coverage.begin(), coverage.end()) -
                                                      coverage.begin());
    double* v = q.col(k);
    std::fill(v, v + n, 0.0);
    v[pick] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < k; ++j) {
        const double* u = q.col(j);
        const double proj = dot(u, v, n);
        for (std::size_t i = 0; i < n; ++i) v[i] -= proj * u[i];
      }
    }
    const double norm = std::sqrt(dot(v, v, n));
    for (std::size_t i = 0; i < n; ++i) v[i] /= norm;
    for (std::size_t i = 0; i < n; ++i) coverage[i] += v[i] * v[i];
  }
}

// One-sided Jacobi on a tall matrix (rows >= cols). On return `a` holds
// U_thin · Σ column-wise and `v` the accumulated right rotations.
void jacobi_sweeps(ColumnStore& a, ColumnStore& v) {
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  const double tol = std::max<double>(static_cast<double>(m), 1.0) * std::numeric_limits<double>::epsilon();
  std::vector<double> norms(n);

  for (std::size_t sweep = 1; sweep <= kMaxSweeps; ++sweep) {
    for (std::size_t j = 0; j < n; ++j) norms[j] = dot(a.col(j), a.col(j), m);
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = norms[p];
        const double beta = norms[q];
        if (alpha == 0.0 || beta == 0.0) continue;
        const double gamma = dot(a.col(p), a.col(q), m);
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(a.col(p), a.col(q), m, c, s);
        rotate(v.col(p), v.col(q), n, c, s);
        norms[p] = alpha - t * gamma;
        norms[q] = beta + t * gamma;
      }
    }
    if (!rotated) return;
  }
  throw SvdNonConvergence(kMaxSweeps);
}

// Flips column k of `u` so that its largest-magnitude entry (first on ties)
// is nonnegative. Returns true when a flip happened.
bool normalize_sign(double* u, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs(u[i]) > std::abs(u[best])) best = i;
  }
  if (u[best] >= 0.0) return false;
  for (std::size_t i = 0; i < n; ++i) u[i] = -u[i];
  return true;
}

}  // namespace

SvdFactors full_svd(const Matrix& w) {
  if (w.empty()) throw ContractViolation("full_svd: empty matrix");
  require_finite(w, "full_svd input");

  const bool tall = w.rows() >= w.cols();
  const std::size_t big = tall ? w.rows() : w.cols();
  const std::size_t small = tall ? w.cols() : w.rows();

  // Work on W (tall) or Wᵀ (wide) so that the Jacobi matrix is big x small.
  ColumnStore a{big, small, std::vector<double>(big * small)};
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      if (tall) {
        a.col(j)[i] = w(i, j);
      } else {
        a.col(i)[j] = w(i, j);
      }
    }
  }
  ColumnStore v{small, small, std::vector<double>(small * small, 0.0)};
  for (std::size_t j = 0; j < small; ++j) v.col(j)[j] = 1.0;

  jacobi_sweeps(a, v);

  std::vector<double> sigma(small);
  for (std::size_t j = 0; j < small; ++j) sigma[j] = std::sqrt(dot(a.col(j), a.col(j), big));
  std::vector<std::size_t> order(small);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  ColumnStore left{big, big, std::vector<double>(big * big, 0.0)};
  ColumnStore right{small, small, std::vector<double>(small * small, 0.0)};
  std::vector<double> s(small);
  std::size_t filled = 0;
  for (std::size_t k = 0; k < small; ++k) {
    const std::size_t src = order[k];
    s[k] = sigma[src];
    std::copy_n(v.col(src), small, right.col(k));
    if (std::isnormal(s[k])) {
      const double* col = a.col(src);
      double* dst = left.col(k);
      for (std::size_t i = 0; i < big; ++i) dst[i] = col[i] / s[k];
      filled = k + 1;
    }
  }
  // Zero singular values sort last, so the valid columns form a prefix.
  complete_basis(left, filled);

  // For tall W: U = left, V = right. For wide W: W = right · Σ · leftᵀ.
  ColumnStore& u_store = tall ? left : right;
  ColumnStore& v_store = tall ? right : left;
  const std::size_t d_out = w.rows();
  const std::size_t d_in = w.cols();

  for (std::size_t k = 0; k < d_out; ++k) {
    if (normalize_sign(u_store.col(k), d_out) && k < small) {
      double* vk = v_store.col(k);
      for (std::size_t i = 0; i < d_in; ++i) vk[i] = -vk[i];
    }
  }
  for (std::size_t k = small; k < d_in; ++k) normalize_sign(v_store.col(k), d_in);

  SvdFactors f;
  f.u = Matrix(d_out, d_out);
  for (std::size_t k = 0; k < d_out; ++k) {
    for (std::size_t i = 0; i < d_out; ++i) f.u(i, k) = u_store.col(k)[i];
  }
  f.vt = Matrix(d_in, d_in);
  for (std::size_t k = 0; k < d_in; ++k) {
    for (std::size_t i = 0; i < d_in; ++i) f.vt(k, i) = v_store.col(k)[i];
  }
  f.s = std::move(s);
  return f;
}

}  // namespace mica
