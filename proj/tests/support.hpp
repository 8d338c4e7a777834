#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "mica/densela.hpp"
#include "mica/rng.hpp"
#include "mica/toynet.hpp"

namespace mica::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  SplitMix64 gen(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * gen.normal();
  return m;
}

// Textbook triple loop, kept independent of the library kernels.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double acc = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<long double>(a(i, k)) * b(k, j);
      c(i, j) = static_cast<double>(acc);
    }
  }
  return c;
}

inline Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// Worst elementwise |g - fd| / max(|g|, |fd|, floor) over every trainable
// tensor, with central differences of step h on the loss of forward(). The
// fourth-order stencil cuts truncation error enough to use a larger h, which
// keeps rounding error small when the loss is large.
inline double max_fd_relative_error(ToyModel& model, const Batch& batch, bool training, std::uint64_t seed,
                                    double h = 1e-6, double floor = 1e-4, bool fourth_order = false) {
  const ForwardResult fr = forward(model, batch, training, seed);
  const GradSet grads = backward(model, fr.cache);
  double worst = 0.0;
  for (const ParamRef& ref : trainable_params(model)) {
    const Matrix& g = grads.at(ref.name);
    auto data = ref.tensor->data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      const auto loss_at = [&](double offset) {
        data[i] = saved + offset;
        const double loss = forward(model, batch, training, seed).loss;
        data[i] = saved;
        return loss;
      };
      const double fd = fourth_order
                            ? (loss_at(-2 * h) - 8 * loss_at(-h) + 8 * loss_at(h) - loss_at(2 * h)) / (12.0 * h)
                            : (loss_at(h) - loss_at(-h)) / (2.0 * h);
      const double gi = g.data()[i];
      worst = std::max(worst, std::abs(gi - fd) / std::max({std::abs(gi), std::abs(fd), floor}));
    }
  }
  return worst;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mica-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace mica::test
