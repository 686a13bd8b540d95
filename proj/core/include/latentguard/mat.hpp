#pragma once

#include <cstdint>
#include <vector>

namespace lg {

// Plain row-major matrix. Used on the non-differentiated paths (encoder
// output, inference caches, diagnostics).
template <typename T>
struct Mat {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<T> a;

  Mat() = default;
  Mat(std::int64_t r, std::int64_t c) : rows(r), cols(c), a(std::size_t(r * c), T(0)) {}

  T* row(std::int64_t i) { return a.data() + i * cols; }
  const T* row(std::int64_t i) const { return a.data() + i * cols; }
  T& at(std::int64_t i, std::int64_t j) { return a[std::size_t(i * cols + j)]; }
  T at(std::int64_t i, std::int64_t j) const { return a[std::size_t(i * cols + j)]; }
  std::int64_t numel() const { return rows * cols; }

  template <typename U>
  Mat<U> cast() const {
    Mat<U> out(rows, cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.a[i] = U(a[i]);
    return out;
  }
};

}  // namespace lg
