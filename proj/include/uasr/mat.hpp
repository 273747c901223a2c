#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uasr/common.hpp"

namespace uasr {

// Dense row-major matrix. Feature data is float on disk and in memory;
// model math uses Mat<double>.
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int r, int c, T fill = T(0)) : rows(r), cols(c), data(size_t(r) * c, fill) {}

  T* row(int r) { return data.data() + size_t(r) * cols; }
  const T* row(int r) const { return data.data() + size_t(r) * cols; }
  std::span<T> row_span(int r) { return {row(r), size_t(cols)}; }
  std::span<const T> row_span(int r) const { return {row(r), size_t(cols)}; }
  T& at(int r, int c) { return data[size_t(r) * cols + c]; }
  const T& at(int r, int c) const { return data[size_t(r) * cols + c]; }
  bool empty() const { return rows == 0 || cols == 0; }
  size_t size() const { return data.size(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

inline MatD to_double(const MatF& m) {
  MatD out(m.rows, m.cols);
  for (size_t i = 0; i < m.data.size(); ++i) out.data[i] = m.data[i];
  return out;
}

inline MatF to_float(const MatD& m) {
  MatF out(m.rows, m.cols);
  for (size_t i = 0; i < m.data.size(); ++i) out.data[i] = float(m.data[i]);
  return out;
}

}  // namespace uasr
