#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace coworld {

// Dense row-major matrix of doubles. All batched math in this codebase is
// 2-D (rows = batch entries, cols = features); images and sequences are
// flattened into rows by the layer that owns them.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
  Tensor(int r, int c, double fill)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  static Tensor from(int r, int c, std::vector<double> values) {
    Tensor t;
    t.rows = r;
    t.cols = c;
    assert(values.size() == static_cast<size_t>(r) * c);
    t.data = std::move(values);
    return t;
  }

  size_t size() const { return data.size(); }
  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace coworld
