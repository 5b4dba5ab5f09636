#include "coworld/kernels.hpp"

#include <atomic>
#include <cmath>
#include <vector>

namespace coworld::kern {

namespace {
std::atomic<bool> g_parallel{true};

// Shared element bodies. ref:: and the omp versions both call these, which
// is what makes bit-exactness hold by construction: the only difference
// between renditions is which rows a thread computes.

inline void nn_row(const double* a, const double* b, double* c, int i, int k, int n) {
  double* ci = c + static_cast<size_t>(i) * n;
  for (int j = 0; j < n; ++j) ci[j] = 0.0;
  const double* ai = a + static_cast<size_t>(i) * k;
  for (int p = 0; p < k; ++p) {
    const double av = ai[p];
    const double* bp = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

inline double nt_dot(const double* x, const double* y, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += x[j] * y[j];
    s1 += x[j + 1] * y[j + 1];
    s2 += x[j + 2] * y[j + 2];
    s3 += x[j + 3] * y[j + 3];
  }
  double s = (s0 + s1) + (s2 + s3);
  for (; j < n; ++j) s += x[j] * y[j];
  return s;
}

inline void nt_row(const double* a, const double* b, double* c, int i, int n2, int k2) {
  const double* ai = a + static_cast<size_t>(i) * n2;
  double* ci = c + static_cast<size_t>(i) * k2;
  for (int p = 0; p < k2; ++p) ci[p] = nt_dot(ai, b + static_cast<size_t>(p) * n2, n2);
}

inline void tn_row(const double* a, const double* b, double* c, int p, int m, int k2, int n2) {
  double* cp = c + static_cast<size_t>(p) * n2;
  for (int j = 0; j < n2; ++j) cp[j] = 0.0;
  for (int i = 0; i < m; ++i) {
    const double av = a[static_cast<size_t>(i) * k2 + p];
    const double* bi = b + static_cast<size_t>(i) * n2;
    for (int j = 0; j < n2; ++j) cp[j] += av * bi[j];
  }
}

inline void softmax_row(const double* x, double* y, int cols, int group) {
  for (int g0 = 0; g0 < cols; g0 += group) {
    double mx = x[g0];
    for (int j = 1; j < group; ++j) mx = std::max(mx, x[g0 + j]);
    double z = 0.0;
    for (int j = 0; j < group; ++j) {
      y[g0 + j] = std::exp(x[g0 + j] - mx);
      z += y[g0 + j];
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < group; ++j) y[g0 + j] *= inv;
  }
}

inline void log_softmax_row(const double* x, double* y, int cols, int group) {
  for (int g0 = 0; g0 < cols; g0 += group) {
    double mx = x[g0];
    for (int j = 1; j < group; ++j) mx = std::max(mx, x[g0 + j]);
    double z = 0.0;
    for (int j = 0; j < group; ++j) z += std::exp(x[g0 + j] - mx);
    const double lz = std::log(z) + mx;
    for (int j = 0; j < group; ++j) y[g0 + j] = x[g0 + j] - lz;
  }
}

constexpr size_t kSumBlock = 1024;

inline double block_sum(const double* x, size_t lo, size_t hi) {
  double s = 0.0;
  for (size_t i = lo; i < hi; ++i) s += x[i];
  return s;
}

}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

// ---- serial reference ----

namespace ref {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) nn_row(a, b, c, i, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int n2, int k2) {
  for (int i = 0; i < m; ++i) nt_row(a, b, c, i, n2, k2);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k2, int n2) {
  for (int p = 0; p < k2; ++p) tn_row(a, b, c, p, m, k2, n2);
}

void softmax_groups(const double* x, double* y, int rows, int cols, int group) {
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<size_t>(i) * cols, y + static_cast<size_t>(i) * cols, cols, group);
}

void log_softmax_groups(const double* x, double* y, int rows, int cols, int group) {
  for (int i = 0; i < rows; ++i)
    log_softmax_row(x + static_cast<size_t>(i) * cols, y + static_cast<size_t>(i) * cols, cols,
                    group);
}

void col_sum(const double* a, double* out, int m, int n) {
  for (int j = 0; j < n; ++j) out[j] = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) out[j] += ai[j];
  }
}

double reduce_sum(const double* x, size_t n) {
  double total = 0.0;
  for (size_t lo = 0; lo < n; lo += kSumBlock)
    total += block_sum(x, lo, std::min(n, lo + kSumBlock));
  return total;
}

}  // namespace ref

// ---- OpenMP ----

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) \
    if (parallel_enabled() && static_cast<long>(m) * n * k > 1 << 16)
  for (int i = 0; i < m; ++i) nn_row(a, b, c, i, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int n2, int k2) {
#pragma omp parallel for schedule(static) \
    if (parallel_enabled() && static_cast<long>(m) * n2 * k2 > 1 << 16)
  for (int i = 0; i < m; ++i) nt_row(a, b, c, i, n2, k2);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k2, int n2) {
#pragma omp parallel for schedule(static) \
    if (parallel_enabled() && static_cast<long>(m) * k2 * n2 > 1 << 16)
  for (int p = 0; p < k2; ++p) tn_row(a, b, c, p, m, k2, n2);
}

void softmax_groups(const double* x, double* y, int rows, int cols, int group) {
#pragma omp parallel for schedule(static) if (parallel_enabled() && rows > 16)
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<size_t>(i) * cols, y + static_cast<size_t>(i) * cols, cols, group);
}

void log_softmax_groups(const double* x, double* y, int rows, int cols, int group) {
#pragma omp parallel for schedule(static) if (parallel_enabled() && rows > 16)
  for (int i = 0; i < rows; ++i)
    log_softmax_row(x + static_cast<size_t>(i) * cols, y + static_cast<size_t>(i) * cols, cols,
                    group);
}

void col_sum(const double* a, double* out, int m, int n) {
#pragma omp parallel for schedule(static) if (parallel_enabled() && n > 64)
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += a[static_cast<size_t>(i) * n + j];
    out[j] = s;
  }
}

double reduce_sum(const double* x, size_t n) {
  const size_t blocks = (n + kSumBlock - 1) / kSumBlock;
  if (!parallel_enabled() || blocks < 4) return ref::reduce_sum(x, n);
  std::vector<double> partial(blocks);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t bi = 0; bi < static_cast<ptrdiff_t>(blocks); ++bi) {
    const size_t lo = static_cast<size_t>(bi) * kSumBlock;
    partial[bi] = block_sum(x, lo, std::min(n, lo + kSumBlock));
  }
  double total = 0.0;
  for (size_t bi = 0; bi < blocks; ++bi) total += partial[bi];
  return total;
}

}  // namespace coworld::kern
