#pragma once

#include <cstddef>

// Compute kernels, each in two renditions:
//   kern::ref  — serial reference, the contract for what every element equals
//   kern       — OpenMP version used by the rest of the codebase
//
// Both renditions perform the *identical* floating-point operation sequence
// per output element (work is partitioned over outputs, never over an
// accumulation), so results are bit-exact between them and independent of
// thread count. The accumulation order is part of each kernel's contract and
// noted next to it. tests/test_kernels.cpp checks bitwise equality; the
// bench_kernels tool compares throughput.

namespace coworld::kern {

// global toggle consulted by the omp pragmas (tests flip it; default on)
bool parallel_enabled();
void set_parallel(bool on);

namespace ref {

// C[m,n] = A[m,k]·B[k,n]; element order: p = 0..k-1 ascending.
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);

// C[m,k2] = A[m,n2]·B[k2,n2]^T; per element, four independent partial sums
// over j ≡ 0..3 (mod 4) combined as (s0+s1)+(s2+s3), then the tail ascending.
void matmul_nt(const double* a, const double* b, double* c, int m, int n2, int k2);

// C[k2,n2] = A[m,k2]^T·B[m,n2]; element order: i = 0..m-1 ascending.
void matmul_tn(const double* a, const double* b, double* c, int m, int k2, int n2);

// y = softmax over each contiguous group of `group` columns (max-subtracted).
void softmax_groups(const double* x, double* y, int rows, int cols, int group);
void log_softmax_groups(const double* x, double* y, int rows, int cols, int group);

// out[j] = sum_i a[i,j], i ascending.
void col_sum(const double* a, double* out, int m, int n);

// Blocked sum: fixed 1024-element blocks summed ascending, block partials
// combined ascending. Same order at any thread count.
double reduce_sum(const double* x, size_t n);

}  // namespace ref

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int n2, int k2);
void matmul_tn(const double* a, const double* b, double* c, int m, int k2, int n2);
void softmax_groups(const double* x, double* y, int rows, int cols, int group);
void log_softmax_groups(const double* x, double* y, int rows, int cols, int group);
void col_sum(const double* a, double* out, int m, int n);
double reduce_sum(const double* x, size_t n);

// Elementwise maps; each output element depends on its own inputs only, so
// the omp variant is trivially order-preserving.
template <class F>
void map_elems(const double* x, double* y, size_t n, F f) {
#pragma omp parallel for schedule(static) if (parallel_enabled() && n > 4096)
  for (ptrdiff_t i = 0; i < static_cast<ptrdiff_t>(n); ++i) y[i] = f(x[i]);
}

template <class F>
void zip_elems(const double* a, const double* b, double* y, size_t n, F f) {
#pragma omp parallel for schedule(static) if (parallel_enabled() && n > 4096)
  for (ptrdiff_t i = 0; i < static_cast<ptrdiff_t>(n); ++i) y[i] = f(a[i], b[i]);
}

}  // namespace coworld::kern
