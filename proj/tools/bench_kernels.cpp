// Times the OpenMP kernels against the serial reference on training-shaped
// problems and confirms bitwise agreement while at it.
//
//   ./bench_kernels [threads]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <vector>

#include "coworld/kernels.hpp"
#include "coworld/rng.hpp"

using namespace coworld;
using clock_type = std::chrono::steady_clock;

namespace {

double time_of(int reps, void (*fn)(const double*, const double*, double*, int, int, int),
               const double* a, const double* b, double* c, int m, int k, int n) {
  fn(a, b, c, m, k, n);  // warm-up
  const auto t0 = clock_type::now();
  for (int r = 0; r < reps; ++r) fn(a, b, c, m, k, n);
  return std::chrono::duration<double>(clock_type::now() - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) omp_set_num_threads(std::atoi(argv[1]));
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-28s %10s %10s %8s %8s  %s\n", "kernel", "serial ms", "omp ms", "speedup",
              "GFLOP/s", "bitwise");

  Rng rng(99);
  struct Shape {
    const char* name;
    int m, k, n;
  };
  const Shape shapes[] = {
      {"matmul encoder fwd", 256, 3072, 128},
      {"matmul hidden fwd", 256, 128, 128},
      {"matmul decoder bwd", 256, 128, 3072},
      {"matmul small batch", 16, 192, 64},
  };

  for (const auto& s : shapes) {
    std::vector<double> a(static_cast<size_t>(s.m) * s.k), b(static_cast<size_t>(s.k) * s.n),
        c1(static_cast<size_t>(s.m) * s.n), c2(c1.size());
    for (auto& x : a) x = rng.uniform(-1, 1);
    for (auto& x : b) x = rng.uniform(-1, 1);
    const double flop = 2.0 * s.m * s.k * s.n;
    const int reps = std::max(1, static_cast<int>(2e8 / flop));
    const double ts = time_of(reps, kern::ref::matmul_nn, a.data(), b.data(), c1.data(), s.m, s.k, s.n);
    const double tp = time_of(reps, kern::matmul_nn, a.data(), b.data(), c2.data(), s.m, s.k, s.n);
    const bool same = std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)) == 0;
    std::printf("%-28s %10.3f %10.3f %8.2fx %8.2f  %s\n", s.name, ts * 1e3, tp * 1e3, ts / tp,
                flop / tp / 1e9, same ? "ok" : "MISMATCH");
    if (!same) return 1;
  }

  {
    const size_t n = 1 << 22;
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform(-1, 1);
    const auto t0 = clock_type::now();
    const double s1 = kern::ref::reduce_sum(x.data(), n);
    const auto t1 = clock_type::now();
    const double s2 = kern::reduce_sum(x.data(), n);
    const auto t2 = clock_type::now();
    const double ts = std::chrono::duration<double>(t1 - t0).count();
    const double tp = std::chrono::duration<double>(t2 - t1).count();
    std::printf("%-28s %10.3f %10.3f %8.2fx %8s  %s\n", "reduce_sum 4M", ts * 1e3, tp * 1e3,
                ts / tp, "-", s1 == s2 ? "ok" : "MISMATCH");
    if (s1 != s2) return 1;
  }
  return 0;
}
