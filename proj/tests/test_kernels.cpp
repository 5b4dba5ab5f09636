#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "coworld/kernels.hpp"
#include "coworld/rng.hpp"

using namespace coworld;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul_nn matches a plain triple loop") {
  Rng rng(11);
  const int m = 7, k = 13, n = 5;
  auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
  std::vector<double> c(m * n), expect(m * n, 0.0);
  kern::ref::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p) expect[i * n + j] += a[i * k + p] * b[p * n + j];
  for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("matmul_nt equals A times B-transpose") {
  Rng rng(12);
  const int m = 6, n2 = 9, k2 = 4;
  auto a = random_vec(rng, m * n2), b = random_vec(rng, k2 * n2);
  std::vector<double> c(m * k2);
  kern::ref::matmul_nt(a.data(), b.data(), c.data(), m, n2, k2);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k2; ++p) {
      double s = 0.0;
      for (int j = 0; j < n2; ++j) s += a[i * n2 + j] * b[p * n2 + j];
      CHECK(c[i * k2 + p] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("matmul_tn equals A-transpose times B") {
  Rng rng(13);
  const int m = 8, k2 = 3, n2 = 6;
  auto a = random_vec(rng, m * k2), b = random_vec(rng, m * n2);
  std::vector<double> c(k2 * n2);
  kern::ref::matmul_tn(a.data(), b.data(), c.data(), m, k2, n2);
  for (int p = 0; p < k2; ++p)
    for (int j = 0; j < n2; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += a[i * k2 + p] * b[i * n2 + j];
      CHECK(c[p * n2 + j] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("softmax groups are valid distributions and log variant is consistent") {
  Rng rng(14);
  const int rows = 5, cols = 12, group = 4;
  auto x = random_vec(rng, rows * cols, 6.0);
  std::vector<double> p(rows * cols), lp(rows * cols);
  kern::ref::softmax_groups(x.data(), p.data(), rows, cols, group);
  kern::ref::log_softmax_groups(x.data(), lp.data(), rows, cols, group);
  for (int i = 0; i < rows; ++i)
    for (int g0 = 0; g0 < cols; g0 += group) {
      double z = 0.0;
      for (int j = 0; j < group; ++j) {
        const double pj = p[i * cols + g0 + j];
        CHECK(pj >= 0.0);
        CHECK(std::abs(std::log(pj) - lp[i * cols + g0 + j]) < 1e-9);
        z += pj;
      }
      CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax survives extreme logits without overflow") {
  std::vector<double> x = {800.0, -800.0, 0.0, 750.0, 749.0, -750.0};
  std::vector<double> p(6);
  kern::ref::softmax_groups(x.data(), p.data(), 1, 6, 3);
  CHECK(std::isfinite(p[0]));
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[3] > p[4]);
  CHECK(p[5] == doctest::Approx(0.0));
}

TEST_CASE("omp kernels are bit-exact against the serial reference at several thread counts") {
  Rng rng(15);
  // shapes past the parallel-if thresholds plus a tiny one below them
  const int shapes[][3] = {{64, 96, 48}, {3, 5, 4}, {129, 77, 33}};
  for (int threads : {1, 2, 3, 7}) {
    omp_set_num_threads(threads);
    for (auto& s : shapes) {
      const int m = s[0], k = s[1], n = s[2];
      auto a = random_vec(rng, static_cast<size_t>(m) * k);
      auto b = random_vec(rng, static_cast<size_t>(k) * n);
      std::vector<double> c_ref(static_cast<size_t>(m) * n), c_omp(c_ref.size());
      kern::ref::matmul_nn(a.data(), b.data(), c_ref.data(), m, k, n);
      kern::matmul_nn(a.data(), b.data(), c_omp.data(), m, k, n);
      CHECK(bitwise_equal(c_ref, c_omp));

      auto bt = random_vec(rng, static_cast<size_t>(n) * k);
      std::vector<double> d_ref(static_cast<size_t>(m) * n), d_omp(d_ref.size());
      kern::ref::matmul_nt(a.data(), bt.data(), d_ref.data(), m, k, n);
      kern::matmul_nt(a.data(), bt.data(), d_omp.data(), m, k, n);
      CHECK(bitwise_equal(d_ref, d_omp));

      auto b2 = random_vec(rng, static_cast<size_t>(m) * n);
      std::vector<double> e_ref(static_cast<size_t>(k) * n), e_omp(e_ref.size());
      kern::ref::matmul_tn(a.data(), b2.data(), e_ref.data(), m, k, n);
      kern::matmul_tn(a.data(), b2.data(), e_omp.data(), m, k, n);
      CHECK(bitwise_equal(e_ref, e_omp));
    }

    auto x = random_vec(rng, 40 * 24, 5.0);
    std::vector<double> p_ref(x.size()), p_omp(x.size());
    kern::ref::softmax_groups(x.data(), p_ref.data(), 40, 24, 8);
    kern::softmax_groups(x.data(), p_omp.data(), 40, 24, 8);
    CHECK(bitwise_equal(p_ref, p_omp));
    kern::ref::log_softmax_groups(x.data(), p_ref.data(), 40, 24, 8);
    kern::log_softmax_groups(x.data(), p_omp.data(), 40, 24, 8);
    CHECK(bitwise_equal(p_ref, p_omp));

    auto big = random_vec(rng, 50000);
    CHECK(kern::ref::reduce_sum(big.data(), big.size()) ==
          kern::reduce_sum(big.data(), big.size()));

    std::vector<double> cs_ref(96), cs_omp(96);
    auto mat = random_vec(rng, 130 * 96);
    kern::ref::col_sum(mat.data(), cs_ref.data(), 130, 96);
    kern::col_sum(mat.data(), cs_omp.data(), 130, 96);
    CHECK(bitwise_equal(cs_ref, cs_omp));
  }
  omp_set_num_threads(omp_get_num_procs());
}

TEST_CASE("reduce_sum order is stable under the parallel toggle") {
  Rng rng(16);
  auto x = random_vec(rng, 12345, 1e6);  // large magnitudes make reassociation visible
  kern::set_parallel(false);
  const double serial = kern::reduce_sum(x.data(), x.size());
  kern::set_parallel(true);
  const double parallel = kern::reduce_sum(x.data(), x.size());
  CHECK(serial == parallel);
}

TEST_CASE("map and zip elementwise helpers") {
  Rng rng(17);
  auto x = random_vec(rng, 9001);
  std::vector<double> y(x.size()), z(x.size());
  kern::map_elems(x.data(), y.data(), x.size(), [](double v) { return std::tanh(v); });
  for (size_t i = 0; i < x.size(); i += 1000) CHECK(y[i] == std::tanh(x[i]));
  kern::zip_elems(x.data(), y.data(), z.data(), x.size(),
                  [](double a, double b) { return a * b; });
  for (size_t i = 0; i < x.size(); i += 1000) CHECK(z[i] == x[i] * y[i]);
}

TEST_CASE("rng streams are reproducible and fork-isolated") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

  // forks depend on the construction seed only, not on parent consumption
  Rng parent1(7), parent2(7);
  (void)parent1.next();
  (void)parent1.normal();
  Rng f1 = parent1.fork("stream");
  Rng f2 = parent2.fork("stream");
  for (int i = 0; i < 10; ++i) CHECK(f1.next() == f2.next());

  Rng g1 = parent1.fork("other");
  CHECK(g1.next() != f2.fork("nothing").next());

  // indexed forks differ from each other
  CHECK(parent1.fork("s", 0).next() != parent1.fork("s", 1).next());
}

TEST_CASE("rng uniform and normal moments are sane") {
  Rng rng(123);
  double sum = 0.0, sumsq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sumsq += u * u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
  CHECK(sumsq / n == doctest::Approx(1.0 / 3).epsilon(0.03));

  double nsum = 0.0, nsumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.normal();
    nsum += g;
    nsumsq += g * g;
  }
  CHECK(nsum / n == doctest::Approx(0.0).epsilon(0.05));
  CHECK(std::abs(nsumsq / n - 1.0) < 0.05);

  for (int i = 0; i < 1000; ++i) {
    const uint64_t v = rng.uniform_int(7);
    CHECK(v < 7);
  }
}
