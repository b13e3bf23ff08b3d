#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "langmix/metrics.hpp"
#include "langmix/rng.hpp"

using namespace langmix;

namespace {

PointCloud random_cloud(int n, int d, std::uint64_t seed, std::uint32_t stream = 0) {
  PointCloud c;
  c.points = Mat(n, d);
  CounterRng rng(seed, stream, 0, RngSalt::kProbe);
  for (int i = 0; i < n; ++i) c.points.row(i) = rng.normal_vec(d).transpose();
  return c;
}

double w2_brute(const PointCloud& a, const PointCloud& b) {
  const int n = a.size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += (a.points.row(i) - b.points.row(perm[i])).squaredNorm();
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / n);
}

}  // namespace

TEST_CASE("w2_exact on hand-checked instances") {
  PointCloud a, b;
  a.points = Mat::Zero(1, 2);
  b.points = Mat(1, 2);
  b.points << 3, 4;
  CHECK(w2_exact(a, b) == doctest::Approx(5.0).epsilon(1e-12));

  PointCloud c = random_cloud(16, 3, 9);
  CHECK(w2_exact(c, c) == doctest::Approx(0.0).epsilon(1e-12));

  PointCloud u, v;
  u.points = Mat(2, 1);
  u.points << 0, 1;
  v.points = Mat(2, 1);
  v.points << 0.5, 2;
  // Optimal coupling is monotone: (0.25 + 1) / 2 = 0.625.
  CHECK(w2_exact(u, v) == doctest::Approx(std::sqrt(0.625)).epsilon(1e-12));
}

TEST_CASE("w2_exact matches brute-force enumeration for small n") {
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + trial % 6;
    const int d = 1 + trial % 3;
    PointCloud a = random_cloud(n, d, 100 + trial, 0);
    PointCloud b = random_cloud(n, d, 100 + trial, 1);
    CHECK(w2_exact(a, b) == doctest::Approx(w2_brute(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("w2_exact is a metric: symmetry and triangle inequality") {
  for (int trial = 0; trial < 15; ++trial) {
    PointCloud a = random_cloud(12, 2, 200 + trial, 0);
    PointCloud b = random_cloud(12, 2, 200 + trial, 1);
    PointCloud c = random_cloud(12, 2, 200 + trial, 2);
    const double ab = w2_exact(a, b);
    const double ba = w2_exact(b, a);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab <= w2_exact(a, c) + w2_exact(c, b) + 1e-9);
  }
}

TEST_CASE("any permutation coupling upper-bounds the solver") {
  CounterRng rng(17, 0, 0, RngSalt::kProbe);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 8;
    PointCloud a = random_cloud(n, 2, 300 + trial, 0);
    PointCloud b = random_cloud(n, 2, 300 + trial, 1);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[static_cast<int>(rng.uniform() * (i + 1))]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += (a.points.row(i) - b.points.row(perm[i])).squaredNorm();
    CHECK(w2_exact(a, b) <= std::sqrt(s / n) + 1e-12);
  }
}

TEST_CASE("w2_exact is translation equivariant") {
  PointCloud a = random_cloud(32, 3, 21, 0);
  PointCloud b = random_cloud(32, 3, 21, 1);
  const double base = w2_exact(a, b);
  Vec shift(3);
  shift << 1.5, -2.0, 0.25;
  PointCloud a2 = a, b2 = b;
  a2.points.rowwise() += shift.transpose();
  b2.points.rowwise() += shift.transpose();
  CHECK(std::abs(w2_exact(a2, b2) - base) < 1e-12);

  // Shifting one identical cloud by v gives exactly |v|.
  PointCloud c2 = a;
  c2.points.rowwise() += shift.transpose();
  CHECK(w2_exact(a, c2) == doctest::Approx(shift.norm()).epsilon(1e-12));
}

TEST_CASE("w2_exact rejects invalid inputs") {
  PointCloud a = random_cloud(4, 2, 1);
  PointCloud b = random_cloud(5, 2, 1);
  CHECK_THROWS_AS(w2_exact(a, b), std::invalid_argument);
  PointCloud big_a = random_cloud(kW2ExactCap + 1, 1, 2, 0);
  PointCloud big_b = random_cloud(kW2ExactCap + 1, 1, 2, 1);
  CHECK_THROWS_AS(w2_exact(big_a, big_b), std::invalid_argument);
}

TEST_CASE("w2_sliced agrees with the exact distance in one dimension") {
  PointCloud a = random_cloud(64, 1, 33, 0);
  PointCloud b = random_cloud(64, 1, 33, 1);
  const double sliced = w2_sliced(a, b, 16, 5);
  CHECK(sliced == doctest::Approx(w2_exact(a, b)).epsilon(1e-9));
}

TEST_CASE("w2_sliced is deterministic in the seed and zero on identical clouds") {
  PointCloud a = random_cloud(50, 4, 44, 0);
  PointCloud b = random_cloud(60, 4, 44, 1);
  CHECK(w2_sliced(a, a, 8, 7) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(w2_sliced(a, b, 8, 7) == w2_sliced(a, b, 8, 7));
  CHECK(w2_sliced(a, b, 8, 7) != w2_sliced(a, b, 8, 8));
}

TEST_CASE("w2_sliced tracks the exact distance on shifted Gaussians") {
  PointCloud a = random_cloud(512, 2, 55, 0);
  PointCloud b = random_cloud(512, 2, 55, 1);
  b.points.col(0).array() += 2.0;
  const double exact = w2_exact(a, b);
  const double sliced = w2_sliced(a, b, 64, 3);
  CHECK(sliced <= exact * 1.25);
  CHECK(sliced >= exact * 0.4);
}

TEST_CASE("decay_fit recovers a noiseless exponential") {
  std::vector<std::pair<double, double>> series;
  for (int i = 0; i <= 40; ++i) {
    const double t = 0.25 * i;
    series.emplace_back(t, 3.0 * std::exp(-0.5 * t) + 0.1);
  }
  const DecayFit fit = decay_fit(series);
  CHECK(fit.rate == doctest::Approx(0.5).epsilon(1e-4));
  CHECK(fit.amplitude == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(fit.floor == doctest::Approx(0.1).epsilon(1e-3));
  CHECK(fit.residual < 1e-8);
}

TEST_CASE("decay_fit on a constant series returns rate zero and the constant floor") {
  std::vector<std::pair<double, double>> series;
  for (int i = 0; i < 10; ++i) series.emplace_back(i, 2.0);
  const DecayFit fit = decay_fit(series);
  CHECK(fit.rate == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(fit.amplitude * std::exp(-fit.rate * 0.0) + fit.floor == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(fit.residual < 1e-12);
}

TEST_CASE("decay_fit tolerates multiplicative noise") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CounterRng rng(seed, 0, 0, RngSalt::kProbe);
    std::vector<std::pair<double, double>> series;
    for (int i = 0; i <= 60; ++i) {
      const double t = 0.2 * i;
      const double clean = 2.0 * std::exp(-0.3 * t) + 0.05;
      series.emplace_back(t, clean * (1.0 + 0.02 * rng.normal()));
    }
    const DecayFit fit = decay_fit(series);
    CHECK(fit.rate > 0.25);
    CHECK(fit.rate < 0.35);
  }
}

TEST_CASE("decay_fit is idempotent on its own model") {
  std::vector<std::pair<double, double>> series;
  CounterRng rng(3, 0, 0, RngSalt::kProbe);
  for (int i = 0; i <= 50; ++i) {
    const double t = 0.1 * i;
    series.emplace_back(t, 1.7 * std::exp(-0.8 * t) + 0.2 + 0.01 * std::abs(rng.normal()));
  }
  const DecayFit f1 = decay_fit(series);
  std::vector<std::pair<double, double>> model;
  for (const auto& [t, w] : series)
    model.emplace_back(t, f1.amplitude * std::exp(-f1.rate * t) + f1.floor);
  const DecayFit f2 = decay_fit(model);
  CHECK(f2.rate == doctest::Approx(f1.rate).epsilon(0.01));
  CHECK(f2.amplitude == doctest::Approx(f1.amplitude).epsilon(0.01));
}

TEST_CASE("decay_fit input validation") {
  std::vector<std::pair<double, double>> tiny = {{0, 1}, {1, 0.5}, {2, 0.3}};
  CHECK_THROWS_AS(decay_fit(tiny), std::invalid_argument);
  std::vector<std::pair<double, double>> neg = {{0, 1}, {1, 0.5}, {2, -0.1}, {3, 0.2}};
  CHECK_THROWS_AS(decay_fit(neg), std::invalid_argument);
}

TEST_CASE("mixing_time finds the first smoothed crossing") {
  std::vector<std::pair<double, double>> series;
  for (int i = 0; i <= 20; ++i) series.emplace_back(i, 4.0 * std::exp(-0.4 * i) + 0.1);
  const auto t = mixing_time(series, 0.5);
  REQUIRE(t.has_value());
  // Raw series crosses 0.5 near t = 5.75; the 3-point average lags slightly.
  CHECK(*t >= 5.0);
  CHECK(*t <= 8.0);

  CHECK_FALSE(mixing_time(series, 0.05).has_value());
  CHECK_THROWS_AS(mixing_time(series, 0.0), std::invalid_argument);
}

TEST_CASE("mixing_time smoothing absorbs a single-sample spike") {
  std::vector<std::pair<double, double>> clean, spiky;
  for (int i = 0; i <= 30; ++i) {
    const double w = 2.0 * std::exp(-0.3 * i) + 0.2;
    clean.emplace_back(i, w);
    spiky.emplace_back(i, w);
  }
  spiky[2].second = 0.01;  // one dip far below threshold
  const auto tc = mixing_time(clean, 0.6);
  const auto ts = mixing_time(spiky, 0.6);
  REQUIRE(tc.has_value());
  REQUIRE(ts.has_value());
  CHECK(std::abs(*tc - *ts) <= 1.0);
}

TEST_CASE("divergence_detect separates decay from a V shape") {
  std::vector<std::pair<double, double>> mono;
  for (int i = 0; i <= 30; ++i) mono.emplace_back(i, 2.0 * std::exp(-0.3 * i) + 0.3);
  const DivergenceReport rm = divergence_detect(mono);
  CHECK_FALSE(rm.diverged);
  CHECK(rm.degradation < 1.2);
  CHECK(rm.t_star > 20.0);

  std::vector<std::pair<double, double>> vee;
  for (int i = 0; i <= 30; ++i) {
    const double w = i <= 15 ? 2.0 - 0.1 * i : 0.5 + 0.05 * (i - 15);
    vee.emplace_back(i, w);
  }
  const DivergenceReport rv = divergence_detect(vee);
  CHECK(rv.diverged);
  CHECK(rv.t_star == doctest::Approx(15.0).epsilon(0.1));
  CHECK(rv.degradation > 1.2);
}
