#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "langmix/common.hpp"
#include "langmix/rng.hpp"

namespace langmix {

/// Empirical carrier of a distribution: n points in R^d, optionally weighted.
struct PointCloud {
  Mat points;   // n x d
  Vec weights;  // empty means uniform

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  bool uniform_weights() const { return weights.size() == 0; }

  void check_finite() const {
    require(points.allFinite(), "PointCloud: non-finite coordinate");
  }
};

namespace detail {

// Shortest-augmenting-path solver for the linear assignment problem
// (Jonker-Volgenant style, O(n^3)). cost is n x n; returns the minimum
// total cost.
inline double solve_assignment(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(p[j] - 1, j - 1);
  return total;
}

}  // namespace detail

constexpr int kW2ExactCap = 2048;

/// Exact empirical W2 between equal-size, uniformly weighted clouds.
inline double w2_exact(const PointCloud& a, const PointCloud& b) {
  require(a.size() == b.size(), "w2_exact: clouds must have equal size (use w2_sliced)");
  require(a.uniform_weights() && b.uniform_weights(), "w2_exact: uniform weights required");
  require(a.size() <= kW2ExactCap, "w2_exact: n exceeds exact-solver cap");
  const int n = a.size();
  if (n == 0) return 0.0;
  require(a.dim() == b.dim(), "w2_exact: dimension mismatch");
  Mat cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = (a.points.row(i) - b.points.row(j)).squaredNorm();
  return std::sqrt(detail::solve_assignment(cost) / n);
}

/// Sliced W2: root mean over random unit directions of the squared 1-D W2
/// of the projections (sorted coupling).
inline double w2_sliced(const PointCloud& a, const PointCloud& b, int n_projections,
                        std::uint64_t seed) {
  require(n_projections >= 1, "w2_sliced: need at least one projection");
  require(a.dim() == b.dim(), "w2_sliced: dimension mismatch");
  const int d = a.dim();
  const int na = a.size();
  const int nb = b.size();
  require(na > 0 && nb > 0, "w2_sliced: empty cloud");
  double acc = 0.0;
  for (int k = 0; k < n_projections; ++k) {
    CounterRng rng(seed, static_cast<std::uint32_t>(k), 0, RngSalt::kProjection);
    Vec dir = rng.normal_vec(d);
    const double nrm = dir.norm();
    dir = nrm > 0 ? Vec(dir / nrm) : Vec(Vec::Unit(d, 0));
    std::vector<double> pa(na), pb(nb);
    for (int i = 0; i < na; ++i) pa[i] = a.points.row(i).dot(dir);
    for (int i = 0; i < nb; ++i) pb[i] = b.points.row(i).dot(dir);
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    // Sorted coupling of the two empirical CDFs on a common grid.
    const int m = std::max(na, nb);
    double sq = 0.0;
    for (int i = 0; i < m; ++i) {
      const double qa = pa[std::min(na - 1, i * na / m)];
      const double qb = pb[std::min(nb - 1, i * nb / m)];
      sq += (qa - qb) * (qa - qb);
    }
    acc += sq / m;
  }
  return std::sqrt(acc / n_projections);
}

struct DecayFit {
  double rate = 0.0;
  double amplitude = 0.0;
  double floor = 0.0;
  double residual = 0.0;
};

namespace detail {

// Least squares over (amplitude, floor >= 0) at fixed rate; returns residual.
inline double fit_at_rate(const std::vector<std::pair<double, double>>& series, double rate,
                          double* amp_out, double* floor_out) {
  const int n = static_cast<int>(series.size());
  double see = 0, se1 = 0, s11 = n, sy = 0, sye = 0;
  for (const auto& [t, w] : series) {
    const double e = std::exp(-rate * t);
    see += e * e;
    se1 += e;
    sy += w;
    sye += w * e;
  }
  double amp, flr;
  const double det = see * s11 - se1 * se1;
  if (std::abs(det) < 1e-14 * (see * s11 + 1e-300)) {
    // Basis degenerate (rate ~ 0): constant fit.
    amp = 0.0;
    flr = sy / n;
  } else {
    amp = (sye * s11 - sy * se1) / det;
    flr = (see * sy - se1 * sye) / det;
    if (flr < 0.0) {
      flr = 0.0;
      amp = see > 0 ? sye / see : 0.0;
    }
  }
  double res = 0.0;
  for (const auto& [t, w] : series) {
    const double r = w - (amp * std::exp(-rate * t) + flr);
    res += r * r;
  }
  *amp_out = amp;
  *floor_out = flr;
  return res;
}

}  // namespace detail

/// Fit amplitude * exp(-rate * t) + floor by least squares with floor >= 0.
/// Deterministic: floor0 = min w, rate0 from a log-linear fit of w - floor0,
/// then a bracketed 1-D search over the rate.
inline DecayFit decay_fit(const std::vector<std::pair<double, double>>& series) {
  require(series.size() >= 4, "decay_fit: need at least 4 points");
  for (const auto& [t, w] : series) require(w > 0, "decay_fit: non-positive value");

  double wmin = std::numeric_limits<double>::infinity();
  for (const auto& [t, w] : series) wmin = std::min(wmin, w);

  // Log-linear initialization on the points above the floor.
  double st = 0, sl = 0, stt = 0, stl = 0;
  int m = 0;
  for (const auto& [t, w] : series) {
    const double y = w - wmin;
    if (y <= 0) continue;
    const double l = std::log(y);
    st += t;
    sl += l;
    stt += t * t;
    stl += t * l;
    ++m;
  }
  double rate0 = 0.0;
  if (m >= 2) {
    const double det = m * stt - st * st;
    if (det > 0) rate0 = std::max(0.0, -(m * stl - st * sl) / det);
  }

  // Candidate grid around rate0 plus a broad log sweep, refined by
  // golden-section around the best candidate.
  std::vector<double> cand = {0.0};
  for (double f : {0.25, 0.5, 1.0, 2.0, 4.0})
    if (rate0 > 0) cand.push_back(rate0 * f);
  const double tspan = series.back().first - series.front().first;
  const double rmax = tspan > 0 ? 50.0 / tspan : 50.0;
  for (double r = rmax; r > 1e-6; r /= 1.6) cand.push_back(r);

  auto objective = [&](double r) {
    double a, f;
    return detail::fit_at_rate(series, r, &a, &f);
  };
  double best_r = 0.0, best_res = objective(0.0);
  for (double r : cand) {
    const double res = objective(r);
    if (res < best_res) {
      best_res = res;
      best_r = r;
    }
  }
  if (best_r > 0) {
    double lo = best_r / 2, hi = best_r * 2;
    const double gr = (std::sqrt(5.0) - 1) / 2;
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = objective(c), fd = objective(d);
    for (int it = 0; it < 200 && hi - lo > 1e-12 * (1 + best_r); ++it) {
      if (fc < fd) {
        hi = d;
        d = c;
        fd = fc;
        c = hi - gr * (hi - lo);
        fc = objective(c);
      } else {
        lo = c;
        c = d;
        fc = fd;
        d = lo + gr * (hi - lo);
        fd = objective(d);
      }
    }
    const double r = (lo + hi) / 2;
    if (objective(r) < best_res) best_r = r;
  }

  DecayFit fit;
  fit.rate = best_r;
  fit.residual = detail::fit_at_rate(series, best_r, &fit.amplitude, &fit.floor);
  if (!std::isfinite(fit.residual)) fit.residual = std::numeric_limits<double>::infinity();
  return fit;
}

namespace detail {

inline std::vector<double> moving_average3(const std::vector<std::pair<double, double>>& series) {
  const int n = static_cast<int>(series.size());
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    double s = series[i].second;
    int c = 1;
    if (i > 0) {
      s += series[i - 1].second;
      ++c;
    }
    if (i + 1 < n) {
      s += series[i + 1].second;
      ++c;
    }
    out[i] = s / c;
  }
  return out;
}

}  // namespace detail

/// Smallest t whose 3-point moving average drops to the threshold.
inline std::optional<double> mixing_time(const std::vector<std::pair<double, double>>& series,
                                         double threshold) {
  require(threshold > 0, "mixing_time: threshold must be positive");
  const auto sm = detail::moving_average3(series);
  for (std::size_t i = 0; i < series.size(); ++i)
    if (sm[i] <= threshold) return series[i].first;
  return std::nullopt;
}

struct DivergenceReport {
  double t_star = 0.0;
  double degradation = 1.0;
  bool diverged = false;
};

/// Locates the minimum of the smoothed series and reports how much the tail
/// has degraded relative to it.
inline DivergenceReport divergence_detect(const std::vector<std::pair<double, double>>& series) {
  require(series.size() >= 3, "divergence_detect: need at least 3 points");
  const auto sm = detail::moving_average3(series);
  std::size_t imin = 0;
  for (std::size_t i = 1; i < sm.size(); ++i)
    if (sm[i] < sm[imin]) imin = i;
  DivergenceReport rep;
  rep.t_star = series[imin].first;
  rep.degradation = sm[imin] > 0 ? sm.back() / sm[imin] : 1.0;
  rep.diverged = rep.degradation > 1.2;
  return rep;
}

}  // namespace langmix
