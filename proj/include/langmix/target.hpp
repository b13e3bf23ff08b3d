#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "langmix/common.hpp"
#include "langmix/geometry.hpp"
#include "langmix/metrics.hpp"
#include "langmix/rng.hpp"

namespace langmix {

/// A density on a manifold, discretized against a quadrature mesh.
/// Tilted densities carry their analytic B = sup ||grad log p||_g and
/// Lipschitz constant L as metadata (the bound evaluators need the true
/// suprema, which numerical estimation would under-report).
class TargetDistribution {
 public:
  static TargetDistribution uniform(const ParamManifold& m, int resolution) {
    TargetDistribution t;
    t.manifold_ = m;
    t.mesh_ = build_mesh(m, resolution);
    t.mass_ = t.mesh_.weights() / t.mesh_.weights().sum();
    return t;
  }

  static TargetDistribution tilted(const ParamManifold& m, int resolution,
                                   const std::function<double(const Vec&)>& log_density, double B,
                                   double L) {
    TargetDistribution t;
    t.manifold_ = m;
    t.mesh_ = build_mesh(m, resolution);
    t.tilted_ = true;
    t.B_ = B;
    t.L_ = L;
    Vec w(t.mesh_.size());
    for (int i = 0; i < t.mesh_.size(); ++i)
      w[i] = std::exp(log_density(t.mesh_.nodes().row(i).transpose())) * t.mesh_.weights()[i];
    t.mass_ = w / w.sum();
    return t;
  }

  // Degenerate single-point fixture. Violates the closed-manifold assumption
  // but makes every smoothed quantity closed-form; test use only.
  static TargetDistribution point_mass(const Vec& y0, int ambient_dim = 0) {
    TargetDistribution t;
    t.is_point_mass_ = true;
    t.pm_point_ = y0;
    t.pm_ambient_ = ambient_dim > 0 ? ambient_dim : static_cast<int>(y0.size());
    require(t.pm_ambient_ >= y0.size(), "point_mass: ambient dim too small");
    t.mass_ = Vec::Ones(1);
    return t;
  }

  bool is_point_mass() const { return is_point_mass_; }
  const ParamManifold& manifold() const { return manifold_; }
  const ManifoldMesh& mesh() const { return mesh_; }
  const Vec& node_mass() const { return mass_; }
  bool tilted() const { return tilted_; }
  double B() const { return B_; }
  double L() const { return L_; }

  int ambient_dim() const {
    return is_point_mass_ ? pm_ambient_ : manifold_.ambient_dim();
  }
  int natural_dim() const {
    return is_point_mass_ ? static_cast<int>(pm_point_.size()) : manifold_.natural_dim();
  }

  // Support points in natural coordinates, n x natural_dim.
  Mat support_points() const {
    if (is_point_mass_) return pm_point_.transpose();
    return mesh_.embedded_points().leftCols(natural_dim());
  }

  double embedding_radius() const {
    if (is_point_mass_) return pm_point_.norm();
    return manifold_.embedding_radius();
  }

 private:
  ParamManifold manifold_ = ParamManifold::circle(1.0);
  ManifoldMesh mesh_;
  Vec mass_;
  bool tilted_ = false;
  double B_ = 0.0, L_ = 0.0;
  bool is_point_mass_ = false;
  Vec pm_point_;
  int pm_ambient_ = 0;
};

/// Ground-truth samples from the quadrature approximation of p: weighted
/// node choice plus uniform jitter within the chart cell. Deterministic per
/// seed; sample i is a pure function of (seed, i).
inline PointCloud sample_prior(const TargetDistribution& t, int n, std::uint64_t seed) {
  require(n >= 0, "sample_prior: negative count");
  const int d = t.ambient_dim();
  PointCloud cloud;
  cloud.points.resize(n, d);
  if (n == 0) return cloud;

  if (t.is_point_mass()) {
    Vec x = Vec::Zero(d);
    x.head(t.natural_dim()) = t.support_points().row(0).transpose();
    for (int i = 0; i < n; ++i) cloud.points.row(i) = x.transpose();
    return cloud;
  }

  const Vec& mass = t.node_mass();
  std::vector<double> cdf(mass.size());
  double acc = 0.0;
  for (int i = 0; i < mass.size(); ++i) {
    acc += mass[i];
    cdf[i] = acc;
  }
  const auto& m = t.manifold();
  const auto& axes = m.chart_domain();
  const int dp = m.intrinsic_dim();
  const int res = t.mesh().resolution();
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint32_t>(i), 0, RngSalt::kPrior);
    const double u = rng.uniform() * acc;
    const int node = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    Vec theta = t.mesh().nodes().row(std::min<int>(node, mass.size() - 1)).transpose();
    for (int a = 0; a < dp; ++a) {
      const double h = axes[a].span() / res;
      double v = theta[a] + (rng.uniform() - 0.5) * h;
      if (axes[a].periodic) {
        const double span = axes[a].span();
        v = axes[a].lo + std::fmod(std::fmod(v - axes[a].lo, span) + span, span);
      } else {
        v = std::clamp(v, axes[a].lo, std::nextafter(axes[a].hi, axes[a].lo));
      }
      theta[a] = v;
    }
    Vec x = Vec::Zero(d);
    x.head(m.natural_dim()) = m.embed(theta).head(m.natural_dim());
    cloud.points.row(i) = x.transpose();
  }
  return cloud;
}

/// Exact quadrature oracle for p_{sigma^2} = p * g_{sigma^2}, its score and
/// Hessian. Immutable after construction; safe for concurrent evaluation.
///
/// The support points span a low-dimensional subspace (rank <= natural dim);
/// kernel weights only need the projection of x onto that subspace, which
/// keeps evaluations O(d + n * rank) instead of O(n * d).
class ScoreOracle {
 public:
  explicit ScoreOracle(const TargetDistribution& t)
      : ScoreOracle(t.support_points(), t.node_mass(), t.ambient_dim(), t.embedding_radius()) {}

  ScoreOracle(const Mat& support, const Vec& mass, int ambient_dim, double rho)
      : ambient_dim_(ambient_dim), natural_dim_(static_cast<int>(support.cols())), rho_(rho) {
    require(support.rows() == mass.size(), "ScoreOracle: support/mass size mismatch");
    require(ambient_dim_ >= natural_dim_, "ScoreOracle: ambient dim below natural dim");
    const int n = static_cast<int>(support.rows());
    log_mass_.resize(n);
    for (int i = 0; i < n; ++i) {
      require(mass[i] > 0, "ScoreOracle: nonpositive mass");
      log_mass_[i] = std::log(mass[i]);
    }
    sq_norm_ = support.rowwise().squaredNorm();
    // Rank reduction via the (small) Gram matrix of the coordinates.
    Mat gram = support.transpose() * support;
    Eigen::SelfAdjointEigenSolver<Mat> es(gram);
    const double tol = 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
    int rank = 0;
    for (int i = 0; i < es.eigenvalues().size(); ++i)
      if (es.eigenvalues()[i] > tol) ++rank;
    basis_ = es.eigenvectors().rightCols(rank);  // natural_dim x rank
    coords_ = support * basis_;                  // n x rank
  }

  int ambient_dim() const { return ambient_dim_; }
  int natural_dim() const { return natural_dim_; }
  int rank() const { return static_cast<int>(basis_.cols()); }
  double rho() const { return rho_; }
  int support_size() const { return static_cast<int>(coords_.rows()); }

  double smoothed_log_density(const Vec& x, double sigma) const {
    require(sigma > 0, "smoothed_density: sigma must be positive");
    const auto [logk, shift] = log_kernel(x, sigma);
    double s = 0.0;
    for (int i = 0; i < logk.size(); ++i) s += std::exp(logk[i] - shift);
    return shift + std::log(s) -
           0.5 * ambient_dim_ * std::log(kTwoPi * sigma * sigma);
  }

  double smoothed_density(const Vec& x, double sigma) const {
    const double lv = smoothed_log_density(x, sigma);
    const double v = std::exp(lv);
    if (v <= 0.0)
      throw EvalError("smoothed_density underflows: x too far from the manifold for this sigma");
    return v;
  }

  /// grad log p_{sigma^2}(x) = (e(x) - x) / sigma^2 with e(x) the posterior
  /// mean of the support under softmax-normalized Gaussian weights.
  Vec smoothed_score(const Vec& x, double sigma) const {
    Vec ec;
    posterior_rank_moments(x, sigma, &ec, nullptr);
    Vec e = Vec::Zero(ambient_dim_);
    e.head(natural_dim_) = basis_ * ec;
    return (e - x) / (sigma * sigma);
  }

  /// Hessian of log p_{sigma^2}: (Cov_{q_x}(Y) - sigma^2 I) / sigma^4.
  Mat smoothed_hessian(const Vec& x, double sigma) const {
    Vec ec;
    Mat cov_r;
    posterior_rank_moments(x, sigma, &ec, &cov_r);
    Mat cov_nat = basis_ * cov_r * basis_.transpose();
    Mat h = Mat::Zero(ambient_dim_, ambient_dim_);
    h.topLeftCorner(natural_dim_, natural_dim_) = cov_nat;
    const double s2 = sigma * sigma;
    h.diagonal().array() -= s2;
    return h / (s2 * s2);
  }

  /// Extreme Hessian eigenvalues without forming the d x d matrix: the
  /// posterior covariance has the rank-space eigenvalues plus (d - rank)
  /// zeros, so the Hessian spectrum is known from the small problem.
  std::pair<double, double> hessian_extreme_eigs(const Vec& x, double sigma) const {
    const double s2_ = sigma * sigma;
    if (rank() == 0) return {-1.0 / s2_, -1.0 / s2_};
    Vec ec;
    Mat cov_r;
    posterior_rank_moments(x, sigma, &ec, &cov_r);
    Eigen::SelfAdjointEigenSolver<Mat> es(cov_r);
    double lmin = es.eigenvalues().minCoeff();
    double lmax = es.eigenvalues().maxCoeff();
    if (ambient_dim_ > rank()) {
      lmin = std::min(lmin, 0.0);
      lmax = std::max(lmax, 0.0);
    }
    const double s2 = sigma * sigma;
    return {(lmin - s2) / (s2 * s2), (lmax - s2) / (s2 * s2)};
  }

 private:
  // Log kernel weights (unnormalized) and their max for stable softmax.
  std::pair<Vec, double> log_kernel(const Vec& x, double sigma) const {
    require(x.size() == ambient_dim_, "oracle: point has wrong dimension");
    require(x.allFinite(), "oracle: non-finite evaluation point");
    const double inv2s2 = 1.0 / (2 * sigma * sigma);
    const double xsq = x.squaredNorm();
    const Vec xr = basis_.transpose() * x.head(natural_dim_);
    Vec logk = log_mass_;
    logk.noalias() += (coords_ * xr) / (sigma * sigma);
    logk -= (sq_norm_.array() + xsq).matrix() * inv2s2;
    return {logk, logk.maxCoeff()};
  }

  void posterior_rank_moments(const Vec& x, double sigma, Vec* mean, Mat* cov) const {
    require(sigma > 0, "oracle: sigma must be positive");
    const auto [logk, shift] = log_kernel(x, sigma);
    const int n = support_size();
    const int r = rank();
    Vec w(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      w[i] = std::exp(logk[i] - shift);
      total += w[i];
    }
    w /= total;
    *mean = coords_.transpose() * w;
    if (cov) {
      // Central two-pass form keeps the covariance PSD to rounding.
      Mat c = Mat::Zero(r, r);
      for (int i = 0; i < n; ++i) {
        const Vec dlt = coords_.row(i).transpose() - *mean;
        c.noalias() += w[i] * dlt * dlt.transpose();
      }
      *cov = c;
    }
  }

  int ambient_dim_;
  int natural_dim_;
  double rho_;
  Vec log_mass_;
  Vec sq_norm_;
  Mat basis_;   // natural_dim x rank
  Mat coords_;  // n x rank
};

struct LipschitzCheck {
  double estimate = 0.0;
  double bound = 0.0;
  bool holds = false;
};

/// Probes the smoothed-score Hessian spectrum in a ball of radius 2 rho and
/// verifies both one-sided bounds: H <= ((rho^2 - sigma^2)/sigma^4) I and
/// H >= -I/sigma^2; the two-sided Lipschitz bound is max(rho^2, sigma^2)/sigma^4.
inline LipschitzCheck lipschitz_check(const ScoreOracle& o, double sigma, int probes,
                                      std::uint64_t seed) {
  require(probes >= 2, "lipschitz_check: need at least 2 probes");
  const int d = o.ambient_dim();
  const double rho = o.rho();
  const double s2 = sigma * sigma;
  const double upper = (rho * rho - s2) / (s2 * s2);
  const double lower = -1.0 / s2;
  LipschitzCheck res;
  res.bound = std::max(rho * rho, s2) / (s2 * s2);
  res.holds = true;
  const double probe_radius = 2 * std::max(rho, sigma);
  for (int p = 0; p < probes; ++p) {
    CounterRng rng(seed, static_cast<std::uint32_t>(p), 0, RngSalt::kProbe);
    Vec dir = rng.normal_vec(d);
    dir /= std::max(dir.norm(), 1e-300);
    const Vec x = probe_radius * std::pow(rng.uniform(), 1.0 / d) * dir;
    const auto [emin, emax] = o.hessian_extreme_eigs(x, sigma);
    res.estimate = std::max({res.estimate, std::abs(emin), std::abs(emax)});
    const double slack = 1e-6 * res.bound + 1e-12;
    if (emax > upper + slack || emin < lower - slack) res.holds = false;
  }
  if (res.estimate > res.bound * (1 + 1e-6)) res.holds = false;
  return res;
}

struct DissipativityCheck {
  double min_margin = std::numeric_limits<double>::infinity();
  bool holds = true;
};

/// margin(x) = <-grad log p_{sigma^2}(x), x> - ||x||^2/(2 sigma^2)
///           + rho^2/(2 sigma^2), nonnegative by the dissipativity bound.
inline DissipativityCheck dissipativity_check(const ScoreOracle& o, double sigma, int probes,
                                              std::uint64_t seed) {
  require(probes >= 1, "dissipativity_check: need at least 1 probe");
  const int d = o.ambient_dim();
  const double rho = o.rho();
  const double s2 = sigma * sigma;
  DissipativityCheck res;
  const double probe_radius = 3 * std::max(rho, sigma);
  for (int p = 0; p < probes; ++p) {
    CounterRng rng(seed, static_cast<std::uint32_t>(p), 0, RngSalt::kProbe);
    Vec dir = rng.normal_vec(d);
    dir /= std::max(dir.norm(), 1e-300);
    const Vec x = probe_radius * std::pow(rng.uniform(), 1.0 / d) * dir;
    const double margin =
        -o.smoothed_score(x, sigma).dot(x) - x.squaredNorm() / (2 * s2) + rho * rho / (2 * s2);
    res.min_margin = std::min(res.min_margin, margin);
    if (margin < -1e-8 * (1 + x.squaredNorm() / s2)) res.holds = false;
  }
  return res;
}

}  // namespace langmix
