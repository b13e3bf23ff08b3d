#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "langmix/common.hpp"
#include "langmix/metrics.hpp"
#include "langmix/rng.hpp"
#include "langmix/target.hpp"

namespace langmix {

using ScoreFn = std::function<Vec(const Vec&)>;

struct FeatureConfig {
  int rbf_centers = 50;
  double bandwidth = 0.0;  // 0 = median pairwise distance of centers
  bool linear = true;
  bool constant = true;
};

/// Per-sigma linear-in-features score model with a closed-form ridge solve.
/// Feature map: RBF kernels at data-drawn centers, plus linear and constant
/// terms.
class ScoreModel {
 public:
  ScoreModel() = default;
  ScoreModel(std::vector<double> sigmas, FeatureConfig cfg, Mat centers, double bandwidth,
             std::vector<Mat> coef)
      : sigmas_(std::move(sigmas)),
        cfg_(cfg),
        centers_(std::move(centers)),
        bandwidth_(bandwidth),
        coef_(std::move(coef)) {}

  const std::vector<double>& sigmas() const { return sigmas_; }
  const Mat& centers() const { return centers_; }
  double bandwidth() const { return bandwidth_; }
  const Mat& coefficients(int level) const { return coef_.at(level); }

  int n_features(int dim) const {
    return static_cast<int>(centers_.rows()) + (cfg_.linear ? dim : 0) + (cfg_.constant ? 1 : 0);
  }

  Vec features(const Vec& x) const {
    const int m = static_cast<int>(centers_.rows());
    Vec phi(n_features(static_cast<int>(x.size())));
    int at = 0;
    for (int j = 0; j < m; ++j)
      phi[at++] = std::exp(-(x - centers_.row(j).transpose()).squaredNorm() /
                           (2 * bandwidth_ * bandwidth_));
    if (cfg_.linear)
      for (int a = 0; a < x.size(); ++a) phi[at++] = x[a];
    if (cfg_.constant) phi[at++] = 1.0;
    return phi;
  }

  Vec eval(const Vec& x, int level) const { return coef_.at(level) * features(x); }

  /// Evaluate at the model level whose sigma is nearest.
  Vec eval_sigma(const Vec& x, double sigma) const {
    int best = 0;
    for (std::size_t i = 1; i < sigmas_.size(); ++i)
      if (std::abs(sigmas_[i] - sigma) < std::abs(sigmas_[best] - sigma))
        best = static_cast<int>(i);
    return eval(x, best);
  }

  ScoreFn as_fn(int level) const {
    return [this, level](const Vec& x) { return eval(x, level); };
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "langmix-score-model/1";
    j["schedule"] = sigmas_;
    j["features"] = {{"rbf_centers", cfg_.rbf_centers},
                     {"bandwidth", bandwidth_},
                     {"linear", cfg_.linear},
                     {"constant", cfg_.constant}};
    auto mat_rows = [](const Mat& m) {
      // Element-wise copy; rows of a column-major matrix are not contiguous.
      std::vector<std::vector<double>> rows(m.rows(), std::vector<double>(m.cols()));
      for (int i = 0; i < m.rows(); ++i)
        for (int k = 0; k < m.cols(); ++k) rows[i][k] = m(i, k);
      return rows;
    };
    j["centers"] = mat_rows(centers_);
    for (const auto& c : coef_) j["coefficients"].push_back(mat_rows(c));
    return j;
  }

  static ScoreModel from_json(const nlohmann::json& j) {
    require(j.value("format", "") == std::string("langmix-score-model/1"),
            "score model: unknown format tag");
    auto rows_mat = [](const nlohmann::json& rows) {
      Mat m(rows.size(), rows.empty() ? 0 : rows[0].size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < rows[i].size(); ++k) m(i, k) = rows[i][k].get<double>();
      return m;
    };
    FeatureConfig cfg;
    cfg.rbf_centers = j["features"]["rbf_centers"].get<int>();
    cfg.bandwidth = j["features"]["bandwidth"].get<double>();
    cfg.linear = j["features"]["linear"].get<bool>();
    cfg.constant = j["features"]["constant"].get<bool>();
    std::vector<Mat> coef;
    for (const auto& c : j["coefficients"]) coef.push_back(rows_mat(c));
    return ScoreModel(j["schedule"].get<std::vector<double>>(), cfg, rows_mat(j["centers"]),
                      cfg.bandwidth, std::move(coef));
  }

 private:
  std::vector<double> sigmas_;
  FeatureConfig cfg_;
  Mat centers_;
  double bandwidth_ = 1.0;
  std::vector<Mat> coef_;
};

/// (1/n) sum ||s(X_i + sigma xi_i) + xi_i / sigma||^2 with one fresh
/// standard-normal xi_i per data point per evaluation.
inline double dsm_empirical_loss(const ScoreFn& s, const PointCloud& data, double sigma,
                                 std::uint64_t seed) {
  require(data.size() >= 1, "dsm_empirical_loss: empty data");
  require(sigma > 0, "dsm_empirical_loss: sigma must be positive");
  const int n = data.size();
  const int d = data.dim();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint32_t>(i), 0, RngSalt::kDsmNoise);
    const Vec xi = rng.normal_vec(d);
    const Vec y = data.points.row(i).transpose() + sigma * xi;
    acc += (s(y) + xi / sigma).squaredNorm();
  }
  return acc / n;
}

struct PopulationLoss {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Monte Carlo estimate of E_{Y ~ p_{sigma^2}} ||s(Y) - grad log p_{sigma^2}(Y)||^2.
inline PopulationLoss dsm_population_loss(const ScoreFn& s, const ScoreOracle& o,
                                          const TargetDistribution& t, double sigma, int probes,
                                          std::uint64_t seed) {
  require(probes >= 1, "dsm_population_loss: need at least 1 probe");
  const PointCloud xs = sample_prior(t, probes, seed);
  const int d = xs.dim();
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < probes; ++i) {
    CounterRng rng(seed, static_cast<std::uint32_t>(i), 1, RngSalt::kDsmNoise);
    const Vec y = xs.points.row(i).transpose() + sigma * rng.normal_vec(d);
    const double v = (s(y) - o.smoothed_score(y, sigma)).squaredNorm();
    acc += v;
    acc2 += v * v;
  }
  PopulationLoss out;
  out.mean = acc / probes;
  const double var = std::max(0.0, acc2 / probes - out.mean * out.mean);
  out.stderr_ = std::sqrt(var / probes);
  return out;
}

/// epsilon = sqrt of the population DSM loss.
inline double score_error(const ScoreFn& s, const ScoreOracle& o, const TargetDistribution& t,
                          double sigma, int probes, std::uint64_t seed) {
  return std::sqrt(dsm_population_loss(s, o, t, sigma, probes, seed).mean);
}

/// Ridge least squares per sigma and output coordinate; the DSM objective is
/// quadratic in linear-in-feature models, so the normal equations solve it
/// exactly. Centers are an evenly spaced subsample of the data; bandwidth
/// defaults to the median pairwise distance of the centers.
inline ScoreModel fit_score_model(const PointCloud& data, const std::vector<double>& sigmas,
                                  const FeatureConfig& cfg, double lambda,
                                  std::uint64_t seed = 0) {
  require(data.size() >= 1, "fit_score_model: empty data");
  require(lambda >= 0, "fit_score_model: negative ridge parameter");
  const int n = data.size();
  const int d = data.dim();

  const int m = std::min(cfg.rbf_centers, n);
  Mat centers(m, d);
  for (int j = 0; j < m; ++j) centers.row(j) = data.points.row(static_cast<int>(
      static_cast<std::int64_t>(j) * n / std::max(1, m)));
  double bandwidth = cfg.bandwidth;
  if (bandwidth <= 0 && m >= 2) {
    std::vector<double> dists;
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j)
        dists.push_back((centers.row(i) - centers.row(j)).norm());
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    bandwidth = std::max(dists[dists.size() / 2], 1e-8);
  }
  if (bandwidth <= 0) bandwidth = 1.0;

  ScoreModel proto({}, cfg, centers, bandwidth, {});
  const int f = proto.n_features(d);
  std::vector<Mat> coef;
  for (std::size_t lvl = 0; lvl < sigmas.size(); ++lvl) {
    const double sigma = sigmas[lvl];
    require(sigma > 0, "fit_score_model: sigma must be positive");
    Mat gram = Mat::Zero(f, f);
    Mat rhs = Mat::Zero(f, d);
    for (int i = 0; i < n; ++i) {
      CounterRng rng(seed, static_cast<std::uint32_t>(i), lvl, RngSalt::kDsmNoise);
      const Vec xi = rng.normal_vec(d);
      const Vec y = data.points.row(i).transpose() + sigma * xi;
      const Vec phi = proto.features(y);
      gram.noalias() += phi * phi.transpose();
      rhs.noalias() -= phi * (xi / sigma).transpose();
    }
    gram.diagonal().array() += static_cast<double>(n) * lambda;
    if (lambda == 0.0) {
      Eigen::FullPivLU<Mat> lu(gram);
      if (!lu.isInvertible())
        throw std::runtime_error("fit_score_model: singular Gram matrix with lambda = 0");
      coef.push_back(lu.solve(rhs).transpose());
    } else {
      coef.push_back(gram.ldlt().solve(rhs).transpose());
    }
  }
  return ScoreModel(sigmas, cfg, centers, bandwidth, std::move(coef));
}

/// Base oracle plus epsilon times a fixed smooth random vector field,
/// normalized so its root-mean-square norm under p_{sigma^2} is 1. The
/// realized score error of the result is ~ epsilon by construction.
class PerturbedOracle {
 public:
  PerturbedOracle(const ScoreOracle& base, const TargetDistribution& t, double epsilon,
                  double sigma, std::uint64_t seed, int field_centers = 8,
                  int normalization_probes = 4096)
      : base_(&base), epsilon_(epsilon), sigma_(sigma) {
    require(epsilon >= 0, "perturb_oracle: epsilon must be nonnegative");
    const int d = base.ambient_dim();
    // Field centers near the smoothed distribution; directions Gaussian.
    const PointCloud anchors = sample_prior(t, field_centers, seed ^ 0x9E3779B97F4A7C15ull);
    centers_.resize(field_centers, d);
    dirs_.resize(field_centers, d);
    for (int j = 0; j < field_centers; ++j) {
      CounterRng rng(seed, static_cast<std::uint32_t>(j), 0, RngSalt::kField);
      centers_.row(j) = anchors.points.row(j) + sigma * rng.normal_vec(d).transpose();
      dirs_.row(j) = rng.normal_vec(d).transpose();
    }
    // Wide kernels concentrate the field in low spatial frequencies, which
    // carry the largest stationary-density tilt per unit RMS error.
    width_ = std::max(base.rho(), sigma);
    // Normalize the RMS norm under p_{sigma^2} by Monte Carlo.
    if (epsilon_ > 0) {
      const PointCloud xs = sample_prior(t, normalization_probes, seed + 1);
      double acc = 0.0;
      for (int i = 0; i < normalization_probes; ++i) {
        CounterRng rng(seed + 1, static_cast<std::uint32_t>(i), 2, RngSalt::kField);
        const Vec y = xs.points.row(i).transpose() + sigma * rng.normal_vec(d);
        acc += raw_field(y).squaredNorm();
      }
      const double rms = std::sqrt(acc / normalization_probes);
      scale_ = rms > 0 ? 1.0 / rms : 0.0;
    }
  }

  Vec operator()(const Vec& x) const {
    Vec s = base_->smoothed_score(x, sigma_);
    if (epsilon_ > 0) s += epsilon_ * scale_ * raw_field(x);
    return s;
  }

  ScoreFn as_fn() const {
    return [this](const Vec& x) { return (*this)(x); };
  }

  double epsilon() const { return epsilon_; }

 private:
  Vec raw_field(const Vec& x) const {
    Vec u = Vec::Zero(x.size());
    for (int j = 0; j < centers_.rows(); ++j) {
      const double w = std::exp(-(x - centers_.row(j).transpose()).squaredNorm() /
                                (2 * width_ * width_));
      u += w * dirs_.row(j).transpose();
    }
    return u;
  }

  const ScoreOracle* base_;
  double epsilon_;
  double sigma_;
  Mat centers_;
  Mat dirs_;
  double width_ = 1.0;
  double scale_ = 0.0;
};

}  // namespace langmix
