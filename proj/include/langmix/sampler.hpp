#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "langmix/common.hpp"
#include "langmix/metrics.hpp"
#include "langmix/rng.hpp"

namespace langmix {

/// Score provider for annealed sampling: s(x, sigma_i).
using LevelScoreFn = std::function<Vec(const Vec&, double)>;

/// Decreasing noise ladder (sigma_i, T_i) with the per-level step size
/// alpha_i = eps_step * sigma_i^2 / sigma_L^2.
struct NoiseSchedule {
  std::vector<std::pair<double, int>> levels;  // (sigma_i, T_i), sigma decreasing
  double eps_step = 2e-5;

  void validate() const {
    require(!levels.empty(), "schedule: no levels");
    require(eps_step > 0, "schedule: eps_step must be positive");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      require(levels[i].first > 0, "schedule: sigma must be positive");
      require(levels[i].second >= 0, "schedule: negative iteration count");
      if (i > 0)
        require(levels[i].first < levels[i - 1].first, "schedule: sigma must strictly decrease");
    }
  }

  double sigma_final() const { return levels.back().first; }

  double alpha(std::size_t i) const {
    const double sL = sigma_final();
    return eps_step * levels[i].first * levels[i].first / (sL * sL);
  }

  /// The paper-style 10-level ladder used as the default.
  static NoiseSchedule paper_default(int steps_per_level = 100, double eps_step = 2e-5) {
    NoiseSchedule s;
    for (double sig : {1.0, 0.59, 0.35, 0.21, 0.12, 0.07, 0.04, 0.027, 0.016, 0.01})
      s.levels.emplace_back(sig, steps_per_level);
    s.eps_step = eps_step;
    return s;
  }

  /// Log-uniform ladder between sigma_max and sigma_min.
  static NoiseSchedule geometric(double sigma_max, double sigma_min, int n_levels,
                                 int steps_per_level, double eps_step = 2e-5) {
    require(sigma_max > sigma_min && sigma_min > 0, "schedule: need sigma_max > sigma_min > 0");
    require(n_levels >= 1, "schedule: need at least one level");
    NoiseSchedule s;
    for (int i = 0; i < n_levels; ++i) {
      const double f = n_levels == 1 ? 0.0 : static_cast<double>(i) / (n_levels - 1);
      s.levels.emplace_back(sigma_max * std::pow(sigma_min / sigma_max, f), steps_per_level);
    }
    s.eps_step = eps_step;
    return s;
  }
};

struct Snapshot {
  std::uint64_t step = 0;    // global step index
  int level = 0;             // noise level index within the schedule
  int resolution_level = 0;  // ladder level j (0 = full resolution)
  double time = 0.0;         // accumulated diffusion time sum(alpha_i / 2)
  bool upsampled = false;    // pre-Langevin cloud right after an upsample
  PointCloud cloud;
};

struct TrajectoryLog {
  std::vector<Snapshot> snapshots;
  std::uint64_t seed = 0;
  std::uint64_t score_evaluations = 0;
  double dimension_weighted_cost = 0.0;  // sum over levels of chains * T_i * d_j
  double wall_seconds = 0.0;

  const PointCloud& final_cloud() const { return snapshots.back().cloud; }

  void export_dir(const std::string& dir) const;
};

/// One Euler-Maruyama Langevin update: x + (alpha/2) s + sqrt(alpha) z.
inline Vec langevin_step(const Vec& x, const Vec& s, double alpha, const Vec& z) {
  require(alpha >= 0, "langevin_step: negative step size");
  require(x.size() == s.size() && x.size() == z.size(), "langevin_step: dimension mismatch");
  return x + (alpha / 2) * s + std::sqrt(alpha) * z;
}

namespace detail {

struct AnnealState {
  Mat states;  // chains x d
  std::uint64_t global_step = 0;
  double time = 0.0;
};

// Runs one schedule over the chain ensemble in place, appending snapshots.
// RNG streams are pure functions of (seed, chain, global step), so the
// trajectory is independent of evaluation order.
inline void run_schedule(const LevelScoreFn& score, const NoiseSchedule& schedule,
                         int resolution_level, std::uint64_t seed, int snapshot_every,
                         AnnealState& st, TrajectoryLog& log) {
  schedule.validate();
  const int n_chains = static_cast<int>(st.states.rows());
  const int d = static_cast<int>(st.states.cols());
  for (std::size_t i = 0; i < schedule.levels.size(); ++i) {
    const auto [sigma, T] = schedule.levels[i];
    const double alpha = schedule.alpha(i);
    for (int t = 0; t < T; ++t) {
      ++st.global_step;
      for (int c = 0; c < n_chains; ++c) {
        CounterRng rng(seed, static_cast<std::uint32_t>(c), st.global_step,
                       RngSalt::kStepNoise);
        const Vec x = st.states.row(c).transpose();
        Vec s;
        try {
          s = score(x, sigma);
        } catch (const std::exception& e) {
          throw EvalError("score evaluation failed at chain " + std::to_string(c) + ", step " +
                          std::to_string(st.global_step) + ": " + e.what());
        }
        st.states.row(c) = langevin_step(x, s, alpha, rng.normal_vec(d)).transpose();
      }
      st.time += alpha / 2;
      log.score_evaluations += n_chains;
      if (snapshot_every > 0 && st.global_step % snapshot_every == 0 &&
          !(i + 1 == schedule.levels.size() && t + 1 == T)) {
        log.snapshots.push_back({st.global_step, static_cast<int>(i), resolution_level, st.time,
                                 false, PointCloud{st.states, {}}});
      }
    }
    if (!st.states.allFinite())
      throw EvalError("chains diverged to non-finite state at level " + std::to_string(i));
    log.dimension_weighted_cost += static_cast<double>(n_chains) * T * d;
    // Level boundaries are always recorded.
    log.snapshots.push_back({st.global_step, static_cast<int>(i), resolution_level, st.time,
                             false, PointCloud{st.states, {}}});
  }
}

}  // namespace detail

/// Annealed Langevin dynamics from explicit initial chain states (one row
/// per chain). Bit-reproducible given (config, seed).
inline TrajectoryLog annealed_langevin_from(const LevelScoreFn& score,
                                            const NoiseSchedule& schedule, const Mat& init,
                                            std::uint64_t seed, int snapshot_every = 0) {
  require(init.rows() >= 1 && init.cols() >= 1, "annealed_langevin: empty initial state");
  schedule.validate();
  TrajectoryLog log;
  log.seed = seed;
  detail::AnnealState st;
  st.states = init;
  log.snapshots.push_back({0, -1, 0, 0.0, false, PointCloud{st.states, {}}});
  detail::run_schedule(score, schedule, 0, seed, snapshot_every, st, log);
  return log;
}

/// Annealed Langevin dynamics with the standard N(0, I_d) initialization.
inline TrajectoryLog annealed_langevin(const LevelScoreFn& score, const NoiseSchedule& schedule,
                                       int n_chains, int d, std::uint64_t seed,
                                       int snapshot_every = 0) {
  require(n_chains >= 1, "annealed_langevin: need at least one chain");
  require(d >= 1, "annealed_langevin: dimension must be positive");
  Mat init(n_chains, d);
  for (int c = 0; c < n_chains; ++c) {
    CounterRng rng(seed, static_cast<std::uint32_t>(c), 0, RngSalt::kInit);
    init.row(c) = rng.normal_vec(d).transpose();
  }
  return annealed_langevin_from(score, schedule, init, seed, snapshot_every);
}

/// Adjacent-pair means; rows of the induced linear map are orthogonal with
/// norm 1/sqrt(2), so the map is an l2 contraction.
inline Vec downsample(const Vec& x) {
  require(x.size() % 2 == 0, "downsample: signal length must be even");
  Vec out(x.size() / 2);
  for (int i = 0; i < out.size(); ++i) out[i] = (x[2 * i] + x[2 * i + 1]) / 2;
  return out;
}

/// Periodic linear interpolation: out[2i] = x[i], out[2i+1] = midpoint of
/// x[i] and its cyclic successor.
inline Vec upsample(const Vec& x) {
  require(x.size() >= 1, "upsample: empty signal");
  const int n = static_cast<int>(x.size());
  Vec out(2 * n);
  for (int i = 0; i < n; ++i) {
    out[2 * i] = x[i];
    out[2 * i + 1] = (x[i] + x[(i + 1) % n]) / 2;
  }
  return out;
}

inline Mat downsample_matrix(int n) {
  require(n % 2 == 0, "downsample_matrix: n must be even");
  Mat m = Mat::Zero(n / 2, n);
  for (int i = 0; i < n / 2; ++i) {
    m(i, 2 * i) = 0.5;
    m(i, 2 * i + 1) = 0.5;
  }
  return m;
}

inline Mat upsample_matrix(int n) {
  Mat m = Mat::Zero(2 * n, n);
  for (int i = 0; i < n; ++i) {
    m(2 * i, i) = 1.0;
    m(2 * i + 1, i) += 0.5;
    m(2 * i + 1, (i + 1) % n) += 0.5;
  }
  return m;
}

struct OperatorNormResult {
  double norm = 0.0;
  bool contractive = false;
};

/// Largest singular value via power iteration on M^T M (tolerance 1e-9).
inline OperatorNormResult operator_norm_check(const Mat& map) {
  require(map.size() > 0, "operator_norm_check: empty matrix");
  const Mat mtm = map.transpose() * map;
  const int n = static_cast<int>(mtm.rows());
  Vec v = Vec::Ones(n);
  for (int i = 0; i < n; ++i) v[i] += 0.01 * (i + 1) / n;  // break symmetry
  v /= v.norm();
  double lambda = 0.0;
  bool converged = false;
  for (int it = 0; it < 10000; ++it) {
    Vec w = mtm * v;
    const double nl = w.norm();
    if (nl == 0.0) {
      lambda = 0.0;
      converged = true;
      break;
    }
    w /= nl;
    if ((w - v).norm() < 1e-12 && std::abs(nl - lambda) <= 1e-9 * std::max(1.0, lambda)) {
      lambda = nl;
      converged = true;
      break;
    }
    lambda = nl;
    v = w;
  }
  if (!converged) throw EvalError("operator_norm_check: power iteration did not converge");
  OperatorNormResult res;
  res.norm = std::sqrt(lambda);
  res.contractive = res.norm <= 1.0 + 1e-8;
  return res;
}

/// Dimension ladder d_j = d / 2^j with one score provider and one schedule
/// per level.
struct ResolutionLadder {
  int base_dim = 0;   // d at level 0
  int halvings = 0;   // J
  int n_chains = 128;
  std::vector<LevelScoreFn> scores;       // index j = 0..J
  std::vector<NoiseSchedule> schedules;   // index j = 0..J

  int dim_at(int j) const { return base_dim >> j; }

  void validate() const {
    require(base_dim >= 1, "ladder: base dimension must be positive");
    require(halvings >= 0, "ladder: negative halvings");
    require(base_dim % (1 << halvings) == 0, "ladder: d must be divisible by 2^J");
    require(static_cast<int>(scores.size()) == halvings + 1,
            "ladder: need one score provider per level");
    require(static_cast<int>(schedules.size()) == halvings + 1,
            "ladder: need one schedule per level");
  }
};

/// Annealed multi-resolution Langevin: initialize N(0, I_{d_J}), anneal at
/// each resolution from coarse to fine, upsampling the ensemble between
/// levels. The upsampled (pre-Langevin) clouds are logged distinctly.
inline TrajectoryLog multires_annealed_langevin(const ResolutionLadder& ladder,
                                                std::uint64_t seed, int snapshot_every = 0) {
  ladder.validate();
  TrajectoryLog log;
  log.seed = seed;
  // Chain count is supplied via the schedules' shared context; default here.
  const int n_chains = ladder.n_chains > 0 ? ladder.n_chains : 128;
  detail::AnnealState st;
  st.states.resize(n_chains, ladder.dim_at(ladder.halvings));
  for (int c = 0; c < n_chains; ++c) {
    CounterRng rng(seed, static_cast<std::uint32_t>(c), 0, RngSalt::kInit);
    st.states.row(c) = rng.normal_vec(static_cast<int>(st.states.cols())).transpose();
  }
  log.snapshots.push_back(
      {0, -1, ladder.halvings, 0.0, false, PointCloud{st.states, {}}});
  for (int j = ladder.halvings; j >= 0; --j) {
    if (static_cast<int>(st.states.cols()) != ladder.dim_at(j))
      throw ConfigError("ladder: dimension mismatch at level " + std::to_string(j));
    int steps_j = 0;
    for (const auto& [sig, T] : ladder.schedules[j].levels) steps_j += T;
    if (steps_j > 0)
      detail::run_schedule(ladder.scores[j], ladder.schedules[j], j, seed, snapshot_every, st,
                           log);
    if (j > 0) {
      Mat up(n_chains, 2 * st.states.cols());
      for (int c = 0; c < n_chains; ++c)
        up.row(c) = upsample(st.states.row(c).transpose()).transpose();
      st.states = std::move(up);
      log.snapshots.push_back({st.global_step, -1, j - 1, st.time, true,
                               PointCloud{st.states, {}}});
    }
  }
  return log;
}

inline void TrajectoryLog::export_dir(const std::string& dir) const {
  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["score_evaluations"] = score_evaluations;
  manifest["dimension_weighted_cost"] = dimension_weighted_cost;
  manifest["wall_seconds"] = wall_seconds;
  manifest["snapshots"] = nlohmann::json::array();
  for (std::size_t k = 0; k < snapshots.size(); ++k) {
    manifest["snapshots"].push_back({{"step", snapshots[k].step},
                                     {"level", snapshots[k].level},
                                     {"resolution_level", snapshots[k].resolution_level},
                                     {"time", snapshots[k].time},
                                     {"upsampled", snapshots[k].upsampled},
                                     {"file", "snapshot_" + std::to_string(k) + ".csv"}});
  }
  std::ofstream mout(dir + "/manifest.json");
  require(mout.good(), "trajectory export: cannot open " + dir + "/manifest.json");
  mout << manifest.dump(2) << "\n";
  for (std::size_t k = 0; k < snapshots.size(); ++k) {
    std::ofstream out(dir + "/snapshot_" + std::to_string(k) + ".csv");
    out << "step,level,chain";
    for (int a = 0; a < snapshots[k].cloud.dim(); ++a) out << ",x" << a;
    out << "\n";
    char buf[32];
    for (int c = 0; c < snapshots[k].cloud.size(); ++c) {
      out << snapshots[k].step << "," << snapshots[k].level << "," << c;
      for (int a = 0; a < snapshots[k].cloud.dim(); ++a) {
        std::snprintf(buf, sizeof buf, ",%.17g", snapshots[k].cloud.points(c, a));
        out << buf;
      }
      out << "\n";
    }
  }
}

}  // namespace langmix
