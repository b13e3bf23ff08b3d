#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "langmix/bounds.hpp"
#include "langmix/common.hpp"
#include "langmix/dsm.hpp"
#include "langmix/geometry.hpp"
#include "langmix/metrics.hpp"
#include "langmix/sampler.hpp"
#include "langmix/target.hpp"

namespace langmix {

// ---------------------------------------------------------------------------
// Configuration

struct TargetSpec {
  std::string manifold = "circle";  // circle | sphere | embedded_torus | phase_torus
  double radius = 1.0;              // circle, sphere
  double minor_a = 1.0;             // embedded_torus
  double major_c = 3.0;
  double amp1 = 1.0;  // phase_torus
  double amp2 = 1.0;
  int k1 = 1;
  int k2 = 3;
  int signal_len = 32;
  int resolution = 64;
  int ambient_dim = 0;  // 0 = natural embedding dimension
};

struct ScheduleSpec {
  std::vector<double> sigmas;  // explicit list; empty selects a generator
  double sigma_max = 0.0;      // geometric generator, used when levels > 0
  double sigma_min = 0.0;
  int levels = 0;
  int steps_per_level = 100;
  double eps_step = 2e-5;
};

struct SamplerSpec {
  int chains = 128;
  int snapshot_every = 0;  // 0 = noise-level boundaries only
};

struct MetricSpec {
  std::string estimator = "exact";  // exact | sliced
  int projections = 64;
};

struct MixingSpec {
  std::vector<int> ambient_dims = {4, 16, 64, 256};
  int seeds = 5;
};

struct TradeoffSpec {
  std::vector<double> epsilons = {0.0, 0.1, 0.5, 1.0};
  double sigma = 0.5;
  double eps_step = 0.05;
  int horizon = 1000;
  int snapshot_every = 10;
  int seeds = 5;
};

struct MultiresSpec {
  std::vector<std::string> presets = {"HRS", "LRS-up", "LRS-5-up-HRS-5", "LRS-2-up-HRS-8"};
  int seeds = 5;
};

struct DsmSpec {
  std::vector<int> sizes = {1000, 10000, 100000};
  std::vector<double> sigmas = {1.0, 0.35, 0.12};
  double lambda = 1e-6;
  int rbf_centers = 50;
  int probes = 4096;
  int seeds = 5;
};

struct BoundsSpec {
  double K = 2.0;
  int dprime = 2;
  double kappa = 4.0;
  double sigma = 0.01;
  double B = 0.0;
  double L = 0.0;
};

struct PropSpec {
  int probes = 256;
  int seeds = 5;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be a table");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("config: unknown key '" + k + "' in " + where);
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace detail

struct ExperimentConfig {
  std::string experiment = "bounds_report";
  std::uint64_t seed = 1;
  TargetSpec target;
  ScheduleSpec schedule;
  SamplerSpec sampler;
  MetricSpec metrics;
  MixingSpec mixing;
  TradeoffSpec tradeoff;
  MultiresSpec multires;
  DsmSpec dsm;
  BoundsSpec bounds;
  PropSpec props;

  static const std::set<std::string>& experiment_names() {
    static const std::set<std::string> names = {"mixing_vs_dimension", "score_error_tradeoff",
                                                "multires_comparison", "dsm_consistency",
                                                "bounds_report",       "prop_checks"};
    return names;
  }

  void validate() const {
    if (!experiment_names().count(experiment))
      throw ConfigError("config: unknown experiment '" + experiment + "'");
    static const std::set<std::string> manifolds = {"circle", "sphere", "embedded_torus",
                                                    "phase_torus"};
    if (!manifolds.count(target.manifold))
      throw ConfigError("config: unknown manifold '" + target.manifold + "'");
    if (target.resolution < 8) throw ConfigError("config: target.resolution must be >= 8");
    if (sampler.chains < 1) throw ConfigError("config: sampler.chains must be >= 1");
    if (schedule.eps_step <= 0) throw ConfigError("config: schedule.eps_step must be positive");
    if (metrics.estimator != "exact" && metrics.estimator != "sliced")
      throw ConfigError("config: metrics.estimator must be 'exact' or 'sliced'");
    for (std::size_t i = 1; i < schedule.sigmas.size(); ++i)
      if (schedule.sigmas[i] >= schedule.sigmas[i - 1])
        throw ConfigError("config: schedule.sigmas must strictly decrease");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["seed"] = seed;
    j["target"] = {{"manifold", target.manifold},     {"radius", target.radius},
                   {"minor_a", target.minor_a},       {"major_c", target.major_c},
                   {"amp1", target.amp1},             {"amp2", target.amp2},
                   {"k1", target.k1},                 {"k2", target.k2},
                   {"signal_len", target.signal_len}, {"resolution", target.resolution},
                   {"ambient_dim", target.ambient_dim}};
    j["schedule"] = {{"sigmas", schedule.sigmas},
                     {"sigma_max", schedule.sigma_max},
                     {"sigma_min", schedule.sigma_min},
                     {"levels", schedule.levels},
                     {"steps_per_level", schedule.steps_per_level},
                     {"eps_step", schedule.eps_step}};
    j["sampler"] = {{"chains", sampler.chains}, {"snapshot_every", sampler.snapshot_every}};
    j["metrics"] = {{"estimator", metrics.estimator}, {"projections", metrics.projections}};
    j["mixing"] = {{"ambient_dims", mixing.ambient_dims}, {"seeds", mixing.seeds}};
    j["tradeoff"] = {{"epsilons", tradeoff.epsilons},
                     {"sigma", tradeoff.sigma},
                     {"eps_step", tradeoff.eps_step},
                     {"horizon", tradeoff.horizon},
                     {"snapshot_every", tradeoff.snapshot_every},
                     {"seeds", tradeoff.seeds}};
    j["multires"] = {{"presets", multires.presets}, {"seeds", multires.seeds}};
    j["dsm"] = {{"sizes", dsm.sizes},   {"sigmas", dsm.sigmas},
                {"lambda", dsm.lambda}, {"rbf_centers", dsm.rbf_centers},
                {"probes", dsm.probes}, {"seeds", dsm.seeds}};
    j["bounds"] = {{"K", bounds.K},         {"dprime", bounds.dprime}, {"kappa", bounds.kappa},
                   {"sigma", bounds.sigma}, {"B", bounds.B},           {"L", bounds.L}};
    j["props"] = {{"probes", props.probes}, {"seeds", props.seeds}};
    return j;
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::get_if;
    ExperimentConfig c;
    check_keys(j, {"experiment", "seed", "target", "schedule", "sampler", "metrics", "mixing",
                   "tradeoff", "multires", "dsm", "bounds", "props"},
               "config root");
    get_if(j, "experiment", c.experiment);
    get_if(j, "seed", c.seed);
    if (j.contains("target")) {
      const auto& t = j.at("target");
      check_keys(t, {"manifold", "radius", "minor_a", "major_c", "amp1", "amp2", "k1", "k2",
                     "signal_len", "resolution", "ambient_dim"},
                 "target");
      get_if(t, "manifold", c.target.manifold);
      get_if(t, "radius", c.target.radius);
      get_if(t, "minor_a", c.target.minor_a);
      get_if(t, "major_c", c.target.major_c);
      get_if(t, "amp1", c.target.amp1);
      get_if(t, "amp2", c.target.amp2);
      get_if(t, "k1", c.target.k1);
      get_if(t, "k2", c.target.k2);
      get_if(t, "signal_len", c.target.signal_len);
      get_if(t, "resolution", c.target.resolution);
      get_if(t, "ambient_dim", c.target.ambient_dim);
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      check_keys(s, {"sigmas", "sigma_max", "sigma_min", "levels", "steps_per_level", "eps_step"},
                 "schedule");
      get_if(s, "sigmas", c.schedule.sigmas);
      get_if(s, "sigma_max", c.schedule.sigma_max);
      get_if(s, "sigma_min", c.schedule.sigma_min);
      get_if(s, "levels", c.schedule.levels);
      get_if(s, "steps_per_level", c.schedule.steps_per_level);
      get_if(s, "eps_step", c.schedule.eps_step);
    }
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      check_keys(s, {"chains", "snapshot_every"}, "sampler");
      get_if(s, "chains", c.sampler.chains);
      get_if(s, "snapshot_every", c.sampler.snapshot_every);
    }
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      check_keys(m, {"estimator", "projections"}, "metrics");
      get_if(m, "estimator", c.metrics.estimator);
      get_if(m, "projections", c.metrics.projections);
    }
    if (j.contains("mixing")) {
      const auto& m = j.at("mixing");
      check_keys(m, {"ambient_dims", "seeds"}, "mixing");
      get_if(m, "ambient_dims", c.mixing.ambient_dims);
      get_if(m, "seeds", c.mixing.seeds);
    }
    if (j.contains("tradeoff")) {
      const auto& t = j.at("tradeoff");
      check_keys(t, {"epsilons", "sigma", "eps_step", "horizon", "snapshot_every", "seeds"},
                 "tradeoff");
      get_if(t, "epsilons", c.tradeoff.epsilons);
      get_if(t, "sigma", c.tradeoff.sigma);
      get_if(t, "eps_step", c.tradeoff.eps_step);
      get_if(t, "horizon", c.tradeoff.horizon);
      get_if(t, "snapshot_every", c.tradeoff.snapshot_every);
      get_if(t, "seeds", c.tradeoff.seeds);
    }
    if (j.contains("multires")) {
      const auto& m = j.at("multires");
      check_keys(m, {"presets", "seeds"}, "multires");
      get_if(m, "presets", c.multires.presets);
      get_if(m, "seeds", c.multires.seeds);
    }
    if (j.contains("dsm")) {
      const auto& d = j.at("dsm");
      check_keys(d, {"sizes", "sigmas", "lambda", "rbf_centers", "probes", "seeds"}, "dsm");
      get_if(d, "sizes", c.dsm.sizes);
      get_if(d, "sigmas", c.dsm.sigmas);
      get_if(d, "lambda", c.dsm.lambda);
      get_if(d, "rbf_centers", c.dsm.rbf_centers);
      get_if(d, "probes", c.dsm.probes);
      get_if(d, "seeds", c.dsm.seeds);
    }
    if (j.contains("bounds")) {
      const auto& b = j.at("bounds");
      check_keys(b, {"K", "dprime", "kappa", "sigma", "B", "L"}, "bounds");
      get_if(b, "K", c.bounds.K);
      get_if(b, "dprime", c.bounds.dprime);
      get_if(b, "kappa", c.bounds.kappa);
      get_if(b, "sigma", c.bounds.sigma);
      get_if(b, "B", c.bounds.B);
      get_if(b, "L", c.bounds.L);
    }
    if (j.contains("props")) {
      const auto& p = j.at("props");
      check_keys(p, {"probes", "seeds"}, "props");
      get_if(p, "probes", c.props.probes);
      get_if(p, "seeds", c.props.seeds);
    }
    c.validate();
    return c;
  }

  /// Parses the structured config text (JSON with // and /* */ comments).
  static ExperimentConfig parse(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: parse failure: ") + e.what());
    }
    return from_json(j);
  }

  static ExperimentConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }
};

inline ParamManifold make_manifold(const TargetSpec& t, int ambient_override = 0) {
  const int amb = ambient_override > 0 ? ambient_override : t.ambient_dim;
  if (t.manifold == "circle") return ParamManifold::circle(t.radius, std::max(amb, 2));
  if (t.manifold == "sphere") return ParamManifold::sphere(2, t.radius, std::max(amb, 3));
  if (t.manifold == "embedded_torus")
    return ParamManifold::embedded_torus(t.minor_a, t.major_c, std::max(amb, 3));
  if (t.manifold == "phase_torus") {
    const int n = ambient_override > 0 ? ambient_override : t.signal_len;
    return ParamManifold::phase_torus(t.amp1, t.amp2, t.k1, t.k2, n);
  }
  throw ConfigError("config: unknown manifold '" + t.manifold + "'");
}

inline NoiseSchedule make_schedule(const ScheduleSpec& s) {
  NoiseSchedule sch;
  if (!s.sigmas.empty()) {
    for (double sig : s.sigmas) sch.levels.emplace_back(sig, s.steps_per_level);
    sch.eps_step = s.eps_step;
  } else if (s.levels > 0) {
    sch = NoiseSchedule::geometric(s.sigma_max, s.sigma_min, s.levels, s.steps_per_level,
                                   s.eps_step);
  } else {
    sch = NoiseSchedule::paper_default(s.steps_per_level, s.eps_step);
  }
  sch.validate();
  return sch;
}

// ---------------------------------------------------------------------------
// Run records

struct RunRecord {
  std::string run_id;
  std::string directory;
  std::vector<std::string> artifacts;
  std::map<std::string, double> summary;
  std::uint64_t summary_hash = 0;
};

namespace detail {

inline std::uint64_t hash_summary(const std::map<std::string, double>& summary) {
  std::string blob;
  char buf[64];
  for (const auto& [k, v] : summary) {
    std::snprintf(buf, sizeof buf, "%s=%.12g;", k.c_str(), v);
    blob += buf;
  }
  return fnv1a(blob);
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) : out_(path) {
    require(out_.good(), "csv: cannot open " + path);
    out_ << header << "\n";
  }
  void row(const std::string& line) { out_ << line << "\n"; }

  template <typename... Args>
  void rowf(const char* fmt, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    out_ << buf << "\n";
  }

 private:
  std::ofstream out_;
};

inline double wall_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// W2 between equal-size clouds per the configured estimator.
inline double cloud_distance(const PointCloud& a, const PointCloud& b, const MetricSpec& m,
                             std::uint64_t seed) {
  if (m.estimator == "exact" && a.size() == b.size() && a.size() <= kW2ExactCap)
    return w2_exact(a, b);
  return w2_sliced(a, b, m.projections, seed);
}

inline PointCloud gaussian_cloud(int n, int d, std::uint64_t seed, double scale = 1.0,
                                 const Vec& mean = Vec()) {
  PointCloud c;
  c.points.resize(n, d);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint32_t>(i), 1, RngSalt::kPrior);
    Vec x = scale * rng.normal_vec(d);
    if (mean.size() == d) x += mean;
    c.points.row(i) = x.transpose();
  }
  return c;
}

// W2-to-reference series over a trajectory's recorded snapshots.
inline std::vector<std::pair<double, double>> w2_series(const TrajectoryLog& log,
                                                        const PointCloud& ref,
                                                        const MetricSpec& m, std::uint64_t seed,
                                                        bool time_axis) {
  std::vector<std::pair<double, double>> series;
  for (const auto& snap : log.snapshots) {
    if (snap.step == 0 && !series.empty()) continue;
    const double t = time_axis ? snap.time : static_cast<double>(snap.step);
    series.emplace_back(t, cloud_distance(snap.cloud, ref, m, seed));
  }
  return series;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiments

/// Mixing-step count as a function of ambient dimension at fixed intrinsic
/// geometry. The threshold is the empirical reference self-distance plus a
/// sigma_L sqrt(d) margin for the final-level smoothing.
inline std::map<std::string, double> experiment_mixing_vs_dimension(
    const ExperimentConfig& cfg, const std::string& dir, std::vector<std::string>* artifacts) {
  const NoiseSchedule schedule = make_schedule(cfg.schedule);
  const double sigma_final = schedule.sigma_final();
  detail::CsvWriter csv(dir + "/mixing.csv",
                        "ambient_dim,seed,mixing_step,threshold,floor,final_w2");
  if (artifacts) artifacts->push_back("mixing.csv");
  std::map<std::string, double> summary;
  std::vector<double> medians;
  for (int d : cfg.mixing.ambient_dims) {
    const ParamManifold m = make_manifold(cfg.target, d);
    const TargetDistribution target = TargetDistribution::uniform(m, cfg.target.resolution);
    const ScoreOracle oracle(target);
    const LevelScoreFn score = [&oracle](const Vec& x, double s) {
      return oracle.smoothed_score(x, s);
    };
    const PointCloud ref_a = sample_prior(target, cfg.sampler.chains, cfg.seed * 7919 + 1);
    // Self-distance floor with a concentration margin: W2 between same-size
    // draws of the target fluctuates, so one pair underestimates the typical
    // value. Mean + 2 sd over independent pairs.
    double fsum = 0.0, fsq = 0.0;
    const int n_pairs = 8;
    for (int p = 0; p < n_pairs; ++p) {
      const PointCloud pa = sample_prior(target, cfg.sampler.chains, cfg.seed * 7919 + 2 + 2 * p);
      const PointCloud pb = sample_prior(target, cfg.sampler.chains, cfg.seed * 7919 + 3 + 2 * p);
      const double w = detail::cloud_distance(pa, pb, cfg.metrics, cfg.seed);
      fsum += w;
      fsq += w * w;
    }
    const double fmean = fsum / n_pairs;
    const double fsd = std::sqrt(std::max(0.0, fsq / n_pairs - fmean * fmean));
    const double floor = fmean + 2 * fsd;
    const double threshold = floor + sigma_final * std::sqrt(static_cast<double>(d));
    std::vector<double> per_seed;
    for (int s = 0; s < cfg.mixing.seeds; ++s) {
      const std::uint64_t seed = cfg.seed + s;
      const TrajectoryLog log = annealed_langevin(score, schedule, cfg.sampler.chains, d, seed,
                                                  cfg.sampler.snapshot_every);
      const auto series = detail::w2_series(log, ref_a, cfg.metrics, seed, false);
      const auto mt = mixing_time(series, threshold);
      const double mixing_step = mt ? *mt : std::numeric_limits<double>::quiet_NaN();
      csv.rowf("%d,%llu,%.17g,%.17g,%.17g,%.17g", d,
               static_cast<unsigned long long>(seed), mixing_step, threshold, floor,
               series.back().second);
      if (mt) per_seed.push_back(*mt);
    }
    const double med = per_seed.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : detail::median(per_seed);
    summary["mixing_step_d" + std::to_string(d)] = med;
    summary["floor_d" + std::to_string(d)] = floor;
    medians.push_back(med);
  }
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (double m : medians) {
    if (std::isnan(m)) {
      lo = 0.0;
      hi = std::numeric_limits<double>::infinity();
      break;
    }
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  summary["mixing_step_ratio"] = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
  return summary;
}

/// Long-horizon single-level Langevin under a perturbed score; records when
/// the W2 series bottoms out and how much it degrades afterwards, against the
/// closed-form error bound's optimal stopping time.
inline std::map<std::string, double> experiment_score_error_tradeoff(
    const ExperimentConfig& cfg, const std::string& dir, std::vector<std::string>* artifacts) {
  const ParamManifold m = make_manifold(cfg.target);
  const TargetDistribution target = TargetDistribution::uniform(m, cfg.target.resolution);
  const ScoreOracle oracle(target);
  const double sigma = cfg.tradeoff.sigma;
  NoiseSchedule schedule;
  schedule.levels = {{sigma, cfg.tradeoff.horizon}};
  schedule.eps_step = cfg.tradeoff.eps_step;
  const PointCloud ref = sample_prior(target, cfg.sampler.chains, cfg.seed * 7919 + 1);

  detail::CsvWriter csv(dir + "/tradeoff.csv", "epsilon,seed,t_star,degradation,diverged");
  detail::CsvWriter curve(dir + "/bound_curve.csv", "epsilon,t_argmin,bound_min");
  if (artifacts) {
    artifacts->push_back("tradeoff.csv");
    artifacts->push_back("bound_curve.csv");
  }
  std::map<std::string, double> summary;
  const double alpha = schedule.alpha(0);
  const double t_max = cfg.tradeoff.horizon * alpha / 2;
  int eps_index = 0;
  for (double eps : cfg.tradeoff.epsilons) {
    std::vector<double> t_stars, degradations;
    int n_diverged = 0;
    for (int s = 0; s < cfg.tradeoff.seeds; ++s) {
      const std::uint64_t seed = cfg.seed + s;
      const PerturbedOracle pert(oracle, target, eps, sigma, seed);
      const LevelScoreFn score = [&pert](const Vec& x, double) { return pert(x); };
      const TrajectoryLog log = annealed_langevin(score, schedule, cfg.sampler.chains,
                                                  m.ambient_dim(), seed,
                                                  cfg.tradeoff.snapshot_every);
      const auto series = detail::w2_series(log, ref, cfg.metrics, seed, true);
      const DivergenceReport rep = divergence_detect(series);
      csv.rowf("%.17g,%llu,%.17g,%.17g,%d", eps, static_cast<unsigned long long>(seed),
               rep.t_star, rep.degradation, rep.diverged ? 1 : 0);
      t_stars.push_back(rep.t_star);
      degradations.push_back(rep.degradation);
      if (rep.diverged) ++n_diverged;
    }
    const std::string tag = "eps" + std::to_string(eps_index++);
    summary["t_star_" + tag] = detail::median(t_stars);
    summary["degradation_" + tag] = detail::median(degradations);
    summary["diverged_" + tag] = n_diverged;
    if (eps > 0) {
      const auto [t_arg, v] = sampling_error_argmin(sigma, std::max(3, m.ambient_dim()), 2.0,
                                                    cls_convolved(2.0, sigma), eps, 1.0, 1.0,
                                                    1.0, 1.0, t_max);
      curve.rowf("%.17g,%.17g,%.17g", eps, t_arg, v);
    }
  }
  return summary;
}

namespace detail {

struct MultiresPreset {
  std::string name;
  int low_levels = 0;   // noise levels run at half resolution
  int high_levels = 0;  // noise levels run at full resolution
  bool hrs_only = false;
};

// "HRS", "LRS-up" (or the arrow form), "LRS-x-up-HRS-y".
inline MultiresPreset parse_preset(std::string name, int total_levels) {
  MultiresPreset p;
  p.name = name;
  std::string canon;
  for (std::size_t i = 0; i < name.size();) {
    if (name.compare(i, 3, "↑") == 0) {
      canon += "up";
      i += 3;
    } else {
      canon += name[i++];
    }
  }
  if (canon == "HRS") {
    p.hrs_only = true;
    p.high_levels = total_levels;
    return p;
  }
  if (canon == "LRS-up") {
    p.low_levels = total_levels;
    return p;
  }
  int x = 0, y = 0;
  if (std::sscanf(canon.c_str(), "LRS-%d-up-HRS-%d", &x, &y) == 2) {
    require(x >= 1 && y >= 1 && x + y <= total_levels,
            "multires preset: need 1 <= x, 1 <= y, x + y <= schedule length");
    p.low_levels = x;
    p.high_levels = y;
    return p;
  }
  throw ConfigError("config: unknown multires preset '" + name + "'");
}

// Sub-schedule of levels [from, from+count) with eps_step rescaled so that
// alpha at each sigma matches the full schedule's.
inline NoiseSchedule sub_schedule(const NoiseSchedule& full, int from, int count) {
  NoiseSchedule s;
  s.levels.assign(full.levels.begin() + from, full.levels.begin() + from + count);
  if (count > 0) {
    const double sig_local = s.levels.back().first;
    const double sig_global = full.sigma_final();
    s.eps_step = full.eps_step * (sig_local * sig_local) / (sig_global * sig_global);
  }
  return s;
}

}  // namespace detail

/// Sampling-quality vs cost comparison between full-resolution annealing and
/// schedules that spend early noise levels at half resolution. The coarse
/// target is the exact pushforward of the signal manifold under pair means
/// (alias-free when the frequencies are below a quarter of the length).
inline std::map<std::string, double> experiment_multires_comparison(
    const ExperimentConfig& cfg, const std::string& dir, std::vector<std::string>* artifacts) {
  const TargetSpec& ts = cfg.target;
  require(ts.manifold == "phase_torus", "multires_comparison: requires a phase_torus target");
  const int N = ts.signal_len;
  require(4 * ts.k1 < N && 4 * ts.k2 < N,
          "multires_comparison: frequencies must be below signal_len / 4 for an exact coarse "
          "target");
  const ParamManifold fine = make_manifold(ts);
  // Pair means of A cos(2 pi k t / N + phi) give amplitude A cos(pi k / N)
  // and a phase shift, which the uniform law absorbs.
  const ParamManifold coarse =
      ParamManifold::phase_torus(ts.amp1 * std::cos(kPi * ts.k1 / N),
                                 ts.amp2 * std::cos(kPi * ts.k2 / N), ts.k1, ts.k2, N / 2);
  const TargetDistribution t_fine = TargetDistribution::uniform(fine, ts.resolution);
  const TargetDistribution t_coarse = TargetDistribution::uniform(coarse, ts.resolution);
  const ScoreOracle o_fine(t_fine);
  const ScoreOracle o_coarse(t_coarse);
  const LevelScoreFn s_fine = [&o_fine](const Vec& x, double s) {
    return o_fine.smoothed_score(x, s);
  };
  const LevelScoreFn s_coarse = [&o_coarse](const Vec& x, double s) {
    return o_coarse.smoothed_score(x, s);
  };
  const NoiseSchedule full = make_schedule(cfg.schedule);
  const int total_levels = static_cast<int>(full.levels.size());
  const PointCloud ref = sample_prior(t_fine, cfg.sampler.chains, cfg.seed * 7919 + 1);

  detail::CsvWriter csv(dir + "/multires.csv", "preset,seed,w2,cost,wall_seconds");
  if (artifacts) artifacts->push_back("multires.csv");
  std::map<std::string, double> summary;
  int preset_index = 0;
  for (const std::string& name : cfg.multires.presets) {
    const detail::MultiresPreset p = detail::parse_preset(name, total_levels);
    std::vector<double> w2s, costs;
    for (int s = 0; s < cfg.multires.seeds; ++s) {
      const std::uint64_t seed = cfg.seed + s;
      const auto t0 = std::chrono::steady_clock::now();
      TrajectoryLog log;
      if (p.hrs_only) {
        log = annealed_langevin(s_fine, full, cfg.sampler.chains, N, seed);
      } else {
        ResolutionLadder ladder;
        ladder.base_dim = N;
        ladder.halvings = 1;
        ladder.n_chains = cfg.sampler.chains;
        ladder.scores = {s_fine, s_coarse};
        ladder.schedules = {
            detail::sub_schedule(full, p.low_levels, p.high_levels),
            detail::sub_schedule(full, 0, p.low_levels)};
        log = multires_annealed_langevin(ladder, seed);
      }
      const double wall = detail::wall_since(t0);
      const double w2 = detail::cloud_distance(log.final_cloud(), ref, cfg.metrics, seed);
      csv.row(p.name + "," + std::to_string(seed) + "," + std::to_string(w2) + "," +
              std::to_string(log.dimension_weighted_cost) + "," + std::to_string(wall));
      w2s.push_back(w2);
      costs.push_back(log.dimension_weighted_cost);
    }
    const std::string tag = "preset" + std::to_string(preset_index++);
    summary["w2_" + tag] = detail::median(w2s);
    summary["cost_" + tag] = detail::median(costs);
  }
  return summary;
}

/// Score-matching consistency: fitted models approach the exact smoothed
/// score as the sample size grows, on a Gaussian (closed-form truth) and on
/// the circle (quadrature-oracle truth).
inline std::map<std::string, double> experiment_dsm_consistency(
    const ExperimentConfig& cfg, const std::string& dir, std::vector<std::string>* artifacts) {
  detail::CsvWriter csv(dir + "/dsm.csv", "target,n,sigma,seed,score_error,linear_coef");
  if (artifacts) artifacts->push_back("dsm.csv");
  std::map<std::string, double> summary;

  // Gaussian N(0, I_2): the optimal linear score is -y / (1 + sigma^2).
  const int gd = 2;
  for (int n : cfg.dsm.sizes) {
    std::vector<double> errs, coefs;
    for (int s = 0; s < cfg.dsm.seeds; ++s) {
      const std::uint64_t seed = cfg.seed + 1000 * (s + 1);
      const PointCloud data = detail::gaussian_cloud(n, gd, seed);
      FeatureConfig fc;
      fc.rbf_centers = 0;
      const ScoreModel model = fit_score_model(data, cfg.dsm.sigmas, fc, cfg.dsm.lambda, seed);
      for (std::size_t lvl = 0; lvl < cfg.dsm.sigmas.size(); ++lvl) {
        const double sigma = cfg.dsm.sigmas[lvl];
        const double truth = -1.0 / (1.0 + sigma * sigma);
        // Mean diagonal of the linear block (features: linear then constant).
        const Mat& coef = model.coefficients(static_cast<int>(lvl));
        double diag = 0.0;
        for (int a = 0; a < gd; ++a) diag += coef(a, a);
        diag /= gd;
        // Monte Carlo population loss against the closed-form score.
        double acc = 0.0;
        const int probes = cfg.dsm.probes;
        for (int i = 0; i < probes; ++i) {
          CounterRng rng(seed, static_cast<std::uint32_t>(i), 2, RngSalt::kProbe);
          const Vec y = rng.normal_vec(gd) + sigma * rng.normal_vec(gd);
          acc += (model.eval(y, static_cast<int>(lvl)) + y / (1 + sigma * sigma)).squaredNorm();
        }
        const double err = std::sqrt(acc / probes);
        csv.rowf("gaussian,%d,%.17g,%llu,%.17g,%.17g", n, sigma,
                 static_cast<unsigned long long>(seed), err, diag);
        errs.push_back(err);
        coefs.push_back(diag / truth);
      }
    }
    summary["gauss_err_n" + std::to_string(n)] = detail::median(errs);
    summary["gauss_coef_ratio_n" + std::to_string(n)] = detail::median(coefs);
  }

  // Uniform circle, RBF features, oracle truth.
  const ParamManifold m = ParamManifold::circle(1.0);
  const TargetDistribution target = TargetDistribution::uniform(m, cfg.target.resolution);
  const ScoreOracle oracle(target);
  for (int n : cfg.dsm.sizes) {
    std::vector<double> errs;
    for (int s = 0; s < cfg.dsm.seeds; ++s) {
      const std::uint64_t seed = cfg.seed + 1000 * (s + 1);
      PointCloud data = sample_prior(target, n, seed);
      FeatureConfig fc;
      fc.rbf_centers = cfg.dsm.rbf_centers;
      const ScoreModel model = fit_score_model(data, cfg.dsm.sigmas, fc, cfg.dsm.lambda, seed);
      for (std::size_t lvl = 0; lvl < cfg.dsm.sigmas.size(); ++lvl) {
        const double sigma = cfg.dsm.sigmas[lvl];
        const double err = score_error(model.as_fn(static_cast<int>(lvl)), oracle, target, sigma,
                                       cfg.dsm.probes, seed);
        csv.rowf("circle,%d,%.17g,%llu,%.17g,", n, sigma,
                 static_cast<unsigned long long>(seed), err);
        errs.push_back(err);
      }
    }
    summary["circle_err_n" + std::to_string(n)] = detail::median(errs);
  }
  return summary;
}

/// Evaluates every closed-form bound at the configured parameters.
inline std::map<std::string, double> experiment_bounds_report(
    const ExperimentConfig& cfg, const std::string& dir, std::vector<std::string>* artifacts) {
  const BoundsSpec& b = cfg.bounds;
  detail::CsvWriter csv(dir + "/bounds.csv", "name,log_value,value,D,log_inv_gap");
  if (artifacts) artifacts->push_back("bounds.csv");
  std::map<std::string, double> summary;

  const double cg = cls_gaussian(b.sigma);
  csv.rowf("cls_gaussian,%.17g,%.17g,,", std::log(std::max(cg, 1e-300)), cg);
  const double D = diameter_bound(b.K, b.dprime, b.kappa);
  const double gap = spectral_gap_bound(b.K, b.dprime, D);
  csv.rowf("diameter_bound,%.17g,%.17g,%.17g,", std::log(D), D, D);
  csv.rowf("spectral_gap_bound,%.17g,,%.17g,%.17g", gap, D, gap);
  const BoundReport gen = cls_general_log(b.sigma, b.dprime, b.K, b.L, b.B, b.kappa);
  csv.rowf("cls_general,%.17g,%.17g,%.17g,", gen.log_value,
           gen.value_if_representable.value_or(std::numeric_limits<double>::quiet_NaN()),
           gen.provenance.at("D"));
  const BoundReport uni = cls_uniform_log(b.sigma, b.dprime, b.K, b.kappa);
  csv.rowf("cls_uniform,%.17g,%.17g,%.17g,%.17g", uni.log_value,
           uni.value_if_representable.value_or(std::numeric_limits<double>::quiet_NaN()),
           uni.provenance.at("D"), uni.provenance.at("log_inv_gap"));

  summary["cls_gaussian"] = cg;
  summary["diameter_bound"] = D;
  summary["spectral_gap_log"] = gap;
  summary["cls_general_log"] = gen.log_value;
  summary["cls_uniform_log"] = uni.log_value;
  return summary;
}

namespace detail {

// Decay rate of single-level Langevin toward an isotropic Gaussian target
// with the stated variance, started from a shifted cloud.
inline double gaussian_decay_rate(int d, double var, double sigma, int chains, int steps,
                                  double eps_step, std::uint64_t seed) {
  const double v = var + sigma * sigma;
  const LevelScoreFn score = [v](const Vec& x, double) { return Vec(-x / v); };
  NoiseSchedule sch;
  sch.levels = {{sigma, steps}};
  sch.eps_step = eps_step;
  Mat init(chains, d);
  for (int c = 0; c < chains; ++c) {
    CounterRng rng(seed, static_cast<std::uint32_t>(c), 0, RngSalt::kInit);
    init.row(c) = (Vec::Constant(d, 3.0) + rng.normal_vec(d)).transpose();
  }
  const TrajectoryLog log = annealed_langevin_from(score, sch, init, seed, steps / 50);
  const PointCloud ref = gaussian_cloud(chains, d, seed * 7919 + 1, std::sqrt(v));
  MetricSpec ms;
  const auto series = w2_series(log, ref, ms, seed, true);
  return decay_fit(series).rate;
}

}  // namespace detail

/// Regularity and structural checks: score Lipschitz/dissipativity bounds,
/// resolution-map operator norms, volume comparison on meshes, and decay-rate
/// preservation under the pair-mean pushforward.
inline std::map<std::string, double> experiment_prop_checks(
    const ExperimentConfig& cfg, const std::string& dir, std::vector<std::string>* artifacts) {
  detail::CsvWriter csv(dir + "/prop_checks.csv",
                        "check,target,sigma,estimate,bound,holds");
  if (artifacts) artifacts->push_back("prop_checks.csv");
  std::map<std::string, double> summary;
  const NoiseSchedule schedule = make_schedule(cfg.schedule);

  int violations = 0;
  const std::vector<std::pair<std::string, ParamManifold>> targets = {
      {"circle", ParamManifold::circle(1.0)}, {"sphere", ParamManifold::sphere(2, 1.0)}};
  for (const auto& [name, m] : targets) {
    const TargetDistribution t = TargetDistribution::uniform(
        m, name == "sphere" ? std::min(cfg.target.resolution, 48) : cfg.target.resolution);
    const ScoreOracle o(t);
    for (const auto& [sigma, T] : schedule.levels) {
      const LipschitzCheck lc = lipschitz_check(o, sigma, cfg.props.probes, cfg.seed);
      const DissipativityCheck dc = dissipativity_check(o, sigma, cfg.props.probes, cfg.seed);
      csv.rowf("lipschitz,%s,%.17g,%.17g,%.17g,%d", name.c_str(), sigma, lc.estimate, lc.bound,
               lc.holds ? 1 : 0);
      csv.rowf("dissipativity,%s,%.17g,%.17g,,%d", name.c_str(), sigma, dc.min_margin,
               dc.holds ? 1 : 0);
      if (!lc.holds || !dc.holds) ++violations;
    }
  }
  summary["regularity_violations"] = violations;

  const OperatorNormResult down = operator_norm_check(downsample_matrix(32));
  const OperatorNormResult up = operator_norm_check(upsample_matrix(16));
  csv.rowf("operator_norm,downsample32,,%.17g,1,%d", down.norm, down.contractive ? 1 : 0);
  csv.rowf("operator_norm,upsample16,,%.17g,,%d", up.norm, up.contractive ? 1 : 0);
  summary["downsample_norm"] = down.norm;

  // Volume comparison on positively and mixed-curvature meshes.
  int bg_failures = 0;
  const std::vector<std::pair<std::string, ParamManifold>> bg_manifolds = {
      {"sphere", ParamManifold::sphere(2, 1.0)},
      {"embedded_torus", ParamManifold::embedded_torus(1.0, 3.0)}};
  for (const auto& [name, m] : bg_manifolds) {
    const ManifoldMesh mesh = build_mesh(m, std::min(cfg.target.resolution, 48));
    const GeometrySummary gs = summarize_geometry(mesh, m);
    for (int node : {0, mesh.size() / 3, 2 * mesh.size() / 3})
      for (const auto& [r, R] : std::vector<std::pair<double, double>>{
               {0.3, 0.6}, {0.5, 1.0}, {0.7, 1.4}}) {
        const BishopGromovResult bg = bishop_gromov_check(mesh, gs.K_eff, node, r, R);
        csv.rowf("volume_ratio,%s,%.17g,%.17g,%.17g,%d", name.c_str(), R, bg.lhs, bg.rhs,
                 bg.holds ? 1 : 0);
        if (!bg.holds) ++bg_failures;
      }
  }
  summary["volume_ratio_failures"] = bg_failures;

  // Pushforward decay: the pair-mean of N(0, I_2) is N(0, 1/2); its Langevin
  // should relax no slower than the base.
  std::vector<double> ratios;
  for (int s = 0; s < cfg.props.seeds; ++s) {
    const std::uint64_t seed = cfg.seed + s;
    const double rate_base =
        detail::gaussian_decay_rate(2, 1.0, 0.5, cfg.sampler.chains, 600, 0.02, seed);
    const double rate_push =
        detail::gaussian_decay_rate(1, 0.5, 0.5, cfg.sampler.chains, 600, 0.02, seed + 101);
    csv.rowf("pushforward_decay,gaussian,%.17g,%.17g,%.17g,%d", 0.5, rate_push, rate_base,
             rate_push >= 0.8 * rate_base ? 1 : 0);
    ratios.push_back(rate_base > 0 ? rate_push / rate_base : 0.0);
  }
  summary["pushforward_rate_ratio"] = detail::median(ratios);
  return summary;
}

// ---------------------------------------------------------------------------
// Dispatch

inline std::string output_root() {
  const char* env = std::getenv("LANGMIX_OUTPUT_ROOT");
  return env && *env ? std::string(env) : std::string("runs");
}

inline RunRecord run(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string config_text = cfg.to_json().dump(2);
  const std::uint64_t cfg_hash = fnv1a(config_text);

  char stamp[32];
  const std::time_t now = std::time(nullptr);
  std::tm tmv{};
  gmtime_r(&now, &tmv);
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%S", &tmv);
  char hash_hex[24];
  std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                static_cast<unsigned long long>(cfg_hash));

  RunRecord rec;
  rec.run_id = std::string(stamp) + "-" + hash_hex;
  const std::filesystem::path dir = std::filesystem::path(output_root()) / rec.run_id;
  std::filesystem::create_directories(dir);
  rec.directory = dir.string();

  try {
    if (cfg.experiment == "mixing_vs_dimension")
      rec.summary = experiment_mixing_vs_dimension(cfg, rec.directory, &rec.artifacts);
    else if (cfg.experiment == "score_error_tradeoff")
      rec.summary = experiment_score_error_tradeoff(cfg, rec.directory, &rec.artifacts);
    else if (cfg.experiment == "multires_comparison")
      rec.summary = experiment_multires_comparison(cfg, rec.directory, &rec.artifacts);
    else if (cfg.experiment == "dsm_consistency")
      rec.summary = experiment_dsm_consistency(cfg, rec.directory, &rec.artifacts);
    else if (cfg.experiment == "bounds_report")
      rec.summary = experiment_bounds_report(cfg, rec.directory, &rec.artifacts);
    else if (cfg.experiment == "prop_checks")
      rec.summary = experiment_prop_checks(cfg, rec.directory, &rec.artifacts);
    else
      throw ConfigError("run: unknown experiment '" + cfg.experiment + "'");
  } catch (const std::exception& e) {
    std::ofstream marker(dir / "error.txt");
    marker << e.what() << "\n";
    throw;
  }

  rec.summary_hash = detail::hash_summary(rec.summary);
  nlohmann::json manifest;
  manifest["run_id"] = rec.run_id;
  manifest["config"] = cfg.to_json();
  manifest["config_hash"] = cfg_hash;
  manifest["artifacts"] = rec.artifacts;
  manifest["summary"] = rec.summary;
  manifest["summary_hash"] = rec.summary_hash;
  std::ofstream mout(dir / "manifest.json");
  require(mout.good(), "run: cannot write manifest.json");
  mout << manifest.dump(2) << "\n";
  rec.artifacts.push_back("manifest.json");
  return rec;
}

}  // namespace langmix
