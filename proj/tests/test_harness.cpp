#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "langmix/harness.hpp"

using namespace langmix;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config round trip preserves every field") {
  ExperimentConfig c;
  c.experiment = "score_error_tradeoff";
  c.seed = 99;
  c.target.manifold = "sphere";
  c.target.resolution = 24;
  c.schedule.sigmas = {1.0, 0.5, 0.1};
  c.sampler.chains = 7;
  c.metrics.estimator = "sliced";
  c.tradeoff.epsilons = {0.0, 0.25};
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("config text accepts comments") {
  const std::string text = R"({
    // experiment selector
    "experiment": "bounds_report",
    /* reproducibility */
    "seed": 5,
    "bounds": {"K": 2.0, "dprime": 2, "kappa": 4.0, "sigma": 0.0, "B": 0.0, "L": 0.0}
  })";
  const ExperimentConfig c = ExperimentConfig::parse(text);
  CHECK(c.experiment == "bounds_report");
  CHECK(c.seed == 5);
  CHECK(c.bounds.sigma == 0.0);
}

TEST_CASE("unknown keys are rejected at the root and in nested tables") {
  CHECK_THROWS_AS(ExperimentConfig::parse(R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(R"({"target": {"bogus": 1}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(R"({"schedule": {"sigma": 0.5}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse(R"({"seed": "not a number"})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("{"), ConfigError);
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  c.experiment = "no_such_experiment";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.experiment = "prop_checks";
  c.target.manifold = "klein_bottle";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.target.manifold = "circle";
  c.schedule.sigmas = {0.5, 0.5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.schedule.sigmas = {1.0, 0.5};
  c.metrics.estimator = "energy";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.metrics.estimator = "sliced";
  c.validate();
}

TEST_CASE("schedule construction from the spec table") {
  ScheduleSpec s;
  const NoiseSchedule def = make_schedule(s);
  CHECK(def.levels.size() == 10);
  CHECK(def.levels.front().first == 1.0);
  CHECK(def.levels.back().first == 0.01);

  s.sigmas = {0.8, 0.2};
  s.steps_per_level = 7;
  const NoiseSchedule ex = make_schedule(s);
  CHECK(ex.levels.size() == 2);
  CHECK(ex.levels[1] == std::pair<double, int>{0.2, 7});

  s.sigmas.clear();
  s.levels = 4;
  s.sigma_max = 1.0;
  s.sigma_min = 0.125;
  const NoiseSchedule geo = make_schedule(s);
  CHECK(geo.levels.size() == 4);
  CHECK(geo.levels[1].first == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("multires preset grammar") {
  using detail::parse_preset;
  const auto hrs = parse_preset("HRS", 10);
  CHECK(hrs.hrs_only);
  CHECK(hrs.high_levels == 10);

  const auto lrs = parse_preset("LRS-up", 10);
  CHECK(lrs.low_levels == 10);
  CHECK(lrs.high_levels == 0);
  CHECK(parse_preset("LRS-↑", 10).low_levels == 10);  // arrow spelling

  const auto mix = parse_preset("LRS-5-up-HRS-5", 10);
  CHECK(mix.low_levels == 5);
  CHECK(mix.high_levels == 5);
  CHECK(parse_preset("LRS-2-↑-HRS-8", 10).high_levels == 8);

  CHECK_THROWS_AS(parse_preset("LRS-9-up-HRS-9", 10), std::invalid_argument);
  CHECK_THROWS_AS(parse_preset("MRS", 10), ConfigError);
}

TEST_CASE("sub-schedules keep the per-sigma step size of the full ladder") {
  const NoiseSchedule full = NoiseSchedule::paper_default(100);
  const NoiseSchedule head = detail::sub_schedule(full, 0, 3);
  REQUIRE(head.levels.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(head.levels[i] == full.levels[i]);
    CHECK(head.alpha(i) == doctest::Approx(full.alpha(i)).epsilon(1e-12));
  }
  const NoiseSchedule tail = detail::sub_schedule(full, 3, 7);
  for (int i = 0; i < 7; ++i)
    CHECK(tail.alpha(i) == doctest::Approx(full.alpha(i + 3)).epsilon(1e-12));
}

TEST_CASE("zero-step mixing run reports the initialization distance") {
  const fs::path dir = fresh_dir("langmix_harness_zerostep");
  ExperimentConfig cfg;
  cfg.experiment = "mixing_vs_dimension";
  cfg.seed = 3;
  cfg.target.resolution = 32;
  cfg.sampler.chains = 32;
  cfg.schedule.sigmas = {1.0, 0.5};
  cfg.schedule.steps_per_level = 0;
  cfg.mixing.ambient_dims = {4};
  cfg.mixing.seeds = 1;
  const auto summary = experiment_mixing_vs_dimension(cfg, dir.string(), nullptr);

  // Independent reconstruction of the t = 0 distance.
  const TargetDistribution target =
      TargetDistribution::uniform(make_manifold(cfg.target, 4), cfg.target.resolution);
  const PointCloud ref = sample_prior(target, 32, cfg.seed * 7919 + 1);
  PointCloud init;
  init.points = Mat(32, 4);
  for (int c = 0; c < 32; ++c) {
    CounterRng rng(cfg.seed, static_cast<std::uint32_t>(c), 0, RngSalt::kInit);
    init.points.row(c) = rng.normal_vec(4).transpose();
  }
  const double expect = w2_exact(init, ref);

  std::ifstream in(dir / "mixing.csv");
  REQUIRE(in.good());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  const double final_w2 = std::stod(row.substr(row.rfind(',') + 1));
  CHECK(final_w2 == doctest::Approx(expect).epsilon(1e-12));
  CHECK(summary.at("floor_d4") > 0.0);
  fs::remove_all(dir);
}

TEST_CASE("bounds report run writes artifacts and a reproducible summary") {
  const fs::path root = fresh_dir("langmix_harness_runs");
  setenv("LANGMIX_OUTPUT_ROOT", root.string().c_str(), 1);
  ExperimentConfig cfg;
  cfg.experiment = "bounds_report";

  const RunRecord a = run(cfg);
  CHECK(a.summary.at("cls_uniform_log") == doctest::Approx(125.12395388).epsilon(1e-8));
  CHECK(a.summary.at("diameter_bound") == doctest::Approx(146.752291694).epsilon(1e-8));
  CHECK(fs::exists(fs::path(a.directory) / "bounds.csv"));
  CHECK(fs::exists(fs::path(a.directory) / "manifest.json"));
  CHECK(fs::path(a.directory).parent_path() == root);

  nlohmann::json manifest;
  std::ifstream(fs::path(a.directory) / "manifest.json") >> manifest;
  CHECK(manifest["run_id"] == a.run_id);
  CHECK(manifest["summary_hash"] == a.summary_hash);
  CHECK(manifest["config"]["experiment"] == "bounds_report");

  const RunRecord b = run(cfg);
  CHECK(b.summary_hash == a.summary_hash);

  // Failed runs leave an error marker behind.
  cfg.bounds.K = 0.5;  // outside the bound's domain
  bool threw = false;
  std::string dir_of_failed;
  try {
    run(cfg);
  } catch (const std::exception&) {
    threw = true;
  }
  CHECK(threw);
  bool marker_found = false;
  for (const auto& entry : fs::directory_iterator(root))
    if (fs::exists(entry.path() / "error.txt")) marker_found = true;
  CHECK(marker_found);

  unsetenv("LANGMIX_OUTPUT_ROOT");
  fs::remove_all(root);
}

TEST_CASE("dsm consistency run produces monotone Gaussian errors") {
  const fs::path dir = fresh_dir("langmix_harness_dsm");
  ExperimentConfig cfg;
  cfg.experiment = "dsm_consistency";
  cfg.seed = 1;
  cfg.dsm.sizes = {500, 5000};
  cfg.dsm.sigmas = {1.0};
  cfg.dsm.seeds = 3;
  cfg.dsm.probes = 1024;
  cfg.dsm.rbf_centers = 30;
  cfg.target.resolution = 64;
  const auto summary = experiment_dsm_consistency(cfg, dir.string(), nullptr);
  CHECK(summary.at("gauss_err_n5000") < summary.at("gauss_err_n500"));
  CHECK(summary.at("gauss_coef_ratio_n5000") == doctest::Approx(1.0).epsilon(0.05));
  CHECK(fs::exists(dir / "dsm.csv"));
  fs::remove_all(dir);
}
