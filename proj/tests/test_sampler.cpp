#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "langmix/metrics.hpp"
#include "langmix/sampler.hpp"
#include "langmix/target.hpp"

using namespace langmix;

namespace {

const LevelScoreFn kZeroScore = [](const Vec& x, double) { return Vec(Vec::Zero(x.size())); };

}  // namespace

TEST_CASE("noise schedule validation and step sizes") {
  NoiseSchedule s = NoiseSchedule::paper_default();
  CHECK(s.levels.size() == 10);
  CHECK(s.sigma_final() == 0.01);
  s.validate();
  // alpha_i = eps * sigma_i^2 / sigma_L^2.
  CHECK(s.alpha(0) == doctest::Approx(2e-5 * 1.0 / 1e-4).epsilon(1e-12));
  CHECK(s.alpha(9) == doctest::Approx(2e-5).epsilon(1e-12));

  NoiseSchedule bad;
  bad.levels = {{0.5, 10}, {0.5, 10}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.levels = {{0.5, 10}, {0.7, 10}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.levels = {{0.5, 10}};
  bad.eps_step = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const NoiseSchedule g = NoiseSchedule::geometric(1.0, 0.01, 5, 10);
  g.validate();
  CHECK(g.levels.front().first == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.levels.back().first == doctest::Approx(0.01).epsilon(1e-12));
  // Log-uniform spacing: constant ratio between adjacent sigmas.
  const double ratio = g.levels[1].first / g.levels[0].first;
  for (int i = 2; i < 5; ++i)
    CHECK(g.levels[i].first / g.levels[i - 1].first == doctest::Approx(ratio).epsilon(1e-12));
}

TEST_CASE("single Langevin update arithmetic") {
  Vec x(2), s(2), z(2);
  x << 1.0, 1.0;
  s << 1.0, -1.0;
  z << 0.0, 0.0;
  // alpha = 0.4: x + 0.2 s = (1.2, 0.8).
  Vec y = langevin_step(x, s, 0.4, z);
  CHECK(y[0] == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(0.8).epsilon(1e-15));

  CHECK((langevin_step(x, s, 0.0, z) - x).norm() == 0.0);

  x << 2.0, 0.0;
  Vec y2 = langevin_step(x, Vec(-x), 0.5, z);
  CHECK(y2[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(y2[1] == 0.0);

  // Noise enters linearly with coefficient sqrt(alpha).
  z << 1.0, -2.0;
  const Vec diff = langevin_step(x, s, 0.49, z) - langevin_step(x, s, 0.49, Vec(Vec::Zero(2)));
  CHECK((diff - 0.7 * z).norm() < 1e-15);

  CHECK_THROWS_AS(langevin_step(x, s, -0.1, z), std::invalid_argument);
}

TEST_CASE("zero-iteration schedules return the initial ensemble") {
  NoiseSchedule s;
  s.levels = {{1.0, 0}, {0.5, 0}};
  Mat init(4, 3);
  init.setRandom();
  const TrajectoryLog log = annealed_langevin_from(kZeroScore, s, init, 1);
  CHECK((log.final_cloud().points - init).norm() == 0.0);
  CHECK(log.score_evaluations == 0);
  CHECK(log.dimension_weighted_cost == 0.0);
}

TEST_CASE("zero score accumulates pure Brownian variance") {
  NoiseSchedule s;
  s.levels = {{1.0, 100}};
  s.eps_step = 0.01;  // alpha = 0.01 at the single level
  const TrajectoryLog log = annealed_langevin(kZeroScore, s, 1000, 2, 3);
  // Var = 1 (init) + T alpha = 2.
  const Mat& pts = log.final_cloud().points;
  const double var = (pts.array() - pts.mean()).square().mean();
  CHECK(var == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("exact Gaussian score reaches the smoothed target") {
  // Target N(0, I_2); smoothed score at level sigma is -x / (1 + sigma^2).
  const LevelScoreFn score = [](const Vec& x, double sigma) {
    return Vec(-x / (1 + sigma * sigma));
  };
  const NoiseSchedule s = NoiseSchedule::paper_default(100, 2e-4);
  const TrajectoryLog log = annealed_langevin(score, s, 1000, 2, 5);
  auto normal_cloud = [](std::uint64_t seed) {
    PointCloud c;
    c.points = Mat(1000, 2);
    for (int i = 0; i < 1000; ++i) {
      CounterRng rng(seed, static_cast<std::uint32_t>(i), 0, RngSalt::kProbe);
      c.points.row(i) = rng.normal_vec(2).transpose();
    }
    return c;
  };
  const PointCloud ref = normal_cloud(77);
  // The finite-sample floor: two exact draws of the target are this far apart.
  const double floor = w2_exact(normal_cloud(78), ref);
  CHECK(w2_exact(log.final_cloud(), ref) < 1.3 * floor);
  // Per-coordinate second moment of the final ensemble is near 1.
  const double var = log.final_cloud().points.array().square().mean();
  CHECK(var == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("trajectories are bit-reproducible and snapshot steps increase") {
  const NoiseSchedule s = NoiseSchedule::paper_default(20, 0.01);
  const LevelScoreFn score = [](const Vec& x, double sigma) {
    return Vec(-x / (1 + sigma * sigma));
  };
  const TrajectoryLog a = annealed_langevin(score, s, 16, 4, 9, 7);
  const TrajectoryLog b = annealed_langevin(score, s, 16, 4, 9, 7);
  REQUIRE(a.snapshots.size() == b.snapshots.size());
  for (std::size_t k = 0; k < a.snapshots.size(); ++k)
    CHECK((a.snapshots[k].cloud.points - b.snapshots[k].cloud.points).norm() == 0.0);
  for (std::size_t k = 1; k < a.snapshots.size(); ++k) {
    CHECK(a.snapshots[k].step >= a.snapshots[k - 1].step);
    CHECK(a.snapshots[k].time >= a.snapshots[k - 1].time);
  }
  CHECK(a.snapshots.front().step == 0);
  CHECK(a.snapshots.back().step == 200);
  // Diffusion time totals sum(T_i alpha_i / 2).
  double expect_time = 0.0;
  for (std::size_t i = 0; i < s.levels.size(); ++i)
    expect_time += s.levels[i].second * s.alpha(i) / 2;
  CHECK(a.snapshots.back().time == doctest::Approx(expect_time).epsilon(1e-12));

  const TrajectoryLog c = annealed_langevin(score, s, 16, 4, 10, 7);
  CHECK((a.final_cloud().points - c.final_cloud().points).norm() != 0.0);
}

TEST_CASE("score failures carry chain and step diagnostics") {
  const LevelScoreFn bad = [](const Vec& x, double) -> Vec {
    throw std::runtime_error("boom");
  };
  NoiseSchedule s;
  s.levels = {{1.0, 1}};
  bool threw = false;
  try {
    annealed_langevin(bad, s, 2, 2, 1);
  } catch (const EvalError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("chain 0, step 1") != std::string::npos);
  }
  CHECK(threw);

  // Explosive score drives the ensemble non-finite within one level.
  const LevelScoreFn explosive = [](const Vec& x, double) { return Vec(1e200 * (x.array() + 1).matrix()); };
  NoiseSchedule s2;
  s2.levels = {{1.0, 5}};
  s2.eps_step = 1.0;
  CHECK_THROWS_AS(annealed_langevin(explosive, s2, 2, 2, 1), EvalError);
}

TEST_CASE("resampling operators on explicit signals") {
  Vec x(4);
  x << 1, 3, 5, 7;
  const Vec dn = downsample(x);
  CHECK(dn.size() == 2);
  CHECK(dn[0] == 2.0);
  CHECK(dn[1] == 6.0);

  Vec c(4);
  c << 2, 2, 2, 2;
  CHECK((downsample(c) - Vec::Constant(2, 2.0)).norm() == 0.0);
  CHECK((upsample(downsample(c)) - c).norm() == 0.0);

  Vec y(2);
  y << 2, 6;
  const Vec up = upsample(y);
  CHECK(up.size() == 4);
  CHECK(up[0] == 2.0);
  CHECK(up[1] == 4.0);
  CHECK(up[2] == 6.0);
  CHECK(up[3] == 4.0);

  const Vec rt = downsample(upsample(y));
  CHECK(rt[0] == 3.0);
  CHECK(rt[1] == 5.0);

  Vec odd(3);
  odd << 1, 2, 3;
  CHECK_THROWS_AS(downsample(odd), std::invalid_argument);

  // Matrix forms agree with the functional forms.
  CHECK((downsample_matrix(4) * x - dn).norm() == 0.0);
  CHECK((upsample_matrix(2) * y - up).norm() == 0.0);
}

TEST_CASE("operator norms of the resampling maps") {
  const OperatorNormResult id = operator_norm_check(Mat::Identity(6, 6));
  CHECK(id.norm == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(id.contractive);

  const OperatorNormResult two = operator_norm_check(Mat(2.0 * Mat::Identity(4, 4)));
  CHECK(two.norm == doctest::Approx(2.0).epsilon(1e-9));
  CHECK_FALSE(two.contractive);

  // Pair means have orthogonal rows of norm 1/sqrt(2).
  const OperatorNormResult dn = operator_norm_check(downsample_matrix(8));
  CHECK(dn.norm == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
  CHECK(dn.contractive);

  const OperatorNormResult up = operator_norm_check(upsample_matrix(8));
  CHECK(up.norm > 1.0 / std::sqrt(2.0));
  CHECK(up.norm < 2.0);
}

TEST_CASE("single-level ladder reproduces the flat sampler bit for bit") {
  const LevelScoreFn score = [](const Vec& x, double sigma) {
    return Vec(-x / (1 + sigma * sigma));
  };
  const NoiseSchedule s = NoiseSchedule::paper_default(10, 0.01);
  ResolutionLadder ladder;
  ladder.base_dim = 8;
  ladder.halvings = 0;
  ladder.n_chains = 32;
  ladder.scores = {score};
  ladder.schedules = {s};
  const TrajectoryLog multi = multires_annealed_langevin(ladder, 13);
  const TrajectoryLog flat = annealed_langevin(score, s, 32, 8, 13);
  CHECK((multi.final_cloud().points - flat.final_cloud().points).norm() == 0.0);
  CHECK(multi.dimension_weighted_cost == flat.dimension_weighted_cost);
}

TEST_CASE("empty coarse schedule reduces to upsample-then-anneal") {
  const LevelScoreFn score = [](const Vec& x, double sigma) {
    return Vec(-x / (1 + sigma * sigma));
  };
  const NoiseSchedule fine = NoiseSchedule::paper_default(10, 0.01);
  NoiseSchedule empty;
  empty.levels = {{1.0, 0}};

  ResolutionLadder ladder;
  ladder.base_dim = 8;
  ladder.halvings = 1;
  ladder.n_chains = 32;
  ladder.scores = {score, score};
  ladder.schedules = {fine, empty};
  const TrajectoryLog multi = multires_annealed_langevin(ladder, 21);

  // Manual reference: draw the coarse init, upsample, run the fine schedule.
  Mat init(32, 4);
  for (int c = 0; c < 32; ++c) {
    CounterRng rng(21, static_cast<std::uint32_t>(c), 0, RngSalt::kInit);
    init.row(c) = rng.normal_vec(4).transpose();
  }
  Mat up(32, 8);
  for (int c = 0; c < 32; ++c) up.row(c) = upsample(init.row(c).transpose()).transpose();
  const TrajectoryLog ref = annealed_langevin_from(score, fine, up, 21);
  CHECK((multi.final_cloud().points - ref.final_cloud().points).norm() == 0.0);

  // Upsample snapshots are flagged and cost only counts Langevin work.
  bool saw_upsampled = false;
  for (const auto& snap : multi.snapshots) saw_upsampled |= snap.upsampled;
  CHECK(saw_upsampled);
  CHECK(multi.dimension_weighted_cost == doctest::Approx(32.0 * 100 * 8).epsilon(1e-12));
}

TEST_CASE("pair-mean downsampling of two-phase signals stays on the coarse manifold") {
  // x_t = A cos(2 pi k t / N + phi): averaging adjacent samples yields the
  // same family at N/2 with amplitude A cos(pi k / N) and phase phi + pi k / N.
  const int N = 32, k1 = 1, k2 = 3;
  const ParamManifold fine = ParamManifold::phase_torus(1.0, 1.0, k1, k2, N);
  const ParamManifold coarse = ParamManifold::phase_torus(
      std::cos(kPi * k1 / N), std::cos(kPi * k2 / N), k1, k2, N / 2);
  Vec theta(2);
  for (double a : {0.0, 1.1, 4.0})
    for (double b : {0.3, 2.7}) {
      theta << a, b;
      const Vec down = downsample(fine.embed(theta));
      Vec shifted(2);
      shifted << std::fmod(a + kPi * k1 / N, kTwoPi), std::fmod(b + kPi * k2 / N, kTwoPi);
      CHECK((down - coarse.embed(shifted)).norm() < 1e-12);
    }
}

TEST_CASE("ladder validation rejects indivisible dimensions") {
  ResolutionLadder ladder;
  ladder.base_dim = 6;
  ladder.halvings = 2;  // 6 is not divisible by 4
  ladder.scores = {kZeroScore, kZeroScore, kZeroScore};
  ladder.schedules = {NoiseSchedule::paper_default(1), NoiseSchedule::paper_default(1),
                      NoiseSchedule::paper_default(1)};
  CHECK_THROWS_AS(ladder.validate(), std::invalid_argument);
}

TEST_CASE("ladder dimension bookkeeping") {
  ResolutionLadder ladder;
  ladder.base_dim = 16;
  ladder.halvings = 2;
  CHECK(ladder.dim_at(0) == 16);
  CHECK(ladder.dim_at(1) == 8);
  CHECK(ladder.dim_at(2) == 4);
  ladder.scores = {kZeroScore, kZeroScore};  // one provider short
  ladder.schedules = {NoiseSchedule::paper_default(1), NoiseSchedule::paper_default(1),
                      NoiseSchedule::paper_default(1)};
  CHECK_THROWS_AS(ladder.validate(), std::invalid_argument);
}

TEST_CASE("trajectory export writes a manifest and per-snapshot CSVs") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "langmix_traj_test";
  fs::create_directories(dir);
  NoiseSchedule s;
  s.levels = {{1.0, 4}, {0.5, 4}};
  const TrajectoryLog log = annealed_langevin(kZeroScore, s, 3, 2, 5, 2);
  log.export_dir(dir.string());

  std::ifstream min(dir / "manifest.json");
  REQUIRE(min.good());
  nlohmann::json manifest;
  min >> manifest;
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["snapshots"].size() == log.snapshots.size());
  for (std::size_t k = 0; k < log.snapshots.size(); ++k) {
    std::ifstream sin(dir / ("snapshot_" + std::to_string(k) + ".csv"));
    REQUIRE(sin.good());
    std::string header;
    std::getline(sin, header);
    CHECK(header == "step,level,chain,x0,x1");
    int rows = 0;
    for (std::string line; std::getline(sin, line);) ++rows;
    CHECK(rows == 3);
  }
  fs::remove_all(dir);
}
