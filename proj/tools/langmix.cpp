// Command-line entry point: experiment runner, bound tables, Kato constants,
// and config validation. Exit codes: 0 success, 2 validation error, 3 runtime
// error.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "langmix/bounds.hpp"
#include "langmix/geometry.hpp"
#include "langmix/harness.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

langmix::ParamManifold manifold_by_name(const std::string& name) {
  if (name == "circle") return langmix::ParamManifold::circle(1.0);
  if (name == "sphere") return langmix::ParamManifold::sphere(2, 1.0);
  if (name == "embedded_torus") return langmix::ParamManifold::embedded_torus(1.0, 3.0);
  if (name == "phase_torus") return langmix::ParamManifold::phase_torus(1.0, 1.0, 1, 3, 32);
  throw langmix::ConfigError("unknown manifold '" + name + "'");
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed_override) {
  langmix::ExperimentConfig cfg;
  try {
    cfg = langmix::ExperimentConfig::parse_file(config_path);
    if (seed_override) cfg.seed = *seed_override;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  }
  try {
    const langmix::RunRecord rec = langmix::run(cfg);
    std::cout << "run " << rec.run_id << " -> " << rec.directory << "\n";
    for (const auto& [k, v] : rec.summary) std::printf("  %-28s %.10g\n", k.c_str(), v);
    std::printf("  summary_hash %016llx\n", static_cast<unsigned long long>(rec.summary_hash));
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_validate(const std::string& config_path) {
  try {
    langmix::ExperimentConfig::parse_file(config_path).validate();
    std::cout << "ok\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  }
}

int cmd_bounds(double K, int dprime, double kappa, double sigma, double B, double L, bool json) {
  try {
    langmix::ExperimentConfig cfg;
    cfg.experiment = "bounds_report";
    cfg.bounds = {K, dprime, kappa, sigma, B, L};
    const langmix::RunRecord rec = langmix::run(cfg);
    if (json) {
      nlohmann::json out(rec.summary);
      std::cout << out.dump(2) << "\n";
    } else {
      std::printf("name,value\n");
      for (const auto& [k, v] : rec.summary) std::printf("%s,%.12g\n", k.c_str(), v);
    }
    std::cerr << "report written to " << rec.directory << "\n";
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_kato(const std::string& manifold, double R, int resolution) {
  try {
    const langmix::ParamManifold m = manifold_by_name(manifold);
    const langmix::ManifoldMesh mesh = langmix::build_mesh(m, resolution);
    const double kappa = langmix::kato_constant(mesh, m, R);
    std::printf("manifold,R,resolution,kato\n%s,%.12g,%d,%.12g\n", manifold.c_str(), R,
                resolution, kappa);
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annealed Langevin sampling on low-dimensional manifolds"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_value = 0;
  bool seed_set = false;
  auto* run_cmd = app.add_subcommand("run", "Execute an experiment config");
  run_cmd->add_option("config", config_path, "Config file (JSON, comments allowed)")
      ->required();
  run_cmd->add_option("--seed", seed_value, "Override the config seed")
      ->each([&](const std::string&) { seed_set = true; });

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "Validate a config file");
  validate_cmd->add_option("config", validate_path, "Config file")->required();

  double K = 2.0, kappa = 4.0, sigma = 0.01, B = 0.0, L = 0.0;
  int dprime = 2;
  bool as_json = false;
  auto* bounds_cmd = app.add_subcommand("bounds", "Evaluate the closed-form bound table");
  bounds_cmd->add_option("--K", K, "Ricci lower-bound magnitude (requires K > 1)");
  bounds_cmd->add_option("--dprime", dprime, "Intrinsic dimension");
  bounds_cmd->add_option("--kappa", kappa, "Kato-type constant");
  bounds_cmd->add_option("--sigma", sigma, "Smoothing level");
  bounds_cmd->add_option("--B", B, "Sup of the log-density gradient norm");
  bounds_cmd->add_option("--L", L, "Lipschitz constant of the log-density gradient");
  bounds_cmd->add_flag("--json", as_json, "Emit JSON instead of CSV");

  std::string kato_manifold;
  double kato_R = 0.5;
  int kato_resolution = 48;
  auto* kato_cmd = app.add_subcommand("kato", "Kato constant of a built-in manifold");
  kato_cmd->add_option("manifold", kato_manifold, "circle|sphere|embedded_torus|phase_torus")
      ->required();
  kato_cmd->add_option("R", kato_R, "Ball radius")->required();
  kato_cmd->add_option("--resolution", kato_resolution, "Mesh resolution per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  if (run_cmd->parsed())
    return cmd_run(config_path,
                   seed_set ? std::optional<std::uint64_t>(seed_value) : std::nullopt);
  if (validate_cmd->parsed()) return cmd_validate(validate_path);
  if (bounds_cmd->parsed()) return cmd_bounds(K, dprime, kappa, sigma, B, L, as_json);
  if (kato_cmd->parsed()) return cmd_kato(kato_manifold, kato_R, kato_resolution);
  return kExitValidation;
}
