// sgdtail: theory tables, simulations, sweeps and the acceptance suite from the shell.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "json.hpp"
#include "sgdtail/acceptance.hpp"
#include "sgdtail/runner.hpp"

namespace fs = std::filesystem;
using namespace sgdtail;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string level = "quick";
};

ExperimentConfig prepare(const Options& opt) {
  ExperimentConfig cfg;
  if (!opt.config.empty()) {
    cfg = load_config(opt.config);
  } else {
    cfg.axes = {{cfg.data.eta}, {cfg.data.b}, {cfg.data.d}, {cfg.data.sigma}};
  }
  if (opt.seed) cfg.data.seed = *opt.seed;
  cfg.threads = resolve_threads(opt.threads);
  return cfg;
}

fs::path ensure_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  f << j.dump(2) << '\n';
}

int run_theory(const Options& opt) {
  const auto cfg = prepare(opt);
  const auto rows = cmd_theory(cfg);
  if (opt.out.empty()) {
    write_theory_csv(std::cout, rows);
    return 0;
  }
  const auto dir = ensure_dir(opt.out);
  std::ofstream csv(dir / "results.csv");
  write_theory_csv(csv, rows);
  write_json(dir / "config-echo.json", cfg.to_json());
  return 0;
}

int run_simulate(const Options& opt) {
  const auto cfg = prepare(opt);
  const auto res = cmd_simulate(cfg);
  const auto dir = ensure_dir(opt.out.empty() ? "." : opt.out);
  write_json(dir / "config-echo.json", cfg.to_json());
  write_json(dir / "estimates.json", estimate_json(res));
  if (!res.samples) {
    std::cerr << "all " << res.replicas
              << " replicas diverged; the stepsize is probably in the regime with no "
                 "stationary distribution (rho >= 0). Try `sgdtail theory` on this config.\n";
    return 1;
  }
  {
    std::ofstream f(dir / "averages.csv");
    write_matrix_csv(f, res.samples->rows);
  }
  std::ofstream f(dir / "results.csv");
  CsvWriter csv(f);
  csv.header({"eta", "b", "d", "sigma2", "alpha_hat", "alpha_hat_clipped", "diverged",
              "replicas_used"});
  const auto& s = res.spec;
  csv.row({format_double(s.eta), std::to_string(s.b), std::to_string(s.d),
           format_double(s.sigma2()),
           res.estimate ? format_double(res.estimate->alpha_hat) : std::string(),
           res.estimate ? format_double(res.estimate->clipped()) : std::string(),
           std::to_string(res.diverged), std::to_string(res.replicas - res.diverged)});
  if (res.estimate)
    std::cout << "alpha_hat = " << format_double(res.estimate->alpha_hat) << " ("
              << res.diverged << " of " << res.replicas << " replicas diverged)\n";
  return 0;
}

int run_sweep(const Options& opt) {
  const auto cfg = prepare(opt);
  const auto rows = cmd_sweep(cfg);
  if (opt.out.empty()) {
    write_sweep_csv(std::cout, rows);
    return 0;
  }
  const auto dir = ensure_dir(opt.out);
  std::ofstream csv(dir / "results.csv");
  write_sweep_csv(csv, rows);
  write_json(dir / "config-echo.json", cfg.to_json());
  nlohmann::json est = nlohmann::json::array();
  for (const auto& r : rows) est.push_back(estimate_json(r.sim));
  write_json(dir / "estimates.json", est);
  return 0;
}

int run_verify(const Options& opt) {
  acceptance::Level level;
  if (opt.level == "quick") level = acceptance::Level::quick;
  else if (opt.level == "full") level = acceptance::Level::full;
  else throw std::invalid_argument("--level must be quick or full");
  acceptance::SuiteOptions so;
  so.threads = resolve_threads(opt.threads);
  if (opt.seed) so.seed = *opt.seed;
  const auto results = acceptance::run_suite(acceptance::criteria_for(level), so, std::cerr);
  const auto verdict = acceptance::verdict_json(results, opt.level);
  std::cout << verdict.dump(2) << '\n';
  if (!opt.out.empty()) write_json(ensure_dir(opt.out) / "verdict.json", verdict);
  acceptance::print_summary(std::cerr, results);
  return acceptance::all_passed(results) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tail-index theory and simulation for constant-stepsize SGD on linear regression"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--seed", opt.seed, "master seed (overrides [data] seed)");
    sub->add_option("--threads", opt.threads, "worker threads, 0 = hardware")
        ->check(CLI::NonNegativeNumber);
  };
  auto* theory = app.add_subcommand("theory", "tail index, rho and regime per grid cell");
  auto* simulate = app.add_subcommand("simulate", "replica ensemble and tail estimate");
  auto* sweep = app.add_subcommand("sweep", "theory and simulation over the whole grid");
  auto* verify = app.add_subcommand("verify", "run the acceptance suite");
  for (auto* s : {theory, simulate, sweep, verify}) add_common(s);
  verify->add_option("--level", opt.level, "quick or full")
      ->check(CLI::IsMember({"quick", "full"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*theory) return run_theory(opt);
    if (*simulate) return run_simulate(opt);
    if (*sweep) return run_sweep(opt);
    if (*verify) return run_verify(opt);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
