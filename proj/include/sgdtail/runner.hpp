#pragma once

// Experiment orchestration behind the command-line front end: configuration binding,
// theory tables, simulation runs, phase-diagram sweeps, and their CSV/JSON artifacts.

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgdtail/config.hpp"
#include "sgdtail/data_gen.hpp"
#include "sgdtail/parallel.hpp"
#include "sgdtail/sgd_engine.hpp"
#include "sgdtail/stable_estim.hpp"
#include "sgdtail/tail_theory.hpp"

namespace sgdtail {

// ---------------------------------------------------------------------------
// Formatting

/// 17 significant digits, shortest general form, locale independent.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void header(const std::vector<std::string>& cols) { row(cols); }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ostream& out_;
};

// ---------------------------------------------------------------------------
// Configuration

struct SweepAxes {
  std::vector<double> eta;
  std::vector<int> b;
  std::vector<int> d;
  std::vector<double> sigma;

  std::size_t cells() const { return eta.size() * b.size() * d.size() * sigma.size(); }
};

struct ExperimentConfig {
  StreamSpec data{10, 5, 0.1, 1.0, 1.0, 1.0, 0, {}};
  RunConfig run{};
  std::size_t theory_samples = kDefaultTheorySamples;
  double theory_tol = kDefaultTailTolerance;
  SweepAxes axes;
  EstimatorConfig estimator{};
  int threads = 1;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["data"] = {{"d", data.d},
                 {"b", data.b},
                 {"eta", data.eta},
                 {"sigma", data.sigma},
                 {"sigma_x", data.sigma_x},
                 {"sigma_y", data.sigma_y},
                 {"seed", data.seed},
                 {"input", data.input.name()},
                 {"standardize", data.input.standardize}};
    j["sgd"] = {{"K", run.K},
                {"K0", run.K0},
                {"replicas", run.replicas},
                {"mode", run.mode == DataMode::streaming ? "streaming" : "finite-sum"},
                {"n", run.n},
                {"sampling", run.sampling == Sampling::without_replacement ? "without" : "with"},
                {"overflow_threshold", run.overflow_threshold}};
    j["theory"] = {{"samples", theory_samples}, {"tol", theory_tol}};
    j["sweep"] = {{"eta", axes.eta}, {"b", axes.b}, {"d", axes.d}, {"sigma", axes.sigma}};
    j["estimator"] = {{"k1_grid", estimator.k1_grid},
                      {"min_k2", estimator.min_k2},
                      {"flatten", estimator.flatten}};
    j["threads"] = threads;
    return j;
  }
};

/// Binds a parsed file onto the typed configuration. Sweep axes default to the single
/// value from [data]; an axis key present with an empty list is an error.
inline ExperimentConfig bind_config(const config::ConfigFile& file) {
  using config::ConfigError;
  using config::Entry;
  ExperimentConfig cfg;
  auto get = [&](const char* sec, const char* key) { return file.find(sec, key); };
  auto num = [&]<class T>(const char* sec, const char* key, T& dst) {
    if (const Entry* e = get(sec, key)) dst = config::parse_number<T>(*e, key);
  };
  num("data", "d", cfg.data.d);
  num("data", "b", cfg.data.b);
  num("data", "eta", cfg.data.eta);
  num("data", "sigma", cfg.data.sigma);
  num("data", "sigma_x", cfg.data.sigma_x);
  num("data", "sigma_y", cfg.data.sigma_y);
  num("data", "seed", cfg.data.seed);
  if (const Entry* e = get("data", "input")) {
    if (e->value == "gaussian") cfg.data.input = InputDistribution::gaussian();
    else if (e->value == "uniform") cfg.data.input = InputDistribution::uniform();
    else if (e->value == "laplace") cfg.data.input = InputDistribution::laplace();
    else if (e->value == "mixture") {
      const Entry* w = get("data", "mixture_weights");
      const Entry* s = get("data", "mixture_scales");
      if (!w || !s) throw ConfigError(e->line, "mixture input needs mixture_weights and mixture_scales");
      cfg.data.input = InputDistribution::mixture(config::parse_list<double>(*w, "mixture_weights"),
                                                  config::parse_list<double>(*s, "mixture_scales"));
    } else {
      throw ConfigError(e->line, "unknown input kind '" + e->value + "'");
    }
  }
  num("data", "input_param", cfg.data.input.param);
  if (const Entry* e = get("data", "standardize"))
    cfg.data.input.standardize = config::parse_bool(*e, "standardize");

  num("sgd", "K", cfg.run.K);
  num("sgd", "K0", cfg.run.K0);
  num("sgd", "replicas", cfg.run.replicas);
  num("sgd", "n", cfg.run.n);
  num("sgd", "overflow_threshold", cfg.run.overflow_threshold);
  if (const Entry* e = get("sgd", "mode")) {
    if (e->value == "streaming") cfg.run.mode = DataMode::streaming;
    else if (e->value == "finite-sum") cfg.run.mode = DataMode::finite_sum;
    else throw ConfigError(e->line, "mode must be 'streaming' or 'finite-sum'");
  }
  if (const Entry* e = get("sgd", "sampling")) {
    if (e->value == "without") cfg.run.sampling = Sampling::without_replacement;
    else if (e->value == "with") cfg.run.sampling = Sampling::with_replacement;
    else throw ConfigError(e->line, "sampling must be 'without' or 'with'");
  }

  num("theory", "samples", cfg.theory_samples);
  num("theory", "tol", cfg.theory_tol);

  if (const Entry* e = get("estimator", "k1_grid"))
    cfg.estimator.k1_grid = config::parse_list<int>(*e, "k1_grid");
  num("estimator", "min_k2", cfg.estimator.min_k2);
  if (const Entry* e = get("estimator", "flatten"))
    cfg.estimator.flatten = config::parse_bool(*e, "flatten");

  auto axis = [&]<class T>(const char* key, std::vector<T>& dst, T fallback) {
    if (const Entry* e = get("sweep", key)) dst = config::parse_list<T>(*e, key);
    else dst = {fallback};
  };
  axis("eta", cfg.axes.eta, cfg.data.eta);
  axis("b", cfg.axes.b, cfg.data.b);
  axis("d", cfg.axes.d, cfg.data.d);
  axis("sigma", cfg.axes.sigma, cfg.data.sigma);

  try {
    cfg.data.validate();
    cfg.run.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(0, ex.what());
  }
  if (!(cfg.theory_tol > 0.0)) throw ConfigError(0, "theory tol must be > 0");
  if (cfg.theory_samples < 1000) throw ConfigError(0, "theory samples must be >= 1000");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config::ConfigError(0, "cannot open config file " + path.string());
  return bind_config(config::ConfigFile::parse(in));
}

// ---------------------------------------------------------------------------
// Grid cells

struct Cell {
  std::size_t index = 0;
  double eta = 0.0;
  int b = 1;
  int d = 1;
  double sigma = 1.0;

  double sigma2() const { return sigma * sigma; }
};

/// Row-major order: eta outermost, then b, d, sigma.
inline std::vector<Cell> enumerate_cells(const SweepAxes& axes) {
  if (axes.cells() == 0) throw config::ConfigError(0, "sweep grid has an empty axis");
  std::vector<Cell> cells;
  for (double eta : axes.eta)
    for (int b : axes.b)
      for (int d : axes.d)
        for (double s : axes.sigma) cells.push_back({cells.size(), eta, b, d, s});
  return cells;
}

struct TheoryRow {
  Cell cell;
  TailIndexResult tail;
  double h2 = 0.0;
  double eta_crit = 0.0;
};

inline TheoryRow theory_cell(const ExperimentConfig& cfg, const Cell& c) {
  const TheoryQuery q = TheoryQuery::from_stepsize(c.eta, c.b, c.d, c.sigma2());
  TheoryRow row{c, {}, h2_closed_form(q), critical_stepsize(c.b, c.d, c.sigma2())};
  row.tail = solve_tail_index(q, cfg.theory_tol, cfg.theory_samples,
                              derive_seed(cfg.data.seed, "theory", c.index));
  return row;
}

inline const std::vector<std::string>& theory_columns() {
  static const std::vector<std::string> cols{"eta",   "b",      "d",          "sigma2",
                                             "a",     "rho",    "rho_se",     "alpha",
                                             "alpha_status", "h2", "eta_crit", "regime"};
  return cols;
}

inline std::vector<std::string> theory_cells_text(const TheoryRow& r) {
  return {format_double(r.cell.eta),
          std::to_string(r.cell.b),
          std::to_string(r.cell.d),
          format_double(r.cell.sigma2()),
          format_double(r.cell.eta * r.cell.sigma2()),
          format_double(r.tail.rho.value),
          format_double(r.tail.rho.std_error),
          format_optional(r.tail.alpha),
          to_string(r.tail.status),
          format_double(r.h2),
          format_double(r.eta_crit),
          regime_label(r.tail)};
}

inline std::vector<TheoryRow> cmd_theory(const ExperimentConfig& cfg) {
  const auto cells = enumerate_cells(cfg.axes);
  std::vector<TheoryRow> rows(cells.size());
  parallel_for(cells.size(), cfg.threads,
               [&](std::size_t i) { rows[i] = theory_cell(cfg, cells[i]); });
  return rows;
}

inline void write_theory_csv(std::ostream& out, const std::vector<TheoryRow>& rows) {
  CsvWriter csv(out);
  csv.header(theory_columns());
  for (const auto& r : rows) csv.row(theory_cells_text(r));
}

// ---------------------------------------------------------------------------
// Simulation

struct SimulationResult {
  StreamSpec spec;
  std::optional<SampleMatrix> samples;  // empty when every replica diverged
  std::optional<AlphaEstimate> estimate;
  std::string estimate_error;
  int diverged = 0;
  int replicas = 0;
};

/// Replica ensemble plus the stable tail-index estimate of its ergodic averages.
inline SimulationResult simulate_cell(const ExperimentConfig& cfg, const Cell& c,
                                      std::uint64_t seed, int threads) {
  SimulationResult out;
  out.spec = cfg.data;
  out.spec.eta = c.eta;
  out.spec.b = c.b;
  out.spec.d = c.d;
  out.spec.sigma = c.sigma;
  out.spec.seed = seed;
  RunConfig run = cfg.run;
  run.threads = threads;
  out.replicas = run.replicas;
  SampleMatrix sm;
  try {
    sm = ergodic_averages(BatchSource::make(out.spec, run), run);
  } catch (const std::runtime_error&) {
    out.diverged = run.replicas;
    return out;
  }
  out.diverged = sm.diverged;
  try {
    out.estimate = estimate_alpha(sm.rows, cfg.estimator);
  } catch (const std::invalid_argument& ex) {
    out.estimate_error = ex.what();
  }
  out.samples = std::move(sm);
  return out;
}

inline nlohmann::json estimate_json(const SimulationResult& r) {
  nlohmann::json j;
  j["replicas"] = r.replicas;
  j["diverged"] = r.diverged;
  if (r.estimate) {
    const auto& e = *r.estimate;
    j["alpha_hat"] = e.alpha_hat;
    j["alpha_hat_clipped"] = e.clipped();
    j["exceeds_two"] = e.exceeds_two;
    j["n_used"] = e.n_used;
    j["dropped_zero"] = e.dropped_zero;
    j["per_k1"] = nlohmann::json::array();
    for (const auto& k : e.per_k1)
      j["per_k1"].push_back({{"k1", k.k1}, {"alpha", k.alpha}, {"n_used", k.n_used}});
  } else {
    j["alpha_hat"] = nullptr;
    if (!r.estimate_error.empty()) j["error"] = r.estimate_error;
  }
  return j;
}

inline void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m) {
  CsvWriter csv(out);
  std::vector<std::string> cols;
  for (Eigen::Index j = 0; j < m.cols(); ++j) cols.push_back("x" + std::to_string(j + 1));
  csv.header(cols);
  std::vector<std::string> cells(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      cells[static_cast<std::size_t>(j)] = format_double(m(i, j));
    csv.row(cells);
  }
}

inline SimulationResult cmd_simulate(const ExperimentConfig& cfg) {
  const Cell c{0, cfg.data.eta, cfg.data.b, cfg.data.d, cfg.data.sigma};
  return simulate_cell(cfg, c, derive_seed(cfg.data.seed, "simulate", 0), cfg.threads);
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepRow {
  TheoryRow theory;
  SimulationResult sim;
};

inline const std::vector<std::string>& sweep_columns() {
  static const std::vector<std::string> cols{
      "eta",          "b",      "d",         "sigma2",       "eta_over_b",
      "a",            "rho",    "rho_se",    "alpha_theory", "alpha_status",
      "regime",       "alpha_hat", "alpha_hat_clipped", "diverged", "replicas_used"};
  return cols;
}

inline std::vector<std::string> sweep_cells_text(const SweepRow& r) {
  const auto& c = r.theory.cell;
  const auto& e = r.sim.estimate;
  return {format_double(c.eta),
          std::to_string(c.b),
          std::to_string(c.d),
          format_double(c.sigma2()),
          format_double(c.eta / c.b),
          format_double(c.eta * c.sigma2()),
          format_double(r.theory.tail.rho.value),
          format_double(r.theory.tail.rho.std_error),
          format_optional(r.theory.tail.alpha),
          to_string(r.theory.tail.status),
          regime_label(r.theory.tail),
          e ? format_double(e->alpha_hat) : std::string(),
          e ? format_double(e->clipped()) : std::string(),
          std::to_string(r.sim.diverged),
          std::to_string(r.sim.replicas - r.sim.diverged)};
}

/// Every cell gets a theory solve and a full simulate-and-estimate pass. Cells run in the
/// worker pool with single-threaded replicas, so output does not depend on the pool size.
inline std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg) {
  const auto cells = enumerate_cells(cfg.axes);
  std::vector<SweepRow> rows(cells.size());
  parallel_for(cells.size(), cfg.threads, [&](std::size_t i) {
    rows[i].theory = theory_cell(cfg, cells[i]);
    rows[i].sim = simulate_cell(cfg, cells[i], derive_seed(cfg.data.seed, "sweep", i), 1);
  });
  return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  CsvWriter csv(out);
  csv.header(sweep_columns());
  for (const auto& r : rows) csv.row(sweep_cells_text(r));
}

}  // namespace sgdtail
