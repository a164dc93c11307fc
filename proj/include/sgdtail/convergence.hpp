#pragma once

// Non-asymptotic moment bounds, the W2 contraction rate below the critical stepsize, and
// simulation-side checks that compare them (and the stable limit of ergodic sums)
// against the SGD engine.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgdtail/data_gen.hpp"
#include "sgdtail/sgd_engine.hpp"
#include "sgdtail/stable_estim.hpp"
#include "sgdtail/stats.hpp"
#include "sgdtail/tail_theory.hpp"

namespace sgdtail {

struct BoundCurve {
  double p = 0.0;
  double epsilon = 0.0;
  std::vector<double> values;  // k = 0..K
  double limit = 0.0;          // k -> infinity
  HEstimate h_p;
  double x0_moment = 0.0;
  HEstimate q_moment;
  double q_moment_jensen = 0.0;  // eta^p max(1, b^(1-p)) E[|y|^p ||a||^p]
};

/// E||x||^p for x ~ N(0, s^2 I_d): s^p 2^(p/2) Gamma((d+p)/2) / Gamma(d/2).
inline double gaussian_norm_moment(double s, int d, double p) {
  if (s == 0.0) return p == 0.0 ? 1.0 : 0.0;
  return std::exp(p * std::log(s) + 0.5 * p * std::log(2.0) + std::lgamma(0.5 * (d + p)) -
                  std::lgamma(0.5 * d));
}

/// (1+e)^(p/(p-1)) - (1+e)) / ((1+e)^(1/(p-1)) - 1)^p, the additive-term constant for p > 1.
inline double moment_bound_constant(double p, double epsilon) {
  const double g = 1.0 + epsilon;
  return (std::pow(g, p / (p - 1.0)) - g) / std::pow(std::pow(g, 1.0 / (p - 1.0)) - 1.0, p);
}

struct QMoment {
  HEstimate moment;
  double jensen = 0.0;
};

/// Monte Carlo E||q_1||^p with q_1 = (eta/b) sum a_i y_i, conditional on the stream's x_true.
inline QMoment estimate_q_moment(const StreamSpec& spec, double p, std::size_t n,
                                 std::uint64_t seed) {
  const Eigen::VectorXd x_true = draw_true_parameter(spec);
  StreamSpec draw_spec = spec;
  draw_spec.seed = derive_seed(seed, "q_moment");
  std::vector<double> q(n), jensen(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto batch = gen_stream_batch(draw_spec, x_true, static_cast<std::int64_t>(i + 1));
    const Eigen::VectorXd qv =
        (spec.eta / spec.b) * (batch.inputs.transpose() * batch.labels);
    q[i] = std::pow(qv.norm(), p);
    jensen[i] = std::pow(std::abs(batch.labels[0]) * batch.inputs.row(0).norm(), p);
  }
  const auto m = stats::mean_and_se(q);
  const double jensen_factor = std::pow(spec.eta, p) * std::max(1.0, std::pow(spec.b, 1.0 - p));
  return {{m.mean, m.std_error, n, HMethod::monte_carlo},
          jensen_factor * stats::mean_and_se(jensen).mean};
}

struct MomentBoundOptions {
  std::size_t theory_samples = kDefaultTheorySamples;
  std::size_t q_samples = 1'000'000;
  std::uint64_t seed = 0;
  std::optional<Eigen::VectorXd> x0;  // deterministic start; default x0 ~ N(0, sigma_x^2 I)
};

/// Upper bound on E||x_k||^p for k = 0..K. For p <= 1:
///   h^k E||x0||^p + (1 - h^k)/(1 - h) E||q1||^p,
/// for p > 1 the (1+eps)-inflated rate and constant. Requires p below the tail index.
inline BoundCurve moment_bound_curve(const StreamSpec& spec, double p, double epsilon,
                                     std::int64_t K, const MomentBoundOptions& opt = {}) {
  spec.validate();
  if (!(p > 0.0)) throw std::invalid_argument("moment_bound_curve: p must be > 0");
  if (K < 0) throw std::invalid_argument("moment_bound_curve: K must be >= 0");
  BoundCurve out;
  out.p = p;
  out.epsilon = p > 1.0 ? epsilon : 0.0;
  const double a = spec.eta * spec.sigma2();
  out.x0_moment = opt.x0 ? std::pow(opt.x0->norm(), p)
                         : gaussian_norm_moment(spec.sigma_x, spec.d, p);
  if (a == 0.0) {
    // frozen chain: x_k = x_0, h(p) = 1 and q = 0 for every p
    out.h_p = {1.0, 0.0, 0, HMethod::monte_carlo};
    out.q_moment = {0.0, 0.0, 0, HMethod::monte_carlo};
    out.values.assign(static_cast<std::size_t>(K + 1), out.x0_moment);
    out.limit = out.x0_moment;
    return out;
  }
  const TheoryQuery q{a, spec.b, spec.d};
  const auto tail = solve_tail_index(q, kDefaultTailTolerance, opt.theory_samples, opt.seed);
  if (tail.status == TailStatus::no_stationary)
    throw std::domain_error("moment_bound_curve: no stationary law (rho >= 0)");
  if (tail.status == TailStatus::solved && p >= *tail.alpha)
    throw std::domain_error("moment_bound_curve: p = " + std::to_string(p) +
                            " is not below the tail index " + std::to_string(*tail.alpha) +
                            "; the p-th moment of the stationary law is infinite");
  out.h_p = estimate_h(q, p, opt.theory_samples, opt.seed);
  const double h = out.h_p.value;
  if (p > 1.0 && !(epsilon > 0.0 && epsilon < 1.0 / h - 1.0))
    throw std::domain_error("moment_bound_curve: epsilon must lie in (0, 1/h(p) - 1) = (0, " +
                            std::to_string(1.0 / h - 1.0) + ")");
  const auto qm = estimate_q_moment(spec, p, opt.q_samples, opt.seed);
  out.q_moment = qm.moment;
  out.q_moment_jensen = qm.jensen;
  const double rate = p > 1.0 ? (1.0 + epsilon) * h : h;
  const double additive =
      (p > 1.0 ? moment_bound_constant(p, epsilon) : 1.0) * out.q_moment.value;
  out.values.resize(static_cast<std::size_t>(K + 1));
  double power = 1.0;
  for (std::int64_t k = 0; k <= K; ++k) {
    const double geometric = rate == 1.0 ? static_cast<double>(k) : (1.0 - power) / (1.0 - rate);
    out.values[static_cast<std::size_t>(k)] =
        power * out.x0_moment + (additive == 0.0 ? 0.0 : geometric * additive);
    power *= rate;
  }
  out.limit = rate < 1.0 ? additive / (1.0 - rate)
                         : (additive == 0.0 ? out.x0_moment
                                            : std::numeric_limits<double>::infinity());
  return out;
}

/// Per-step squared W2 contraction factor 1 - 2 eta sigma^2 (1 - eta/eta_crit). Evaluated
/// through h2_closed_form, to which it reduces algebraically.
inline double w2_contraction_rate(double eta, int b, int d, double sigma2) {
  const double crit = critical_stepsize(b, d, sigma2);
  if (!(eta > 0.0) || !(eta < crit))
    throw std::domain_error("w2_contraction_rate: need 0 < eta < eta_crit = " +
                            std::to_string(crit));
  return h2_closed_form(eta * sigma2, b, d);
}

struct ContractionFit {
  std::vector<double> log_mean_square;  // log E||x_k - x~_k||^2, k = 0..K
  double slope = 0.0;
};

/// Coupled-pair ensemble with a least-squares slope of log E||x_k - x~_k||^2 over k.
inline ContractionFit coupled_contraction(const BatchSource& source, const RunConfig& cfg) {
  const auto ms = coupled_mean_square(source, cfg);
  ContractionFit out;
  std::vector<double> ks;
  for (std::size_t k = 0; k < ms.size(); ++k) {
    out.log_mean_square.push_back(std::log(ms[k]));
    ks.push_back(static_cast<double>(k));
  }
  out.slope = stats::fit_line(ks, out.log_mean_square).slope;
  return out;
}

struct AlphaMomentDiagnostic {
  std::vector<double> trajectory;  // E||x_k||^order
  double fitted_exponent = 0.0;    // log-log slope over k in [K/10, K]
  std::string warning;
};

/// E||x_k||^order over k and its polynomial growth exponent. The estimand has infinite
/// variance at order = alpha, so the output is descriptive only.
inline AlphaMomentDiagnostic alpha_moment_diagnostic(const BatchSource& source,
                                                     const RunConfig& cfg, double order,
                                                     const std::optional<Eigen::VectorXd>& x0 =
                                                         std::nullopt) {
  const auto traj = moment_trajectory(source, cfg, order, x0, 2);
  AlphaMomentDiagnostic out;
  out.trajectory = traj.mean;
  out.warning =
      "diagnostic only: E||x_k||^alpha has infinite variance; the fitted exponent is not "
      "a reliable estimate";
  std::vector<double> lk, lm;
  const std::int64_t start = std::max<std::int64_t>(1, cfg.K / 10);
  for (std::int64_t k = start; k <= cfg.K; ++k) {
    const double m = traj.mean[static_cast<std::size_t>(k)];
    if (!(m > 0.0) || !std::isfinite(m)) continue;
    lk.push_back(std::log(static_cast<double>(k)));
    lm.push_back(std::log(m));
  }
  out.fitted_exponent = lk.size() >= 2 ? stats::fit_line(lk, lm).slope : 0.0;
  return out;
}

struct GcltReport {
  std::int64_t window = 0;
  AlphaEstimate alpha_w;
  AlphaEstimate alpha_2w;
  double iqr_ratio = 0.0;       // IQR of first coordinate of S_2W over that of S_W
  double expected_ratio = 0.0;  // 2^(1/alpha)
};

inline void check_gclt_alpha(double alpha) {
  if (alpha == 2.0)
    throw std::domain_error(
        "gclt_scaling_check: alpha = 2 needs the (K log K)^(-1/2) normalization, which is "
        "not covered here");
  if (alpha == 1.0)
    throw std::domain_error(
        "gclt_scaling_check: alpha = 1 needs the K^(-1) S_K - K xi(1/K) centering, which is "
        "not covered here");
  if (!(alpha > 1.0 && alpha < 2.0))
    throw std::domain_error("gclt_scaling_check: alpha must lie in (1, 2), got " +
                            std::to_string(alpha));
}

/// Builds the report from per-replica partial sums over windows of W and 2W steps.
inline GcltReport gclt_report_from_sums(const Eigen::MatrixXd& sums_w,
                                        const Eigen::MatrixXd& sums_2w, double alpha,
                                        std::int64_t window, const EstimatorConfig& est = {}) {
  GcltReport out;
  out.window = window;
  out.alpha_w = estimate_alpha(sums_w, est);
  out.alpha_2w = estimate_alpha(sums_2w, est);
  std::vector<double> c1(sums_w.col(0).data(), sums_w.col(0).data() + sums_w.rows());
  std::vector<double> c2(sums_2w.col(0).data(), sums_2w.col(0).data() + sums_2w.rows());
  out.iqr_ratio = stats::iqr(c2) / stats::iqr(c1);
  out.expected_ratio = std::pow(2.0, 1.0 / alpha);
  return out;
}

/// Centered partial sums of SGD iterates over k = K0+1 .. K0+W and K0+1 .. K0+2W.
inline GcltReport gclt_scaling_check(const BatchSource& source, const RunConfig& cfg,
                                     double alpha, std::int64_t window,
                                     const EstimatorConfig& est = {}) {
  check_gclt_alpha(alpha);
  cfg.validate();
  if (window < 1 || cfg.K0 + 2 * window > cfg.K)
    throw std::invalid_argument("gclt_scaling_check: need K0 + 2W <= K");
  const auto& spec = source.spec();
  const auto n = static_cast<std::size_t>(cfg.replicas);
  std::vector<Eigen::VectorXd> sw(n), s2w(n);
  std::vector<char> ok(n, 0);
  RunConfig run = cfg;
  run.K = cfg.K0 + 2 * window;
  parallel_for(n, cfg.threads, [&](std::size_t r) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(spec.d);
    auto result = run_chain(source, run, draw_initial_point(spec, r), r,
                            [&](std::int64_t k, const ChainState& s) {
                              if (k <= cfg.K0) return;
                              acc += s.x - source.center();
                              if (k == cfg.K0 + window) sw[r] = acc;
                            });
    s2w[r] = acc;
    ok[r] = result.final.diverged ? 0 : 1;
  });
  Eigen::Index kept = 0;
  for (char o : ok) kept += o;
  if (kept == 0) throw std::runtime_error("gclt_scaling_check: all replicas diverged");
  Eigen::MatrixXd mw(kept, spec.d), m2w(kept, spec.d);
  Eigen::Index row = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!ok[r]) continue;
    mw.row(row) = sw[r].transpose();
    m2w.row(row) = s2w[r].transpose();
    ++row;
  }
  return gclt_report_from_sums(mw, m2w, alpha, window, est);
}

/// Same report for i.i.d. SaS(alpha) increments, bypassing SGD.
inline GcltReport gclt_scaling_iid(double alpha, std::int64_t window, int replicas,
                                   std::uint64_t seed, const EstimatorConfig& est = {}) {
  check_gclt_alpha(alpha);
  Eigen::MatrixXd mw(replicas, 1), m2w(replicas, 1);
  for (int r = 0; r < replicas; ++r) {
    const auto xs = sample_sas(alpha, 1.0, static_cast<std::size_t>(2 * window),
                               derive_seed(seed, "gclt_iid", static_cast<std::uint64_t>(r)));
    double acc = 0.0;
    for (std::int64_t k = 0; k < 2 * window; ++k) {
      acc += xs[static_cast<std::size_t>(k)];
      if (k + 1 == window) mw(r, 0) = acc;
    }
    m2w(r, 0) = acc;
  }
  return gclt_report_from_sums(mw, m2w, alpha, window, est);
}

}  // namespace sgdtail
