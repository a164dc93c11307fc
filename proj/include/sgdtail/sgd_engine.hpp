#pragma once

// The affine recursion x_k = (I - (eta/b) H_k) x_{k-1} + q_k driven by either a one-pass
// stream or a fixed finite dataset, plus the replica/coupled-pair ensembles built on it.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "sgdtail/data_gen.hpp"
#include "sgdtail/parallel.hpp"
#include "sgdtail/rng.hpp"
#include "sgdtail/stats.hpp"

namespace sgdtail {

struct ChainState {
  Eigen::VectorXd x;
  std::int64_t k = 0;
  bool diverged = false;
};

enum class DataMode { streaming, finite_sum };
enum class Sampling { without_replacement, with_replacement };

inline constexpr double kDefaultOverflowThreshold = 1e300;

struct RunConfig {
  std::int64_t K = 1000;
  std::int64_t K0 = 500;
  int replicas = 400;
  DataMode mode = DataMode::streaming;
  std::size_t n = 0;  // finite-sum dataset size
  Sampling sampling = Sampling::without_replacement;
  double overflow_threshold = kDefaultOverflowThreshold;
  int threads = 1;

  void validate() const {
    if (!(K0 >= 0 && K0 < K)) throw std::invalid_argument("run config: need 0 <= K0 < K");
    if (replicas < 1) throw std::invalid_argument("run config: replicas must be >= 1");
    if (mode == DataMode::finite_sum && n < 1)
      throw std::invalid_argument("run config: finite-sum mode needs n >= 1");
    if (!(overflow_threshold > 0.0))
      throw std::invalid_argument("run config: overflow threshold must be > 0");
  }
};

/// Centered ergodic averages, one row per non-diverged replica.
struct SampleMatrix {
  Eigen::MatrixXd rows;
  int diverged = 0;
  int requested = 0;
};

/// One step of the recursion, computed as x + (eta/b) sum_i a_i (y_i - a_i^T x) so the
/// d x d matrix H_k is never formed. Overflow or non-finite results set the sticky flag.
inline ChainState sgd_step(ChainState state, const Minibatch& batch, double eta,
                           double overflow_threshold = kDefaultOverflowThreshold) {
  if (state.diverged) return state;
  if (batch.inputs.cols() != state.x.size() || batch.labels.size() != batch.inputs.rows())
    throw std::invalid_argument("sgd_step: batch dimensions do not match the state");
  const double scale = eta / static_cast<double>(batch.size());
  const Eigen::VectorXd residual = batch.labels - batch.inputs * state.x;
  state.x.noalias() += scale * (batch.inputs.transpose() * residual);
  ++state.k;
  const double inf_norm = state.x.size() == 0 ? 0.0 : state.x.cwiseAbs().maxCoeff();
  if (!std::isfinite(inf_norm) || inf_norm > overflow_threshold) state.diverged = true;
  return state;
}

/// Purely multiplicative step Delta <- (I - (eta/b) H_k) Delta.
inline void multiplicative_step(Eigen::VectorXd& delta, const Minibatch& batch, double eta) {
  const double scale = eta / static_cast<double>(batch.size());
  const Eigen::VectorXd proj = batch.inputs * delta;
  delta.noalias() -= scale * (batch.inputs.transpose() * proj);
}

/// Supplies minibatch k of replica r in either data mode, plus the centering point x-bar.
class BatchSource {
 public:
  static BatchSource streaming(const StreamSpec& spec) {
    spec.validate();
    BatchSource src(spec);
    src.x_true_ = draw_true_parameter(spec);
    src.center_ = src.x_true_;
    return src;
  }

  static BatchSource finite_sum(const StreamSpec& spec, std::size_t n,
                                Sampling sampling = Sampling::without_replacement) {
    spec.validate();
    if (sampling == Sampling::without_replacement && n < static_cast<std::size_t>(spec.b))
      throw std::invalid_argument("finite-sum: n must be >= b when sampling without replacement");
    BatchSource src(spec);
    src.mode_ = DataMode::finite_sum;
    src.sampling_ = sampling;
    auto data = gen_finite_dataset(spec, n);
    src.x_true_ = data.x_true;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(data.A);
    if (qr.rank() < spec.d)
      throw std::domain_error("finite-sum: A^T A is singular (rank " + std::to_string(qr.rank()) +
                              " < d = " + std::to_string(spec.d) + ")");
    src.center_ = qr.solve(data.y);
    src.data_ = std::move(data);
    return src;
  }

  static BatchSource make(const StreamSpec& spec, const RunConfig& cfg) {
    return cfg.mode == DataMode::streaming ? streaming(spec)
                                           : finite_sum(spec, cfg.n, cfg.sampling);
  }

  Minibatch batch(std::uint64_t replica, std::int64_t k) const {
    if (mode_ == DataMode::streaming) return gen_stream_batch(spec_, x_true_, k, replica);
    const auto n = static_cast<std::uint64_t>(data_->A.rows());
    StreamRng rng(spec_.seed, "subsample", replica, static_cast<std::uint64_t>(k));
    Minibatch out{Eigen::MatrixXd(spec_.b, spec_.d), Eigen::VectorXd(spec_.b)};
    std::vector<std::uint64_t> idx;
    idx.reserve(static_cast<std::size_t>(spec_.b));
    if (sampling_ == Sampling::with_replacement) {
      for (int i = 0; i < spec_.b; ++i) idx.push_back(rng() % n);
    } else {
      // Floyd's algorithm: b distinct indices in O(b).
      std::unordered_set<std::uint64_t> chosen;
      for (std::uint64_t j = n - static_cast<std::uint64_t>(spec_.b); j < n; ++j) {
        const std::uint64_t t = rng() % (j + 1);
        const std::uint64_t pick = chosen.insert(t).second ? t : j;
        if (pick == j) chosen.insert(j);
        idx.push_back(pick);
      }
    }
    for (int i = 0; i < spec_.b; ++i) {
      const auto r = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]);
      out.inputs.row(i) = data_->A.row(r);
      out.labels[i] = data_->y[r];
    }
    return out;
  }

  const StreamSpec& spec() const { return spec_; }
  DataMode mode() const { return mode_; }
  const Eigen::VectorXd& x_true() const { return x_true_; }
  /// Mean of the stationary law: x_true when streaming, the least-squares solution otherwise.
  const Eigen::VectorXd& center() const { return center_; }
  const std::optional<FiniteDataset>& dataset() const { return data_; }

 private:
  explicit BatchSource(const StreamSpec& spec) : spec_(spec) {}

  StreamSpec spec_;
  DataMode mode_ = DataMode::streaming;
  Sampling sampling_ = Sampling::without_replacement;
  Eigen::VectorXd x_true_;
  Eigen::VectorXd center_;
  std::optional<FiniteDataset> data_;
};

struct ChainSummary {
  ChainState final;
  Eigen::VectorXd window_mean;  // (1/(K-K0)) sum_{k=K0+1}^{K} (x_k - center)
  std::int64_t diverged_at = -1;
};

struct NoObserver {
  void operator()(std::int64_t, const ChainState&) const {}
};

/// Runs replica `replica` for cfg.K steps. The observer sees every state k = 0..K
/// (stopping early if the chain diverges).
template <class Observer = NoObserver>
ChainSummary run_chain(const BatchSource& source, const RunConfig& cfg, Eigen::VectorXd x0,
                       std::uint64_t replica = 0, Observer&& observe = {}) {
  const auto& spec = source.spec();
  detail::check_dimension(spec, x0);
  ChainSummary out;
  out.final.x = std::move(x0);
  out.window_mean = Eigen::VectorXd::Zero(spec.d);
  observe(std::int64_t{0}, out.final);
  for (std::int64_t k = 1; k <= cfg.K; ++k) {
    out.final = sgd_step(std::move(out.final), source.batch(replica, k), spec.eta,
                         cfg.overflow_threshold);
    if (out.final.diverged) {
      out.diverged_at = k;
      break;
    }
    if (k > cfg.K0) out.window_mean += out.final.x - source.center();
    observe(k, out.final);
  }
  out.window_mean /= static_cast<double>(cfg.K - cfg.K0);
  return out;
}

struct CoupledRun {
  std::vector<double> diff_norms;  // ||x_k - x~_k||, k = 0..K
  ChainState first;
  ChainState second;
};

/// Two chains fed identical (M_k, q_k). The difference is propagated by the multiplicative
/// map alone, so it is bitwise independent of the labels.
inline CoupledRun run_coupled_pair(const BatchSource& source, const RunConfig& cfg,
                                   const Eigen::VectorXd& x0, const Eigen::VectorXd& x0_tilde,
                                   std::uint64_t replica = 0) {
  const auto& spec = source.spec();
  detail::check_dimension(spec, x0);
  detail::check_dimension(spec, x0_tilde);
  CoupledRun out;
  out.first.x = x0;
  out.second.x = x0_tilde;
  Eigen::VectorXd delta = x0 - x0_tilde;
  out.diff_norms.reserve(static_cast<std::size_t>(cfg.K + 1));
  out.diff_norms.push_back(delta.norm());
  for (std::int64_t k = 1; k <= cfg.K; ++k) {
    const auto batch = source.batch(replica, k);
    out.first = sgd_step(std::move(out.first), batch, spec.eta, cfg.overflow_threshold);
    out.second = sgd_step(std::move(out.second), batch, spec.eta, cfg.overflow_threshold);
    multiplicative_step(delta, batch, spec.eta);
    out.diff_norms.push_back(delta.norm());
  }
  return out;
}

/// Ensemble mean of ||x_k - x~_k||^2 over cfg.replicas coupled pairs, both starts drawn
/// from the default initial law.
inline std::vector<double> coupled_mean_square(const BatchSource& source, const RunConfig& cfg) {
  cfg.validate();
  const auto pairs = static_cast<std::size_t>(cfg.replicas);
  std::vector<std::vector<double>> per_pair(pairs);
  const auto& spec = source.spec();
  parallel_for(pairs, cfg.threads, [&](std::size_t r) {
    const auto x0 = draw_initial_point(spec, 2 * r);
    const auto x0t = draw_initial_point(spec, 2 * r + 1);
    per_pair[r] = run_coupled_pair(source, cfg, x0, x0t, r).diff_norms;
  });
  std::vector<double> mean(static_cast<std::size_t>(cfg.K + 1), 0.0);
  for (std::size_t k = 0; k < mean.size(); ++k) {
    long double s = 0.0L;
    for (const auto& p : per_pair) s += static_cast<long double>(p[k]) * p[k];
    mean[k] = static_cast<double>(s / static_cast<long double>(pairs));
  }
  return mean;
}

/// One centered ergodic average per replica. Diverged replicas are dropped and counted.
inline SampleMatrix ergodic_averages(const BatchSource& source, const RunConfig& cfg,
                                     const std::optional<Eigen::VectorXd>& x0 = std::nullopt) {
  cfg.validate();
  const auto& spec = source.spec();
  const auto n = static_cast<std::size_t>(cfg.replicas);
  std::vector<ChainSummary> runs(n);
  parallel_for(n, cfg.threads, [&](std::size_t r) {
    runs[r] = run_chain(source, cfg, x0 ? *x0 : draw_initial_point(spec, r), r);
  });
  SampleMatrix out;
  out.requested = cfg.replicas;
  for (const auto& run : runs) out.diverged += run.final.diverged ? 1 : 0;
  const int kept = cfg.replicas - out.diverged;
  if (kept == 0)
    throw std::runtime_error("ergodic_averages: all " + std::to_string(cfg.replicas) +
                             " replicas diverged (stepsize likely beyond the stable range)");
  out.rows.resize(kept, spec.d);
  Eigen::Index row = 0;
  for (const auto& run : runs)
    if (!run.final.diverged) out.rows.row(row++) = run.window_mean.transpose();
  return out;
}

inline SampleMatrix ergodic_averages(const StreamSpec& spec, const RunConfig& cfg) {
  return ergodic_averages(BatchSource::make(spec, cfg), cfg);
}

struct MomentTrajectory {
  std::vector<double> mean;       // E||x_k||^p for k = 0..K
  std::vector<double> std_error;  // bootstrap
  int replicas = 0;
  int diverged = 0;
  bool low_replica_warning = false;
};

/// Per-step ensemble average of ||x_k||^p. Diverged replicas are excluded from every k.
inline MomentTrajectory moment_trajectory(const BatchSource& source, const RunConfig& cfg,
                                          double p,
                                          const std::optional<Eigen::VectorXd>& x0 = std::nullopt,
                                          int bootstrap_resamples = 200) {
  cfg.validate();
  if (!(p >= 0.0)) throw std::invalid_argument("moment_trajectory: p must be >= 0");
  const auto& spec = source.spec();
  const auto n = static_cast<std::size_t>(cfg.replicas);
  const auto steps = static_cast<std::size_t>(cfg.K + 1);
  MomentTrajectory out;
  out.low_replica_warning = cfg.replicas < 100;
  if (out.low_replica_warning)
    std::cerr << "warning: moment_trajectory with " << cfg.replicas
              << " replicas (< 100); standard errors will be unreliable\n";
  std::vector<std::vector<double>> norms(n);
  std::vector<char> diverged(n, 0);
  parallel_for(n, cfg.threads, [&](std::size_t r) {
    auto& row = norms[r];
    row.assign(steps, 0.0);
    auto run = run_chain(source, cfg, x0 ? *x0 : draw_initial_point(spec, r), r,
                         [&](std::int64_t k, const ChainState& s) {
                           row[static_cast<std::size_t>(k)] = std::pow(s.x.norm(), p);
                         });
    diverged[r] = run.final.diverged ? 1 : 0;
  });
  std::vector<double> column;
  column.reserve(n);
  out.mean.resize(steps);
  out.std_error.resize(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    column.clear();
    for (std::size_t r = 0; r < n; ++r)
      if (!diverged[r]) column.push_back(norms[r][k]);
    if (column.empty()) throw std::runtime_error("moment_trajectory: all replicas diverged");
    out.mean[k] = stats::mean_and_se(column).mean;
    out.std_error[k] = stats::bootstrap_se_of_mean(column, bootstrap_resamples,
                                                   derive_seed(spec.seed, "bootstrap", k));
  }
  for (char dv : diverged) out.diverged += dv;
  out.replicas = cfg.replicas - out.diverged;
  return out;
}

}  // namespace sgdtail
