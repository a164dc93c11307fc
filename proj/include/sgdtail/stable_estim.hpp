#pragma once

// Block-sum log-moment estimator of 1/alpha for strictly stable samples. With
// K = K1 * K2 samples X_i and block sums Y_i of K1 consecutive samples,
//
//   1/alpha-hat = ( mean_i log||Y_i|| - mean_i log||X_i|| ) / log K1,
//
// which needs no knowledge of the stable scale. Several K1 values are combined by
// their median.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgdtail/stats.hpp"

namespace sgdtail {

struct EstimatorConfig {
  std::vector<int> k1_grid{2, 5, 10, 20, 50};
  int min_k2 = 2;
  bool flatten = false;  // treat every coordinate as a separate scalar sample
};

struct K1Estimate {
  int k1 = 0;
  double alpha = 0.0;  // raw, may exceed 2
  std::size_t n_used = 0;
};

struct AlphaEstimate {
  double alpha_hat = 0.0;  // median of per_k1, raw
  std::vector<K1Estimate> per_k1;
  std::size_t n_used = 0;
  std::size_t dropped_zero = 0;
  bool exceeds_two = false;

  double clipped() const { return std::min(alpha_hat, 2.0); }
};

namespace detail {

/// Samples as rows of a matrix, with zero-norm rows removed.
struct CleanSamples {
  Eigen::MatrixXd rows;
  std::size_t dropped = 0;
};

inline CleanSamples drop_zero_rows(const Eigen::MatrixXd& samples) {
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    if (samples.row(i).squaredNorm() > 0.0) keep.push_back(i);
  CleanSamples out;
  out.dropped = static_cast<std::size_t>(samples.rows()) - keep.size();
  out.rows.resize(static_cast<Eigen::Index>(keep.size()), samples.cols());
  for (std::size_t j = 0; j < keep.size(); ++j)
    out.rows.row(static_cast<Eigen::Index>(j)) = samples.row(keep[j]);
  return out;
}

inline Eigen::MatrixXd as_column(std::span<const double> xs) {
  return Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

inline Eigen::MatrixXd flatten_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out(m.rows() * m.cols(), 1);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(k++, 0) = m(i, j);
  return out;
}

/// Estimator on exactly K1 * K2 rows, all nonzero.
inline double block_estimate(const Eigen::MatrixXd& raw, int k1) {
  // The estimator is scale free; normalizing first keeps block sums of huge samples finite.
  const double peak = raw.cwiseAbs().maxCoeff();
  const Eigen::MatrixXd x = peak > 0.0 && std::isfinite(peak) ? Eigen::MatrixXd(raw / peak) : raw;
  const Eigen::Index total = x.rows();
  const Eigen::Index k2 = total / k1;
  long double log_x = 0.0L;
  for (Eigen::Index i = 0; i < total; ++i) log_x += std::log(x.row(i).norm());
  long double log_y = 0.0L;
  Eigen::RowVectorXd block(x.cols());
  for (Eigen::Index i = 0; i < k2; ++i) {
    block = x.middleRows(i * k1, k1).colwise().sum();
    log_y += std::log(block.norm());
  }
  const long double inv_alpha =
      (log_y / k2 - log_x / total) / std::log(static_cast<long double>(k1));
  return static_cast<double>(1.0L / inv_alpha);
}

}  // namespace detail

/// Estimate for one block size. Zero-norm samples are dropped first (reported in
/// n_used); the remaining count must be divisible by K1 with quotient >= 2.
inline K1Estimate estimate_alpha_k1(const Eigen::MatrixXd& samples, int k1) {
  if (k1 < 2) throw std::invalid_argument("estimate_alpha_k1: K1 must be >= 2");
  const auto clean = detail::drop_zero_rows(samples);
  const auto n = clean.rows.rows();
  if (n % k1 != 0)
    throw std::invalid_argument("estimate_alpha_k1: K1 = " + std::to_string(k1) +
                                " does not divide the sample count " + std::to_string(n));
  if (n / k1 < 2)
    throw std::invalid_argument("estimate_alpha_k1: need K2 = n / K1 >= 2");
  return {k1, detail::block_estimate(clean.rows, k1), static_cast<std::size_t>(n)};
}

inline K1Estimate estimate_alpha_k1(std::span<const double> samples, int k1) {
  return estimate_alpha_k1(detail::as_column(samples), k1);
}

/// Median over the K1 grid. For each K1 the largest prefix divisible by K1 is used.
inline AlphaEstimate estimate_alpha(const Eigen::MatrixXd& samples,
                                    const EstimatorConfig& cfg = {}) {
  if (samples.rows() < 100)
    throw std::invalid_argument("estimate_alpha: need at least 100 samples, got " +
                                std::to_string(samples.rows()));
  const auto clean =
      detail::drop_zero_rows(cfg.flatten ? detail::flatten_rows(samples) : samples);
  AlphaEstimate out;
  out.dropped_zero = clean.dropped;
  const Eigen::Index n = clean.rows.rows();
  std::vector<double> values;
  for (int k1 : cfg.k1_grid) {
    if (k1 < 2 || n / k1 < cfg.min_k2 || n / k1 < 2) continue;
    const Eigen::Index used = (n / k1) * k1;
    const double a = detail::block_estimate(clean.rows.topRows(used), k1);
    out.per_k1.push_back({k1, a, static_cast<std::size_t>(used)});
    values.push_back(a);
    out.n_used = std::max(out.n_used, static_cast<std::size_t>(used));
  }
  if (values.empty()) {
    std::ostringstream msg;
    msg << "estimate_alpha: no valid K1 in grid {";
    for (std::size_t i = 0; i < cfg.k1_grid.size(); ++i)
      msg << (i ? ", " : "") << cfg.k1_grid[i];
    msg << "} for " << n << " samples with min K2 = " << cfg.min_k2;
    throw std::invalid_argument(msg.str());
  }
  out.alpha_hat = stats::median(values);
  out.exceeds_two = out.alpha_hat > 2.0;
  return out;
}

inline AlphaEstimate estimate_alpha(std::span<const double> samples,
                                    const EstimatorConfig& cfg = {}) {
  return estimate_alpha(detail::as_column(samples), cfg);
}

}  // namespace sgdtail
