#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "sgdtail/rng.hpp"

namespace sgdtail::stats {

struct MeanSe {
  double mean = 0.0;
  double std_error = 0.0;
};

inline MeanSe mean_and_se(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean_and_se: empty sample");
  long double sum = 0.0L;
  for (double x : xs) sum += x;
  const long double mean = sum / static_cast<long double>(xs.size());
  if (xs.size() == 1) return {static_cast<double>(mean), 0.0};
  long double ss = 0.0L;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const long double var = ss / static_cast<long double>(xs.size() - 1);
  return {static_cast<double>(mean),
          static_cast<double>(std::sqrt(var / static_cast<long double>(xs.size())))};
}

inline double variance(std::span<const double> xs) {
  const auto m = mean_and_se(xs);
  return m.std_error * m.std_error * static_cast<double>(xs.size());
}

/// Linearly interpolated quantile (type 7).
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

inline double iqr(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return quantile(xs, 0.75) - quantile(xs, 0.25);
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_line: need at least two paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissa");
  return {sxy / sxx, my - sxy / sxx * mx};
}

/// Average ranks (ties share the mean rank), 1-based.
inline std::vector<double> ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("pearson: need at least two paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

/// Bootstrap standard error of the mean, resampling with a keyed stream.
inline double bootstrap_se_of_mean(std::span<const double> xs, int resamples,
                                   std::uint64_t seed) {
  if (xs.size() < 2 || resamples < 2) return 0.0;
  StreamRng rng(seed);
  const auto n = xs.size();
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < n; ++i) s += xs[rng() % n];
    m = static_cast<double>(s / static_cast<long double>(n));
  }
  return std::sqrt(variance(means));
}

}  // namespace sgdtail::stats
