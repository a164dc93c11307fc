#pragma once

// Synthetic linear-regression data: one-pass minibatch streams, fixed finite
// datasets, and a symmetric alpha-stable reference sampler.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgdtail/parallel.hpp"
#include "sgdtail/rng.hpp"

namespace sgdtail {

/// Shape of one input coordinate. The overall input is sigma * (i.i.d. coordinates).
/// Every kind has a continuous density on all of R and finite moments of every order.
struct InputDistribution {
  enum class Kind { gaussian, uniform, laplace, mixture };

  Kind kind = Kind::gaussian;
  double param = 1.0;           // uniform half-width or laplace scale (raw mode only)
  std::vector<double> weights;  // mixture of centered gaussians
  std::vector<double> scales;
  bool standardize = true;  // rescale each coordinate to unit variance

  static InputDistribution gaussian() { return {}; }
  static InputDistribution uniform(double half_width = std::numbers::sqrt3,
                                   bool standardize = true) {
    return {Kind::uniform, half_width, {}, {}, standardize};
  }
  static InputDistribution laplace(double scale = 1.0 / std::numbers::sqrt2,
                                   bool standardize = true) {
    return {Kind::laplace, scale, {}, {}, standardize};
  }
  static InputDistribution mixture(std::vector<double> weights, std::vector<double> scales,
                                   bool standardize = true) {
    return {Kind::mixture, 1.0, std::move(weights), std::move(scales), standardize};
  }

  void validate() const {
    if (kind == Kind::uniform || kind == Kind::laplace) {
      if (!(param > 0.0)) throw std::invalid_argument("input distribution: scale must be > 0");
    }
    if (kind == Kind::mixture) {
      if (weights.empty() || weights.size() != scales.size())
        throw std::invalid_argument("input distribution: mixture weights/scales mismatch");
      double total = 0.0;
      for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] > 0.0) || !(scales[i] > 0.0))
          throw std::invalid_argument("input distribution: mixture entries must be > 0");
        total += weights[i];
      }
      if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("input distribution: mixture weights must sum to 1");
    }
  }

  /// Variance of one coordinate as drawn by draw().
  double variance() const {
    if (standardize) return 1.0;
    return raw_variance();
  }

  double raw_variance() const {
    switch (kind) {
      case Kind::gaussian: return 1.0;
      case Kind::uniform: return param * param / 3.0;
      case Kind::laplace: return 2.0 * param * param;
      case Kind::mixture: {
        double v = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) v += weights[i] * scales[i] * scales[i];
        return v;
      }
    }
    return 1.0;
  }

  template <class Rng>
  double draw(Rng& rng, std::normal_distribution<double>& normal) const {
    const double norm = standardize ? 1.0 / std::sqrt(raw_variance()) : 1.0;
    switch (kind) {
      case Kind::gaussian: return normal(rng);
      case Kind::uniform: {
        const double u = 2.0 * rng.uniform_open() - 1.0;
        return norm * param * u;
      }
      case Kind::laplace: {
        const double u = rng.uniform_open() - 0.5;
        const double mag = -param * std::log(1.0 - 2.0 * std::abs(u));
        return norm * (u < 0.0 ? -mag : mag);
      }
      case Kind::mixture: {
        double u = rng.uniform_open();
        std::size_t j = 0;
        while (j + 1 < weights.size() && u > weights[j]) u -= weights[j++];
        return norm * scales[j] * normal(rng);
      }
    }
    return 0.0;
  }

  std::string name() const {
    switch (kind) {
      case Kind::gaussian: return "gaussian";
      case Kind::uniform: return "uniform";
      case Kind::laplace: return "laplace";
      case Kind::mixture: return "mixture";
    }
    return "unknown";
  }
};

/// Generative model: x_true ~ N(0, sigma_x^2 I), a_i ~ sigma * input, y_i = a_i^T x_true +
/// N(0, sigma_y^2). The seed keys every derived stream.
struct StreamSpec {
  int d = 1;
  int b = 1;
  double eta = 0.1;
  double sigma = 1.0;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  std::uint64_t seed = 0;
  InputDistribution input{};

  void validate() const {
    if (d < 1) throw std::invalid_argument("spec: d must be >= 1");
    if (b < 1) throw std::invalid_argument("spec: b must be >= 1");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw std::invalid_argument("spec: eta must be >= 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("spec: sigma must be > 0");
    if (!(sigma_x >= 0.0)) throw std::invalid_argument("spec: sigma_x must be >= 0");
    if (!(sigma_y > 0.0)) throw std::invalid_argument("spec: sigma_y must be > 0");
    input.validate();
  }

  double sigma2() const { return sigma * sigma; }
};

struct Minibatch {
  Eigen::MatrixXd inputs;  // b x d, one sample per row
  Eigen::VectorXd labels;  // b

  Eigen::Index size() const { return inputs.rows(); }
};

struct FiniteDataset {
  Eigen::MatrixXd A;  // n x d
  Eigen::VectorXd y;  // n
  Eigen::VectorXd x_true;
};

namespace detail {

inline void check_dimension(const StreamSpec& spec, const Eigen::VectorXd& x) {
  if (x.size() != spec.d)
    throw std::invalid_argument("dimension mismatch: vector has " + std::to_string(x.size()) +
                                " entries, spec.d = " + std::to_string(spec.d));
}

/// Fills one labelled sample. Inputs are drawn before the label noise, so changing
/// labels never perturbs the inputs of the same stream.
template <class Rng>
void fill_sample(const StreamSpec& spec, const Eigen::VectorXd& x_true, Rng& rng,
                 Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, double& label) {
  std::normal_distribution<double> normal;
  for (int j = 0; j < spec.d; ++j) row[j] = spec.sigma * spec.input.draw(rng, normal);
  std::normal_distribution<double> noise;
  label = row.dot(x_true.transpose()) + spec.sigma_y * noise(rng);
}

}  // namespace detail

/// x_true ~ N(0, sigma_x^2 I_d), keyed by the stream seed only.
inline Eigen::VectorXd draw_true_parameter(const StreamSpec& spec) {
  StreamRng rng(spec.seed, "x_true");
  std::normal_distribution<double> normal;
  Eigen::VectorXd x(spec.d);
  for (int j = 0; j < spec.d; ++j) x[j] = spec.sigma_x * normal(rng);
  return x;
}

/// Default initial point of replica r: N(0, sigma_x^2 I_d).
inline Eigen::VectorXd draw_initial_point(const StreamSpec& spec, std::uint64_t replica) {
  StreamRng rng(spec.seed, "x0", replica);
  std::normal_distribution<double> normal;
  Eigen::VectorXd x(spec.d);
  for (int j = 0; j < spec.d; ++j) x[j] = spec.sigma_x * normal(rng);
  return x;
}

/// Batch k (k >= 1) of the one-pass stream owned by `stream` (a replica index).
/// Pure function of (spec.seed, stream, k).
inline Minibatch gen_stream_batch(const StreamSpec& spec, const Eigen::VectorXd& x_true,
                                  std::int64_t k, std::uint64_t stream = 0) {
  detail::check_dimension(spec, x_true);
  if (k < 1) throw std::invalid_argument("gen_stream_batch: k must be >= 1");
  StreamRng rng(spec.seed, "batch", stream, static_cast<std::uint64_t>(k));
  Minibatch batch{Eigen::MatrixXd(spec.b, spec.d), Eigen::VectorXd(spec.b)};
  for (int i = 0; i < spec.b; ++i)
    detail::fill_sample(spec, x_true, rng, batch.inputs.row(i), batch.labels[i]);
  return batch;
}

inline constexpr std::size_t kDefaultMaxDatasetElements = std::size_t{1} << 27;

/// n i.i.d. samples from the model, row i keyed by (seed, i).
inline FiniteDataset gen_finite_dataset(const StreamSpec& spec, std::size_t n,
                                        std::size_t max_elements = kDefaultMaxDatasetElements) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("gen_finite_dataset: n must be >= 1");
  if (n * static_cast<std::size_t>(spec.d) > max_elements)
    throw std::length_error("gen_finite_dataset: n*d = " +
                            std::to_string(n * static_cast<std::size_t>(spec.d)) +
                            " exceeds the memory cap of " + std::to_string(max_elements));
  FiniteDataset data{Eigen::MatrixXd(static_cast<Eigen::Index>(n), spec.d),
                     Eigen::VectorXd(static_cast<Eigen::Index>(n)), draw_true_parameter(spec)};
  for (std::size_t i = 0; i < n; ++i) {
    StreamRng rng(spec.seed, "row", i);
    const auto r = static_cast<Eigen::Index>(i);
    detail::fill_sample(spec, data.x_true, rng, data.A.row(r), data.y[r]);
  }
  return data;
}

/// One symmetric alpha-stable variate with characteristic function exp(-|t|^alpha),
/// Chambers-Mallows-Stuck construction.
template <class Rng>
double draw_standard_sas(double alpha, Rng& rng) {
  const double v = std::numbers::pi * (rng.uniform_open() - 0.5);
  const double w = -std::log(rng.uniform_open());
  if (alpha == 1.0) return std::tan(v);
  const double num = std::sin(alpha * v) / std::pow(std::cos(v), 1.0 / alpha);
  return num * std::pow(std::cos(v - alpha * v) / w, (1.0 - alpha) / alpha);
}

/// n i.i.d. SaS(alpha, scale) variates, generated in keyed blocks so the result does
/// not depend on `threads`.
inline std::vector<double> sample_sas(double alpha, double scale, std::size_t n,
                                      std::uint64_t seed, int threads = 1) {
  if (!(alpha > 0.0 && alpha <= 2.0))
    throw std::invalid_argument("sample_sas: alpha must lie in (0, 2], got " +
                                std::to_string(alpha));
  if (!(scale > 0.0)) throw std::invalid_argument("sample_sas: scale must be > 0");
  constexpr std::size_t kBlock = 4096;
  std::vector<double> out(n);
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  parallel_for(blocks, threads, [&](std::size_t blk) {
    StreamRng rng(seed, "sas", blk);
    const std::size_t end = std::min(n, (blk + 1) * kBlock);
    for (std::size_t i = blk * kBlock; i < end; ++i) out[i] = scale * draw_standard_sas(alpha, rng);
  });
  return out;
}

}  // namespace sgdtail
