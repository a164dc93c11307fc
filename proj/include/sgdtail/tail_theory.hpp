#pragma once

// Tail-index theory for Gaussian inputs. One step of the recursion acts on a direction
// through ||M e_1||^2 = (1 - (a/b) X)^2 + (a/b)^2 X Y with X ~ chi2(b), Y ~ chi2(d-1),
// a = eta * sigma^2. From those draws:
//   h(s) = E ||M e_1||^s,   rho = E log ||M e_1||,
// and the tail index is the positive root of h(alpha) = 1 when rho < 0.
//
// Everything here works on a cached vector of per-draw log squared norms, so the same
// draws (common random numbers) serve every s, every bisection step, and every point of
// an (a, sigma^2) grid.

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgdtail/data_gen.hpp"
#include "sgdtail/parallel.hpp"
#include "sgdtail/rng.hpp"

namespace sgdtail {

struct TheoryQuery {
  double a = 0.1;  // effective stepsize eta * sigma^2
  int b = 1;
  int d = 1;

  static TheoryQuery from_stepsize(double eta, int b, int d, double sigma2) {
    return {eta * sigma2, b, d};
  }

  void validate() const {
    if (!(a > 0.0) || !std::isfinite(a)) throw std::invalid_argument("theory query: a must be > 0");
    if (b < 1) throw std::invalid_argument("theory query: b must be >= 1");
    if (d < 1) throw std::invalid_argument("theory query: d must be >= 1");
  }
};

enum class HMethod { monte_carlo, quadrature_1d };

struct HEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  HMethod method = HMethod::monte_carlo;
};

enum class TailStatus { solved, no_stationary, bracket_exhausted };
enum class Regime { I, II, III };

inline const char* to_string(TailStatus s) {
  switch (s) {
    case TailStatus::solved: return "Solved";
    case TailStatus::no_stationary: return "NoStationary";
    case TailStatus::bracket_exhausted: return "BracketExhausted";
  }
  return "?";
}

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::I: return "I";
    case Regime::II: return "II";
    case Regime::III: return "III";
  }
  return "?";
}

struct TailIndexResult {
  std::optional<double> alpha;
  double alpha_std_error = 0.0;  // delta method: se(h(alpha)) / h'(alpha)
  std::pair<double, double> bracket{0.0, 0.0};
  TailStatus status = TailStatus::no_stationary;
  HEstimate rho;
  Regime regime = Regime::III;
};

inline constexpr double kDefaultTailTolerance = 1e-3;
inline constexpr double kBracketCap = 64.0;
inline constexpr std::size_t kDefaultTheorySamples = 1'000'000;
inline constexpr std::size_t kMaxRhoSamples = 100'000'000;
inline constexpr double kBoundaryBand = 0.05;

// ---------------------------------------------------------------------------
// Chi-square draws

namespace detail {
inline constexpr std::size_t kChiBlock = 1 << 16;
}

/// Nested chi-square draws for increasing degrees of freedom: level j equals level j-1
/// plus an independent chi2(dofs[j] - dofs[j-1]) increment, so every draw is monotone
/// across levels. A single-level call reproduces the plain draws of the same seed.
inline std::vector<std::vector<double>> draw_nested_chi_square(std::span<const int> dofs,
                                                               std::size_t n,
                                                               std::uint64_t seed,
                                                               std::string_view tag) {
  for (std::size_t j = 0; j < dofs.size(); ++j) {
    if (dofs[j] < 0 || (j > 0 && dofs[j] < dofs[j - 1]))
      throw std::invalid_argument("nested chi-square: dofs must be nonnegative and sorted");
  }
  std::vector<std::vector<double>> out(dofs.size(), std::vector<double>(n, 0.0));
  const std::size_t blocks = (n + detail::kChiBlock - 1) / detail::kChiBlock;
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t lo = blk * detail::kChiBlock;
    const std::size_t hi = std::min(n, lo + detail::kChiBlock);
    int prev = 0;
    for (std::size_t j = 0; j < dofs.size(); ++j) {
      const int inc = dofs[j] - prev;
      for (std::size_t i = lo; i < hi; ++i) out[j][i] = j > 0 ? out[j - 1][i] : 0.0;
      if (inc > 0) {
        StreamRng rng(seed, tag, blk, j);
        std::chi_squared_distribution<double> chi(inc);
        for (std::size_t i = lo; i < hi; ++i) out[j][i] += chi(rng);
      }
      prev = dofs[j];
    }
  }
  return out;
}

struct ChiSquareDraws {
  std::vector<double> x;  // chi2(b)
  std::vector<double> y;  // chi2(d - 1), zero when d = 1
};

inline ChiSquareDraws draw_chi_square(int b, int d, std::size_t n, std::uint64_t seed) {
  const int bx[] = {b};
  const int dy[] = {d - 1};
  return {std::move(draw_nested_chi_square(bx, n, seed, "chi2_x")[0]),
          std::move(draw_nested_chi_square(dy, n, seed, "chi2_y")[0])};
}

// ---------------------------------------------------------------------------
// Per-draw log squared norms and the functionals built on them

/// Holds L_i = log ||M_i u||^2 for i.i.d. draws. h(s) = mean exp((s/2) L_i) and
/// rho = mean L_i / 2. The sample h is exactly convex in s with h(0) = 1.
class LogNormTerms {
 public:
  LogNormTerms() = default;
  explicit LogNormTerms(std::vector<double> terms) : terms_(std::move(terms)) {}

  /// Terms for the Gaussian-input chi-square representation at stepsize a.
  static LogNormTerms from_chi_square(double a, int b, std::span<const double> x,
                                      std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("chi-square draws size mismatch");
    std::vector<double> t(x.size());
    const long double c = static_cast<long double>(a) / b;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const long double one_minus = 1.0L - c * x[i];
      const long double v = one_minus * one_minus + c * c * x[i] * y[i];
      t[i] = static_cast<double>(std::log(v));
    }
    return LogNormTerms(std::move(t));
  }

  std::size_t size() const { return terms_.size(); }
  std::span<const double> terms() const { return terms_; }

  HEstimate rho() const {
    if (terms_.empty()) throw std::logic_error("LogNormTerms: no draws");
    long double sum = 0.0L, sq = 0.0L;
    for (double t : terms_) sum += t;
    const long double mean = sum / static_cast<long double>(terms_.size());
    for (double t : terms_) sq += (t - mean) * (t - mean);
    const long double n = static_cast<long double>(terms_.size());
    const long double sd = terms_.size() > 1 ? std::sqrt(sq / (n - 1)) : 0.0L;
    return {static_cast<double>(mean / 2), static_cast<double>(sd / std::sqrt(n) / 2),
            terms_.size(), HMethod::monte_carlo};
  }

  /// Mean of exp((s/2) L_i) evaluated with a max shift, so large s cannot overflow the
  /// intermediate sums.
  HEstimate h(double s) const {
    if (s == 0.0) return {1.0, 0.0, terms_.size(), HMethod::monte_carlo};
    if (!(s > 0.0)) throw std::invalid_argument("h(s): s must be >= 0");
    if (terms_.empty()) throw std::logic_error("LogNormTerms: no draws");
    const double half = 0.5 * s;
    double shift = -std::numeric_limits<double>::infinity();
    for (double t : terms_) shift = std::max(shift, half * t);
    long double sum = 0.0L, sq = 0.0L;
    for (double t : terms_) {
      const long double e = std::exp(static_cast<long double>(half * t - shift));
      sum += e;
      sq += e * e;
    }
    const long double n = static_cast<long double>(terms_.size());
    const long double mean = sum / n;
    const long double var = n > 1 ? std::max(0.0L, (sq / n - mean * mean) * n / (n - 1)) : 0.0L;
    const long double scale = std::exp(static_cast<long double>(shift));
    return {static_cast<double>(scale * mean), static_cast<double>(scale * std::sqrt(var / n)),
            terms_.size(), HMethod::monte_carlo};
  }

  /// d/ds of the sample h.
  double h_derivative(double s) const {
    long double sum = 0.0L;
    for (double t : terms_) sum += 0.5L * t * std::exp(0.5L * s * t);
    return static_cast<double>(sum / static_cast<long double>(terms_.size()));
  }

 private:
  std::vector<double> terms_;
};

struct RootSearch {
  std::optional<double> alpha;
  double alpha_std_error = 0.0;
  std::pair<double, double> bracket{0.0, 0.0};
  TailStatus status = TailStatus::no_stationary;
};

/// Positive root of the sample h(s) = 1, given the sample slope at 0 is negative.
/// Doubles s from `tol` until h(s) > 1 + 4 se (or s passes the cap), then bisects.
inline RootSearch solve_h_equals_one(const LogNormTerms& terms, double tol,
                                     double cap = kBracketCap) {
  if (!(tol > 0.0)) throw std::invalid_argument("tail index: tol must be > 0");
  RootSearch out;
  double lo = 0.0;
  double s = tol;
  for (;;) {
    const auto hs = terms.h(s);
    if (hs.value > 1.0 + 4.0 * hs.std_error) break;
    if (hs.value < 1.0) lo = s;
    if (s >= cap) {
      out.status = TailStatus::bracket_exhausted;
      out.bracket = {lo, cap};
      return out;
    }
    s = std::min(2.0 * s, cap);
  }
  double hi = s;
  out.bracket = {lo, hi};
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (terms.h(mid).value < 1.0 ? lo : hi) = mid;
  }
  const double alpha = 0.5 * (lo + hi);
  out.alpha = alpha;
  out.status = TailStatus::solved;
  const double slope = terms.h_derivative(alpha);
  out.alpha_std_error = slope > 0.0 ? terms.h(alpha).std_error / slope
                                    : std::numeric_limits<double>::infinity();
  return out;
}

inline Regime regime_of(TailStatus status, std::optional<double> alpha) {
  if (status == TailStatus::no_stationary) return Regime::III;
  if (status == TailStatus::bracket_exhausted) return Regime::I;
  return *alpha < 2.0 ? Regime::II : Regime::I;
}

/// Regime with the extra "II-boundary" label for solved alpha within 0.05 of 2.
inline std::string regime_label(const TailIndexResult& r) {
  if (r.status == TailStatus::solved && std::abs(*r.alpha - 2.0) < kBoundaryBand)
    return "II-boundary";
  return to_string(r.regime);
}

// ---------------------------------------------------------------------------
// Closed forms

/// h(2) = 1 - 2a + (a^2 / b)(d + b + 1).
inline double h2_closed_form(double a, int b, int d) {
  return 1.0 - 2.0 * a + (a * a / b) * (d + b + 1);
}
inline double h2_closed_form(const TheoryQuery& q) { return h2_closed_form(q.a, q.b, q.d); }

/// eta_crit = 2b / (sigma^2 (d + b + 1)); tail index is exactly 2 there.
inline double critical_stepsize(int b, int d, double sigma2) {
  if (b < 1 || d < 1 || !(sigma2 > 0.0))
    throw std::invalid_argument("critical_stepsize: arguments must be positive");
  return 2.0 * b / (sigma2 * (d + b + 1));
}

// ---------------------------------------------------------------------------
// Monte Carlo estimates

inline HEstimate estimate_h(const TheoryQuery& q, double s, std::size_t n, std::uint64_t seed) {
  q.validate();
  if (!(s >= 0.0)) throw std::invalid_argument("estimate_h: s must be >= 0");
  if (s == 0.0) return {1.0, 0.0, n, HMethod::monte_carlo};
  const auto draws = draw_chi_square(q.b, q.d, n, seed);
  return LogNormTerms::from_chi_square(q.a, q.b, draws.x, draws.y).h(s);
}

namespace detail {

/// rho over n draws without keeping them. Blocks are keyed as in draw_chi_square, so the
/// first m draws agree with any smaller call on the same seed.
inline HEstimate streamed_rho(const TheoryQuery& q, std::size_t n, std::uint64_t seed) {
  long double sum = 0.0L, sq = 0.0L;
  const std::size_t blocks = (n + kChiBlock - 1) / kChiBlock;
  const long double c = static_cast<long double>(q.a) / q.b;
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t m = std::min(n, (blk + 1) * kChiBlock) - blk * kChiBlock;
    StreamRng rx(seed, "chi2_x", blk, 0);
    StreamRng ry(seed, "chi2_y", blk, 0);
    std::chi_squared_distribution<double> cx(q.b);
    std::optional<std::chi_squared_distribution<double>> cy;
    if (q.d > 1) cy.emplace(q.d - 1);
    for (std::size_t i = 0; i < m; ++i) {
      const long double x = cx(rx);
      const long double y = cy ? (*cy)(ry) : 0.0L;
      const long double one_minus = 1.0L - c * x;
      const long double t = std::log(one_minus * one_minus + c * c * x * y);
      sum += t;
      sq += t * t;
    }
  }
  const long double nn = static_cast<long double>(n);
  const long double mean = sum / nn;
  const long double var = std::max(0.0L, (sq / nn - mean * mean) * nn / (nn - 1));
  return {static_cast<double>(mean / 2), static_cast<double>(std::sqrt(var / nn) / 2), n,
          HMethod::monte_carlo};
}

}  // namespace detail

inline HEstimate estimate_rho(const TheoryQuery& q, std::size_t n, std::uint64_t seed) {
  q.validate();
  if (n < 2) throw std::invalid_argument("estimate_rho: need n >= 2");
  return detail::streamed_rho(q, n, seed);
}

/// Sign decision for rho at two standard errors. An undecided estimate is re-run with
/// ten times the draws, up to kMaxRhoSamples; a still-undecided estimate falls back to
/// the sign of the point value.
inline HEstimate decide_rho(const TheoryQuery& q, HEstimate rho, std::uint64_t seed) {
  std::size_t n = rho.n_samples;
  while (std::abs(rho.value) < 2.0 * rho.std_error && n < kMaxRhoSamples) {
    n = std::min(n * 10, kMaxRhoSamples);
    rho = detail::streamed_rho(q, n, seed);
  }
  return rho;
}

inline TailIndexResult tail_index_from_terms(const LogNormTerms& terms, double tol,
                                             HEstimate rho) {
  TailIndexResult out;
  out.rho = rho;
  if (rho.value >= 0.0) {
    out.status = TailStatus::no_stationary;
    out.regime = Regime::III;
    return out;
  }
  const auto root = solve_h_equals_one(terms, tol);
  out.alpha = root.alpha;
  out.alpha_std_error = root.alpha_std_error;
  out.bracket = root.bracket;
  out.status = root.status;
  out.regime = regime_of(out.status, out.alpha);
  return out;
}

inline TailIndexResult solve_tail_index(const TheoryQuery& q, double tol = kDefaultTailTolerance,
                                        std::size_t n = kDefaultTheorySamples,
                                        std::uint64_t seed = 0) {
  q.validate();
  const auto draws = draw_chi_square(q.b, q.d, n, seed);
  const auto terms = LogNormTerms::from_chi_square(q.a, q.b, draws.x, draws.y);
  return tail_index_from_terms(terms, tol, decide_rho(q, terms.rho(), seed));
}

inline Regime classify_regime(double eta, int b, int d, double sigma2,
                              std::size_t n = kDefaultTheorySamples, std::uint64_t seed = 0) {
  if (!(eta > 0.0) || !(sigma2 > 0.0) || b < 1 || d < 1)
    throw std::invalid_argument("classify_regime: arguments must be positive");
  return solve_tail_index(TheoryQuery::from_stepsize(eta, b, d, sigma2), kDefaultTailTolerance,
                          n, seed)
      .regime;
}

/// Stepsize whose tail index equals `target`, at fixed draws. Uses the sign of
/// h_eta(target) - 1, which is negative exactly when alpha(eta) > target.
inline double stepsize_for_tail_index(double target, int b, int d, double sigma2,
                                      std::size_t n = kDefaultTheorySamples,
                                      std::uint64_t seed = 0, double rel_tol = 1e-10) {
  if (!(target > 0.0)) throw std::invalid_argument("stepsize_for_tail_index: target must be > 0");
  const double crit = critical_stepsize(b, d, sigma2);
  if (target == 2.0) return crit;
  const auto draws = draw_chi_square(b, d, n, seed);
  auto above = [&](double eta) {
    return LogNormTerms::from_chi_square(eta * sigma2, b, draws.x, draws.y).h(target).value > 1.0;
  };
  double lo = crit, hi = crit;
  if (target < 2.0) {
    while (!above(hi)) {
      lo = hi;
      hi *= 2.0;
      if (hi > 1e6 * crit) throw std::runtime_error("stepsize_for_tail_index: no upper bracket");
    }
  } else {
    while (above(lo)) {
      hi = lo;
      lo *= 0.5;
      if (lo < 1e-12 * crit) throw std::runtime_error("stepsize_for_tail_index: no lower bracket");
    }
  }
  while ((hi - lo) > rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    (above(mid) ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Explicit-matrix estimates for arbitrary input laws

enum class NormKind {
  operator_norm,  // ||I - (eta/b) H||_2, the sub-multiplicative upper bound
  first_column,   // ||(I - (eta/b) H) e_1||, the one-direction growth factor
};

inline constexpr int kMaxHatDimension = 64;

/// Per-draw log ||M||^2 (or log ||M e_1||^2) from explicit minibatch matrices.
inline LogNormTerms hat_log_terms(const InputDistribution& input, double sigma, double eta, int b,
                                  int d, std::size_t n, std::uint64_t seed, NormKind kind,
                                  int threads = 1) {
  input.validate();
  if (d < 1 || d > kMaxHatDimension)
    throw std::invalid_argument("h-hat: d must lie in [1, 64] for dense spectral norms");
  if (b < 1 || !(eta >= 0.0) || !(sigma > 0.0))
    throw std::invalid_argument("h-hat: invalid stepsize, batch or scale");
  std::vector<double> t(n);
  const std::size_t blocks = (n + 4095) / 4096;
  const double scale = eta / b;
  parallel_for(blocks, threads, [&](std::size_t blk) {
    StreamRng rng(seed, "h_hat", blk);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd A(b, d);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(d);
    const std::size_t end = std::min(n, (blk + 1) * 4096);
    for (std::size_t i = blk * 4096; i < end; ++i) {
      for (int r = 0; r < b; ++r)
        for (int c = 0; c < d; ++c) A(r, c) = sigma * input.draw(rng, normal);
      if (kind == NormKind::first_column) {
        Eigen::VectorXd col = -scale * (A.transpose() * A.col(0));
        col[0] += 1.0;
        t[i] = std::log(col.squaredNorm());
      } else {
        Eigen::MatrixXd M = -scale * (A.transpose() * A);
        M.diagonal().array() += 1.0;
        eig.compute(M, Eigen::EigenvaluesOnly);
        const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
        t[i] = 2.0 * std::log(top);
      }
    }
  });
  return LogNormTerms(std::move(t));
}

inline HEstimate estimate_h_hat(const InputDistribution& input, double sigma, double eta, int b,
                                int d, double s, std::size_t n, std::uint64_t seed,
                                NormKind kind = NormKind::operator_norm, int threads = 1) {
  if (!(s >= 0.0)) throw std::invalid_argument("estimate_h_hat: s must be >= 0");
  if (s == 0.0) return {1.0, 0.0, n, HMethod::monte_carlo};
  return hat_log_terms(input, sigma, eta, b, d, n, seed, kind, threads).h(s);
}

/// Root of h-hat(s) = 1. With the operator norm this lower-bounds the true tail index.
inline TailIndexResult solve_tail_index_hat(const InputDistribution& input, double sigma,
                                            double eta, int b, int d, double tol, std::size_t n,
                                            std::uint64_t seed,
                                            NormKind kind = NormKind::operator_norm,
                                            int threads = 1) {
  const auto terms = hat_log_terms(input, sigma, eta, b, d, n, seed, kind, threads);
  return tail_index_from_terms(terms, tol, terms.rho());
}

// ---------------------------------------------------------------------------
// Scalar case (d = 1, b = 1) by quadrature: h(s) = E|1 - a Z^2|^s, rho = E log|1 - a Z^2|

namespace detail {

inline constexpr double kQuadLimit = 12.0;

/// 2 * int_0^12 g(z) phi(z) dz, split at the kink z* = 1/sqrt(a).
template <class G>
HEstimate gaussian_even_expectation(double a, G g) {
  using boost::math::quadrature::gauss_kronrod;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  auto integrand = [&](double z) { return g(z) * inv_sqrt_2pi * std::exp(-0.5 * z * z); };
  const double kink = 1.0 / std::sqrt(a);
  double total = 0.0, err_total = 0.0;
  auto piece = [&](double lo, double hi) {
    double err = 0.0;
    total += gauss_kronrod<double, 61>::integrate(integrand, lo, hi, 25, 1e-13, &err);
    err_total += err;
  };
  if (kink < kQuadLimit) {
    piece(0.0, kink);
    piece(kink, kQuadLimit);
  } else {
    piece(0.0, kQuadLimit);
  }
  return {2.0 * total, 2.0 * err_total, 0, HMethod::quadrature_1d};
}

}  // namespace detail

inline HEstimate quadrature_h_1d(double a, double s) {
  if (!(a > 0.0) || !(s >= 0.0)) throw std::invalid_argument("quadrature_h_1d: bad arguments");
  if (s == 0.0) return {1.0, 0.0, 0, HMethod::quadrature_1d};
  return detail::gaussian_even_expectation(
      a, [&](double z) { return std::pow(std::abs(1.0 - a * z * z), s); });
}

inline HEstimate quadrature_rho_1d(double a) {
  if (!(a > 0.0)) throw std::invalid_argument("quadrature_rho_1d: a must be > 0");
  return detail::gaussian_even_expectation(
      a, [&](double z) { return std::log(std::abs(1.0 - a * z * z)); });
}

/// Tail index of the scalar recursion from quadrature alone.
inline std::optional<double> quadrature_tail_index_1d(double a, double tol = 1e-8) {
  if (quadrature_rho_1d(a).value >= 0.0) return std::nullopt;
  double lo = 0.0, hi = 0.25;
  while (quadrature_h_1d(a, hi).value <= 1.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > kBracketCap) return std::nullopt;
  }
  boost::math::tools::eps_tolerance<double> stop(40);
  std::uintmax_t iters = 100;
  const auto [l, r] = boost::math::tools::toms748_solve(
      [&](double s) { return quadrature_h_1d(a, s).value - 1.0; }, std::max(lo, tol), hi, stop,
      iters);
  return 0.5 * (l + r);
}

}  // namespace sgdtail
