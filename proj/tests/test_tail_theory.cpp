#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sgdtail/sgd_engine.hpp"
#include "sgdtail/stable_estim.hpp"
#include "sgdtail/tail_theory.hpp"

using namespace sgdtail;

namespace {
constexpr std::size_t kN = 1'000'000;

double joint(double a, double b) { return std::sqrt(a * a + b * b); }
}  // namespace

TEST(ClosedForms, H2Values) {
  const double a_crit = 2.0 * 5 / (10 + 5 + 1);
  EXPECT_DOUBLE_EQ(h2_closed_form(a_crit, 5, 10), 1.0);
  EXPECT_EQ(h2_closed_form(0.0, 3, 7), 1.0);
  EXPECT_DOUBLE_EQ(h2_closed_form(0.1, 5, 10), 0.832);
}

TEST(ClosedForms, CriticalStepsize) {
  EXPECT_DOUBLE_EQ(critical_stepsize(1, 100, 1.0), 2.0 / 102.0);
  EXPECT_DOUBLE_EQ(critical_stepsize(5, 10, 1.0), 0.625);
  EXPECT_DOUBLE_EQ(critical_stepsize(5, 10, 2.0), 0.3125);
  EXPECT_THROW(critical_stepsize(0, 10, 1.0), std::invalid_argument);
}

TEST(EstimateH, OrderZeroIsExactlyOne) {
  const auto h = estimate_h({0.3, 2, 4}, 0.0, kN, 1);
  EXPECT_EQ(h.value, 1.0);
  EXPECT_EQ(h.std_error, 0.0);
}

TEST(EstimateH, SecondOrderMatchesClosedForm) {
  const TheoryQuery qs[] = {{0.05, 1, 10}, {0.2, 5, 100}, {0.4, 4, 4}};
  for (const auto& q : qs) {
    const auto h = estimate_h(q, 2.0, kN, 11);
    EXPECT_NEAR(h.value, h2_closed_form(q), 4.0 * h.std_error) << q.a << " " << q.b << " " << q.d;
  }
}

TEST(EstimateH, ScalarCaseMatchesQuadrature) {
  const auto mc = estimate_h({0.3, 1, 1}, 1.0, kN, 12);
  EXPECT_NEAR(mc.value, quadrature_h_1d(0.3, 1.0).value, 4.0 * mc.std_error);
}

TEST(EstimateH, LargeOrderStaysFinite) {
  const auto h = estimate_h({0.9, 1, 3}, 64.0, 100'000, 13);
  EXPECT_TRUE(std::isfinite(h.value));
  EXPECT_GT(h.value, 1.0);
}

TEST(Quadrature, ReproducesSecondMomentExactly) {
  for (double a : {0.1, 0.3, 0.6, 1.2, 3.0})
    EXPECT_NEAR(quadrature_h_1d(a, 2.0).value, 1.0 - 2.0 * a + 3.0 * a * a, 1e-9) << a;
}

TEST(EstimateRho, VanishingStepsize) {
  const auto r = estimate_rho({1e-6, 1, 1}, kN, 14);
  EXPECT_LT(r.value, 0.0);
  EXPECT_LT(std::abs(r.value), 1e-4);
  EXPECT_NEAR(r.value / -1e-6, 1.0, 0.01);
}

TEST(EstimateRho, NegativeAtCriticalPoint) {
  const auto r = estimate_rho({0.625, 5, 10}, kN, 15);
  EXPECT_LT(r.value + 2.0 * r.std_error, 0.0);
}

TEST(EstimateRho, ScalarCaseMatchesQuadrature) {
  const auto r = estimate_rho({0.5, 1, 1}, kN, 16);
  EXPECT_NEAR(r.value, quadrature_rho_1d(0.5).value, 4.0 * r.std_error);
}

TEST(EstimateRho, StreamedMatchesStoredDraws) {
  const TheoryQuery q{0.4, 3, 6};
  const auto d = draw_chi_square(3, 6, 200'000, 17);
  const auto stored = LogNormTerms::from_chi_square(0.4, 3, d.x, d.y).rho();
  const auto streamed = estimate_rho(q, 200'000, 17);
  EXPECT_NEAR(stored.value, streamed.value, 1e-12);
}

TEST(HCurve, ConvexWithUnitIntercept) {
  const auto d = draw_chi_square(5, 10, 200'000, 18);
  const auto terms = LogNormTerms::from_chi_square(0.6, 5, d.x, d.y);
  EXPECT_EQ(terms.h(0.0).value, 1.0);
  std::vector<HEstimate> hs;
  for (double s = 0.25; s <= 4.0 + 1e-12; s += 0.25) hs.push_back(terms.h(s));
  for (std::size_t i = 1; i + 1 < hs.size(); ++i) {
    const double second = hs[i - 1].value - 2.0 * hs[i].value + hs[i + 1].value;
    EXPECT_GE(second, -4.0 * joint(hs[i - 1].std_error, hs[i + 1].std_error));
  }
}

TEST(HCurve, SlopeAtZeroIsRho) {
  const TheoryQuery q{0.6, 5, 10};
  const auto d = draw_chi_square(5, 10, kN, 19);
  const auto terms = LogNormTerms::from_chi_square(q.a, q.b, d.x, d.y);
  const double eps = 1e-4;
  const double fd = (terms.h(eps).value - 1.0) / eps;
  const auto rho = estimate_rho(q, kN, 20);
  EXPECT_NEAR(fd, rho.value, 4.0 * joint(rho.std_error, rho.std_error));
}

TEST(SolveTailIndex, CriticalPointGivesTwo) {
  const auto r = solve_tail_index({0.625, 5, 10}, kDefaultTailTolerance, kN, 21);
  ASSERT_EQ(r.status, TailStatus::solved);
  EXPECT_NEAR(*r.alpha, 2.0, 0.05);
  EXPECT_LT(r.rho.value, 0.0);
  EXPECT_EQ(regime_label(r), "II-boundary");
}

TEST(SolveTailIndex, HalfCriticalIsRegimeOne) {
  const auto r = solve_tail_index({0.3125, 5, 10}, kDefaultTailTolerance, kN, 22);
  EXPECT_TRUE(r.status == TailStatus::solved || r.status == TailStatus::bracket_exhausted);
  if (r.alpha) EXPECT_GT(*r.alpha, 2.0);
  EXPECT_EQ(r.regime, Regime::I);
}

TEST(SolveTailIndex, RootSatisfiesHEqualsOne) {
  const TheoryQuery q{0.66, 5, 10};
  const auto d = draw_chi_square(5, 10, kN, 23);
  const auto terms = LogNormTerms::from_chi_square(q.a, q.b, d.x, d.y);
  const auto r = tail_index_from_terms(terms, 1e-6, terms.rho());
  ASSERT_EQ(r.status, TailStatus::solved);
  const auto h = terms.h(*r.alpha);
  EXPECT_NEAR(h.value, 1.0, 1e-5);
  EXPECT_GT(r.alpha_std_error, 0.0);
}

TEST(SolveTailIndex, ScalarCaseMatchesQuadratureRoot) {
  const auto quad = quadrature_tail_index_1d(1.2);
  ASSERT_TRUE(quad.has_value());
  const auto r = solve_tail_index({1.2, 1, 1}, kDefaultTailTolerance, kN, 24);
  ASSERT_EQ(r.status, TailStatus::solved);
  EXPECT_NEAR(*r.alpha, *quad, 0.05);
}

TEST(SolveTailIndex, HugeStepHasNoStationaryLaw) {
  const auto r = solve_tail_index({1000.0, 5, 10}, kDefaultTailTolerance, 100'000, 25);
  EXPECT_EQ(r.status, TailStatus::no_stationary);
  EXPECT_FALSE(r.alpha.has_value());
  EXPECT_EQ(r.regime, Regime::III);
}

TEST(SolveTailIndex, TinyStepExhaustsBracket) {
  const auto r = solve_tail_index({0.01, 5, 10}, kDefaultTailTolerance, 100'000, 26);
  EXPECT_EQ(r.status, TailStatus::bracket_exhausted);
  EXPECT_EQ(r.regime, Regime::I);
}

TEST(ClassifyRegime, ThreeRegimes) {
  EXPECT_EQ(classify_regime(0.3125, 5, 10, 1.0, kN, 27), Regime::I);
  EXPECT_EQ(classify_regime(1000.0, 5, 10, 1.0, 100'000, 28), Regime::III);
  // just above the critical stepsize the law is heavy tailed as long as rho < 0
  const double eta = 1.05 * critical_stepsize(5, 10, 1.0);
  const auto res = solve_tail_index(TheoryQuery::from_stepsize(eta, 5, 10, 1.0),
                                    kDefaultTailTolerance, kN, 29);
  ASSERT_LT(res.rho.value, 0.0);
  EXPECT_EQ(res.regime, Regime::II);
}

TEST(ClassifyRegime, TwelveTenthsCriticalFollowsRhoSign) {
  const double eta = 1.2 * critical_stepsize(5, 10, 1.0);
  const auto res = solve_tail_index(TheoryQuery::from_stepsize(eta, 5, 10, 1.0),
                                    kDefaultTailTolerance, kN, 30);
  EXPECT_EQ(res.regime, res.rho.value < 0.0 ? Regime::II : Regime::III);
}

TEST(SignIdentity, AlphaAboveTwoIffH2BelowOneIffBelowCritical) {
  for (double eta : {0.05, 0.1, 0.2, 0.3, 0.5})
    for (int b : {1, 2, 4, 8, 16}) {
      const double crit = critical_stepsize(b, 10, 1.0);
      if (std::abs(eta / crit - 1.0) < 0.05) continue;
      const auto r = solve_tail_index(TheoryQuery::from_stepsize(eta, b, 10, 1.0),
                                      kDefaultTailTolerance, 200'000, 31);
      const bool above_two = r.status == TailStatus::bracket_exhausted ||
                             (r.status == TailStatus::solved && *r.alpha > 2.0);
      EXPECT_EQ(above_two, h2_closed_form(eta, b, 10) < 1.0) << eta << " " << b;
      EXPECT_EQ(above_two, eta < crit) << eta << " " << b;
    }
}

TEST(StepsizeForTailIndex, InvertsTheSolver) {
  for (double target : {1.5, 3.0}) {
    const double eta = stepsize_for_tail_index(target, 5, 10, 1.0, 200'000, 32);
    const auto r = solve_tail_index(TheoryQuery::from_stepsize(eta, 5, 10, 1.0), 1e-4, 200'000, 32);
    ASSERT_EQ(r.status, TailStatus::solved);
    EXPECT_NEAR(*r.alpha, target, 1e-3);
  }
  EXPECT_DOUBLE_EQ(stepsize_for_tail_index(2.0, 5, 10, 1.0), 0.625);
}

TEST(NestedDraws, MonotoneAcrossLevels) {
  const int dofs[] = {1, 3, 8};
  const auto levels = draw_nested_chi_square(dofs, 10'000, 33, "chi2_x");
  for (std::size_t i = 0; i < 10'000; ++i) {
    EXPECT_LE(levels[0][i], levels[1][i]);
    EXPECT_LE(levels[1][i], levels[2][i]);
  }
  const int single[] = {1};
  EXPECT_EQ(draw_nested_chi_square(single, 10'000, 33, "chi2_x")[0], levels[0]);
}

TEST(HHat, OrderZeroIsOne) {
  EXPECT_EQ(estimate_h_hat(InputDistribution::uniform(), 1.0, 0.2, 5, 10, 0.0, 1000, 1).value, 1.0);
}

TEST(HHat, GaussianFirstColumnMatchesChiSquareForm) {
  const auto hat = estimate_h_hat(InputDistribution::gaussian(), 1.0, 0.2, 5, 10, 2.0, 200'000, 34,
                                  NormKind::first_column);
  const auto h = estimate_h({0.2, 5, 10}, 2.0, 200'000, 35);
  EXPECT_NEAR(hat.value, h.value, 4.0 * joint(hat.std_error, h.std_error));
}

TEST(HHat, OperatorNormDominatesColumnNorm) {
  const auto op = hat_log_terms(InputDistribution::gaussian(), 1.0, 0.2, 5, 10, 20'000, 36,
                                NormKind::operator_norm);
  const auto col = hat_log_terms(InputDistribution::gaussian(), 1.0, 0.2, 5, 10, 20'000, 36,
                                 NormKind::first_column);
  for (std::size_t i = 0; i < op.size(); ++i) ASSERT_GE(op.terms()[i], col.terms()[i] - 1e-12);
}

TEST(HHat, ThreadCountInvariant) {
  const auto a = hat_log_terms(InputDistribution::laplace(), 1.0, 0.3, 3, 4, 10'000, 37,
                               NormKind::operator_norm, 1);
  const auto b = hat_log_terms(InputDistribution::laplace(), 1.0, 0.3, 3, 4, 10'000, 37,
                               NormKind::operator_norm, 3);
  EXPECT_TRUE(std::equal(a.terms().begin(), a.terms().end(), b.terms().begin()));
}

TEST(HHat, RejectsLargeDimension) {
  EXPECT_THROW(estimate_h_hat(InputDistribution::gaussian(), 1.0, 0.1, 2, 65, 1.0, 100, 1),
               std::invalid_argument);
}

TEST(HHat, UniformInputRootLowerBoundsSimulation) {
  const auto input = InputDistribution::uniform();
  const double eta = 1.4;
  const auto hat = solve_tail_index_hat(input, 1.0, eta, 5, 2, kDefaultTailTolerance, 200'000, 38);
  ASSERT_EQ(hat.status, TailStatus::solved);
  StreamSpec spec;
  spec.d = 2;
  spec.b = 5;
  spec.eta = eta;
  spec.seed = 39;
  spec.input = input;
  RunConfig cfg;
  cfg.K = 2000;
  cfg.K0 = 1000;
  cfg.replicas = 400;
  const auto est = estimate_alpha(ergodic_averages(spec, cfg).rows);
  EXPECT_LE(*hat.alpha, est.alpha_hat + 0.2) << "hat " << *hat.alpha << " sim " << est.alpha_hat;
}
