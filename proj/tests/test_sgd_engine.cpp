#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "sgdtail/sgd_engine.hpp"
#include "sgdtail/stable_estim.hpp"
#include "sgdtail/tail_theory.hpp"

using namespace sgdtail;

namespace {
StreamSpec spec_of(int d, int b, double eta, std::uint64_t seed = 99) {
  StreamSpec s;
  s.d = d;
  s.b = b;
  s.eta = eta;
  s.seed = seed;
  return s;
}

Minibatch scalar_batch(double a, double y) {
  Minibatch m{Eigen::MatrixXd::Constant(1, 1, a), Eigen::VectorXd::Constant(1, y)};
  return m;
}
}  // namespace

TEST(SgdStep, ZeroStateGivesQ) {
  const auto s = spec_of(3, 2, 0.3);
  const auto batch = gen_stream_batch(s, draw_true_parameter(s), 1);
  ChainState st{Eigen::VectorXd::Zero(3)};
  const auto next = sgd_step(st, batch, 0.3);
  const Eigen::VectorXd q = (0.3 / 2) * batch.inputs.transpose() * batch.labels;
  EXPECT_EQ(next.x, q);
  EXPECT_EQ(next.k, 1);
}

TEST(SgdStep, ScalarHandComputation) {
  ChainState st{Eigen::VectorXd::Constant(1, 2.0)};
  EXPECT_DOUBLE_EQ(sgd_step(st, scalar_batch(1.0, 0.0), 0.5).x[0], 1.0);
}

TEST(SgdStep, MatchesDenseOracle) {
  StreamRng rng(7, "dense");
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 1 + static_cast<int>(rng() % 8);
    const int b = 1 + static_cast<int>(rng() % 8);
    const double eta = 0.05 + rng.uniform_open();
    Minibatch batch{Eigen::MatrixXd(b, d), Eigen::VectorXd(b)};
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < d; ++j) batch.inputs(i, j) = normal(rng);
      batch.labels[i] = normal(rng);
    }
    Eigen::VectorXd x(d);
    for (int j = 0; j < d; ++j) x[j] = normal(rng);
    const Eigen::MatrixXd H = batch.inputs.transpose() * batch.inputs;
    const Eigen::VectorXd dense =
        (Eigen::MatrixXd::Identity(d, d) - (eta / b) * H) * x +
        (eta / b) * batch.inputs.transpose() * batch.labels;
    const auto got = sgd_step(ChainState{x}, batch, eta).x;
    worst = std::max(worst, (got - dense).norm() / std::max(dense.norm(), 1e-300));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(SgdStep, OverflowSetsStickyFlag) {
  ChainState st{Eigen::VectorXd::Constant(1, 1e200)};
  st = sgd_step(st, scalar_batch(1e60, 0.0), 1.0);
  EXPECT_TRUE(st.diverged);
  const auto again = sgd_step(st, scalar_batch(1.0, 0.0), 1.0);
  EXPECT_TRUE(again.diverged);
  EXPECT_EQ(again.x, st.x);
}

TEST(SgdStep, NonFiniteIsDivergenceNotCrash) {
  ChainState st{Eigen::VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN())};
  EXPECT_TRUE(sgd_step(st, scalar_batch(1.0, 1.0), 0.1).diverged);
}

TEST(SgdStep, DimensionMismatchThrows) {
  ChainState st{Eigen::VectorXd::Zero(2)};
  EXPECT_THROW(sgd_step(st, scalar_batch(1.0, 1.0), 0.1), std::invalid_argument);
}

TEST(RunChain, ZeroStepsizeFreezes) {
  const auto s = spec_of(4, 2, 0.0);
  RunConfig cfg;
  cfg.K = 300;
  cfg.K0 = 100;
  const Eigen::VectorXd x0 = Eigen::VectorXd::LinSpaced(4, -1.0, 2.0);
  const auto run = run_chain(BatchSource::streaming(s), cfg, x0);
  EXPECT_EQ(run.final.x, x0);
  EXPECT_FALSE(run.final.diverged);
}

TEST(RunChain, DivergentStepsizeBlowsUp) {
  const auto s = spec_of(10, 1, 1.0);
  RunConfig cfg;
  cfg.K = 10'000;
  cfg.K0 = 0;
  const auto src = BatchSource::streaming(s);
  int diverged = 0;
  for (int r = 0; r < 100; ++r)
    diverged += run_chain(src, cfg, draw_initial_point(s, r), r).final.diverged;
  EXPECT_GE(diverged, 95);
}

TEST(RunChain, SmallStepsizeStaysBounded) {
  const auto s = spec_of(10, 5, 0.01);
  RunConfig cfg;
  cfg.K = 10'000;
  cfg.K0 = 0;
  const auto src = BatchSource::streaming(s);
  for (int r = 0; r < 100; ++r) {
    double worst = 0.0;
    const auto run = run_chain(src, cfg, draw_initial_point(s, r), r,
                               [&](std::int64_t k, const ChainState& st) {
                                 if (k >= 1000) worst = std::max(worst, (st.x - src.center()).norm());
                               });
    ASSERT_FALSE(run.final.diverged);
    EXPECT_LT(worst, 5.0);
  }
}

TEST(FiniteSum, BatchesAreDistinctRowsOfTheDataset) {
  const auto s = spec_of(3, 4, 0.1);
  const auto src = BatchSource::finite_sum(s, 6);
  for (int k = 1; k <= 200; ++k) {
    const auto batch = src.batch(0, k);
    std::set<Eigen::Index> rows;
    for (int i = 0; i < 4; ++i)
      for (Eigen::Index r = 0; r < 6; ++r)
        if (src.dataset()->A.row(r) == batch.inputs.row(i)) rows.insert(r);
    EXPECT_EQ(rows.size(), 4u);
  }
}

TEST(FiniteSum, CenterIsLeastSquaresSolution) {
  const auto s = spec_of(3, 2, 0.1);
  const auto src = BatchSource::finite_sum(s, 40);
  const auto& data = *src.dataset();
  const Eigen::VectorXd normal =
      (data.A.transpose() * data.A).ldlt().solve(data.A.transpose() * data.y);
  EXPECT_LT((src.center() - normal).norm(), 1e-10);
}

TEST(FiniteSum, SingularDesignThrows) {
  EXPECT_THROW(BatchSource::finite_sum(spec_of(5, 1, 0.1), 3, Sampling::with_replacement),
               std::domain_error);
}

TEST(Coupled, IdenticalStartsStayTogether) {
  const auto s = spec_of(5, 2, 0.2);
  RunConfig cfg;
  cfg.K = 100;
  cfg.K0 = 0;
  const Eigen::VectorXd x0 = draw_initial_point(s, 0);
  for (double v : run_coupled_pair(BatchSource::streaming(s), cfg, x0, x0).diff_norms)
    EXPECT_EQ(v, 0.0);
}

TEST(Coupled, DifferenceIgnoresLabels) {
  auto s = spec_of(5, 2, 0.2);
  RunConfig cfg;
  cfg.K = 200;
  cfg.K0 = 0;
  const Eigen::VectorXd x0 = draw_initial_point(s, 0), x1 = draw_initial_point(s, 1);
  const auto a = run_coupled_pair(BatchSource::streaming(s), cfg, x0, x1);
  s.sigma_x = 3.0;  // new x_true, so new labels; inputs unchanged
  s.sigma_y = 5.0;
  const auto b = run_coupled_pair(BatchSource::streaming(s), cfg, x0, x1);
  EXPECT_EQ(a.diff_norms, b.diff_norms);
  EXPECT_NE(a.first.x, b.first.x);
}

TEST(Coupled, SlopeMatchesH2InRegimeOne) {
  const auto s = spec_of(10, 5, 0.02);
  RunConfig cfg;
  cfg.K = 200;
  cfg.K0 = 0;
  cfg.replicas = 1000;
  const auto ms = coupled_mean_square(BatchSource::streaming(s), cfg);
  std::vector<double> ks, ls;
  for (std::size_t k = 0; k < ms.size(); ++k) {
    ks.push_back(static_cast<double>(k));
    ls.push_back(std::log(ms[k]));
  }
  const double target = std::log(h2_closed_form(0.02, 5, 10));
  EXPECT_NEAR(stats::fit_line(ks, ls).slope / target, 1.0, 0.10);
}

TEST(Ergodic, WindowOfOneIsCenteredFinalIterate) {
  const auto s = spec_of(3, 2, 0.1);
  RunConfig cfg;
  cfg.K = 50;
  cfg.K0 = 49;
  cfg.replicas = 5;
  const auto src = BatchSource::streaming(s);
  const auto sm = ergodic_averages(src, cfg);
  for (int r = 0; r < 5; ++r) {
    const auto run = run_chain(src, cfg, draw_initial_point(s, r), r);
    EXPECT_LT((sm.rows.row(r).transpose() - (run.final.x - src.center())).norm(), 1e-14);
  }
}

TEST(Ergodic, FrozenChainAtMeanGivesZeros) {
  const auto s = spec_of(3, 2, 0.0);
  RunConfig cfg;
  cfg.K = 20;
  cfg.K0 = 10;
  cfg.replicas = 4;
  const auto src = BatchSource::streaming(s);
  const auto sm = ergodic_averages(src, cfg, src.center());
  EXPECT_EQ(sm.rows, Eigen::MatrixXd::Zero(4, 3));
}

TEST(Ergodic, ThreadCountInvariant) {
  const auto s = spec_of(4, 2, 0.3);
  RunConfig cfg;
  cfg.K = 200;
  cfg.K0 = 100;
  cfg.replicas = 16;
  cfg.threads = 1;
  const auto a = ergodic_averages(s, cfg);
  cfg.threads = 4;
  const auto b = ergodic_averages(s, cfg);
  EXPECT_EQ(a.rows, b.rows);
}

TEST(Ergodic, AllDivergedThrows) {
  const auto s = spec_of(10, 1, 5.0);
  RunConfig cfg;
  cfg.K = 2000;
  cfg.K0 = 0;
  cfg.replicas = 4;
  EXPECT_THROW(ergodic_averages(s, cfg), std::runtime_error);
}

TEST(Ergodic, PaperScaleConfigGivesFiniteEstimate) {
  auto s = spec_of(100, 5, 0.1);
  s.sigma_x = 3.0;
  s.sigma_y = 3.0;
  RunConfig cfg;
  cfg.K = 1000;
  cfg.K0 = 500;
  cfg.replicas = 200;
  const auto sm = ergodic_averages(s, cfg);
  ASSERT_TRUE(sm.rows.allFinite());
  const auto est = estimate_alpha(sm.rows);
  EXPECT_GT(est.alpha_hat, 0.0);
  EXPECT_LT(est.alpha_hat, 2.2);
}

TEST(RunConfigCheck, RejectsBadWindows) {
  RunConfig cfg;
  cfg.K = 10;
  cfg.K0 = 10;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.K0 = 5;
  cfg.replicas = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Moments, OrderZeroIsOne) {
  const auto s = spec_of(3, 2, 0.1);
  RunConfig cfg;
  cfg.K = 30;
  cfg.K0 = 0;
  cfg.replicas = 100;
  const auto t = moment_trajectory(BatchSource::streaming(s), cfg, 0.0);
  for (double m : t.mean) EXPECT_EQ(m, 1.0);
}

TEST(Moments, FlatOnceStationary) {
  const auto s = spec_of(10, 5, 0.3);
  RunConfig cfg;
  cfg.K = 600;
  cfg.K0 = 0;
  cfg.replicas = 400;
  const auto t = moment_trajectory(BatchSource::streaming(s), cfg, 1.0);
  const double joint = std::hypot(t.std_error[300], t.std_error[600]);
  EXPECT_LT(std::abs(t.mean[300] - t.mean[600]), 4.0 * joint);
}
