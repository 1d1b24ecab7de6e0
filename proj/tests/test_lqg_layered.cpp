#include <gtest/gtest.h>

#include <random>

#include "svcg/lqg_layered.hpp"
#include "svcg/static_market.hpp"
#include "svcg/strategy_sim.hpp"

using namespace svcg;

namespace {

std::vector<LqAgent> example3() {
  const double r[] = {-1.0, -1.1, -1.2, -1.1};
  const double z[] = {0.3, 0.32, 0.31, 0.3};
  const double s[] = {0.1, 0.11, 0.11, 0.12};
  std::vector<LqAgent> out(4);
  for (int i = 0; i < 4; ++i) {
    out[i].a = 1.0;
    out[i].b = 1.0;
    out[i].q = -1.0;
    out[i].r = r[i];
    out[i].horizon = 4;
    out[i].init_variance = z[i];
    out[i].noise_variance = s[i];
  }
  return out;
}

std::vector<LqAgent> random_market(std::mt19937_64& rng, int n, int T, bool affine = true) {
  std::uniform_real_distribution<double> ua(0.8, 1.2), ub(0.6, 1.4), uq(-1.0, -0.05), ur(-1.5, -0.5), u1(-1.0, 1.0),
      uv(0.0, 4.0), us(0.05, 0.3);
  std::vector<LqAgent> out(static_cast<std::size_t>(n));
  for (auto& g : out) {
    g.a = ua(rng);
    g.b = ub(rng);
    g.q = uq(rng);
    g.r = ur(rng);
    g.horizon = T;
    g.noise_variance = us(rng);
    g.init_variance = us(rng);
    if (affine) {
      g.x0 = u1(rng);
      g.x_target = u1(rng);
      g.drive = uv(rng);
      g.exo_gain = 0.5;
      g.exo_signal = Vec::NullaryExpr(T, [&](Eigen::Index) { return u1(rng); });
    }
  }
  return out;
}

Mat draw(std::mt19937_64& rng, const std::vector<LqAgent>& agents) {
  const int T = agents[0].horizon;
  std::normal_distribution<double> nd;
  Mat v(static_cast<Eigen::Index>(agents.size()), T);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    v(static_cast<Eigen::Index>(i), 0) = std::sqrt(agents[i].init_variance) * nd(rng);
    for (int k = 1; k < T; ++k) v(static_cast<Eigen::Index>(i), k) = std::sqrt(agents[i].noise_variance) * nd(rng);
  }
  return v;
}

// Zero-noise closed-loop rollout from x(0) = x0.
void rollout(const std::vector<LqAgent>& agents, const GainSchedule& g, Mat& U, Mat& X, Vec& lambda) {
  const auto n = static_cast<Eigen::Index>(agents.size());
  const int T = g.horizon;
  U.resize(n, T);
  X.resize(n, T);
  lambda.resize(T);
  Vec x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = agents[static_cast<std::size_t>(i)].x0;
  for (int t = 0; t < T; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    X.col(t) = x;
    const Vec u = g.K[ts] * x + g.k[ts];
    U.col(t) = u;
    lambda[t] = (g.Phi[ts] * x)(0) + g.phi[ts];
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& a = agents[static_cast<std::size_t>(i)];
      x[i] = a.a * x[i] + a.b * u[i] + a.exo(t);
    }
  }
}

}  // namespace

TEST(Gains, BalancedAndSymmetric) {
  const auto g = compute_gains(example3());
  for (int t = 0; t < 4; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    EXPECT_LT(g.K[ts].colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(std::abs(g.k[ts].sum()), 1e-12);
  }
  for (const auto& P : g.P) {
    EXPECT_LT((P - P.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const Eigen::SelfAdjointEigenSolver<Mat> es(P);
    EXPECT_LE(es.eigenvalues().maxCoeff(), 1e-12);
  }
  EXPECT_LT(g.K[3].cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gains, IdenticalAgentsDoNotTrade) {
  std::vector<LqAgent> same(3);
  for (auto& a : same) {
    a.q = -0.7;
    a.r = -1.3;
    a.horizon = 3;
  }
  const auto g = compute_gains(same);
  for (const auto& K : g.K) EXPECT_LT((K * Vec::Constant(3, 2.5)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gains, EliminationIndexInvariance) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto agents = random_market(rng, 4, 4);
    const auto ref = compute_gains(agents, 3);
    for (int e = 0; e < 3; ++e) {
      const auto g = compute_gains(agents, e);
      for (std::size_t t = 0; t < 4; ++t) {
        EXPECT_LT((g.K[t] - ref.K[t]).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((g.k[t] - ref.k[t]).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((g.Phi[t] - ref.Phi[t]).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(g.phi[t], ref.phi[t], 1e-9);
      }
    }
  }
}

TEST(Gains, OneStepArgmaxOracle) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  const auto agents = random_market(rng, 3, 4);
  const auto g = compute_gains(agents);
  for (int t = 0; t < 4; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const Vec x = Vec::NullaryExpr(3, [&](Eigen::Index) { return nd(rng); });
    // maximize sum_i (r u^2 + v u) + V_{t+1}(A x + B u + e) subject to 1'u = 0
    const Mat B = g.b.asDiagonal();
    Vec y0(3);
    for (int i = 0; i < 3; ++i) y0[i] = g.a[i] * x[i] + g.exo[ts][i];
    const Mat& P = g.P[ts + 1];
    const Vec& p = g.p[ts + 1];
    Mat KKT = Mat::Zero(4, 4);
    KKT.topLeftCorner(3, 3) = 2.0 * (Mat(g.r.asDiagonal()) + B * P * B);
    KKT.block(0, 3, 3, 1) = -Vec::Ones(3);
    KKT.block(3, 0, 1, 3) = Vec::Ones(3).transpose();
    Vec rhs = Vec::Zero(4);
    rhs.head(3) = -(g.drive + B * (2.0 * P * y0 + p));
    const Vec sol = KKT.fullPivLu().solve(rhs);
    const Vec u = g.K[ts] * x + g.k[ts];
    EXPECT_LT((u - sol.head(3)).cwiseAbs().maxCoeff(), 1e-10) << "t=" << t;
    EXPECT_NEAR((g.Phi[ts] * x)(0) + g.phi[ts], sol[3], 1e-10);
  }
}

TEST(Gains, SingleStageMatchesStatic) {
  std::vector<LqAgent> dy(4);
  const std::vector<QuadraticAgent> st{{-1.0, 1.0}, {-1.1, 1.2}, {-1.2, 4.0}, {-1.1, 5.0}};
  for (int i = 0; i < 4; ++i) {
    dy[i].r = st[i].curvature;
    dy[i].drive = st[i].linear_coef;
    dy[i].q = -0.5;
    dy[i].horizon = 1;
  }
  const auto g = compute_gains(dy);
  const auto o = solve_balanced_qp(st);
  EXPECT_LT((g.k[0] - o.allocations).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(g.phi[0], o.multiplier, 1e-12);
}

TEST(Gains, ClosedLoopMatchesOpenLoop) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto agents = random_market(rng, 4, 5);
    const auto g = compute_gains(agents);
    Mat U, X;
    Vec lam;
    rollout(agents, g, U, X, lam);
    const auto o = solve_dynamic(agents);
    EXPECT_LT((U - o.controls).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LT((X - o.states).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LT((lam - o.multipliers).cwiseAbs().maxCoeff(), 1e-7);
  }
  const auto ex = example3();
  const auto g = compute_gains(ex);
  Mat U, X;
  Vec lam;
  rollout(ex, g, U, X, lam);
  EXPECT_LT((U - solve_dynamic(ex).controls).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Gains, IndependentOfNoiseLaw) {
  auto a = example3();
  auto b = a;
  for (auto& x : b) x.noise_law = NoiseLaw::kUniform;
  const auto ga = compute_gains(a), gb = compute_gains(b);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ((ga.K[t] - gb.K[t]).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((ga.P[t] - gb.P[t]).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((ga.Phi[t] - gb.Phi[t]).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Ledger, ZeroBidGivesZeroIncrementAndHomogeneity) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  const auto agents = random_market(rng, 3, 4, false);
  const auto g = compute_gains(agents);
  const AffineSpace sp = AffineSpace::realized(Mat::Zero(3, 4));
  const Vec bid0 = Vec::NullaryExpr(3, [&](Eigen::Index) { return nd(rng); });
  const Vec bid1 = Vec::NullaryExpr(3, [&](Eigen::Index) { return nd(rng); });
  const Vec bid1b = Vec::NullaryExpr(3, [&](Eigen::Index) { return nd(rng); });

  auto run = [&](const Vec& b1) {
    LayerLedger led(agents, g, sp);
    led.apply_stage(0, bid0);
    led.apply_stage(1, b1);
    Mat out(3, 3);
    for (int t = 1; t < 4; ++t) out.col(t - 1) = led.U(1, t).col(0);
    return out;
  };
  EXPECT_LT(run(Vec::Zero(3)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((run(2.0 * bid1) - 2.0 * run(bid1)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((run(bid1 + bid1b) - run(bid1) - run(bid1b)).cwiseAbs().maxCoeff(), 1e-12);

  LayerLedger zero(agents, g, sp);
  zero.apply_stage(0, Mat::Zero(3, 1));
  for (int t = 0; t < 4; ++t) EXPECT_LT(zero.U(0, t).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Ledger, HandInstanceDenseQp) {
  std::vector<LqAgent> agents(2);
  for (auto& a : agents) {
    a.q = -1.0;
    a.r = -1.0;
    a.horizon = 2;
  }
  const auto g = compute_gains(agents);
  const AffineSpace sp = AffineSpace::realized(Mat::Zero(2, 2));
  LayerLedger led(agents, g, sp);
  Mat bid(2, 1);
  bid << 1.0, -1.0;
  led.apply_stage(0, bid);
  EXPECT_NEAR(led.U(0, 0)(0, 0), -0.5, 1e-12);
  EXPECT_NEAR(led.U(0, 0)(1, 0), 0.5, 1e-12);
  EXPECT_NEAR(led.U(0, 1)(0, 0), 0.0, 1e-12);
}

TEST(Ledger, CumulativePlanIsTruncatedOpenLoopOptimum) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const auto agents = random_market(rng, 3, 5);
    const auto g = compute_gains(agents);
    const AffineSpace sp = AffineSpace::realized(draw(rng, agents));
    const auto bids = truthful_bids(agents, sp);
    LayerLedger led(agents, g, sp);
    for (int s = 0; s < 5; ++s) {
      led.apply_stage(s, bids[static_cast<std::size_t>(s)]);
      // dense oracle: deterministic problem on t = s..T-1 from Y(s)
      std::vector<LqAgent> tail = agents;
      for (std::size_t i = 0; i < 3; ++i) {
        tail[i].horizon = 5 - s;
        tail[i].x0 = led.plan_state(s)(static_cast<Eigen::Index>(i), 0);
        tail[i].exo_signal = agents[i].exo_signal.tail(5 - s).eval();
      }
      const auto o = solve_dynamic_core(tail);
      for (int t = s; t < 5; ++t) {
        EXPECT_LT((led.plan_control(t).col(0) - o.controls.col(t - s)).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_NEAR(led.multiplier(s, t)(0), o.multipliers[t - s], 1e-8);
      }
    }
  }
}

TEST(Ledger, DecompositionIdentities) {
  std::mt19937_64 rng(23);
  const auto agents = random_market(rng, 4, 4);
  const LayeredMechanism mech(agents);
  const AffineSpace sp = AffineSpace::realized(draw(rng, agents));
  const auto bids = truthful_bids(agents, sp);
  const auto run = mech.run(agents, sp, bids);
  LayerLedger led(agents, mech.gains(), sp);
  for (int s = 0; s < 4; ++s) led.apply_stage(s, bids[static_cast<std::size_t>(s)]);
  const auto& g = mech.gains();
  for (int t = 0; t < 4; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    Mat xs = Mat::Zero(4, 1), us = Mat::Zero(4, 1);
    for (int s = 0; s <= t; ++s) {
      xs += led.X(s, t);
      us += led.U(s, t);
      EXPECT_LT(std::abs(led.U(s, t).sum()), 1e-12);
      if (s <= t - 1) {
        Mat pred = g.a.asDiagonal() * led.X(s, t - 1) + g.b.asDiagonal() * led.U(s, t - 1);
        if (s == 0) pred.col(0) += g.exo[ts - 1];
        EXPECT_LT((pred - led.X(s, t)).cwiseAbs().maxCoeff(), 1e-12);
      }
    }
    EXPECT_LT((xs - run.true_states[ts]).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((us - run.controls[ts]).cwiseAbs().maxCoeff(), 1e-10);
    // multiplier of realized state equals the per-layer recursion
    const double lam = (g.Phi[ts] * run.true_states[ts].col(0))(0) + g.phi[ts];
    EXPECT_NEAR(led.multiplier(t, t)(0), lam, 1e-10);
    if (t > 0) {
      EXPECT_NEAR(led.multiplier(t, t)(0) - led.multiplier(t - 1, t)(0), (g.Phi[ts] * led.X(t, t).col(0))(0), 1e-10);
    }
  }
}

TEST(Ledger, StageOrderAndShape) {
  const auto agents = example3();
  const auto g = compute_gains(agents);
  const AffineSpace sp = AffineSpace::realized(Mat::Zero(4, 4));
  LayerLedger led(agents, g, sp);
  EXPECT_THROW(led.apply_stage(1, Mat::Zero(4, 1)), StageOrderError);
  EXPECT_THROW(led.apply_stage(0, Mat::Zero(3, 1)), ValidationError);
  led.apply_stage(0, Mat::Zero(4, 1));
  EXPECT_THROW(led.apply_stage(0, Mat::Zero(4, 1)), StageOrderError);
}

TEST(Ledger, RswEqualsSumOfLayers) {
  std::mt19937_64 rng(31);
  const auto agents = example3();
  const LayeredMechanism mech(agents);
  for (int k = 0; k < 100; ++k) {
    const AffineSpace sp = AffineSpace::realized(draw(rng, agents));
    const auto run = mech.run(agents, sp, truthful_bids(agents, sp));
    EXPECT_LE(rsw_decompose_check(run), 1e-9 * (1.0 + std::abs(run.rsw)));
  }
  const AffineSpace zero = AffineSpace::realized(Mat::Zero(4, 4));
  const auto run = mech.run(agents, zero, truthful_bids(agents, zero));
  EXPECT_LE(rsw_decompose_check(run), 1e-12);
  EXPECT_NEAR(run.rsw, solve_dynamic(agents).total_welfare, 1e-10);

  auto one = agents;
  for (auto& a : one) a.horizon = 1;
  const LayeredMechanism m1(one);
  const AffineSpace s1 = AffineSpace::realized(Mat::Constant(4, 1, 0.3));
  const auto r1 = m1.run(one, s1, truthful_bids(one, s1));
  EXPECT_NEAR(r1.layered_welfare, r1.rsw, 1e-12);
}

TEST(Ledger, ZeroNoiseRunMatchesOpenLoop) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    auto agents = random_market(rng, 3, 4);
    const LayeredMechanism mech(agents);
    const AffineSpace sp = AffineSpace::realized(Mat::Zero(3, 4));
    const auto run = mech.run(agents, sp, truthful_bids(agents, sp));
    const auto o = solve_dynamic(agents);
    for (int t = 0; t < 4; ++t) {
      EXPECT_LT((run.controls[static_cast<std::size_t>(t)].col(0) - o.controls.col(t)).cwiseAbs().maxCoeff(), 1e-7);
      EXPECT_NEAR(run.multipliers[static_cast<std::size_t>(t)](0), o.multipliers[t], 1e-7);
    }
    EXPECT_LT((run.utilities - o.utilities).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(Payments, ZeroEverythingPaysNothing) {
  auto agents = example3();
  const LayeredMechanism mech(agents);
  const AffineSpace sp = AffineSpace::realized(Mat::Zero(4, 4));
  const auto run = mech.run(agents, sp, truthful_bids(agents, sp));
  EXPECT_LT(run.payments.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Payments, ExclusionTermIgnoresOwnBid) {
  std::mt19937_64 rng(41);
  const auto agents = random_market(rng, 4, 3);
  const AffineSpace sp = AffineSpace::realized(draw(rng, agents));
  const LayeredMechanism clarke(agents, {PivotKind::kClarke, 1.3});
  const LayeredMechanism none(agents, {PivotKind::kNone, 1.3});
  auto bids = truthful_bids(agents, sp);
  const Mat h0 = clarke.run(agents, sp, bids).payments - none.run(agents, sp, bids).payments;
  bids[1](0, 0) += 0.7;
  const Mat h1 = clarke.run(agents, sp, bids).payments - none.run(agents, sp, bids).payments;
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(h0(0, s), h1(0, s), 1e-12);

  const LayeredMechanism c1(agents, {PivotKind::kClarke, 1.0});
  const LayeredMechanism c2(agents, {PivotKind::kClarke, 2.0});
  const Mat d = c2.run(agents, sp, bids).payments - c1.run(agents, sp, bids).payments;
  EXPECT_LT((d - h1 / 1.3).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Stochastic, ExpectedPaymentIdentity) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const auto agents = random_market(rng, 4, 4);
    const double c = 0.9 + 0.05 * trial;
    const LayeredMechanism mech(agents, {PivotKind::kClarke, c});
    const AffineSpace sp = AffineSpace::for_agents(agents);
    const auto run = mech.run(agents, sp, truthful_bids(agents, sp));
    const auto mo = stochastic_outcome(agents);
    EXPECT_LT((run.utilities - mo.utilities).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((run.lagrange - mo.lagrange).cwiseAbs().maxCoeff(), 1e-9);
    const Vec p = run.payments.rowwise().sum();
    for (int i = 0; i < 4; ++i) {
      const double expected = c * mo.exclusion_welfares[i] - (mo.total_welfare - mo.utilities[i]);
      EXPECT_NEAR(p[i], expected, 1e-9 * (1.0 + std::abs(expected)));
    }
  }
}

TEST(Stochastic, ExclusionWelfareMatchesSubsystem) {
  const auto agents = example3();
  const auto mo = stochastic_outcome(agents);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto sub = drop_agent(agents, i);
    EXPECT_NEAR(mo.exclusion_welfares[static_cast<Eigen::Index>(i)], stochastic_outcome(sub).total_welfare, 1e-12);
  }
}

TEST(Stochastic, Example3WelfareIsNegative) {
  const auto mo = stochastic_outcome(example3());
  EXPECT_LT(mo.total_welfare, 0.0);
  const auto iv = stochastic_scaling_interval(example3());
  EXPECT_FALSE(iv.mpb_holds);
  EXPECT_THROW(stochastic_minmax_c(example3(), true), InfeasibleIntervalError);
}

TEST(Stochastic, IdenticalAgentsFlaggedInfeasible) {
  std::vector<LqAgent> same(4);
  for (auto& a : same) {
    a.q = -0.5;
    a.r = -1.0;
    a.horizon = 3;
    a.noise_variance = 0.1;
  }
  EXPECT_FALSE(stochastic_scaling_interval(same).mpb_holds);
}

TEST(Stochastic, SampledN8MonteCarloCertifiesBbIr) {
  DynamicBounds b;
  b.horizon = 4;
  b.noise_variance = 0.1;
  b.init_variance = 0.1;
  const auto agents = sample_lq_population(8, b, 3);
  const auto iv = stochastic_scaling_interval(agents);
  ASSERT_TRUE(iv.mpb_holds);
  const double c = stochastic_minmax_c(agents, true).c_star;
  const auto rep = monte_carlo(agents, std::vector<Strategy>(8, Strategy::truthful()), c, 20000, 5, true);
  const Eigen::Index runs = rep.payment_samples.rows();
  const Vec total = rep.payment_samples.rowwise().sum();
  const double mean = total.mean();
  const double se = std::sqrt((total.array() - mean).square().sum() / static_cast<double>(runs - 1) / static_cast<double>(runs));
  EXPECT_GE(mean + 3.0 * se, 0.0);
  for (int i = 0; i < 8; ++i) EXPECT_GE(rep.mean_net[i] + 3.0 * rep.se_net[i], 0.0) << i;
}

TEST(Stochastic, AsymptoticsRowAgreesWithMonteCarlo) {
  DynamicBounds b;
  b.horizon = 4;
  b.noise_variance = 0.1;
  b.init_variance = 0.1;
  const auto agents = sample_lq_population(4, b, 0);
  const auto row = stochastic_asymptotics_row(agents);
  ASSERT_TRUE(row.feasible);
  const auto mo = stochastic_outcome(agents);
  const auto rep = monte_carlo(agents, std::vector<Strategy>(4, Strategy::truthful()), row.c_star, 100000, 9, false);
  double worst = 0.0;
  for (int i = 0; i < 4; ++i) {
    // d_i = E[lambda u_i] - E p_i; E p_i sampled, E[lambda u_i] analytic
    const double analytic_pay = row.c_star * mo.exclusion_welfares[i] - (mo.total_welfare - mo.utilities[i]);
    EXPECT_NEAR(rep.mean_payment[i], analytic_pay, 3.0 * rep.se_payment[i] + 1e-12) << i;
    worst = std::max(worst, std::abs(mo.lagrange[i] - analytic_pay));
  }
  EXPECT_NEAR(worst, row.d, 1e-9);
}
