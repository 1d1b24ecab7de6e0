#include <gtest/gtest.h>

#include <random>

#include "svcg/dynamic_lq.hpp"

using namespace svcg;

namespace {

LqAgent agent(double a, double b, double q, double r, double x0, int T, double drive = 0.0) {
  LqAgent g;
  g.a = a;
  g.b = b;
  g.q = q;
  g.r = r;
  g.x0 = x0;
  g.horizon = T;
  g.drive = drive;
  return g;
}

std::vector<LqAgent> random_agents(std::mt19937_64& rng, int n, int T) {
  std::uniform_real_distribution<double> ua(0.8, 1.2), ub(0.5, 1.5), uq(-1.0, 0.0), ur(-1.5, -0.5), ux(-1.0, 1.0),
      uv(0.0, 5.0), ut(-1.0, 1.0);
  std::vector<LqAgent> out;
  for (int i = 0; i < n; ++i) {
    LqAgent g = agent(ua(rng), ub(rng), uq(rng), ur(rng), ux(rng), T, uv(rng));
    g.x_target = ut(rng);
    g.exo_gain = 0.5;
    g.exo_signal = Vec::NullaryExpr(T, [&](Eigen::Index) { return ut(rng); });
    out.push_back(g);
  }
  return out;
}

// Quadratic form of one agent's welfare recovered by probing direct simulation.
void probe_quadratic(const LqAgent& g, Mat& W, Vec& V, double& c) {
  const int T = g.horizon;
  auto f = [&](const Vec& u) { return simulate_welfare(g, u); };
  c = f(Vec::Zero(T));
  W.resize(T, T);
  V.resize(T);
  for (int i = 0; i < T; ++i) {
    const Vec ei = Vec::Unit(T, i);
    V[i] = 0.5 * (f(ei) - f(-ei));
    W(i, i) = 0.5 * (f(ei) + f(-ei) - 2.0 * c);
  }
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j < T; ++j) {
      if (i == j) continue;
      const Vec ei = Vec::Unit(T, i), ej = Vec::Unit(T, j);
      W(i, j) = 0.5 * (f(ei + ej) - f(ei) - f(ej) + c);
    }
  }
}

// Full (NT + T) KKT system built from probed quadratics.
Mat kkt_oracle(const std::vector<LqAgent>& agents, Vec& lambda) {
  const int n = static_cast<int>(agents.size());
  const int T = agents[0].horizon;
  const int m = n * T;
  Mat K = Mat::Zero(m + T, m + T);
  Vec rhs = Vec::Zero(m + T);
  for (int i = 0; i < n; ++i) {
    Mat W;
    Vec V;
    double c;
    probe_quadratic(agents[static_cast<std::size_t>(i)], W, V, c);
    K.block(i * T, i * T, T, T) = 2.0 * W;
    K.block(i * T, m, T, T) = -Mat::Identity(T, T);
    K.block(m, i * T, T, T) = Mat::Identity(T, T);
    rhs.segment(i * T, T) = -V;
  }
  const Vec sol = K.fullPivLu().solve(rhs);
  lambda = sol.tail(T);
  Mat U(n, T);
  for (int i = 0; i < n; ++i) U.row(i) = sol.segment(i * T, T).transpose();
  return U;
}

}  // namespace

TEST(DynamicLq, AugmentedBlocksFollowSymbolicExpansion) {
  const auto p = build_augmented({agent(1, 1, -1, -1, 0, 2), agent(1, 1, -1, -1, 0, 2)});
  Mat expected(2, 2);
  expected << -2.0, 0.0, 0.0, -1.0;
  EXPECT_LT((p.W_blocks[0] - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(DynamicLq, AugmentedMatchesDirectSimulation) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 30; ++trial) {
    const int T = 1 + trial % 5;
    const auto agents = random_agents(rng, 3, T);
    const auto p = build_augmented(agents);
    Mat U = Mat::NullaryExpr(3, T, [&](Eigen::Index, Eigen::Index) { return nd(rng); });
    U.row(2) = -(U.row(0) + U.row(1));
    double direct = 0.0;
    for (int i = 0; i < 3; ++i) direct += simulate_welfare(agents[static_cast<std::size_t>(i)], U.row(i).transpose());
    EXPECT_NEAR(p.welfare(U), direct, 1e-9 * (1.0 + std::abs(direct)));

    for (int i = 0; i < 3; ++i) {
      Mat W;
      Vec V;
      double c;
      probe_quadratic(agents[static_cast<std::size_t>(i)], W, V, c);
      EXPECT_LT((W - p.W_blocks[static_cast<std::size_t>(i)]).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LT((V - p.V_blocks[static_cast<std::size_t>(i)]).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(DynamicLq, MatchesKktOracle) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const auto agents = random_agents(rng, 3, 3);
    Vec lambda;
    const Mat U = kkt_oracle(agents, lambda);
    const auto o = solve_dynamic(agents);
    EXPECT_LT((o.controls - U).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LT((o.multipliers - lambda).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LT(kkt_residual(build_augmented(agents), o).cwiseAbs().maxCoeff(), 1e-8);
    for (int t = 0; t < 3; ++t) EXPECT_NEAR(o.controls.col(t).sum(), 0.0, 1e-9 * (1.0 + o.controls.cwiseAbs().maxCoeff()));
    for (int i = 0; i < 3; ++i) {
      const Vec x = simulate_states(agents[static_cast<std::size_t>(i)], o.controls.row(i).transpose());
      EXPECT_LT((x.transpose() - o.states.row(i)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(DynamicLq, IdenticalAgentsStayPut) {
  const auto o = solve_dynamic({agent(1, 1, -1, -1, 0, 3), agent(1, 1, -1, -1, 0, 3)});
  EXPECT_LT(o.controls.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(o.multipliers.cwiseAbs().maxCoeff(), 1e-14);
  const auto p = dynamic_vcg_payments({agent(1, 1, -1, -1, 0, 3), agent(1, 1, -1, -1, 0, 3)}, o);
  EXPECT_LT(p.payments.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(DynamicLq, SingleStageReducesToStatic) {
  const std::vector<QuadraticAgent> st{{-1.0, 1.0}, {-1.1, 1.2}, {-1.2, 4.0}, {-1.1, 5.0}};
  std::vector<LqAgent> dy;
  for (const auto& s : st) dy.push_back(agent(1.0, 1.0, 0.0, s.curvature, 0.0, 1, s.linear_coef));
  const auto so = solve_balanced_qp(st);
  const auto o = solve_dynamic(dy);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(o.controls(i, 0), so.allocations[i], 1e-12);
    EXPECT_NEAR(o.exclusion_welfares[i], so.exclusion_welfares[i], 1e-12);
  }
  EXPECT_NEAR(o.multipliers[0], so.multiplier, 1e-12);
  const auto sp = vcg_payments(st, so);
  const auto dp = dynamic_vcg_payments(dy, o);
  EXPECT_LT((sp.payments - dp.payments).cwiseAbs().maxCoeff(), 1e-12);
  const auto si = scaling_interval(st, so);
  const auto di = dynamic_scaling_interval(dy, o);
  EXPECT_NEAR(si.lower, di.lower, 1e-12);
  EXPECT_NEAR(si.upper, di.upper, 1e-12);
  EXPECT_NEAR(minmax_c(st, so, false).c_star, dynamic_minmax_c(dy, o, false).c_star, 1e-10);

}

TEST(DynamicLq, SvcgAtOneIsVcg) {
  std::mt19937_64 rng(3);
  const auto agents = random_agents(rng, 4, 3);
  const auto o = solve_dynamic(agents);
  const auto v = dynamic_vcg_payments(agents, o);
  const auto s = dynamic_svcg_payments(agents, o, 1.0);
  const auto g = dynamic_groves_payments(o, o.exclusion_welfares);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(v.payments[i], s.payments[i]);
    EXPECT_EQ(v.payments[i], g.payments[i]);
  }
}

TEST(DynamicLq, RejectsInvalidAgents) {
  EXPECT_THROW(solve_dynamic({agent(1, 1, -1, -1, 0, 2)}), DegenerateMarketError);
  EXPECT_THROW(solve_dynamic({agent(1, 1, -1, 0, 0, 2), agent(1, 1, -1, -1, 0, 2)}), ValidationError);
  EXPECT_THROW(solve_dynamic({agent(1, 1, 0.5, -1, 0, 2), agent(1, 1, -1, -1, 0, 2)}), ValidationError);
  EXPECT_THROW(solve_dynamic({agent(1, 0, -1, -1, 0, 2), agent(1, 1, -1, -1, 0, 2)}), ValidationError);
  EXPECT_THROW(solve_dynamic({agent(1, 1, -1, -1, 0, 2), agent(1, 1, -1, -1, 0, 3)}), ValidationError);
  auto bad = agent(1, 1, -1, -1, 0, 3);
  bad.exo_signal = Vec::Zero(2);
  EXPECT_THROW(solve_dynamic({bad, agent(1, 1, -1, -1, 0, 3)}), ValidationError);
}

TEST(DynamicLq, GridDominanceN3T2) {
  const std::vector<LqAgent> agents{agent(1.0, 1.0, -0.5, -1.0, 0.2, 2, 1.0), agent(0.9, 1.1, -0.3, -1.2, -0.1, 2, 4.5),
                                    agent(1.1, 0.95, -0.4, -0.9, 0.0, 2, 2.0)};
  for (std::size_t idx = 0; idx < agents.size(); ++idx) {
    const LqAgent& t = agents[idx];
    std::vector<LqAgent> grid;
    for (double dq : {-0.4, -0.2, 0.0, 0.2, 0.4}) {
      for (double dr : {-0.4, -0.2, 0.0, 0.2, 0.4}) {
        for (double dx : {-0.5, -0.25, 0.0, 0.25, 0.5}) {
          LqAgent g = t;
          g.q = std::min(0.0, t.q + dq);
          g.r = t.r + dr;
          g.x0 = t.x0 + dx;
          grid.push_back(g);
        }
      }
    }
    std::mt19937_64 rng(idx);
    std::uniform_real_distribution<double> jitter(0.8, 1.2);
    std::vector<std::vector<LqAgent>> profiles;
    for (int k = 0; k < 5; ++k) {
      auto p = agents;
      for (auto& a : p) {
        a.r *= jitter(rng);
        a.drive *= jitter(rng);
      }
      profiles.push_back(p);
    }
    const auto rep = dynamic_ic_check(agents, idx, grid, profiles, 1.0);
    EXPECT_EQ(rep.violations, 0U) << "agent " << idx << " gain " << rep.max_gain;
    EXPECT_EQ(rep.evaluations, 125U * 5U);
  }
}

TEST(DynamicLq, SymmetricPopulationInterval) {
  std::vector<LqAgent> same;
  for (int i = 0; i < 5; ++i) {
    LqAgent g = agent(1.0, 1.0, -0.2, -1.0, 0.0, 3, 2.0);
    g.x_target = 1.0;
    same.push_back(g);
  }
  const auto o = solve_dynamic(same);
  const auto iv = dynamic_scaling_interval(same, o);
  EXPECT_NEAR(iv.lower, 4.0 / 5.0 * iv.upper, 1e-12);
  const auto row = dynamic_asymptotics_row(same);
  if (row.feasible) {
    EXPECT_NEAR(row.payment_gap, 0.0, 1e-12);
  }
}

TEST(DynamicLq, SampledN8IntervalCertifiesBbIr) {
  DynamicBounds b;
  const auto agents = sample_lq_population(8, b, 4);
  const auto o = solve_dynamic(agents);
  const auto iv = dynamic_scaling_interval(agents, o);
  ASSERT_TRUE(iv.mpb_holds);
  for (double c : {iv.lower, 0.5 * (iv.lower + iv.upper), iv.upper}) {
    const auto p = dynamic_svcg_payments(agents, o, c);
    EXPECT_GE(p.payments.sum(), -1e-9);
    for (int i = 0; i < 8; ++i) EXPECT_GE(o.utilities[i] - p.payments[i], -1e-9);
  }
}

TEST(DynamicLq, AsymptoticsShrink) {
  DynamicBounds b;
  const auto rows = dynamic_asymptotics_experiment({4, 8, 16, 32}, b, 2);
  ASSERT_EQ(rows.size(), 4U);
  EXPECT_TRUE(rows.front().feasible && rows.back().feasible);
  EXPECT_LT(rows.back().payment_gap, rows.front().payment_gap / 4.0);
}

TEST(DynamicLq, SingleStageAsymptoticsMatchStatic) {
  DynamicBounds db;
  db.horizon = 1;
  db.q = {0.0, 0.0};
  const auto dy = sample_lq_population(6, db, 9);
  std::vector<QuadraticAgent> st;
  for (const auto& g : dy) st.push_back({g.r, g.drive});
  const auto a = dynamic_asymptotics_row(dy);
  const auto s = asymptotics_row(st);
  EXPECT_NEAR(a.c_lower, s.c_lower, 1e-12);
  EXPECT_NEAR(a.c_upper, s.c_upper, 1e-12);
  if (s.feasible) EXPECT_NEAR(a.payment_gap, s.payment_gap, 1e-10);
}
