#include "svcg/strategy_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "svcg/rng.hpp"

namespace svcg {

const char* strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kTruthful: return "truthful";
    case StrategyKind::kAdditiveOffset: return "additive_offset";
    case StrategyKind::kZeroNoise: return "zero_noise";
    case StrategyKind::kParamMisreport: return "param_misreport";
    case StrategyKind::kNaiveStateBidder: return "naive_state_bidder";
  }
  return "unknown";
}

namespace {

void check_sizes(const std::vector<LqAgent>& agents, const std::vector<Strategy>& strategies) {
  if (agents.size() != strategies.size()) throw ValidationError("one strategy per agent required");
}

}  // namespace

std::vector<LqAgent> reported_models(const std::vector<LqAgent>& truth,
                                     const std::vector<Strategy>& strategies) {
  check_sizes(truth, strategies);
  std::vector<LqAgent> rep = truth;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const Strategy& s = strategies[i];
    if (s.kind != StrategyKind::kParamMisreport) continue;
    if (s.q) rep[i].q = *s.q;
    if (s.r) rep[i].r = *s.r;
    if (s.a) rep[i].a = *s.a;
    if (s.b) rep[i].b = *s.b;
  }
  return rep;
}

std::vector<Mat> strategy_bids(const std::vector<LqAgent>& truth, const std::vector<Strategy>& strategies,
                               const AffineSpace& space) {
  check_sizes(truth, strategies);
  std::vector<Mat> bids = truthful_bids(truth, space);
  const Eigen::Index C = space.constant();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Strategy& s = strategies[i];
    switch (s.kind) {
      case StrategyKind::kTruthful:
        break;
      case StrategyKind::kAdditiveOffset:
        for (auto& b : bids) b(r, C) += s.offset;
        break;
      case StrategyKind::kParamMisreport:
        if (!s.zero_noise_bids) break;
        [[fallthrough]];
      case StrategyKind::kZeroNoise:
        // the realized initial state is still bid; only the noise increments are suppressed
        for (std::size_t k = 1; k < bids.size(); ++k) bids[k].row(r).setZero();
        break;
      case StrategyKind::kNaiveStateBidder:
        throw ValidationError("naive state bidding is not a layered-mechanism strategy");
    }
  }
  return bids;
}

AnalyticReport analytic_expected_net_utility(const std::vector<LqAgent>& agents,
                                             const std::vector<Strategy>& strategies, double c,
                                             PivotKind pivot) {
  const LayeredMechanism mech(reported_models(agents, strategies), {pivot, c});
  const AffineSpace space = AffineSpace::for_agents(agents);
  const LayeredRun run = mech.run(agents, space, strategy_bids(agents, strategies, space));
  return {run.net, run.utilities, run.payments.rowwise().sum()};
}

Mat draw_primitives(const std::vector<LqAgent>& agents, std::uint64_t seed, std::size_t run) {
  const int T = common_horizon(agents);
  const auto n = static_cast<Eigen::Index>(agents.size());
  std::mt19937_64 rng(derive_seed(seed, run));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Mat out(n, T);
  for (int k = 0; k < T; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& g = agents[static_cast<std::size_t>(i)];
      const double var = k == 0 ? g.init_variance : g.noise_variance;
      const double z = g.noise_law == NoiseLaw::kGaussian ? gauss(rng) : std::sqrt(3.0) * unif(rng);
      out(i, k) = std::sqrt(var) * z;
    }
  }
  return out;
}

namespace {

template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t k = 0; k < n; ++k) body(k);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t k = w; k < n; k += threads) body(k);
    });
  }
  for (auto& th : pool) th.join();
}

void mean_se(const Mat& samples, Vec& mean, Vec& se) {
  const auto n = static_cast<double>(samples.rows());
  mean = samples.colwise().mean().transpose();
  se = Vec::Zero(samples.cols());
  if (samples.rows() < 2) return;
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    const double var = (samples.col(j).array() - mean[j]).square().sum() / (n - 1.0);
    se[j] = std::sqrt(var / n);
  }
}

}  // namespace

SimulationReport monte_carlo(const std::vector<LqAgent>& agents, const std::vector<Strategy>& strategies,
                             double c, std::size_t n_runs, std::uint64_t seed, bool keep_samples,
                             PivotKind pivot, unsigned threads) {
  if (n_runs < 1) throw ValidationError("monte carlo needs at least one run");
  const LayeredMechanism mech(reported_models(agents, strategies), {pivot, c});
  const auto n = static_cast<Eigen::Index>(agents.size());
  Mat net(static_cast<Eigen::Index>(n_runs), n), pay(static_cast<Eigen::Index>(n_runs), n);
  parallel_for(n_runs, threads, [&](std::size_t k) {
    const AffineSpace space = AffineSpace::realized(draw_primitives(agents, seed, k));
    const LayeredRun run = mech.run(agents, space, strategy_bids(agents, strategies, space));
    net.row(static_cast<Eigen::Index>(k)) = run.net.transpose();
    pay.row(static_cast<Eigen::Index>(k)) = run.payments.rowwise().sum().transpose();
  });
  SimulationReport rep;
  rep.runs = n_runs;
  mean_se(net, rep.mean_net, rep.se_net);
  mean_se(pay, rep.mean_payment, rep.se_payment);
  rep.bb_rate = (pay.rowwise().sum().array() >= 0.0).cast<double>().mean();
  rep.ir_rate = (net.array() >= 0.0).cast<double>().colwise().mean().transpose();
  if (keep_samples) {
    rep.samples = std::move(net);
    rep.payment_samples = std::move(pay);
  }
  return rep;
}

PairedDifference paired_difference(const SimulationReport& a, const SimulationReport& b, std::size_t agent) {
  if (a.samples.rows() == 0 || a.samples.rows() != b.samples.rows()) {
    throw ValidationError("paired difference needs kept samples of equal length");
  }
  const auto j = static_cast<Eigen::Index>(agent);
  const Vec d = a.samples.col(j) - b.samples.col(j);
  Vec mean, se;
  mean_se(Mat(d), mean, se);
  return {mean[0], se[0]};
}

std::vector<TrajectoryRow> simulate_trajectories(const std::vector<LqAgent>& agents,
                                                 const std::vector<Strategy>& strategies, double c,
                                                 std::size_t n_runs, std::uint64_t seed) {
  const LayeredMechanism mech(reported_models(agents, strategies), {PivotKind::kClarke, c});
  std::vector<TrajectoryRow> rows;
  for (std::size_t k = 0; k < n_runs; ++k) {
    const Mat prim = draw_primitives(agents, seed, k);
    const AffineSpace space = AffineSpace::realized(prim);
    const auto bids = strategy_bids(agents, strategies, space);
    const LayeredRun run = mech.run(agents, space, bids);
    for (int s = 0; s < mech.gains().horizon; ++s) {
      const auto ss = static_cast<std::size_t>(s);
      rows.push_back({k, s, run.multipliers[ss][0], prim.col(s), bids[ss].col(0), run.controls[ss].col(0),
                      run.payments.col(s)});
    }
  }
  return rows;
}

std::vector<OpponentProfile> sample_opponent_profiles(std::size_t n_agents, int horizon, std::size_t count,
                                                      double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-scale, scale);
  std::vector<OpponentProfile> out;
  for (std::size_t p = 0; p < count; ++p) {
    Mat m(static_cast<Eigen::Index>(n_agents), horizon);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (int s = 0; s < horizon; ++s) m(i, s) = unif(rng);
    }
    out.push_back({m});
  }
  return out;
}

LayeredIcReport ic_grid_check_layered(const std::vector<LqAgent>& agents, std::size_t agent_index,
                                      const std::vector<double>& bid_grid,
                                      const std::vector<OpponentProfile>& opponent_profiles, double c,
                                      std::uint64_t seed, double slack) {
  validate_lq_agents(agents);
  if (agent_index >= agents.size()) throw ValidationError("ic check: agent index out of range");
  const LayeredMechanism mech(agents, {PivotKind::kClarke, c});
  const int T = common_horizon(agents);
  const auto n = static_cast<Eigen::Index>(agents.size());
  const auto me = static_cast<Eigen::Index>(agent_index);
  std::vector<OpponentProfile> profiles = opponent_profiles;
  if (profiles.empty()) profiles.push_back({Mat::Zero(n, T)});

  Mat var(n, T);
  for (Eigen::Index i = 0; i < n; ++i) {
    var(i, 0) = agents[static_cast<std::size_t>(i)].init_variance;
    for (int k = 1; k < T; ++k) var(i, k) = agents[static_cast<std::size_t>(i)].noise_variance;
  }

  LayeredIcReport rep;
  rep.strict_margin = std::numeric_limits<double>::infinity();
  const int strict_stage = T >= 2 ? T - 2 : -1;
  for (std::size_t p = 0; p < profiles.size(); ++p) {
    const Mat& prof = profiles[p].bids;
    if (prof.rows() != n || prof.cols() != T) throw ValidationError("ic check: profile shape mismatch");
    for (int s = 0; s < T; ++s) {
      // history up to stage s is pinned; later primitives stay random
      const Mat hist = draw_primitives(agents, seed, p * static_cast<std::size_t>(T) + static_cast<std::size_t>(s));
      Eigen::Array<bool, -1, -1> fixed = Eigen::Array<bool, -1, -1>::Constant(n, T, false);
      Mat values = Mat::Zero(n, T);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (int k = 0; k <= s; ++k) {
          fixed(i, k) = true;
          if (i == me) values(i, k) = hist(i, k);
        }
      }
      const AffineSpace space(var, values, fixed);
      std::vector<Mat> bids = truthful_bids(agents, space);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == me) continue;
        for (int k = 0; k <= s; ++k) {
          bids[static_cast<std::size_t>(k)].row(j).setZero();
          bids[static_cast<std::size_t>(k)](j, space.constant()) = prof(j, k);
        }
      }
      auto value = [&](double eps) {
        std::vector<Mat> b = bids;
        b[static_cast<std::size_t>(s)](me, space.constant()) += eps;
        return mech.run(agents, space, b).net[me];
      };
      const double honest = value(0.0);
      for (double eps : bid_grid) {
        const double dev = value(eps);
        const double gain = dev - honest;
        ++rep.evaluations;
        rep.max_gain = std::max(rep.max_gain, gain);
        if (gain > slack * (1.0 + std::abs(honest))) ++rep.violations;
        if (eps != 0.0 && s == strict_stage) rep.strict_margin = std::min(rep.strict_margin, -gain);
        if (s == T - 1) rep.final_stage_spread = std::max(rep.final_stage_spread, std::abs(gain));
      }
    }
  }
  if (!std::isfinite(rep.strict_margin)) rep.strict_margin = 0.0;
  return rep;
}

namespace {

// Expected welfare of a subset of agents from t on under a fixed closed loop:
// x'P x + p'x + c, noise included.
struct PolicyValue {
  std::vector<Mat> P;
  std::vector<Vec> p;
  std::vector<double> c;
};

PolicyValue policy_value(const GainSchedule& g, const Vec& select, const Vec& noise) {
  const Eigen::Index n = g.agents;
  const int T = g.horizon;
  const auto Ts = static_cast<std::size_t>(T);
  PolicyValue v{std::vector<Mat>(Ts + 1, Mat::Zero(n, n)), std::vector<Vec>(Ts + 1, Vec::Zero(n)),
                std::vector<double>(Ts + 1, 0.0)};
  const Vec sq = select.cwiseProduct(g.q), sr = select.cwiseProduct(g.r), sv = select.cwiseProduct(g.drive);
  const Mat Qs = sq.asDiagonal(), Rs = sr.asDiagonal();
  const Mat A = g.a.asDiagonal(), B = g.b.asDiagonal();
  for (int t = T - 1; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const Mat& K = g.K[ts];
    const Vec& k = g.k[ts];
    const Mat Acl = A + B * K;
    const Vec f = B * k + g.exo[ts];
    const Mat& Pn = v.P[ts + 1];
    const Vec& pn = v.p[ts + 1];
    v.P[ts] = Qs + K.transpose() * Rs * K + Acl.transpose() * Pn * Acl;
    v.p[ts] = -2.0 * Qs * g.x_target + 2.0 * K.transpose() * Rs * k + K.transpose() * sv +
              Acl.transpose() * (2.0 * Pn * f + pn);
    v.c[ts] = g.x_target.dot(Qs * g.x_target) + k.dot(Rs * k) + sv.dot(k) + f.dot(Pn * f) + pn.dot(f) +
              (Pn.diagonal().array() * noise.array()).sum() + v.c[ts + 1];
  }
  return v;
}

double expect_value(const PolicyValue& v, int t, const Mat& x, const AffineSpace& space) {
  const auto ts = static_cast<std::size_t>(t);
  double e = v.c[ts] + v.p[ts].dot(x.col(space.constant()));
  const Mat Px = v.P[ts] * x;
  for (Eigen::Index k = 0; k < x.cols(); ++k) e += space.weights()[k] * x.col(k).dot(Px.col(k));
  return e;
}

Vec noise_of(const std::vector<LqAgent>& agents) {
  Vec v(static_cast<Eigen::Index>(agents.size()));
  for (std::size_t i = 0; i < agents.size(); ++i) v[static_cast<Eigen::Index>(i)] = agents[i].noise_variance;
  return v;
}

}  // namespace

NaiveOutcome naive_expected_net(const std::vector<LqAgent>& agents, const std::vector<Strategy>& strategies,
                                PivotKind pivot) {
  check_sizes(agents, strategies);
  validate_lq_agents(agents);
  const auto n = static_cast<Eigen::Index>(agents.size());
  const int T = common_horizon(agents);
  const GainSchedule g = compute_gains(agents);
  const Vec noise = noise_of(agents);

  std::vector<PolicyValue> others;
  std::vector<PolicyValue> excl;
  std::vector<GainSchedule> excl_gains;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec sel = Vec::Ones(n);
    sel[i] = 0.0;
    others.push_back(policy_value(g, sel, noise));
    if (pivot == PivotKind::kClarke) {
      const auto rest = drop_agent(agents, static_cast<std::size_t>(i));
      excl_gains.push_back(compute_gains(rest));
      excl.push_back(policy_value(excl_gains.back(), Vec::Ones(n - 1), noise_of(rest)));
    }
  }

  Mat offsets = Mat::Zero(n, T);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Strategy& s = strategies[static_cast<std::size_t>(i)];
    if (s.kind == StrategyKind::kNaiveStateBidder) {
      if (s.state_offsets.size() != T) throw ValidationError("naive bidder needs one offset per period");
      offsets.row(i) = s.state_offsets.transpose();
    } else if (s.kind != StrategyKind::kTruthful) {
      throw ValidationError("naive mechanism supports truthful and naive state bidders only");
    }
  }

  const AffineSpace space = AffineSpace::for_agents(agents);
  const Eigen::Index C = space.constant();
  Mat x = space.zeros(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = space.slot(i, 0);
    x(i, C) += agents[static_cast<std::size_t>(i)].x0;
  }
  NaiveOutcome out{Vec::Zero(n), Vec::Zero(n), Vec::Zero(n)};
  for (int t = 0; t < T; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    Mat rep = x;
    rep.col(C) += offsets.col(t);
    Mat u = g.K[ts] * rep;
    u.col(C) += g.k[ts];
    for (Eigen::Index i = 0; i < n; ++i) {
      double h = 0.0;
      if (pivot == PivotKind::kClarke) {
        Mat rest(n - 1, rep.cols());
        rest << rep.topRows(i), rep.bottomRows(n - 1 - i);
        h = expect_value(excl[static_cast<std::size_t>(i)], t, rest, space);
      }
      out.payments[i] += h - expect_value(others[static_cast<std::size_t>(i)], t, rep, space);
      const auto& ag = agents[static_cast<std::size_t>(i)];
      RowVec e = x.row(i);
      e[C] -= ag.x_target;
      const RowVec ui = u.row(i);
      out.utilities[i] += ag.q * space.expect(e, e) + ag.r * space.expect(ui, ui) + ag.drive * space.mean(ui);
    }
    if (t + 1 == T) break;
    Mat xn = x;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& ag = agents[static_cast<std::size_t>(i)];
      xn.row(i) = ag.a * x.row(i) + ag.b * u.row(i) + space.slot(i, t + 1);
      xn(i, C) += ag.exo(t);
    }
    x = std::move(xn);
  }
  out.net = out.utilities - out.payments;
  return out;
}

CounterexampleReport naive_mechanism_counterexample(const std::vector<LqAgent>& agents, double opponent_lie,
                                                    const std::vector<double>& grid, PivotKind pivot) {
  validate_lq_agents(agents);
  if (agents.size() < 2) throw ValidationError("counterexample needs two agents");
  const int T = common_horizon(agents);
  const auto n = agents.size();
  CounterexampleReport rep;
  rep.opponent_lie = opponent_lie;
  rep.grid = grid;

  std::vector<Strategy> truthful(n, Strategy::naive(Vec::Zero(T)));
  const double tt = naive_expected_net(agents, truthful, pivot).net[0];
  rep.truthful_vs_truthful = naive_expected_net(agents, truthful, pivot).net[0] - tt;

  std::vector<Strategy> prof = truthful;
  Vec lie = Vec::Zero(T);
  lie[0] = opponent_lie;
  prof[1] = Strategy::naive(lie);
  rep.naive_truthful = naive_expected_net(agents, prof, pivot).net[0];

  const LayeredMechanism mech(agents, {pivot, 1.0});
  const AffineSpace space = AffineSpace::for_agents(agents);
  std::vector<Mat> base = truthful_bids(agents, space);
  base[0](1, space.constant()) += opponent_lie;
  const double layered_truth = mech.run(agents, space, base).net[0];

  rep.naive_best = rep.naive_truthful;
  rep.best_offsets = Vec::Zero(T);
  rep.layered_gap = 0.0;
  std::vector<std::size_t> idx(static_cast<std::size_t>(T), 0);
  const std::size_t G = grid.size();
  if (G == 0) return rep;
  while (true) {
    Vec off(T);
    for (int t = 0; t < T; ++t) off[t] = grid[idx[static_cast<std::size_t>(t)]];
    prof[0] = Strategy::naive(off);
    const double v = naive_expected_net(agents, prof, pivot).net[0];
    if (v > rep.naive_best) {
      rep.naive_best = v;
      rep.best_offsets = off;
    }
    std::vector<Mat> b = base;
    for (int t = 0; t < T; ++t) b[static_cast<std::size_t>(t)](0, space.constant()) += off[t];
    rep.layered_gap = std::max(rep.layered_gap, mech.run(agents, space, b).net[0] - layered_truth);
    std::size_t d = 0;
    while (d < idx.size() && ++idx[d] == G) idx[d++] = 0;
    if (d == idx.size()) break;
  }
  rep.naive_gap = rep.naive_best - rep.naive_truthful;
  rep.status = rep.naive_gap > 1e-9 * (1.0 + std::abs(rep.naive_truthful)) ? SearchStatus::kViolationFound
                                                                            : SearchStatus::kInconclusive;
  return rep;
}

}  // namespace svcg
