#include <string>

#include "svcg/lqg_layered.hpp"

namespace svcg {

GainSchedule compute_gains(const std::vector<LqAgent>& agents, int eliminated) {
  validate_lq_agents(agents, true);
  const Eigen::Index n = static_cast<Eigen::Index>(agents.size());
  const int T = common_horizon(agents);
  if (eliminated < 0) eliminated = static_cast<int>(n - 1);
  if (eliminated >= n) throw ValidationError("eliminated index out of range");

  GainSchedule g;
  g.horizon = T;
  g.agents = n;
  g.eliminated = eliminated;
  g.a.resize(n);
  g.b.resize(n);
  g.q.resize(n);
  g.r.resize(n);
  g.x_target.resize(n);
  g.drive.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ag = agents[static_cast<std::size_t>(i)];
    g.a[i] = ag.a;
    g.b[i] = ag.b;
    g.q[i] = ag.q;
    g.r[i] = ag.r;
    g.x_target[i] = ag.x_target;
    g.drive[i] = ag.drive;
  }
  g.exo.assign(static_cast<std::size_t>(T), Vec::Zero(n));
  for (int t = 0; t < T; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) g.exo[static_cast<std::size_t>(t)][i] = agents[static_cast<std::size_t>(i)].exo(t);
  }

  const Mat A = g.a.asDiagonal();
  const Mat B = g.b.asDiagonal();
  const Mat Q = g.q.asDiagonal();
  const Mat R = g.r.asDiagonal();
  const Vec ones = Vec::Ones(n);

  // u = E z, the eliminated agent absorbs minus the sum of the others.
  Mat E = Mat::Zero(n, n - 1);
  for (Eigen::Index j = 0, col = 0; j < n; ++j) {
    if (j == eliminated) continue;
    E(j, col) = 1.0;
    E(eliminated, col) = -1.0;
    ++col;
  }

  const auto Ts = static_cast<std::size_t>(T);
  g.K.assign(Ts, Mat::Zero(n, n));
  g.k.assign(Ts, Vec::Zero(n));
  g.P.assign(Ts + 1, Mat::Zero(n, n));
  g.p.assign(Ts + 1, Vec::Zero(n));
  g.c0.assign(Ts + 1, 0.0);
  g.Phi.assign(Ts, RowVec::Zero(n));
  g.phi.assign(Ts, 0.0);

  for (int t = T - 1; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const Mat& P = g.P[ts + 1];
    const Vec& p = g.p[ts + 1];
    const Vec& d = g.exo[ts];
    const Mat M = R + B.transpose() * P * B;
    const Vec lin = g.drive + B.transpose() * (2.0 * P * d + p);
    Mat K = Mat::Zero(n, n);
    Vec k = Vec::Zero(n);
    if (n >= 2) {
      const Mat Mr = E.transpose() * M * E;
      Eigen::LLT<Mat> llt(-Mr);
      if (llt.info() != Eigen::Success) throw NumericalError("reduced Hessian not negative definite");
      // z = -Mr^{-1} E'(B'PA x) - 1/2 Mr^{-1} E' lin
      K = E * llt.solve(E.transpose() * B.transpose() * P * A);
      k = 0.5 * E * llt.solve(E.transpose() * lin);
    }
    Eigen::LLT<Mat> mllt(-M);
    if (mllt.info() != Eigen::Success) throw NumericalError("stage Hessian not negative definite");
    const Vec m1 = mllt.solve(ones);  // -M^{-1} 1
    const double den = ones.dot(m1);
    g.Phi[ts] = (m1.transpose() * (2.0 * B.transpose() * P * A)) / den;
    g.phi[ts] = m1.dot(lin) / den;

    const Mat Acl = A + B * K;
    const Vec f = B * k + d;
    const Vec xb = g.x_target;
    g.c0[ts] = xb.dot(Q * xb) + k.dot(R * k) + g.drive.dot(k) + f.dot(P * f) + p.dot(f) + g.c0[ts + 1];
    g.p[ts] = -2.0 * Q * xb + 2.0 * K.transpose() * R * k + K.transpose() * g.drive +
              Acl.transpose() * (2.0 * P * f + p);
    Mat Pn = Q + K.transpose() * R * K + Acl.transpose() * P * Acl;
    g.P[ts] = 0.5 * (Pn + Pn.transpose());
    g.K[ts] = K;
    g.k[ts] = k;
  }
  return g;
}

}  // namespace svcg
