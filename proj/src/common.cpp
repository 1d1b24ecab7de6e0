#include "svcg/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace svcg {

ScalingInterval make_interval(double total_welfare, const Vec& exclusion) {
  const Eigen::Index n = exclusion.size();
  if (n < 2) throw DegenerateMarketError("scaling interval needs at least 2 agents");
  ScalingInterval out;
  int imax = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    if (exclusion[i] > exclusion[imax]) imax = static_cast<int>(i);
  }
  const double h_sum = exclusion.sum();
  const double h_max = exclusion[imax];
  out.argmax_h = imax;
  out.lower = static_cast<double>(n - 1) * total_welfare / h_sum;
  out.upper = total_welfare / h_max;
  const bool positive = total_welfare > 0.0 && exclusion.minCoeff() > 0.0;
  out.mpb_holds = positive && static_cast<double>(n - 1) * h_max <= h_sum;
  return out;
}

namespace {

struct Piece {
  double alpha;  // value at c = 0
  double beta;   // slope in c
};

std::vector<Piece> pieces_of(const DistortionTerms& terms, bool normalize) {
  const Eigen::Index n = terms.lagrange.size();
  if (terms.others_welfare.size() != n || terms.exclusion.size() != n) {
    throw ValidationError("distortion terms: dimension mismatch");
  }
  std::vector<Piece> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double alpha = terms.lagrange[i] + terms.others_welfare[i];
    double beta = -terms.exclusion[i];
    if (normalize) {
      const double den = terms.lagrange[i];
      if (den == 0.0) {
        throw NumericalError("normalized distortion undefined: Lagrange payment of agent " +
                             std::to_string(i) + " is zero");
      }
      alpha /= den;
      beta /= den;
    }
    out.push_back({alpha, beta});
  }
  return out;
}

double envelope(const std::vector<Piece>& ps, double c) {
  double z = 0.0;
  for (const auto& p : ps) z = std::max(z, std::abs(p.alpha + p.beta * c));
  return z;
}

}  // namespace

Vec distortions_at(const DistortionTerms& terms, double c, bool normalize) {
  const auto ps = pieces_of(terms, normalize);
  Vec d(static_cast<Eigen::Index>(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    d[static_cast<Eigen::Index>(i)] = ps[i].alpha + ps[i].beta * c;
  }
  return d;
}

MinMaxResult minimize_envelope(const DistortionTerms& terms, double lo, double hi,
                               bool normalize) {
  if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw InfeasibleIntervalError("minmax: empty or non-finite interval");
  }
  const auto ps = pieces_of(terms, normalize);
  std::vector<double> cand{lo, hi};
  auto push = [&](double c) {
    if (std::isfinite(c) && c > lo && c < hi) cand.push_back(c);
  };
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].beta != 0.0) push(-ps[i].alpha / ps[i].beta);
    for (std::size_t j = i + 1; j < ps.size(); ++j) {
      // +d_i = +d_j and +d_i = -d_j
      const double db = ps[i].beta - ps[j].beta;
      if (db != 0.0) push((ps[j].alpha - ps[i].alpha) / db);
      const double sb = ps[i].beta + ps[j].beta;
      if (sb != 0.0) push(-(ps[i].alpha + ps[j].alpha) / sb);
    }
  }
  std::sort(cand.begin(), cand.end());
  MinMaxResult best;
  best.z_star = std::numeric_limits<double>::infinity();
  for (double c : cand) {
    const double z = envelope(ps, c);
    if (z < best.z_star) {
      best.z_star = z;
      best.c_star = c;
    }
  }
  best.distortions = distortions_at(terms, best.c_star, normalize);
  return best;
}

MinMaxResult minmax_over_interval(const DistortionTerms& terms,
                                  const ScalingInterval& interval, bool normalize) {
  if (!interval.mpb_holds || interval.lower > interval.upper) {
    throw InfeasibleIntervalError("minmax: scaling interval infeasible (MPB fails or welfare not positive)");
  }
  return minimize_envelope(terms, interval.lower, interval.upper, normalize);
}

Vec svcg_from_terms(const Vec& exclusion, const Vec& others_welfare, double c) {
  if (!std::isfinite(c)) throw ValidationError("scaling factor c must be finite");
  if (exclusion.size() != others_welfare.size()) {
    throw ValidationError("payments: dimension mismatch");
  }
  return c * exclusion - others_welfare;
}

}  // namespace svcg
