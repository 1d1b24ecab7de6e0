#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace svcg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error categories map onto the CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DegenerateMarketError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class InfeasibleIntervalError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class StageOrderError : public Error {
 public:
  using Error::Error;
};

enum class MechanismKind { kVcg, kGroves, kSvcg };

struct PaymentSchedule {
  MechanismKind mechanism = MechanismKind::kVcg;
  Vec payments;
  double scaling = 1.0;
};

struct ScalingInterval {
  double lower = 0.0;
  double upper = 0.0;
  bool mpb_holds = false;
  int argmax_h = 0;
};

struct MinMaxResult {
  double c_star = 0.0;
  double z_star = 0.0;
  Vec distortions;
};

// Per-agent ingredients of the distortion d_i(c) = lagrange_i + others_i - c * h_i.
struct DistortionTerms {
  Vec lagrange;
  Vec others_welfare;
  Vec exclusion;
};

ScalingInterval make_interval(double total_welfare, const Vec& exclusion);

Vec distortions_at(const DistortionTerms& terms, double c, bool normalize);

// Exact minimizer of max_i |d_i(c)| on [lo, hi]: the envelope is convex
// piecewise affine, so its minimum sits at an endpoint, a kink or a root.
MinMaxResult minimize_envelope(const DistortionTerms& terms, double lo, double hi,
                               bool normalize);

MinMaxResult minmax_over_interval(const DistortionTerms& terms,
                                  const ScalingInterval& interval, bool normalize);

Vec svcg_from_terms(const Vec& exclusion, const Vec& others_welfare, double c);

}  // namespace svcg
