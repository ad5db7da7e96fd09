#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "latproc/common.hpp"

namespace latproc {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPosInf = std::numeric_limits<double>::infinity();

// Scalar normal special functions. All of these are accurate in the far
// tails, which matters because interval probabilities near the extreme
// response categories underflow naive Phi differences.

/// Standard normal CDF, computed via erfc for tail accuracy.
double normal_cdf(double x);

/// Upper tail P(Z > x).
double normal_ccdf(double x);

/// Standard normal density.
double normal_pdf(double x);

/// Inverse standard normal CDF (Wichura's PPND16). Throws DomainError for
/// p outside (0, 1); p exactly 0 or 1 maps to -inf/+inf.
double normal_quantile(double p);

/// P(a < Z <= b) computed without catastrophic cancellation; a and b may be
/// infinite. Requires a <= b.
double normal_interval_prob(double a, double b);

/// Standard bivariate normal CDF P(X <= h, Y <= k) with correlation rho.
/// Gauss-Legendre scheme after Drezner & Wesolowsky as refined by Genz;
/// |rho| = 1 handled as the degenerate one-dimensional limit.
double std_bivariate_cdf(double h, double k, double rho);

/// P(a1 < X <= b1, a2 < Y <= b2) for standard bivariate normal margins.
double bivariate_rectangle_prob(double a1, double b1, double a2, double b2,
                                double rho);

/// Axis-aligned integration region: lower[i] < x_i <= upper[i]. Bounds may
/// be infinite; each lower bound must be strictly below its upper bound.
struct OrthantBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int dim() const { return static_cast<int>(lower.size()); }
  void validate() const;
};

struct IntegratorOptions {
  double target_abs_error = 1e-4;
  // Per-shift sample cap. Evaluation stops early once the estimated error
  // falls below target_abs_error.
  std::int64_t max_samples = 200000;
  int shifts = 12;
  std::uint64_t seed = 0;
};

struct IntegrationResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::int64_t samples = 0;
};

/// Variable ordering and Cholesky factor produced by the greedy
/// smallest-conditional-mass pivot strategy. order[k] is the original index
/// of the variable placed at position k.
struct OrderedFactor {
  Eigen::MatrixXd chol;     // lower triangular
  Eigen::VectorXd lower;    // bounds permuted to match
  Eigen::VectorXd upper;
  std::vector<int> order;
};

/// Reorders variables by smallest estimated conditional probability mass and
/// computes the Cholesky factor of the permuted covariance. Throws
/// FactorizationError (with the original variable index) if a pivot is not
/// positive.
OrderedFactor reorder_and_factor(const Eigen::MatrixXd& cov,
                                 const OrthantBox& box);

/// P(mean + Z in box) for Z ~ N(0, cov). Dimensions 1 and 2 use closed-form
/// CDFs; higher dimensions use the separation-of-variables transform
/// integrated by a randomized rank-1 lattice rule (Richtmyer generators,
/// baker's transform, averaged over independent random shifts). Deterministic
/// given (inputs, options.seed). Throws DomainError for invalid inputs,
/// FactorizationError if cov is numerically singular (condition number above
/// 1e12) or not positive definite.
IntegrationResult orthant_prob(const Eigen::VectorXd& mean,
                               const Eigen::MatrixXd& cov,
                               const OrthantBox& box,
                               const IntegratorOptions& options = {});

}  // namespace latproc
