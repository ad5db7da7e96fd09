#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latproc/likelihood.hpp"
#include "latproc/model.hpp"

namespace latproc {

/// What the maximizers see: a smooth function of an unconstrained vector,
/// decomposed into independent units (subjects) whose per-unit gradients
/// drive the score-variance metric.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual int dim() const = 0;
  virtual int units() const = 0;
  virtual double value(const Eigen::VectorXd& x) = 0;
  /// units() x dim() matrix; row i is unit i's gradient contribution.
  virtual Eigen::MatrixXd unit_scores(const Eigen::VectorXd& x) = 0;
};

struct OptimOptions {
  // Stop when U^T G^{-1} U / dim falls below this.
  double tolerance = 1e-4;
  int max_iter = 200;
  int max_halvings = 20;
  // Relative step for differencing the score into a curvature matrix.
  double hessian_step = 1e-4;
  // Largest per-coordinate move in one scoring step. A nearly flat
  // coordinate makes the score-variance metric close to singular and the
  // raw solve can propose an astronomically long step there; clamping that
  // coordinate keeps the step evaluable without shrinking the move of the
  // well-identified coordinates (a whole-vector rescale would stall them).
  // The bound also keeps trial scale parameters out of the regime where a
  // nearly singular covariance makes each integral run to its sample cap.
  double max_step = 5.0;
};

struct IterationRecord {
  int iteration = 0;
  double value = 0.0;      // objective after this iteration's step
  double step = 0.0;       // accepted step scale (0 when none accepted)
  double criterion = 0.0;  // U^T G^{-1} U / dim at the iteration start
  double ridge = 0.0;      // added to the metric's diagonal to factor it
};

struct OptimResult {
  Eigen::VectorXd x;
  double value = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd score;
  Eigen::MatrixXd score_var;  // G = sum of per-unit score outer products
  int iterations = 0;
  bool converged = false;
  double criterion = std::numeric_limits<double>::infinity();
  std::vector<IterationRecord> trace;
  std::string message;
};

/// Ascent with the score-variance metric: iterate x <- x + rho G^{-1} U
/// where U is the total gradient and G the sum of per-unit gradient outer
/// products, rho from a backtracking halving line search that never accepts
/// a decrease. Singular G gets an escalating diagonal ridge (flagged in the
/// trace). Stops at criterion < tolerance or max_iter; an exhausted line
/// search ends the run unconverged at the best point seen.
OptimResult rvs_maximize(Objective& objective, const Eigen::VectorXd& x0,
                         const OptimOptions& opts);

/// Damped-curvature ascent: solve (H + lambda D) d = U with H the
/// finite-difference curvature of -objective (from score differences), D its
/// clamped diagonal; lambda shrinks after accepted steps and grows when a
/// step fails or H does not factor. Same stopping rule as rvs_maximize.
OptimResult marquardt_maximize(Objective& objective, const Eigen::VectorXd& x0,
                               const OptimOptions& opts);

/// Delta-method standard deviations sqrt(diag(G^{-1})) scaled by
/// |jacobian[j]|. Throws NumericalError naming the flat directions when G is
/// numerically singular.
Eigen::VectorXd standard_errors(const Eigen::MatrixXd& score_var,
                                const Eigen::VectorXd& jacobian,
                                const std::vector<std::string>& labels);

enum class FitAlgorithm { Rvs, Marquardt, RvsThenMarquardt };

struct FitOptions {
  OptimOptions optim;
  LikelihoodOptions likelihood;
  FitAlgorithm algorithm = FitAlgorithm::RvsThenMarquardt;
  // Labels of free parameters to hold at their init values.
  std::vector<std::string> frozen;
};

struct FitResult {
  ParameterVector params_hat;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<std::string> labels;  // active (non-frozen) free parameters
  Eigen::VectorXd estimates;        // natural scale, one per label
  Eigen::VectorXd score;
  Eigen::MatrixXd score_var;
  Eigen::VectorXd std_errors;  // natural scale; NaN when se_ok is false
  bool se_ok = false;
  std::string se_message;
  int iterations = 0;
  bool converged = false;
  double stopping_criterion_value = std::numeric_limits<double>::infinity();
  std::vector<IterationRecord> trace;
  std::string algorithm_used;
  std::string message;  // optimizer diagnostics when not converged
};

/// Maximum-likelihood fit of the model over the unconstrained
/// parametrization. RvsThenMarquardt runs the score-variance ascent and, if
/// it fails to converge, restarts the damped-curvature ascent from its best
/// point. Standard errors come from the score variance at the optimum via
/// the transform Jacobian; a singular score variance is reported in
/// se_message instead of failing the fit.
FitResult fit_model(const ModelSpec& spec,
                    const std::vector<SubjectRecord>& cohort,
                    const ParameterVector& init, const FitOptions& opts);

}  // namespace latproc
