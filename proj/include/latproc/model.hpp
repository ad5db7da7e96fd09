#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latproc/common.hpp"
#include "latproc/orthant.hpp"

namespace latproc {

/// Sentinel for an observation that was not made (or was censored).
constexpr int kMissingValue = -1;

/// One subject's longitudinal record. Visit times are years since the
/// model's time origin. observations is K x n_i with kMissingValue holes.
struct SubjectRecord {
  std::string id;
  std::vector<double> visit_times;
  Eigen::MatrixXi observations;
  std::map<std::string, double> covariates;

  int visits() const { return static_cast<int>(visit_times.size()); }
};

enum class TestKind { Binary, Ordinal };

/// Families of cut-off parameterizations. SingleThreshold has one free
/// threshold; PowerGrid has a multiplicative factor, a power, one free top
/// cut-off, and a pinned topmost cut-off (fixed_top).
enum class CutoffKind { SingleThreshold, PowerGrid };

/// Covariate expressions available to test-level fixed effects. Practice is
/// the first-visit indicator.
enum class CovTerm { Education, Practice, EducationPractice };

struct TestSpec {
  std::string name;
  TestKind kind = TestKind::Binary;
  int categories = 2;
  CutoffKind cutoff_model = CutoffKind::SingleThreshold;
  double fixed_top = 40.0;
  bool has_random_effect = false;
  bool has_error_term = false;
  std::vector<CovTerm> fixed_effect_terms;

  int cutoff_param_count() const {
    return cutoff_model == CutoffKind::SingleThreshold ? 1 : 3;
  }
};

/// Shape of the latent-process deterministic trend
/// f(t) = (b1 + b2 Ed) + (b3 + b4 Ed) t^b5. Linear pins b5 = 1 (not a free
/// parameter); PowerTime estimates b5 > 0.
enum class LatentMeanKind { Linear, PowerTime };

struct ModelSpec {
  LatentMeanKind latent_mean = LatentMeanKind::PowerTime;
  int random_effects = 1;  // q: 0 or 1 (intercept only)
  // Pins beta_1 at zero (it leaves the free set); one way to locate the
  // latent scale.
  bool intercept_fixed = false;
  std::vector<TestSpec> tests;
  double time_origin = 65.0;
  // Inclusion requires a negative entry_test result at the first visit; the
  // likelihood conditions on that event.
  bool entry_truncation = true;
  int entry_test = 0;

  int test_count() const { return static_cast<int>(tests.size()); }
};

/// Model parameters in their natural (constrained) scale.
/// beta drives the latent mean; per test there is a fixed-effect coefficient
/// vector (matching fixed_effect_terms), a cut-off parameter vector
/// (threshold, or factor/power/free-top), and scale parameters sigma_d /
/// sigma_eps that must be zero exactly when the corresponding test declares
/// no random effect / no error term.
struct ParameterVector {
  Eigen::VectorXd beta;
  std::vector<Eigen::VectorXd> test_effects;
  std::vector<Eigen::VectorXd> cutoffs;
  double sigma_a = 1.0;
  Eigen::VectorXd sigma_d;
  Eigen::VectorXd sigma_eps;
};

struct CovarianceAssembly {
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd sigma_lambda;
  Eigen::MatrixXd sigma_d;
  Eigen::MatrixXd sigma_eps;
  Eigen::MatrixXd sigma_total;
};

/// Position of test k, visit j on the stacked Kn_i axis (all of test 0's
/// visits ascending, then test 1's, ...).
inline int flat_index(int test, int visit, int visits) {
  return test * visits + visit;
}

/// Throws ConfigError if the specification is structurally invalid
/// (category counts, cut-off families, degenerate tests) or fails the
/// identifiability checks below.
void validate_spec(const ModelSpec& spec);

/// A structurally conforming parameter vector for spec: zero coefficients,
/// unit scales and grid shape parameters, a unit time power.
ParameterVector default_parameters(const ModelSpec& spec);

/// Throws DomainError unless params are structurally and numerically valid
/// for spec (component counts, required positivity, forced zeros).
void validate_parameters(const ModelSpec& spec, const ParameterVector& params);

/// Throws DataError unless the record is well formed for spec: strictly
/// increasing nonnegative visit times, observation matrix K x n_i, values in
/// range or missing.
void validate_subject(const ModelSpec& spec, const SubjectRecord& subject);

/// Deterministic part of the latent process at time t (years since origin).
double latent_mean(const ModelSpec& spec, const ParameterVector& params,
                   const SubjectRecord& subject, double t);

/// Expected intermediate variable for (test, visit): latent mean plus the
/// test's fixed-effect offset.
double intermediate_mean(const ModelSpec& spec, const ParameterVector& params,
                         const SubjectRecord& subject, int test, int visit);

/// Brownian-motion covariance Gamma[j,l] = min(t_j, t_l).
Eigen::MatrixXd brownian_cov(const std::vector<double>& times);

/// Stacked mean vector over the Kn_i axis.
Eigen::VectorXd assemble_mean(const ModelSpec& spec,
                              const ParameterVector& params,
                              const SubjectRecord& subject);

/// Covariance of the stacked intermediate variables: a K x K block tiling of
/// sigma_a^2 J + Gamma, plus per-test random-effect blocks sigma_d^2 J and
/// error diagonals sigma_eps^2 I.
CovarianceAssembly assemble_cov(const ModelSpec& spec,
                                const ParameterVector& params,
                                const SubjectRecord& subject);

/// Interior cut-offs (c_1 ... c_{M-1}) for one test, strictly increasing.
/// SingleThreshold: (threshold). PowerGrid with M categories: c_m =
/// fixed_top - factor * (M - 1 - m)^power for m in [1, M-3], c_{M-2} free,
/// c_{M-1} = fixed_top. Throws DomainError naming the first non-increasing
/// pair.
Eigen::VectorXd cutoff_grid(const TestSpec& test, const Eigen::VectorXd& eta);

/// Category of a latent value under a test's cut-off grid: y = m iff
/// c_m <= theta < c_{m+1} (c_0 = -inf, c_M = +inf). Binary tests yield 1 iff
/// theta <= threshold.
int categorize(const TestSpec& test, const Eigen::VectorXd& grid,
               double theta);

/// Integration region encoding the subject's observed categories over the
/// stacked axis; missing observations contribute (-inf, +inf).
OrthantBox observation_box(const ModelSpec& spec,
                           const ParameterVector& params,
                           const SubjectRecord& subject);

/// Structural identifiability checks. Returns human-readable violations
/// (empty means the spec is identifiable):
///   - reference equation: at least one test has no fixed-effect terms
///   - shared-effect anchor: at least one test has no test-level random
///     effect
///   - located scale: the latent intercept is fixed or some test pins a
///     cut-off value
///   - no duplicated covariate expression within a test equation
std::vector<std::string> validate_identifiability(const ModelSpec& spec);

/// Mapping between the constrained ParameterVector and the unconstrained
/// free vector the optimizer works in. Positive parameters (scales, power
/// grid factor/power, the latent time power) go through log/exp; everything
/// else is identity. The label list documents packing order.
class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelSpec& spec);

  int free_count() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }

  /// Constrained -> unconstrained. Throws DomainError on nonpositive values
  /// of positivity-constrained parameters.
  Eigen::VectorXd pack(const ParameterVector& params) const;

  /// Unconstrained -> constrained. Throws DomainError on length mismatch.
  ParameterVector unpack(const Eigen::VectorXd& x) const;

  /// Diagonal of d(natural)/d(unconstrained) at x: exp(x_j) for
  /// log-transformed slots, 1 elsewhere. Used for delta-method standard
  /// errors on the natural scale.
  Eigen::VectorXd transform_jacobian(const Eigen::VectorXd& x) const;

  /// The free parameters of params on their natural scale, in packing order.
  Eigen::VectorXd natural_values(const ParameterVector& params) const;

 private:
  ModelSpec spec_;
  std::vector<std::string> labels_;
};

/// The built-in joint specification: a binary diagnosis test (threshold cut,
/// own random effect, no error term, no fixed effects) and a 31-category
/// ordinal test (power cut-off grid with top pinned at 40, error term,
/// education/practice/interaction effects), power-time latent mean, random
/// intercept, origin at age 65, entry truncation on.
ModelSpec dementia_mmse_spec();

}  // namespace latproc
