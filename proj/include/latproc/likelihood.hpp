#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latproc/model.hpp"
#include "latproc/orthant.hpp"

namespace latproc {

struct LikelihoodOptions {
  double target_abs_error = 1e-4;
  std::int64_t max_samples = 200000;
  int shifts = 12;
  std::uint64_t base_seed = 0;
  // Relative central-difference step for the score, in the unconstrained
  // parametrization.
  double fd_step = 1e-4;
  int threads = 1;
};

/// Full per-subject evaluation. loglik is
/// log P(Theta in box) - log P(entry test negative at first visit); the
/// correction term is omitted when the spec disables entry truncation.
struct SubjectEvaluation {
  double loglik = 0.0;
  // Delta-method standard error of loglik inherited from the integrator.
  double loglik_se = 0.0;
  double box_prob = 1.0;
  double box_error = 0.0;
  double truncation = 1.0;
  std::int64_t samples = 0;
  // Integral multiplicity after dropping fully missing axes.
  int dims = 0;
  // Probability fell below 1e-300; loglik is -inf rather than clamped.
  bool underflow = false;
};

/// Closed-form probability of the entry condition (entry test negative at
/// the first visit).
double truncation_prob(const ModelSpec& spec, const ParameterVector& params,
                       const SubjectRecord& subject);

/// Integrator settings for one subject: tolerances from opts, the seed
/// derived from (opts.base_seed, subject_id) only.
IntegratorOptions subject_integrator_options(const LikelihoodOptions& opts,
                                             const std::string& subject_id);

/// Evaluates one subject. The integrator seed is derived from
/// (opts.base_seed, subject.id) only, never from params, so repeated
/// evaluations at different parameter values share sample paths.
SubjectEvaluation evaluate_subject(const ModelSpec& spec,
                                   const ParameterVector& params,
                                   const SubjectRecord& subject,
                                   const LikelihoodOptions& opts);

double subject_loglik(const ModelSpec& spec, const ParameterVector& params,
                      const SubjectRecord& subject,
                      const LikelihoodOptions& opts);

struct CohortLoglik {
  double total = 0.0;
  // Sum of per-subject standard errors; a conservative noise bound on total.
  double noise_bound = 0.0;
  std::vector<double> per_subject;
  std::vector<std::string> underflow_ids;
};

/// Sum of subject log-likelihoods in cohort order (deterministic reduction).
/// Any underflowing subject makes the total -inf and is listed by id.
CohortLoglik total_loglik(const ModelSpec& spec,
                          const ParameterVector& params,
                          const std::vector<SubjectRecord>& cohort,
                          const LikelihoodOptions& opts);

/// Per-subject score vectors (n x p) by central finite differences in the
/// unconstrained parametrization, step fd_step * (1 + |x_c|) per component.
/// Both perturbation points reuse the same per-subject integrator seeds, so
/// quasi-random noise largely cancels. Throws NumericalError (naming the
/// parameter and subject) if any perturbed evaluation underflows.
Eigen::MatrixXd score_by_subject(const ModelSpec& spec,
                                 const ParameterVector& params,
                                 const std::vector<SubjectRecord>& cohort,
                                 const LikelihoodOptions& opts);

}  // namespace latproc
