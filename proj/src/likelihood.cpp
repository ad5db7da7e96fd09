#include "latproc/likelihood.hpp"

#include <cmath>

#include "latproc/parallel.hpp"

namespace latproc {

namespace {

constexpr double kUnderflowFloor = 1e-300;

}  // namespace

IntegratorOptions subject_integrator_options(const LikelihoodOptions& opts,
                                             const std::string& subject_id) {
  IntegratorOptions io;
  io.target_abs_error = opts.target_abs_error;
  io.max_samples = opts.max_samples;
  io.shifts = opts.shifts;
  io.seed = derive_seed(opts.base_seed, subject_id);
  return io;
}

double truncation_prob(const ModelSpec& spec, const ParameterVector& params,
                       const SubjectRecord& subject) {
  if (!spec.entry_truncation) return 1.0;
  const int e = spec.entry_test;
  const double mean = intermediate_mean(spec, params, subject, e, 0);
  const double threshold =
      cutoff_grid(spec.tests[e], params.cutoffs[e])[0];
  const double t1 = subject.visit_times[0];
  const double var = params.sigma_a * params.sigma_a + t1 +
                     params.sigma_d[e] * params.sigma_d[e] +
                     params.sigma_eps[e] * params.sigma_eps[e];
  return normal_cdf((mean - threshold) / std::sqrt(var));
}

SubjectEvaluation evaluate_subject(const ModelSpec& spec,
                                   const ParameterVector& params,
                                   const SubjectRecord& subject,
                                   const LikelihoodOptions& opts) {
  if (!(opts.fd_step > 0.0) || !(opts.target_abs_error > 0.0))
    throw DomainError("likelihood options must have positive steps");

  SubjectEvaluation out;
  // Extreme trial parameters (overflowed means, inverted cut-off grids,
  // numerically singular covariances) mark a point where the likelihood is
  // not evaluable; report it as -inf so an ascent backs off instead of
  // aborting.
  const auto degenerate = [&out]() {
    out.underflow = true;
    out.loglik = kNegInf;
    out.loglik_se = 0.0;
    return out;
  };

  const Eigen::VectorXd mean = assemble_mean(spec, params, subject);
  const Eigen::MatrixXd cov = assemble_cov(spec, params, subject).sigma_total;
  const OrthantBox box = observation_box(spec, params, subject);
  if (!mean.allFinite() || !cov.allFinite()) return degenerate();
  for (int i = 0; i < box.dim(); ++i) {
    if (std::isnan(box.lower[i]) || std::isnan(box.upper[i]) ||
        box.lower[i] > box.upper[i])
      return degenerate();
  }

  // Missing observations leave (-inf, +inf) axes; dropping them reduces the
  // multiplicity of the integral without changing its value.
  std::vector<int> active;
  for (int i = 0; i < box.dim(); ++i) {
    if (box.lower[i] != kNegInf || box.upper[i] != kPosInf)
      active.push_back(i);
  }

  out.dims = static_cast<int>(active.size());
  if (!active.empty()) {
    const int d = out.dims;
    Eigen::VectorXd sub_mean(d);
    Eigen::MatrixXd sub_cov(d, d);
    OrthantBox sub_box;
    sub_box.lower.resize(d);
    sub_box.upper.resize(d);
    for (int i = 0; i < d; ++i) {
      sub_mean[i] = mean[active[i]];
      sub_box.lower[i] = box.lower[active[i]];
      sub_box.upper[i] = box.upper[active[i]];
      for (int j = 0; j < d; ++j)
        sub_cov(i, j) = cov(active[i], active[j]);
    }
    IntegrationResult r;
    try {
      r = orthant_prob(sub_mean, sub_cov, sub_box,
                       subject_integrator_options(opts, subject.id));
    } catch (const FactorizationError&) {
      return degenerate();
    }
    out.box_prob = r.value;
    out.box_error = r.error_estimate;
    out.samples = r.samples;
  }

  out.truncation = truncation_prob(spec, params, subject);
  if (!(out.box_prob >= kUnderflowFloor) ||
      !(out.truncation >= kUnderflowFloor))
    return degenerate();
  out.loglik = std::log(out.box_prob) - std::log(out.truncation);
  out.loglik_se = out.box_error / out.box_prob;
  return out;
}

double subject_loglik(const ModelSpec& spec, const ParameterVector& params,
                      const SubjectRecord& subject,
                      const LikelihoodOptions& opts) {
  return evaluate_subject(spec, params, subject, opts).loglik;
}

CohortLoglik total_loglik(const ModelSpec& spec,
                          const ParameterVector& params,
                          const std::vector<SubjectRecord>& cohort,
                          const LikelihoodOptions& opts) {
  if (cohort.empty()) throw DataError("cohort is empty");
  const int n = static_cast<int>(cohort.size());
  std::vector<SubjectEvaluation> evals(n);
  parallel_for(n, opts.threads, [&](int i) {
    evals[i] = evaluate_subject(spec, params, cohort[i], opts);
  });

  CohortLoglik out;
  out.per_subject.resize(n);
  for (int i = 0; i < n; ++i) {
    out.per_subject[i] = evals[i].loglik;
    out.total += evals[i].loglik;
    out.noise_bound += evals[i].loglik_se;
    if (evals[i].underflow) out.underflow_ids.push_back(cohort[i].id);
  }
  return out;
}

Eigen::MatrixXd score_by_subject(const ModelSpec& spec,
                                 const ParameterVector& params,
                                 const std::vector<SubjectRecord>& cohort,
                                 const LikelihoodOptions& opts) {
  if (cohort.empty()) throw DataError("cohort is empty");
  const ParameterLayout layout(spec);
  const Eigen::VectorXd x = layout.pack(params);
  const int n = static_cast<int>(cohort.size());
  const int p = layout.free_count();

  // Perturbed parameter vectors are shared across subjects.
  std::vector<ParameterVector> plus(p), minus(p);
  std::vector<double> step(p);
  for (int c = 0; c < p; ++c) {
    step[c] = opts.fd_step * (1.0 + std::fabs(x[c]));
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp[c] += step[c];
    xm[c] -= step[c];
    plus[c] = layout.unpack(xp);
    minus[c] = layout.unpack(xm);
  }

  Eigen::MatrixXd score(n, p);
  parallel_for(n, opts.threads, [&](int i) {
    const SubjectRecord& subject = cohort[i];
    for (int c = 0; c < p; ++c) {
      const double up = subject_loglik(spec, plus[c], subject, opts);
      const double down = subject_loglik(spec, minus[c], subject, opts);
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericalError("score: log-likelihood underflow at " +
                             layout.labels()[c] + " for subject " +
                             subject.id);
      score(i, c) = (up - down) / (2.0 * step[c]);
    }
  });
  return score;
}

}  // namespace latproc
