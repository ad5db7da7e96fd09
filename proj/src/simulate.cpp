#include "latproc/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "latproc/parallel.hpp"

namespace latproc {

namespace {

constexpr std::int64_t kMaxAttempts = 5000;

double uniform01(std::mt19937_64& eng) {
  double u = to_unit_interval(eng());
  if (u <= 0.0) u = 0x1.0p-54;
  return u;
}

double gaussian(std::mt19937_64& eng) {
  return normal_quantile(uniform01(eng));
}

double sample_entry_age(const EntryAgeSampler& sampler, std::mt19937_64& eng) {
  const double u = uniform01(eng);
  if (sampler.table.empty())
    return sampler.uniform_lo +
           u * (sampler.uniform_hi - sampler.uniform_lo);
  double total = 0.0;
  for (const auto& row : sampler.table) total += row.second;
  double cum = 0.0;
  for (const auto& row : sampler.table) {
    cum += row.second / total;
    if (u < cum) return row.first;
  }
  return sampler.table.back().first;
}

std::string subject_id(int index) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "s%06d", index + 1);
  return buf;
}

}  // namespace

void validate_design(const SimulationDesign& design) {
  if (design.n_subjects < 1)
    throw ConfigError("simulation needs at least one subject");
  if (!(design.education_prob >= 0.0 && design.education_prob <= 1.0))
    throw ConfigError("education_prob must lie in [0,1]");
  if (!(design.missing_prob >= 0.0 && design.missing_prob <= 1.0))
    throw ConfigError("missing_prob must lie in [0,1]");
  if (design.visit_offsets.empty() || design.visit_offsets.front() != 0.0)
    throw ConfigError("visit offsets must start at 0");
  for (std::size_t j = 1; j < design.visit_offsets.size(); ++j) {
    if (!(design.visit_offsets[j] > design.visit_offsets[j - 1]))
      throw ConfigError("visit offsets must be strictly increasing");
  }
  if (design.entry_age.table.empty()) {
    if (!(design.entry_age.uniform_hi >= design.entry_age.uniform_lo))
      throw ConfigError("entry age range is inverted");
  } else {
    for (const auto& row : design.entry_age.table) {
      if (!(row.second > 0.0))
        throw ConfigError("entry age table weights must be positive");
    }
  }
  if (design.threads < 1) throw ConfigError("threads must be >= 1");
}

SimulatedCohort simulate_cohort(const ModelSpec& spec,
                                const ParameterVector& params,
                                const SimulationDesign& design) {
  validate_spec(spec);
  validate_parameters(spec, params);
  validate_design(design);

  double min_age = design.entry_age.uniform_lo;
  if (!design.entry_age.table.empty()) {
    min_age = design.entry_age.table.front().first;
    for (const auto& row : design.entry_age.table)
      min_age = std::min(min_age, row.first);
  }
  if (min_age < spec.time_origin)
    throw ConfigError("entry ages must not precede the time origin");

  const int K = spec.test_count();
  const int n = static_cast<int>(design.visit_offsets.size());
  std::vector<Eigen::VectorXd> grids(K);
  for (int k = 0; k < K; ++k)
    grids[k] = cutoff_grid(spec.tests[k], params.cutoffs[k]);
  const Eigen::VectorXd& entry_grid = grids[spec.entry_test];

  SimulatedCohort out;
  out.subjects.resize(design.n_subjects);
  out.truth.resize(design.n_subjects);

  parallel_for(design.n_subjects, design.threads, [&](int i) {
    const std::string id = subject_id(i);
    std::mt19937_64 eng(derive_seed(design.seed, id));

    SubjectRecord subject;
    subject.id = id;
    SubjectTruth truth;
    truth.id = id;
    truth.d = Eigen::VectorXd::Zero(K);
    truth.w = Eigen::VectorXd::Zero(n);
    truth.theta = Eigen::MatrixXd::Zero(K, n);

    for (std::int64_t attempt = 1;; ++attempt) {
      if (attempt > kMaxAttempts)
        throw ConfigError(
            "entry rejection rate above 99% for subject " + id +
            ": parameters and design are inconsistent with inclusion");
      truth.attempts = attempt;

      truth.entry_age = sample_entry_age(design.entry_age, eng);
      const double ed =
          uniform01(eng) < design.education_prob ? 1.0 : 0.0;
      subject.covariates = {{"ed", ed}};
      subject.visit_times.assign(n, 0.0);
      const double t_entry = truth.entry_age - spec.time_origin;
      for (int j = 0; j < n; ++j)
        subject.visit_times[j] = t_entry + design.visit_offsets[j];

      truth.a1 = spec.random_effects == 1 ? params.sigma_a * gaussian(eng)
                                          : 0.0;
      for (int k = 0; k < K; ++k) {
        truth.d[k] = spec.tests[k].has_random_effect
                         ? params.sigma_d[k] * gaussian(eng)
                         : 0.0;
      }
      double prev_t = 0.0;
      double w = 0.0;
      for (int j = 0; j < n; ++j) {
        w += std::sqrt(subject.visit_times[j] - prev_t) * gaussian(eng);
        prev_t = subject.visit_times[j];
        truth.w[j] = w;
      }
      for (int j = 0; j < n; ++j) {
        for (int k = 0; k < K; ++k) {
          double theta = intermediate_mean(spec, params, subject, k, j) +
                         truth.a1 + truth.w[j] + truth.d[k];
          if (spec.tests[k].has_error_term)
            theta += params.sigma_eps[k] * gaussian(eng);
          truth.theta(k, j) = theta;
        }
      }

      if (!design.apply_entry_truncation) break;
      const int entry_cat = categorize(spec.tests[spec.entry_test],
                                       entry_grid,
                                       truth.theta(spec.entry_test, 0));
      if (entry_cat == 0) break;
    }

    subject.observations = Eigen::MatrixXi::Constant(K, n, kMissingValue);
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < K; ++k) {
        subject.observations(k, j) =
            categorize(spec.tests[k], grids[k], truth.theta(k, j));
      }
    }
    if (design.missing_prob > 0.0) {
      for (int j = 1; j < n; ++j) {
        if (uniform01(eng) < design.missing_prob)
          subject.observations.col(j).setConstant(kMissingValue);
      }
    }
    if (design.censor_after_diagnosis) {
      int first = -1;
      for (int j = 0; j < n && first < 0; ++j) {
        if (subject.observations(spec.entry_test, j) == 1) first = j;
      }
      if (first >= 0) {
        for (int k = 0; k < K; ++k) {
          if (spec.tests[k].kind != TestKind::Ordinal) continue;
          for (int j = first + 1; j < n; ++j)
            subject.observations(k, j) = kMissingValue;
        }
      }
    }

    validate_subject(spec, subject);
    out.subjects[i] = std::move(subject);
    out.truth[i] = std::move(truth);
  });

  for (const SubjectTruth& t : out.truth)
    out.rejected_attempts += t.attempts - 1;
  return out;
}

}  // namespace latproc
