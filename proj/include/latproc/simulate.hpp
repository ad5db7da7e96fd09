#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "latproc/model.hpp"

namespace latproc {

/// Entry-age distribution: an empirical (age, weight) table when nonempty,
/// otherwise uniform on [uniform_lo, uniform_hi].
struct EntryAgeSampler {
  std::vector<std::pair<double, double>> table;
  double uniform_lo = 65.0;
  double uniform_hi = 90.0;
};

struct SimulationDesign {
  int n_subjects = 0;
  EntryAgeSampler entry_age;
  double education_prob = 0.5;
  std::vector<double> visit_offsets = {0.0};
  std::uint64_t seed = 0;
  bool apply_entry_truncation = true;
  bool censor_after_diagnosis = true;
  // Chance that a whole follow-up visit (every test) is skipped; the entry
  // visit is never skipped.
  double missing_prob = 0.0;
  int threads = 1;
};

/// Latent values behind one generated subject, for diagnostics and tests
/// only; fitting paths never read these.
struct SubjectTruth {
  std::string id;
  double entry_age = 0.0;
  double a1 = 0.0;
  Eigen::VectorXd d;       // per test; zero where no test-level effect
  Eigen::VectorXd w;       // process values at the visit times
  Eigen::MatrixXd theta;   // K x n_i latent responses (error terms included)
  std::int64_t attempts = 1;
};

struct SimulatedCohort {
  std::vector<SubjectRecord> subjects;
  std::vector<SubjectTruth> truth;
  std::int64_t rejected_attempts = 0;
};

/// Throws ConfigError on malformed designs: n_subjects < 1, probabilities
/// outside [0,1], visit offsets not strictly increasing from 0, empty or
/// nonpositive-weight age tables, inverted uniform ranges.
void validate_design(const SimulationDesign& design);

/// Draws a cohort from the generative model. Each subject's draws come from
/// its own seed stream (derived from design.seed and the subject id), so the
/// output is independent of threading and subject order. With entry
/// truncation on, a subject whose entry-test category at the first visit is
/// positive is discarded and redrawn whole; more than 5000 attempts for one
/// subject aborts with ConfigError (entry rejection rate above 99%).
SimulatedCohort simulate_cohort(const ModelSpec& spec,
                                const ParameterVector& params,
                                const SimulationDesign& design);

}  // namespace latproc
