// Shared test fixtures: the built-in joint model at a realistic reference
// parameter point, plus small subject records.
#pragma once

#include <random>

#include "latproc/model.hpp"

namespace fixtures {

inline latproc::ParameterVector reference_params() {
  latproc::ParameterVector p =
      latproc::default_parameters(latproc::dementia_mmse_spec());
  p.beta << 32.90, 2.34, -0.022, 0.0013, 1.84;
  p.test_effects[1] << 1.69, -1.65, 0.29;
  p.cutoffs[0] << 24.41;
  p.cutoffs[1] << 3.93, 0.58, 36.64;
  p.sigma_a = 2.04;
  p.sigma_d[0] = 2.68;
  p.sigma_eps[1] = 2.55;
  return p;
}

inline latproc::SubjectRecord subject(std::string id,
                                      std::vector<double> times, double ed) {
  latproc::SubjectRecord s;
  s.id = std::move(id);
  s.visit_times = std::move(times);
  s.observations = Eigen::MatrixXi::Constant(
      2, static_cast<int>(s.visit_times.size()), latproc::kMissingValue);
  s.covariates["ed"] = ed;
  return s;
}

// Hand-rolled draw of the intermediate variables for the built-in two-test
// model, written directly from the model equations (shared intercept,
// Brownian increments, diagnosis random effect, ordinal error term). Used as
// an oracle independent of assemble_mean/assemble_cov.
struct ThetaDraw {
  Eigen::VectorXd diagnosis;
  Eigen::VectorXd ordinal;
};

template <typename Rng>
ThetaDraw draw_theta(const latproc::ParameterVector& p,
                     const std::vector<double>& times, double ed, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  const int n = static_cast<int>(times.size());
  ThetaDraw out;
  out.diagnosis.resize(n);
  out.ordinal.resize(n);
  const double a = p.sigma_a * z(rng);
  const double d1 = p.sigma_d[0] * z(rng);
  double w = 0.0;
  double prev = 0.0;
  for (int j = 0; j < n; ++j) {
    w += std::sqrt(times[j] - prev) * z(rng);
    prev = times[j];
    const double f = (p.beta[0] + p.beta[1] * ed) +
                     (p.beta[2] + p.beta[3] * ed) *
                         std::pow(times[j], p.beta[4]);
    const double pra = (j == 0) ? 1.0 : 0.0;
    out.diagnosis[j] = f + a + w + d1;
    out.ordinal[j] = f + p.test_effects[1][0] * ed +
                     p.test_effects[1][1] * pra +
                     p.test_effects[1][2] * ed * pra + a + w +
                     p.sigma_eps[1] * z(rng);
  }
  return out;
}

// Simulates a complete subject record under the built-in model with entry
// rejection (redraw until the first-visit diagnosis is negative).
template <typename Rng>
latproc::SubjectRecord simulate_reference_subject(
    const latproc::ModelSpec& spec, const latproc::ParameterVector& p,
    std::string id, std::vector<double> times, double ed, Rng& rng) {
  const Eigen::VectorXd dem_grid =
      latproc::cutoff_grid(spec.tests[0], p.cutoffs[0]);
  const Eigen::VectorXd ord_grid =
      latproc::cutoff_grid(spec.tests[1], p.cutoffs[1]);
  latproc::SubjectRecord s = subject(std::move(id), times, ed);
  const int n = s.visits();
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const ThetaDraw draw = draw_theta(p, s.visit_times, ed, rng);
    if (draw.diagnosis[0] <= dem_grid[0]) continue;
    for (int j = 0; j < n; ++j) {
      s.observations(0, j) =
          latproc::categorize(spec.tests[0], dem_grid, draw.diagnosis[j]);
      s.observations(1, j) =
          latproc::categorize(spec.tests[1], ord_grid, draw.ordinal[j]);
    }
    return s;
  }
  throw std::runtime_error("entry rejection never accepted a draw");
}

}  // namespace fixtures
