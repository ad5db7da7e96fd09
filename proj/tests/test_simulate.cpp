#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fixtures.hpp"
#include "latproc/likelihood.hpp"
#include "latproc/simulate.hpp"

using latproc::kMissingValue;

namespace {

const latproc::ModelSpec kSpec = latproc::dementia_mmse_spec();

latproc::SimulationDesign base_design(int n, std::uint64_t seed) {
  latproc::SimulationDesign d;
  d.n_subjects = n;
  d.seed = seed;
  return d;
}

bool same_cohort(const latproc::SimulatedCohort& a,
                 const latproc::SimulatedCohort& b) {
  if (a.subjects.size() != b.subjects.size()) return false;
  for (std::size_t i = 0; i < a.subjects.size(); ++i) {
    const auto& x = a.subjects[i];
    const auto& y = b.subjects[i];
    if (x.id != y.id || x.visit_times != y.visit_times ||
        x.covariates != y.covariates || x.observations != y.observations)
      return false;
    const auto& tx = a.truth[i];
    const auto& ty = b.truth[i];
    if (tx.entry_age != ty.entry_age || tx.a1 != ty.a1 ||
        tx.d != ty.d || tx.w != ty.w || tx.theta != ty.theta ||
        tx.attempts != ty.attempts)
      return false;
  }
  return a.rejected_attempts == b.rejected_attempts;
}

}  // namespace

TEST_CASE("design validation rejects malformed inputs") {
  auto d = base_design(10, 1);
  CHECK_NOTHROW(latproc::validate_design(d));
  SUBCASE("no subjects") {
    d.n_subjects = 0;
    CHECK_THROWS_AS(latproc::validate_design(d), latproc::ConfigError);
  }
  SUBCASE("offsets must start at zero") {
    d.visit_offsets = {1.0, 2.0};
    CHECK_THROWS_AS(latproc::validate_design(d), latproc::ConfigError);
  }
  SUBCASE("offsets must increase") {
    d.visit_offsets = {0.0, 2.0, 2.0};
    CHECK_THROWS_AS(latproc::validate_design(d), latproc::ConfigError);
  }
  SUBCASE("probabilities in range") {
    d.education_prob = 1.5;
    CHECK_THROWS_AS(latproc::validate_design(d), latproc::ConfigError);
  }
  SUBCASE("age table weights positive") {
    d.entry_age.table = {{70.0, 0.0}};
    CHECK_THROWS_AS(latproc::validate_design(d), latproc::ConfigError);
  }
  SUBCASE("ages before the origin") {
    d.entry_age.uniform_lo = 60.0;
    d.entry_age.uniform_hi = 70.0;
    CHECK_THROWS_AS(
        latproc::simulate_cohort(kSpec, fixtures::reference_params(), d),
        latproc::ConfigError);
  }
}

TEST_CASE("same seed reproduces the cohort; threading changes nothing") {
  const auto p = fixtures::reference_params();
  auto d = base_design(60, 42);
  d.visit_offsets = {0.0, 1.0, 3.0, 5.0};
  d.missing_prob = 0.2;
  const auto a = latproc::simulate_cohort(kSpec, p, d);
  const auto b = latproc::simulate_cohort(kSpec, p, d);
  CHECK(same_cohort(a, b));
  auto dt = d;
  dt.threads = 4;
  const auto c = latproc::simulate_cohort(kSpec, p, dt);
  CHECK(same_cohort(a, c));

  auto d2 = d;
  d2.seed = 43;
  const auto other = latproc::simulate_cohort(kSpec, p, d2);
  CHECK_FALSE(same_cohort(a, other));

  CHECK(a.subjects[0].id == "s000001");
  CHECK(a.subjects[59].id == "s000060");
  for (const auto& s : a.subjects)
    CHECK_NOTHROW(latproc::validate_subject(kSpec, s));
}

TEST_CASE("noise-free limit reproduces the deterministic categorization") {
  auto p = fixtures::reference_params();
  p.sigma_a = 1e-12;
  p.sigma_d[0] = 1e-12;
  p.sigma_eps[1] = 1e-12;
  auto d = base_design(200, 7);
  d.entry_age.uniform_lo = 65.0;
  d.entry_age.uniform_hi = 65.0;
  d.visit_offsets = {0.0};
  const auto sim = latproc::simulate_cohort(kSpec, p, d);
  const auto dem_grid = latproc::cutoff_grid(kSpec.tests[0], p.cutoffs[0]);
  const auto mmse_grid = latproc::cutoff_grid(kSpec.tests[1], p.cutoffs[1]);
  for (int i = 0; i < 200; ++i) {
    const double ed = sim.subjects[i].covariates.at("ed");
    const double mean_dem = 32.90 + 2.34 * ed;
    const double mean_mmse = mean_dem + 1.69 * ed - 1.65 + 0.29 * ed;
    CHECK(std::fabs(sim.truth[i].theta(0, 0) - mean_dem) < 1e-9);
    CHECK(std::fabs(sim.truth[i].theta(1, 0) - mean_mmse) < 1e-9);
    CHECK(sim.subjects[i].observations(0, 0) ==
          latproc::categorize(kSpec.tests[0], dem_grid, mean_dem));
    CHECK(sim.subjects[i].observations(1, 0) ==
          latproc::categorize(kSpec.tests[1], mmse_grid, mean_mmse));
  }
}

TEST_CASE("latent variance at a fixed time matches the model variance") {
  const auto p = fixtures::reference_params();
  const double t = 5.0;
  const double want = 2.04 * 2.04 + t + 2.68 * 2.68;

  double sum = 0.0, sumsq = 0.0;
  const int batches = 10;
  const int per_batch = 100000;
  for (int b = 0; b < batches; ++b) {
    auto d = base_design(per_batch, 1000 + b);
    d.entry_age.uniform_lo = 70.0;
    d.entry_age.uniform_hi = 70.0;
    d.visit_offsets = {0.0};
    d.apply_entry_truncation = false;
    const auto sim = latproc::simulate_cohort(kSpec, p, d);
    for (std::size_t i = 0; i < sim.truth.size(); ++i) {
      const double ed = sim.subjects[i].covariates.at("ed");
      const double r = sim.truth[i].theta(0, 0) -
                       (32.90 + 2.34 * ed +
                        (-0.022 + 0.0013 * ed) * std::pow(t, 1.84));
      sum += r;
      sumsq += r * r;
    }
  }
  const double n = static_cast<double>(batches) * per_batch;
  const double var = sumsq / n - (sum / n) * (sum / n);
  const double se = want * std::sqrt(2.0 / n);
  CHECK(std::fabs(var - want) <= 4.0 * se);
}

TEST_CASE("process covariance across visits matches min(s,t)") {
  const auto p = fixtures::reference_params();
  auto d = base_design(100000, 99);
  d.entry_age.uniform_lo = 67.0;
  d.entry_age.uniform_hi = 67.0;
  d.visit_offsets = {0.0, 1.0, 3.0};
  d.apply_entry_truncation = false;
  const auto sim = latproc::simulate_cohort(kSpec, p, d);
  const double times[3] = {2.0, 3.0, 5.0};
  Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
  for (const auto& tr : sim.truth) acc += tr.w * tr.w.transpose();
  acc /= static_cast<double>(sim.truth.size());
  for (int j = 0; j < 3; ++j) {
    for (int l = 0; l < 3; ++l) {
      const double want = std::min(times[j], times[l]);
      const double se = std::sqrt((times[j] * times[l] + want * want) /
                                  static_cast<double>(sim.truth.size()));
      CHECK(std::fabs(acc(j, l) - want) <= 4.0 * se);
    }
  }
}

TEST_CASE("stacked latent residuals reproduce the assembled covariance") {
  const auto p = fixtures::reference_params();
  auto d = base_design(100000, 314);
  d.entry_age.uniform_lo = 66.0;
  d.entry_age.uniform_hi = 66.0;
  d.visit_offsets = {0.0, 2.0};
  d.apply_entry_truncation = false;
  const auto sim = latproc::simulate_cohort(kSpec, p, d);

  const Eigen::MatrixXd want =
      latproc::assemble_cov(kSpec, p, sim.subjects[0]).sigma_total;
  Eigen::Matrix4d acc = Eigen::Matrix4d::Zero();
  for (std::size_t i = 0; i < sim.truth.size(); ++i) {
    const Eigen::VectorXd mean =
        latproc::assemble_mean(kSpec, p, sim.subjects[i]);
    Eigen::Vector4d r;
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 2; ++j)
        r[latproc::flat_index(k, j, 2)] =
            sim.truth[i].theta(k, j) - mean[latproc::flat_index(k, j, 2)];
    acc += r * r.transpose();
  }
  acc /= static_cast<double>(sim.truth.size());
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      const double se =
          std::sqrt((want(a, a) * want(b, b) + want(a, b) * want(a, b)) /
                    static_cast<double>(sim.truth.size()));
      CHECK(std::fabs(acc(a, b) - want(a, b)) <= 4.0 * se);
    }
  }
}

TEST_CASE("first-visit diagnosis rate matches one minus the entry retention") {
  const auto p = fixtures::reference_params();
  auto d = base_design(100000, 2718);
  d.entry_age.uniform_lo = 65.0;
  d.entry_age.uniform_hi = 90.0;
  d.visit_offsets = {0.0};
  d.apply_entry_truncation = false;
  const auto sim = latproc::simulate_cohort(kSpec, p, d);
  double expect = 0.0;
  int demented = 0;
  for (std::size_t i = 0; i < sim.subjects.size(); ++i) {
    expect += 1.0 - latproc::truncation_prob(kSpec, p, sim.subjects[i]);
    demented += sim.subjects[i].observations(0, 0) == 1 ? 1 : 0;
  }
  const double n = static_cast<double>(sim.subjects.size());
  const double rate = demented / n;
  const double mean_p = expect / n;
  const double se = std::sqrt(mean_p * (1.0 - mean_p) / n);
  CHECK(std::fabs(rate - mean_p) <= 4.0 * se);
}

TEST_CASE("entry truncation removes first-visit diagnoses and lifts the mean") {
  const auto p = fixtures::reference_params();
  auto d = base_design(20000, 5);
  d.entry_age.uniform_lo = 70.0;
  d.entry_age.uniform_hi = 70.0;
  d.education_prob = 0.0;
  d.visit_offsets = {0.0};
  const auto sim = latproc::simulate_cohort(kSpec, p, d);
  CHECK(sim.rejected_attempts > 0);
  double mean_theta = 0.0;
  for (std::size_t i = 0; i < sim.subjects.size(); ++i) {
    CHECK(sim.subjects[i].observations(0, 0) == 0);
    mean_theta += sim.truth[i].theta(0, 0);
  }
  mean_theta /= static_cast<double>(sim.subjects.size());
  const double unconditional = 32.90 - 0.022 * std::pow(5.0, 1.84);
  CHECK(mean_theta > unconditional);
}

TEST_CASE("censoring blanks only ordinal values after the first diagnosis") {
  auto p = fixtures::reference_params();
  p.cutoffs[0][0] = 30.0;  // frequent conversion
  auto d = base_design(2000, 64);
  d.entry_age.uniform_lo = 75.0;
  d.entry_age.uniform_hi = 75.0;
  d.visit_offsets = {0.0, 1.0, 3.0, 5.0};
  const auto with = latproc::simulate_cohort(kSpec, p, d);
  auto d_off = d;
  d_off.censor_after_diagnosis = false;
  const auto without = latproc::simulate_cohort(kSpec, p, d_off);

  int censored_cells = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto& a = with.subjects[i].observations;
    const auto& b = without.subjects[i].observations;
    CHECK(a.row(0) == b.row(0));  // diagnoses never touched
    int first = -1;
    for (int j = 0; j < 4 && first < 0; ++j)
      if (a(0, j) == 1) first = j;
    for (int j = 0; j < 4; ++j) {
      if (first >= 0 && j > first) {
        CHECK(a(1, j) == kMissingValue);
        censored_cells += b(1, j) != kMissingValue ? 1 : 0;
      } else {
        CHECK(a(1, j) == b(1, j));
      }
    }
  }
  CHECK(censored_cells > 0);
}

TEST_CASE("per-visit skips hit both tests together at the stated rate") {
  const auto p = fixtures::reference_params();
  auto d = base_design(5000, 11);
  d.visit_offsets = {0.0, 1.0, 3.0};
  d.censor_after_diagnosis = false;
  SUBCASE("certain skip") {
    d.missing_prob = 1.0;
    const auto sim = latproc::simulate_cohort(kSpec, p, d);
    for (const auto& s : sim.subjects) {
      CHECK(s.observations(0, 0) != kMissingValue);
      for (int j = 1; j < 3; ++j) {
        CHECK(s.observations(0, j) == kMissingValue);
        CHECK(s.observations(1, j) == kMissingValue);
      }
    }
  }
  SUBCASE("no skip") {
    const auto sim = latproc::simulate_cohort(kSpec, p, d);
    for (const auto& s : sim.subjects)
      CHECK((s.observations.array() != kMissingValue).all());
  }
  SUBCASE("intermediate rate") {
    d.missing_prob = 0.3;
    const auto sim = latproc::simulate_cohort(kSpec, p, d);
    int missing = 0;
    for (const auto& s : sim.subjects) {
      for (int j = 1; j < 3; ++j) {
        CHECK((s.observations(0, j) == kMissingValue) ==
              (s.observations(1, j) == kMissingValue));
        missing += s.observations(0, j) == kMissingValue ? 1 : 0;
      }
    }
    const double n = 5000.0 * 2.0;
    const double rate = missing / n;
    CHECK(std::fabs(rate - 0.3) <= 4.0 * std::sqrt(0.3 * 0.7 / n));
  }
}

TEST_CASE("impossible inclusion aborts instead of spinning") {
  auto p = fixtures::reference_params();
  p.cutoffs[0][0] = 1e9;  // everyone categorized demented at entry
  auto d = base_design(3, 1);
  try {
    latproc::simulate_cohort(kSpec, p, d);
    FAIL("expected ConfigError");
  } catch (const latproc::ConfigError& e) {
    CHECK(std::string(e.what()).find("rejection") != std::string::npos);
  }
}

TEST_CASE("empirical age table draws only listed ages") {
  const auto p = fixtures::reference_params();
  auto d = base_design(4000, 12);
  d.entry_age.table = {{66.0, 1.0}, {70.0, 2.0}, {80.0, 1.0}};
  d.visit_offsets = {0.0};
  const auto sim = latproc::simulate_cohort(kSpec, p, d);
  int seen66 = 0, seen70 = 0, seen80 = 0;
  for (const auto& tr : sim.truth) {
    if (tr.entry_age == 66.0) ++seen66;
    else if (tr.entry_age == 70.0) ++seen70;
    else if (tr.entry_age == 80.0) ++seen80;
    else FAIL("age outside the table");
  }
  CHECK(seen66 > 0);
  CHECK(seen80 > 0);
  // weight 2 age should be drawn roughly twice as often
  CHECK(seen70 > seen66);
  CHECK(seen70 > seen80);
}

TEST_CASE("education probability is honored at the extremes") {
  const auto p = fixtures::reference_params();
  auto d = base_design(300, 8);
  d.visit_offsets = {0.0};
  SUBCASE("all educated") {
    d.education_prob = 1.0;
    const auto sim = latproc::simulate_cohort(kSpec, p, d);
    for (const auto& s : sim.subjects) CHECK(s.covariates.at("ed") == 1.0);
  }
  SUBCASE("none educated") {
    d.education_prob = 0.0;
    const auto sim = latproc::simulate_cohort(kSpec, p, d);
    for (const auto& s : sim.subjects) CHECK(s.covariates.at("ed") == 0.0);
  }
}
