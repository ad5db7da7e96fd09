#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "latproc/common.hpp"
#include "latproc/orthant.hpp"
#include "latproc/predict.hpp"

using latproc::kMissingValue;

namespace {

const latproc::ModelSpec kSpec = latproc::dementia_mmse_spec();

latproc::LikelihoodOptions options() { return {}; }

double marginal_conversion(const latproc::ParameterVector& p, double ed,
                           double t) {
  const double f = (p.beta[0] + p.beta[1] * ed) +
                   (p.beta[2] + p.beta[3] * ed) * std::pow(t, p.beta[4]);
  const double sd =
      std::sqrt(p.sigma_a * p.sigma_a + t + p.sigma_d[0] * p.sigma_d[0]);
  return latproc::normal_cdf((p.cutoffs[0][0] - f) / sd);
}

double ratio_noise(const latproc::PredictionComponents& c) {
  return (c.numerator_error + c.denominator_error) /
         std::max(c.denominator, 1e-12);
}

}  // namespace

TEST_CASE("an uninformative history gives the marginal conversion rate") {
  const auto p = fixtures::reference_params();
  const auto s = fixtures::subject("s", {0.5, 2.0}, 1.0);
  const auto out = latproc::predict_prob(kSpec, p, s, 4.0, options());
  CHECK(out.denominator == 1.0);
  CHECK(out.dims == 1);
  CHECK(out.p == doctest::Approx(marginal_conversion(p, 1.0, 4.0))
                     .epsilon(1e-12));
}

TEST_CASE("the entry-inclusion correction plays no role in prediction") {
  const auto p = fixtures::reference_params();
  auto s = fixtures::subject("s", {1.0}, 0.0);
  s.observations(0, 0) = 0;
  s.observations(1, 0) = 25;
  const auto with = latproc::predict_prob(kSpec, p, s, 3.0, options());
  auto spec_off = kSpec;
  spec_off.entry_truncation = false;
  const auto without = latproc::predict_prob(spec_off, p, s, 3.0, options());
  CHECK(with.p == without.p);
  CHECK(with.numerator == without.numerator);
}

TEST_CASE("an extra fully-missing visit does not move the prediction") {
  const auto p = fixtures::reference_params();
  auto a = fixtures::subject("s", {1.0}, 0.0);
  a.observations(0, 0) = 0;
  a.observations(1, 0) = 25;
  auto b = fixtures::subject("s", {1.0, 2.0}, 0.0);
  b.observations(0, 0) = 0;
  b.observations(1, 0) = 25;
  const auto pa = latproc::predict_prob(kSpec, p, a, 5.0, options());
  const auto pb = latproc::predict_prob(kSpec, p, b, 5.0, options());
  CHECK(pa.dims == pb.dims);
  CHECK(std::fabs(pa.p - pb.p) <=
        3.0 * (ratio_noise(pa) + ratio_noise(pb)) + 1e-12);
}

TEST_CASE("prediction matches a rejection-sampling oracle on a short history") {
  const auto p = fixtures::reference_params();
  auto s = fixtures::subject("s", {1.0}, 0.0);
  s.observations(0, 0) = 0;
  s.observations(1, 0) = 25;
  const double t_next = 3.0;
  const auto out = latproc::predict_prob(kSpec, p, s, t_next, options());

  const auto dem_grid = latproc::cutoff_grid(kSpec.tests[0], p.cutoffs[0]);
  const auto ord_grid = latproc::cutoff_grid(kSpec.tests[1], p.cutoffs[1]);
  std::mt19937_64 rng(4242);
  const int draws = 2000000;
  std::int64_t kept = 0, hits = 0;
  for (int i = 0; i < draws; ++i) {
    const auto d = fixtures::draw_theta(p, {1.0, t_next}, 0.0, rng);
    const bool history = d.diagnosis[0] > dem_grid[0] &&
                         d.ordinal[0] >= ord_grid[24] &&
                         d.ordinal[0] < ord_grid[25];
    if (!history) continue;
    ++kept;
    if (d.diagnosis[1] <= dem_grid[0]) ++hits;
  }
  REQUIRE(kept > 1000);
  const double freq = static_cast<double>(hits) / kept;
  const double se = std::sqrt(freq * (1.0 - freq) / kept);
  CHECK(std::fabs(out.p - freq) <= 4.0 * (se + ratio_noise(out)));
}

TEST_CASE("worse test scores raise the conversion probability") {
  const auto p = fixtures::reference_params();
  auto low = fixtures::subject("s", {1.0}, 0.0);
  low.observations(0, 0) = 0;
  low.observations(1, 0) = 20;
  auto high = low;
  high.observations(1, 0) = 28;
  const auto pl = latproc::predict_prob(kSpec, p, low, 4.0, options());
  const auto ph = latproc::predict_prob(kSpec, p, high, 4.0, options());
  CHECK(pl.p >= ph.p - 3.0 * (ratio_noise(pl) + ratio_noise(ph)));
  CHECK(pl.p > ph.p);

  SUBCASE("a spotless record predicts below the marginal rate") {
    auto best = fixtures::subject("s", {0.5, 1.5}, 0.0);
    best.observations(1, 0) = 30;
    best.observations(1, 1) = 30;
    const auto pb = latproc::predict_prob(kSpec, p, best, 4.0, options());
    CHECK(pb.p < marginal_conversion(p, 0.0, 4.0) - 3.0 * ratio_noise(pb));
  }
}

TEST_CASE("prediction input validation") {
  const auto p = fixtures::reference_params();
  auto s = fixtures::subject("s", {1.0, 2.0}, 0.0);
  SUBCASE("time must be in the future") {
    CHECK_THROWS_AS(latproc::predict_prob(kSpec, p, s, 2.0, options()),
                    latproc::DataError);
  }
  SUBCASE("a diagnosed subject has no defined conversion probability") {
    s.observations(0, 1) = 1;
    CHECK_THROWS_AS(latproc::predict_prob(kSpec, p, s, 5.0, options()),
                    latproc::DataError);
  }
  SUBCASE("an impossible history underflows loudly") {
    auto q = p;
    q.sigma_a = 0.01;
    q.sigma_d[0] = 0.01;
    q.sigma_eps[1] = 0.01;
    s.observations(1, 0) = 30;
    s.observations(1, 1) = 0;
    try {
      latproc::predict_prob(kSpec, q, s, 5.0, options());
      FAIL("expected NumericalError");
    } catch (const latproc::NumericalError& e) {
      CHECK(std::string(e.what()).find(s.id) != std::string::npos);
    }
  }
}

TEST_CASE("repeated predictions are bit-identical") {
  const auto p = fixtures::reference_params();
  auto s = fixtures::subject("s", {1.0, 2.5}, 1.0);
  s.observations(0, 0) = 0;
  s.observations(1, 0) = 27;
  s.observations(1, 1) = 26;
  const auto a = latproc::predict_prob(kSpec, p, s, 6.0, options());
  const auto b = latproc::predict_prob(kSpec, p, s, 6.0, options());
  CHECK(a.p == b.p);
  CHECK(a.numerator == b.numerator);
  CHECK(a.denominator == b.denominator);
}

TEST_CASE("count prediction intervals") {
  SUBCASE("degenerate all-zero and all-one vectors") {
    const auto zero = latproc::predict_count(std::vector<double>(8, 0.0), 0.95);
    CHECK(zero.expected == 0.0);
    CHECK(zero.lo == 0.0);
    CHECK(zero.hi == 0.0);
    const auto one = latproc::predict_count(std::vector<double>(8, 1.0), 0.95);
    CHECK(one.expected == 8.0);
    CHECK(one.lo == 8.0);
    CHECK(one.hi == 8.0);
  }
  SUBCASE("binomial moments at one half") {
    const auto out =
        latproc::predict_count(std::vector<double>(100, 0.5), 0.95);
    CHECK(out.expected == doctest::Approx(50.0));
    const double z = latproc::normal_quantile(0.975);
    CHECK(out.lo == doctest::Approx(50.0 - z * 5.0).epsilon(1e-12));
    CHECK(out.hi == doctest::Approx(50.0 + z * 5.0).epsilon(1e-12));
  }
  SUBCASE("interval is clipped to the count range") {
    const auto out =
        latproc::predict_count(std::vector<double>(10, 0.01), 0.95);
    CHECK(out.lo == 0.0);
    CHECK(out.hi < 10.0);
  }
  SUBCASE("rejects bad input") {
    CHECK_THROWS_AS(latproc::predict_count({}, 0.95), latproc::DataError);
    CHECK_THROWS_AS(latproc::predict_count({0.5}, 1.5), latproc::DomainError);
    CHECK_THROWS_AS(latproc::predict_count({1.5}, 0.95),
                    latproc::DomainError);
  }
}

TEST_CASE("ROC construction and the rank statistic") {
  SUBCASE("perfect separation") {
    const auto curve = latproc::roc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
    CHECK(curve.auc == 1.0);
    CHECK(curve.points.front().fpr == 0.0);
    CHECK(curve.points.front().tpr == 0.0);
    CHECK(curve.points.back().fpr == 1.0);
    CHECK(curve.points.back().tpr == 1.0);
  }
  SUBCASE("ties collapse into single vertices") {
    const auto curve = latproc::roc({0.8, 0.8, 0.6}, {1, 0, 1});
    CHECK(curve.points.size() == 3);  // (0,0) plus one per distinct score
    CHECK(curve.auc == doctest::Approx(0.25));
  }
  SUBCASE("independent scores score one half") {
    std::mt19937_64 rng(99);
    std::vector<double> scores;
    std::vector<int> outcomes;
    int npos = 0;
    for (int i = 0; i < 4000; ++i) {
      scores.push_back(latproc::to_unit_interval(rng()));
      outcomes.push_back(rng() % 2 == 0 ? 1 : 0);
      npos += outcomes.back();
    }
    const auto curve = latproc::roc(scores, outcomes);
    const double nneg = 4000.0 - npos;
    const double se = std::sqrt((4000.0 + 1.0) / (12.0 * npos * nneg));
    CHECK(std::fabs(curve.auc - 0.5) <= 4.0 * se);
  }
  SUBCASE("pair counting identity with heavy ties") {
    std::mt19937_64 rng(123);
    for (int rep = 0; rep < 100; ++rep) {
      const int n = 2 + static_cast<int>(rng() % 499);
      std::vector<double> scores;
      std::vector<int> outcomes;
      int npos = 0;
      for (int i = 0; i < n; ++i) {
        scores.push_back(std::floor(latproc::to_unit_interval(rng()) * 20.0) /
                         20.0);
        outcomes.push_back(rng() % 3 == 0 ? 1 : 0);
        npos += outcomes.back();
      }
      if (npos == 0 || npos == n) continue;
      const auto curve = latproc::roc(scores, outcomes);

      std::int64_t twice = 0;
      for (int i = 0; i < n; ++i) {
        if (outcomes[i] != 1) continue;
        for (int j = 0; j < n; ++j) {
          if (outcomes[j] != 0) continue;
          if (scores[i] > scores[j]) twice += 2;
          else if (scores[i] == scores[j]) twice += 1;
        }
      }
      const double oracle =
          static_cast<double>(twice) /
          (2.0 * static_cast<double>(npos) * static_cast<double>(n - npos));
      CHECK(curve.auc == oracle);

      double area = 0.0;
      for (std::size_t k = 1; k < curve.points.size(); ++k) {
        area += (curve.points[k].fpr - curve.points[k - 1].fpr) *
                (curve.points[k].tpr + curve.points[k - 1].tpr) / 2.0;
      }
      CHECK(curve.auc == doctest::Approx(area).epsilon(1e-12));
      for (std::size_t k = 1; k < curve.points.size(); ++k) {
        CHECK(curve.points[k].fpr >= curve.points[k - 1].fpr);
        CHECK(curve.points[k].tpr >= curve.points[k - 1].tpr);
      }
    }
  }
  SUBCASE("one-class outcomes are rejected") {
    CHECK_THROWS_AS(latproc::roc({0.2, 0.4}, {1, 1}), latproc::DataError);
    CHECK_THROWS_AS(latproc::roc({0.2, 0.4}, {0, 0}), latproc::DataError);
    CHECK_THROWS_AS(latproc::roc({0.2}, {0, 1}), latproc::DomainError);
    CHECK_THROWS_AS(latproc::roc({0.2, 0.3}, {0, 2}), latproc::DomainError);
  }
}
