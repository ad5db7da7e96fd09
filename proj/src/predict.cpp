#include "latproc/predict.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>

namespace latproc {

namespace {

constexpr double kUnderflowFloor = 1e-300;

Eigen::VectorXd select(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<int>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
  return out;
}

Eigen::MatrixXd select(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  const int d = static_cast<int>(idx.size());
  Eigen::MatrixXd out(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) out(a, b) = m(idx[a], idx[b]);
  return out;
}

OrthantBox select(const OrthantBox& box, const std::vector<int>& idx) {
  OrthantBox out;
  out.lower = select(box.lower, idx);
  out.upper = select(box.upper, idx);
  return out;
}

}  // namespace

PredictionComponents predict_prob(const ModelSpec& spec,
                                  const ParameterVector& params,
                                  const SubjectRecord& subject, double t_next,
                                  const LikelihoodOptions& opts) {
  validate_spec(spec);
  validate_parameters(spec, params);
  validate_subject(spec, subject);
  const int K = spec.test_count();
  const int n = subject.visits();
  if (!(t_next > subject.visit_times.back()))
    throw DataError("prediction time must exceed the last visit for subject " +
                    subject.id);
  for (int j = 0; j < n; ++j) {
    if (subject.observations(spec.entry_test, j) == 1)
      throw DataError("subject " + subject.id +
                      " already has a positive entry test; the conditional "
                      "probability is undefined");
  }

  SubjectRecord aug = subject;
  aug.visit_times.push_back(t_next);
  aug.observations = Eigen::MatrixXi::Constant(K, n + 1, kMissingValue);
  aug.observations.leftCols(n) = subject.observations;
  aug.observations(spec.entry_test, n) = 1;

  const Eigen::VectorXd mean = assemble_mean(spec, params, aug);
  const Eigen::MatrixXd cov = assemble_cov(spec, params, aug).sigma_total;
  const OrthantBox box = observation_box(spec, params, aug);

  std::vector<int> history;
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < n; ++j) {
      const int axis = flat_index(k, j, n + 1);
      if (std::isinf(box.lower[axis]) && box.lower[axis] < 0.0 &&
          std::isinf(box.upper[axis]) && box.upper[axis] > 0.0)
        continue;
      history.push_back(axis);
    }
  }
  std::vector<int> joint = history;
  joint.push_back(flat_index(spec.entry_test, n, n + 1));

  const IntegratorOptions io = subject_integrator_options(opts, subject.id);
  PredictionComponents out;
  out.id = subject.id;
  out.t_next = t_next;
  out.dims = static_cast<int>(joint.size());

  if (history.empty()) {
    out.denominator = 1.0;
    out.denominator_error = 0.0;
  } else {
    const IntegrationResult den = orthant_prob(
        select(mean, history), select(cov, history), select(box, history), io);
    out.denominator = den.value;
    out.denominator_error = den.error_estimate;
  }
  if (out.denominator < kUnderflowFloor)
    throw NumericalError("history probability underflows for subject " +
                         subject.id +
                         "; the record is inconsistent with the parameters");

  const IntegrationResult num = orthant_prob(select(mean, joint),
                                             select(cov, joint),
                                             select(box, joint), io);
  out.numerator = num.value;
  out.numerator_error = num.error_estimate;
  out.p = std::clamp(out.numerator / out.denominator, 0.0, 1.0);
  return out;
}

CountPrediction predict_count(const std::vector<double>& probs, double level) {
  if (probs.empty())
    throw DataError("count prediction needs at least one probability");
  if (!(level > 0.0 && level < 1.0))
    throw DomainError("interval level must lie in (0,1)");
  CountPrediction out;
  out.level = level;
  out.n = static_cast<int>(probs.size());
  double var = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0))
      throw DomainError("probabilities must lie in [0,1]");
    out.expected += p;
    var += p * (1.0 - p);
  }
  const double z = normal_quantile(0.5 + 0.5 * level);
  const double half = z * std::sqrt(var);
  out.lo = std::max(0.0, out.expected - half);
  out.hi = std::min(static_cast<double>(out.n), out.expected + half);
  return out;
}

RocCurve roc(const std::vector<double>& scores,
             const std::vector<int>& outcomes) {
  if (scores.size() != outcomes.size())
    throw DomainError("scores and outcomes differ in length");
  if (scores.empty()) throw DataError("ROC needs data");

  // Group by distinct score, descending.
  std::map<double, std::pair<std::int64_t, std::int64_t>,
           std::greater<double>>
      groups;
  std::int64_t npos = 0, nneg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(scores[i] >= 0.0 || scores[i] <= 0.0))
      throw DomainError("scores must not be NaN");
    if (outcomes[i] == 1) {
      ++groups[scores[i]].first;
      ++npos;
    } else if (outcomes[i] == 0) {
      ++groups[scores[i]].second;
      ++nneg;
    } else {
      throw DomainError("outcomes must be 0 or 1");
    }
  }
  if (npos == 0 || nneg == 0)
    throw DataError("ROC needs both a positive and a negative outcome");

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::int64_t cum_pos = 0, cum_neg = 0;
  std::int64_t twice_pairs = 0;  // 2*(wins) + ties over positive/negative pairs
  for (const auto& [score, counts] : groups) {
    (void)score;
    twice_pairs += counts.second * (2 * cum_pos + counts.first);
    cum_pos += counts.first;
    cum_neg += counts.second;
    curve.points.push_back({static_cast<double>(cum_neg) / nneg,
                            static_cast<double>(cum_pos) / npos});
  }
  curve.auc = static_cast<double>(twice_pairs) /
              (2.0 * static_cast<double>(npos) * static_cast<double>(nneg));
  return curve;
}

}  // namespace latproc
