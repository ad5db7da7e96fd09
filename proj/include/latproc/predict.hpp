#pragma once

#include <string>
#include <vector>

#include "latproc/likelihood.hpp"
#include "latproc/model.hpp"

namespace latproc {

struct PredictionComponents {
  std::string id;
  double t_next = 0.0;
  double p = 0.0;            // P(entry test positive at t_next | history)
  double numerator = 0.0;    // joint probability with the history event
  double denominator = 0.0;  // history probability
  double numerator_error = 0.0;
  double denominator_error = 0.0;
  int dims = 0;  // numerator multiplicity after dropping missing axes
};

/// Conditional probability that the entry test turns positive at t_next
/// given the observed history: the ratio of two orthant probabilities over
/// the covariance augmented with one axis at t_next. The entry-inclusion
/// correction cancels in the ratio and is never applied. Both integrals use
/// the subject's derived seed (common sample paths).
/// Throws DataError when t_next does not exceed the last visit or when the
/// history already contains a positive entry test; NumericalError when the
/// history probability falls below 1e-300.
PredictionComponents predict_prob(const ModelSpec& spec,
                                  const ParameterVector& params,
                                  const SubjectRecord& subject, double t_next,
                                  const LikelihoodOptions& opts);

struct CountPrediction {
  double expected = 0.0;  // sum of the probabilities
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  int n = 0;
};

/// Normal-approximation predictive interval for the positive count:
/// expected +- z * sqrt(sum p(1-p)), clipped to [0, n].
CountPrediction predict_count(const std::vector<double>& probs, double level);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // one vertex per distinct score, plus (0,0)
  double auc = 0.0;
};

/// ROC sweep classifying positive when score >= threshold, thresholds at
/// every distinct score (ties grouped into single vertices). auc is computed
/// by exact pair counting, which equals the trapezoidal area and the
/// tie-corrected rank-sum statistic. Throws DataError unless both outcome
/// classes are present.
RocCurve roc(const std::vector<double>& scores,
             const std::vector<int>& outcomes);

}  // namespace latproc
