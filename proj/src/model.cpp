#include "latproc/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

namespace latproc {

namespace {

double covariate(const SubjectRecord& subject, const std::string& name) {
  const auto it = subject.covariates.find(name);
  if (it == subject.covariates.end())
    throw ConfigError("unknown covariate '" + name + "' for subject " +
                      subject.id);
  return it->second;
}

double term_value(const SubjectRecord& subject, int visit, CovTerm term) {
  const double first = (visit == 0) ? 1.0 : 0.0;
  switch (term) {
    case CovTerm::Education:
      return covariate(subject, "ed");
    case CovTerm::Practice:
      return first;
    case CovTerm::EducationPractice:
      return covariate(subject, "ed") * first;
  }
  throw ConfigError("unhandled covariate term");
}

}  // namespace

void validate_spec(const ModelSpec& spec) {
  if (spec.tests.empty()) throw ConfigError("model needs at least one test");
  if (spec.random_effects != 0 && spec.random_effects != 1)
    throw ConfigError("only a single random intercept is supported");
  for (std::size_t k = 0; k < spec.tests.size(); ++k) {
    const TestSpec& t = spec.tests[k];
    const std::string where = "test " + std::to_string(k + 1) +
                              (t.name.empty() ? "" : " (" + t.name + ")");
    if (t.categories < 2)
      throw ConfigError(where + ": needs at least two categories");
    if (t.kind == TestKind::Binary) {
      if (t.categories != 2)
        throw ConfigError(where + ": binary tests have exactly 2 categories");
      if (t.cutoff_model != CutoffKind::SingleThreshold)
        throw ConfigError(where + ": binary tests use a single threshold");
    }
    if (t.cutoff_model == CutoffKind::PowerGrid && t.categories < 4)
      throw ConfigError(where + ": power cut-off grid needs >= 4 categories");
    if (!t.has_random_effect && !t.has_error_term)
      throw ConfigError(where +
                        ": needs a random effect or an error term, else the "
                        "intermediate variable is degenerate");
  }
  if (spec.entry_truncation) {
    if (spec.entry_test < 0 || spec.entry_test >= spec.test_count())
      throw ConfigError("entry truncation test index out of range");
    if (spec.tests[spec.entry_test].kind != TestKind::Binary)
      throw ConfigError("entry truncation requires a binary test");
  }
  const auto violations = validate_identifiability(spec);
  if (!violations.empty()) {
    std::string msg = "model specification is not identifiable:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw ConfigError(msg);
  }
}

ParameterVector default_parameters(const ModelSpec& spec) {
  ParameterVector p;
  p.beta = Eigen::VectorXd::Zero(5);
  p.beta[4] = 1.0;
  const int k = spec.test_count();
  p.test_effects.resize(k);
  p.cutoffs.resize(k);
  p.sigma_d = Eigen::VectorXd::Zero(k);
  p.sigma_eps = Eigen::VectorXd::Zero(k);
  p.sigma_a = spec.random_effects == 1 ? 1.0 : 0.0;
  for (int i = 0; i < k; ++i) {
    const TestSpec& t = spec.tests[i];
    p.test_effects[i] =
        Eigen::VectorXd::Zero(static_cast<int>(t.fixed_effect_terms.size()));
    if (t.cutoff_model == CutoffKind::SingleThreshold) {
      p.cutoffs[i] = Eigen::VectorXd::Zero(1);
    } else {
      p.cutoffs[i] = Eigen::VectorXd::Ones(3);
      p.cutoffs[i][2] = t.fixed_top - 1.0;
    }
    if (t.has_random_effect) p.sigma_d[i] = 1.0;
    if (t.has_error_term) p.sigma_eps[i] = 1.0;
  }
  return p;
}

void validate_parameters(const ModelSpec& spec,
                         const ParameterVector& params) {
  const int k = spec.test_count();
  if (params.beta.size() != 5)
    throw DomainError("latent mean needs 5 coefficients");
  if (spec.latent_mean == LatentMeanKind::Linear) {
    if (params.beta[4] != 1.0)
      throw DomainError("linear latent mean pins the time power at 1");
  } else if (!(params.beta[4] > 0.0)) {
    throw DomainError("latent time power must be positive");
  }
  if (static_cast<int>(params.test_effects.size()) != k ||
      static_cast<int>(params.cutoffs.size()) != k ||
      params.sigma_d.size() != k || params.sigma_eps.size() != k)
    throw DomainError("parameter blocks do not match the test count");
  if (spec.random_effects == 1) {
    if (!(params.sigma_a > 0.0))
      throw DomainError("random intercept scale must be positive");
  } else if (params.sigma_a != 0.0) {
    throw DomainError("model without random intercept requires sigma_a = 0");
  }
  for (int i = 0; i < k; ++i) {
    const TestSpec& t = spec.tests[i];
    if (params.test_effects[i].size() !=
        static_cast<int>(t.fixed_effect_terms.size()))
      throw DomainError("fixed-effect coefficient count mismatch");
    if (params.cutoffs[i].size() != t.cutoff_param_count())
      throw DomainError("cut-off parameter count mismatch");
    if (t.cutoff_model == CutoffKind::PowerGrid) {
      if (!(params.cutoffs[i][0] > 0.0) || !(params.cutoffs[i][1] > 0.0))
        throw DomainError("cut-off grid factor and power must be positive");
    }
    if (t.has_random_effect) {
      if (!(params.sigma_d[i] > 0.0))
        throw DomainError("test random-effect scale must be positive");
    } else if (params.sigma_d[i] != 0.0) {
      throw DomainError("test without random effect requires sigma_d = 0");
    }
    if (t.has_error_term) {
      if (!(params.sigma_eps[i] > 0.0))
        throw DomainError("test error scale must be positive");
    } else if (params.sigma_eps[i] != 0.0) {
      throw DomainError("test without error term requires sigma_eps = 0");
    }
  }
}

void validate_subject(const ModelSpec& spec, const SubjectRecord& subject) {
  const int n = subject.visits();
  if (n < 1)
    throw DataError("subject " + subject.id + ": needs at least one visit");
  for (int j = 0; j < n; ++j) {
    if (!(subject.visit_times[j] >= 0.0))
      throw DataError("subject " + subject.id + ": negative visit time");
    if (j > 0 && !(subject.visit_times[j] > subject.visit_times[j - 1]))
      throw DataError("subject " + subject.id +
                      ": visit times must be strictly increasing");
  }
  if (subject.observations.rows() != spec.test_count() ||
      subject.observations.cols() != n)
    throw DataError("subject " + subject.id +
                    ": observation matrix shape mismatch");
  for (int k = 0; k < spec.test_count(); ++k) {
    for (int j = 0; j < n; ++j) {
      const int v = subject.observations(k, j);
      if (v == kMissingValue) continue;
      if (v < 0 || v >= spec.tests[k].categories)
        throw DataError("subject " + subject.id + ": value " +
                        std::to_string(v) + " outside categories of test " +
                        std::to_string(k + 1));
    }
  }
}

double latent_mean(const ModelSpec& spec, const ParameterVector& params,
                   const SubjectRecord& subject, double t) {
  (void)spec;
  if (!(t >= 0.0)) throw DomainError("latent mean needs t >= 0");
  const double ed = covariate(subject, "ed");
  const Eigen::VectorXd& b = params.beta;
  return (b[0] + b[1] * ed) + (b[2] + b[3] * ed) * std::pow(t, b[4]);
}

double intermediate_mean(const ModelSpec& spec, const ParameterVector& params,
                         const SubjectRecord& subject, int test, int visit) {
  if (test < 0 || test >= spec.test_count())
    throw DomainError("test index out of range");
  if (visit < 0 || visit >= subject.visits())
    throw DomainError("visit index out of range");
  double mean =
      latent_mean(spec, params, subject, subject.visit_times[visit]);
  const TestSpec& t = spec.tests[test];
  const Eigen::VectorXd& coef = params.test_effects[test];
  for (int i = 0; i < coef.size(); ++i)
    mean += coef[i] * term_value(subject, visit, t.fixed_effect_terms[i]);
  return mean;
}

Eigen::MatrixXd brownian_cov(const std::vector<double>& times) {
  const int n = static_cast<int>(times.size());
  if (n < 1) throw DomainError("brownian_cov needs at least one time");
  for (int j = 0; j < n; ++j) {
    if (!(times[j] >= 0.0)) throw DomainError("brownian_cov needs t >= 0");
    if (j > 0 && !(times[j] > times[j - 1]))
      throw DomainError("brownian_cov needs strictly increasing times");
  }
  Eigen::MatrixXd g(n, n);
  for (int j = 0; j < n; ++j)
    for (int l = 0; l < n; ++l) g(j, l) = std::min(times[j], times[l]);
  return g;
}

Eigen::VectorXd assemble_mean(const ModelSpec& spec,
                              const ParameterVector& params,
                              const SubjectRecord& subject) {
  const int n = subject.visits();
  const int k = spec.test_count();
  Eigen::VectorXd mu(k * n);
  for (int test = 0; test < k; ++test)
    for (int j = 0; j < n; ++j)
      mu[flat_index(test, j, n)] =
          intermediate_mean(spec, params, subject, test, j);
  return mu;
}

CovarianceAssembly assemble_cov(const ModelSpec& spec,
                                const ParameterVector& params,
                                const SubjectRecord& subject) {
  validate_parameters(spec, params);
  const int n = subject.visits();
  if (n < 1) throw DomainError("assemble_cov needs at least one visit");
  const int k = spec.test_count();
  const int dim = k * n;

  CovarianceAssembly out;
  out.gamma = brownian_cov(subject.visit_times);
  const Eigen::MatrixXd latent_block =
      params.sigma_a * params.sigma_a *
          Eigen::MatrixXd::Ones(n, n) +
      out.gamma;

  out.sigma_lambda.setZero(dim, dim);
  out.sigma_d.setZero(dim, dim);
  out.sigma_eps.setZero(dim, dim);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b)
      out.sigma_lambda.block(a * n, b * n, n, n) = latent_block;
    if (spec.tests[a].has_random_effect) {
      out.sigma_d.block(a * n, a * n, n, n) =
          params.sigma_d[a] * params.sigma_d[a] *
          Eigen::MatrixXd::Ones(n, n);
    }
    if (spec.tests[a].has_error_term) {
      out.sigma_eps.block(a * n, a * n, n, n) =
          params.sigma_eps[a] * params.sigma_eps[a] *
          Eigen::MatrixXd::Identity(n, n);
    }
  }
  out.sigma_total = out.sigma_lambda + out.sigma_d + out.sigma_eps;
  return out;
}

Eigen::VectorXd cutoff_grid(const TestSpec& test, const Eigen::VectorXd& eta) {
  if (eta.size() != test.cutoff_param_count())
    throw DomainError("cut-off parameter count mismatch");
  if (test.cutoff_model == CutoffKind::SingleThreshold) {
    Eigen::VectorXd g(1);
    g[0] = eta[0];
    return g;
  }
  const int m = test.categories;
  const double factor = eta[0];
  const double power = eta[1];
  if (!(factor > 0.0) || !(power > 0.0))
    throw DomainError("cut-off grid factor and power must be positive");
  Eigen::VectorXd g(m - 1);
  for (int i = 1; i <= m - 3; ++i)
    g[i - 1] = test.fixed_top - factor * std::pow(m - 1 - i, power);
  g[m - 3] = eta[2];
  g[m - 2] = test.fixed_top;
  for (int i = 1; i < m - 1; ++i) {
    if (!(g[i] > g[i - 1])) {
      std::ostringstream msg;
      msg << "cut-off grid not increasing between c_" << i << " = " << g[i - 1]
          << " and c_" << i + 1 << " = " << g[i];
      throw DomainError(msg.str());
    }
  }
  return g;
}

int categorize(const TestSpec& test, const Eigen::VectorXd& grid,
               double theta) {
  if (test.kind == TestKind::Binary) return theta <= grid[0] ? 1 : 0;
  const double* begin = grid.data();
  const double* end = grid.data() + grid.size();
  return static_cast<int>(std::upper_bound(begin, end, theta) - begin);
}

OrthantBox observation_box(const ModelSpec& spec,
                           const ParameterVector& params,
                           const SubjectRecord& subject) {
  const int n = subject.visits();
  const int k = spec.test_count();
  OrthantBox box;
  box.lower = Eigen::VectorXd::Constant(k * n, kNegInf);
  box.upper = Eigen::VectorXd::Constant(k * n, kPosInf);
  for (int test = 0; test < k; ++test) {
    const TestSpec& t = spec.tests[test];
    const Eigen::VectorXd grid = cutoff_grid(t, params.cutoffs[test]);
    for (int j = 0; j < n; ++j) {
      const int y = subject.observations(test, j);
      if (y == kMissingValue) continue;
      if (y < 0 || y >= t.categories)
        throw DataError("subject " + subject.id + ": value " +
                        std::to_string(y) + " outside categories of test " +
                        std::to_string(test + 1));
      const int axis = flat_index(test, j, n);
      if (t.kind == TestKind::Binary) {
        if (y == 1) {
          box.upper[axis] = grid[0];
        } else {
          box.lower[axis] = grid[0];
        }
      } else {
        if (y > 0) box.lower[axis] = grid[y - 1];
        if (y < t.categories - 1) box.upper[axis] = grid[y];
      }
    }
  }
  return box;
}

std::vector<std::string> validate_identifiability(const ModelSpec& spec) {
  std::vector<std::string> out;
  bool some_test_without_effects = false;
  bool some_test_without_random_effect = false;
  bool scale_pinned = spec.intercept_fixed;
  for (std::size_t k = 0; k < spec.tests.size(); ++k) {
    const TestSpec& t = spec.tests[k];
    if (t.fixed_effect_terms.empty()) some_test_without_effects = true;
    if (!t.has_random_effect) some_test_without_random_effect = true;
    if (t.cutoff_model == CutoffKind::PowerGrid) scale_pinned = true;
    std::set<CovTerm> seen;
    for (const CovTerm term : t.fixed_effect_terms) {
      if (!seen.insert(term).second) {
        out.push_back("duplicate covariate expression in the equation of "
                      "test " +
                      std::to_string(k + 1));
        break;
      }
    }
  }
  if (!some_test_without_effects)
    out.push_back(
        "every test equation carries fixed-effect terms; one equation must "
        "have none so latent covariate effects are separable");
  if (spec.random_effects >= 1 && !some_test_without_random_effect)
    out.push_back(
        "every test equation carries its own random effect; one equation "
        "must have none so the shared intercept is separable");
  if (!scale_pinned)
    out.push_back(
        "the latent scale is not located: fix the intercept or pin one "
        "cut-off value");
  return out;
}

namespace {

// Log maps a positive parameter to the whole real line. Magnitude is for
// scales that enter the model only through their square: the unconstrained
// coordinate is the scale itself and the sign is dropped, which keeps the
// objective smooth across zero and, unlike Log, has no flat region when a
// fit starts from a scale near zero.
enum class Transform { Identity, Log, Magnitude };

struct Slot {
  std::string label;
  Transform transform;
};

// Packing order: latent-mean coefficients; per test its fixed-effect
// coefficients then its cut-off parameters; the shared intercept scale; then
// per-test random-effect and error scales.
template <typename Fn>
void walk_slots(const ModelSpec& spec, ParameterVector& p, Fn&& fn) {
  const bool power_time = spec.latent_mean == LatentMeanKind::PowerTime;
  for (int i = 0; i < (power_time ? 5 : 4); ++i) {
    if (i == 0 && spec.intercept_fixed) continue;
    fn(Slot{"beta_" + std::to_string(i + 1),
            i == 4 ? Transform::Log : Transform::Identity},
       p.beta[i]);
  }
  int eta_index = 0;
  for (int k = 0; k < spec.test_count(); ++k) {
    const TestSpec& t = spec.tests[k];
    for (int i = 0; i < p.test_effects[k].size(); ++i) {
      fn(Slot{"beta" + std::to_string(k + 1) + "_" + std::to_string(i + 1),
              Transform::Identity},
         p.test_effects[k][i]);
    }
    if (t.cutoff_model == CutoffKind::SingleThreshold) {
      fn(Slot{"eta_" + std::to_string(eta_index++), Transform::Identity},
         p.cutoffs[k][0]);
    } else {
      fn(Slot{"eta_" + std::to_string(eta_index++), Transform::Log},
         p.cutoffs[k][0]);
      fn(Slot{"eta_" + std::to_string(eta_index++), Transform::Log},
         p.cutoffs[k][1]);
      fn(Slot{"eta_" + std::to_string(eta_index++), Transform::Identity},
         p.cutoffs[k][2]);
    }
  }
  if (spec.random_effects == 1)
    fn(Slot{"sigma_a1", Transform::Magnitude}, p.sigma_a);
  for (int k = 0; k < spec.test_count(); ++k) {
    if (spec.tests[k].has_random_effect)
      fn(Slot{"sigma_d" + std::to_string(k + 1), Transform::Magnitude},
         p.sigma_d[k]);
  }
  for (int k = 0; k < spec.test_count(); ++k) {
    if (spec.tests[k].has_error_term)
      fn(Slot{"sigma_eps" + std::to_string(k + 1), Transform::Magnitude},
         p.sigma_eps[k]);
  }
}

}  // namespace

ParameterLayout::ParameterLayout(const ModelSpec& spec) : spec_(spec) {
  ParameterVector scratch = default_parameters(spec_);
  walk_slots(spec_, scratch, [this](const Slot& slot, double&) {
    labels_.push_back(slot.label);
  });
}

Eigen::VectorXd ParameterLayout::pack(const ParameterVector& params) const {
  ParameterVector copy = params;
  Eigen::VectorXd x(free_count());
  int i = 0;
  walk_slots(spec_, copy, [&](const Slot& slot, double& value) {
    if (slot.transform != Transform::Identity && !(value > 0.0))
      throw DomainError(slot.label + " must be positive to pack");
    x[i++] = slot.transform == Transform::Log ? std::log(value) : value;
  });
  return x;
}

ParameterVector ParameterLayout::unpack(const Eigen::VectorXd& x) const {
  if (x.size() != free_count())
    throw DomainError("free-parameter vector length mismatch");
  ParameterVector p = default_parameters(spec_);
  int i = 0;
  walk_slots(spec_, p, [&](const Slot& slot, double& value) {
    switch (slot.transform) {
      case Transform::Log: value = std::exp(x[i]); break;
      case Transform::Magnitude: value = std::fabs(x[i]); break;
      case Transform::Identity: value = x[i]; break;
    }
    ++i;
  });
  return p;
}

Eigen::VectorXd ParameterLayout::natural_values(
    const ParameterVector& params) const {
  ParameterVector copy = params;
  Eigen::VectorXd values(free_count());
  int i = 0;
  walk_slots(spec_, copy, [&](const Slot&, double& value) {
    values[i++] = value;
  });
  return values;
}

Eigen::VectorXd ParameterLayout::transform_jacobian(
    const Eigen::VectorXd& x) const {
  if (x.size() != free_count())
    throw DomainError("free-parameter vector length mismatch");
  Eigen::VectorXd jac(free_count());
  ParameterVector scratch = default_parameters(spec_);
  int i = 0;
  walk_slots(spec_, scratch, [&](const Slot& slot, double&) {
    jac[i] = slot.transform == Transform::Log ? std::exp(x[i]) : 1.0;
    ++i;
  });
  return jac;
}

ModelSpec dementia_mmse_spec() {
  ModelSpec spec;
  spec.latent_mean = LatentMeanKind::PowerTime;
  spec.random_effects = 1;
  spec.time_origin = 65.0;
  spec.entry_truncation = true;

  TestSpec dementia;
  dementia.name = "dementia";
  dementia.kind = TestKind::Binary;
  dementia.categories = 2;
  dementia.cutoff_model = CutoffKind::SingleThreshold;
  dementia.has_random_effect = true;
  dementia.has_error_term = false;

  TestSpec mmse;
  mmse.name = "mmse";
  mmse.kind = TestKind::Ordinal;
  mmse.categories = 31;
  mmse.cutoff_model = CutoffKind::PowerGrid;
  mmse.fixed_top = 40.0;
  mmse.has_random_effect = false;
  mmse.has_error_term = true;
  mmse.fixed_effect_terms = {CovTerm::Education, CovTerm::Practice,
                             CovTerm::EducationPractice};

  spec.tests = {dementia, mmse};
  return spec;
}

}  // namespace latproc
