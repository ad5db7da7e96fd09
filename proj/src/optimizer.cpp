#include "latproc/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace latproc {

namespace {

// Set LATPROC_TRACE=1 to watch long fits iterate on stderr.
void trace_line(const char* tag, const IterationRecord& rec) {
  static const bool on = std::getenv("LATPROC_TRACE") != nullptr;
  if (!on) return;
  std::fprintf(stderr,
               "%s it %3d  value %.6f  step %.3e  criterion %.3e  ridge %.3e\n",
               tag, rec.iteration, rec.value, rec.step, rec.criterion,
               rec.ridge);
  std::fflush(stderr);
}

struct Metric {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double ridge = 0.0;
};

bool llt_ok(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return llt.info() == Eigen::Success &&
         llt.matrixLLT().diagonal().allFinite() &&
         (llt.matrixLLT().diagonal().array() > 0.0).all();
}

// Cholesky with an escalating diagonal ridge for non-PD matrices.
Metric factor_metric(const Eigen::MatrixXd& m) {
  Metric out;
  out.llt.compute(m);
  if (llt_ok(out.llt)) return out;
  const int p = static_cast<int>(m.rows());
  const double scale = std::max(1.0, m.diagonal().cwiseAbs().maxCoeff());
  double ridge = 1e-10 * scale;
  while (ridge < 1e20 * scale) {
    out.llt.compute(m + ridge * Eigen::MatrixXd::Identity(p, p));
    if (llt_ok(out.llt)) {
      out.ridge = ridge;
      return out;
    }
    ridge *= 10.0;
  }
  throw NumericalError("metric cannot be factored even with a large ridge");
}

void check_start(const Objective& objective, const Eigen::VectorXd& x0) {
  if (x0.size() != objective.dim())
    throw DomainError("starting point length does not match the objective");
}

Eigen::MatrixXd score_stats(Objective& objective, const Eigen::VectorXd& x,
                            Eigen::VectorXd& total) {
  const Eigen::MatrixXd s = objective.unit_scores(x);
  if (s.rows() != objective.units() || s.cols() != objective.dim())
    throw DomainError("unit score matrix has the wrong shape");
  total = s.colwise().sum().transpose();
  return s.transpose() * s;
}

}  // namespace

OptimResult rvs_maximize(Objective& objective, const Eigen::VectorXd& x0,
                         const OptimOptions& opts) {
  check_start(objective, x0);
  const int p = objective.dim();
  OptimResult res;
  res.x = x0;
  res.value = objective.value(x0);

  bool stats_fresh = false;
  for (int it = 0; it < opts.max_iter; ++it) {
    res.score_var = score_stats(objective, res.x, res.score);
    const Metric metric = factor_metric(res.score_var);
    Eigen::VectorXd direction = metric.llt.solve(res.score);
    res.criterion = res.score.dot(direction) / p;
    stats_fresh = true;
    if (!direction.allFinite())
      throw NumericalError("scoring direction is not finite");
    direction =
        direction.cwiseMax(-opts.max_step).cwiseMin(opts.max_step).eval();

    res.trace.push_back(
        {it + 1, res.value, 0.0, res.criterion, metric.ridge});
    res.iterations = it + 1;
    if (res.criterion < opts.tolerance) {
      res.converged = true;
      return res;
    }

    double rho = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h, rho *= 0.5) {
      const Eigen::VectorXd candidate = res.x + rho * direction;
      const double value = objective.value(candidate);
      if (value >= res.value) {
        res.x = candidate;
        res.value = value;
        res.trace.back().step = rho;
        res.trace.back().value = value;
        accepted = true;
        stats_fresh = false;
        break;
      }
    }
    trace_line("rvs", res.trace.back());
    if (!accepted) {
      std::ostringstream msg;
      msg << "line search exhausted " << opts.max_halvings
          << " halvings at iteration " << it + 1 << " (criterion "
          << res.criterion << ")";
      res.message = msg.str();
      return res;
    }
  }

  if (!stats_fresh) {
    res.score_var = score_stats(objective, res.x, res.score);
    const Metric metric = factor_metric(res.score_var);
    res.criterion = res.score.dot(metric.llt.solve(res.score)) / p;
    res.converged = res.criterion < opts.tolerance;
  }
  if (!res.converged && res.message.empty())
    res.message = "iteration limit reached";
  return res;
}

OptimResult marquardt_maximize(Objective& objective, const Eigen::VectorXd& x0,
                               const OptimOptions& opts) {
  check_start(objective, x0);
  const int p = objective.dim();
  OptimResult res;
  res.x = x0;
  res.value = objective.value(x0);

  double lambda = 0.0;
  const auto grow = [](double l) { return l == 0.0 ? 1e-4 : l * 10.0; };

  for (int it = 0; it < opts.max_iter; ++it) {
    res.score_var = score_stats(objective, res.x, res.score);
    const Metric gmetric = factor_metric(res.score_var);
    res.criterion = res.score.dot(gmetric.llt.solve(res.score)) / p;
    res.trace.push_back({it + 1, res.value, 0.0, res.criterion, lambda});
    res.iterations = it + 1;
    if (res.criterion < opts.tolerance) {
      res.converged = true;
      return res;
    }

    // Curvature of -value from central differences of the total score.
    Eigen::MatrixXd hess(p, p);
    for (int j = 0; j < p; ++j) {
      const double h = opts.hessian_step * (1.0 + std::fabs(res.x[j]));
      Eigen::VectorXd up, down;
      Eigen::VectorXd shifted = res.x;
      shifted[j] = res.x[j] + h;
      score_stats(objective, shifted, up);
      shifted[j] = res.x[j] - h;
      score_stats(objective, shifted, down);
      hess.col(j) = (up - down) / (2.0 * h);
    }
    const Eigen::MatrixXd neg_hess = -0.5 * (hess + hess.transpose());
    const double diag_scale =
        std::max(1e-8, neg_hess.diagonal().cwiseAbs().maxCoeff() * 1e-8);
    const Eigen::VectorXd damping =
        neg_hess.diagonal().cwiseMax(diag_scale);

    bool accepted = false;
    for (int attempt = 0; attempt <= opts.max_halvings; ++attempt) {
      Eigen::MatrixXd metric = neg_hess;
      metric.diagonal() += lambda * damping;
      Eigen::LLT<Eigen::MatrixXd> llt(metric);
      if (!llt_ok(llt)) {
        lambda = grow(lambda);
        continue;
      }
      const Eigen::VectorXd direction = llt.solve(res.score);
      if (!direction.allFinite()) {
        lambda = grow(lambda);
        continue;
      }
      const Eigen::VectorXd candidate = res.x + direction;
      const double value = objective.value(candidate);
      if (value >= res.value) {
        res.x = candidate;
        res.value = value;
        res.trace.back().step = direction.norm();
        res.trace.back().value = value;
        res.trace.back().ridge = lambda;
        lambda = lambda < 1e-12 ? 0.0 : lambda * 0.1;
        accepted = true;
        break;
      }
      lambda = grow(lambda);
    }
    trace_line("lm", res.trace.back());
    if (!accepted) {
      std::ostringstream msg;
      msg << "no damping produced an acceptable step at iteration " << it + 1
          << " (criterion " << res.criterion << ")";
      res.message = msg.str();
      return res;
    }
  }

  Eigen::VectorXd total;
  res.score_var = score_stats(objective, res.x, total);
  res.score = total;
  const Metric metric = factor_metric(res.score_var);
  res.criterion = res.score.dot(metric.llt.solve(res.score)) / p;
  res.converged = res.criterion < opts.tolerance;
  if (!res.converged && res.message.empty())
    res.message = "iteration limit reached";
  return res;
}

Eigen::VectorXd standard_errors(const Eigen::MatrixXd& score_var,
                                const Eigen::VectorXd& jacobian,
                                const std::vector<std::string>& labels) {
  const int p = static_cast<int>(score_var.rows());
  if (score_var.cols() != p || jacobian.size() != p ||
      static_cast<int>(labels.size()) != p)
    throw DomainError("standard_errors: inconsistent dimensions");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(score_var);
  if (eig.info() != Eigen::Success)
    throw NumericalError("score variance eigendecomposition failed");
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double top = values.maxCoeff();
  const double floor = std::max(top, 0.0) * 1e-12;
  if (!(top > 0.0) || values.minCoeff() <= floor) {
    std::ostringstream msg;
    msg << "score variance is singular; flat directions:";
    for (int i = 0; i < p; ++i) {
      if (values[i] > floor) continue;
      int lead = 0;
      eig.eigenvectors().col(i).cwiseAbs().maxCoeff(&lead);
      msg << ' ' << labels[lead];
    }
    throw NumericalError(msg.str());
  }

  Eigen::VectorXd out(p);
  for (int j = 0; j < p; ++j) {
    const Eigen::VectorXd row = eig.eigenvectors().row(j);
    out[j] = std::fabs(jacobian[j]) *
             std::sqrt((row.array().square() / values.array()).sum());
  }
  return out;
}

namespace {

class CohortObjective : public Objective {
 public:
  CohortObjective(const ModelSpec& spec,
                  const std::vector<SubjectRecord>& cohort,
                  const LikelihoodOptions& options,
                  const Eigen::VectorXd& base, std::vector<int> active)
      : spec_(spec),
        cohort_(cohort),
        options_(options),
        layout_(spec),
        base_(base),
        active_(std::move(active)) {}

  int dim() const override { return static_cast<int>(active_.size()); }
  int units() const override { return static_cast<int>(cohort_.size()); }

  Eigen::VectorXd expand(const Eigen::VectorXd& x) const {
    Eigen::VectorXd full = base_;
    for (int c = 0; c < dim(); ++c) full[active_[c]] = x[c];
    return full;
  }

  double value(const Eigen::VectorXd& x) override {
    const ParameterVector params = layout_.unpack(expand(x));
    return total_loglik(spec_, params, cohort_, options_).total;
  }

  Eigen::MatrixXd unit_scores(const Eigen::VectorXd& x) override {
    const ParameterVector params = layout_.unpack(expand(x));
    const Eigen::MatrixXd full =
        score_by_subject(spec_, params, cohort_, options_);
    Eigen::MatrixXd out(full.rows(), dim());
    for (int c = 0; c < dim(); ++c) out.col(c) = full.col(active_[c]);
    return out;
  }

 private:
  const ModelSpec& spec_;
  const std::vector<SubjectRecord>& cohort_;
  LikelihoodOptions options_;
  ParameterLayout layout_;
  Eigen::VectorXd base_;
  std::vector<int> active_;
};

}  // namespace

FitResult fit_model(const ModelSpec& spec,
                    const std::vector<SubjectRecord>& cohort,
                    const ParameterVector& init, const FitOptions& opts) {
  validate_spec(spec);
  validate_parameters(spec, init);
  if (cohort.empty()) throw ConfigError("fit needs a nonempty cohort");
  if (spec.intercept_fixed && init.beta[0] != 0.0)
    throw ConfigError("a fixed intercept is pinned at zero");
  for (const SubjectRecord& s : cohort) validate_subject(spec, s);

  const ParameterLayout layout(spec);
  const std::vector<std::string>& all_labels = layout.labels();
  std::vector<int> active;
  std::vector<std::string> labels;
  for (int j = 0; j < layout.free_count(); ++j) {
    const bool frozen = std::find(opts.frozen.begin(), opts.frozen.end(),
                                  all_labels[j]) != opts.frozen.end();
    if (!frozen) {
      active.push_back(j);
      labels.push_back(all_labels[j]);
    }
  }
  for (const std::string& name : opts.frozen) {
    if (std::find(all_labels.begin(), all_labels.end(), name) ==
        all_labels.end())
      throw ConfigError("cannot freeze unknown parameter " + name);
  }
  if (active.empty()) throw ConfigError("every parameter is frozen");

  const Eigen::VectorXd base = layout.pack(init);
  CohortObjective objective(spec, cohort, opts.likelihood, base, active);
  Eigen::VectorXd x0(active.size());
  for (std::size_t c = 0; c < active.size(); ++c) x0[c] = base[active[c]];

  OptimResult run;
  std::string algorithm;
  if (opts.algorithm == FitAlgorithm::Marquardt) {
    run = marquardt_maximize(objective, x0, opts.optim);
    algorithm = "marquardt";
  } else {
    run = rvs_maximize(objective, x0, opts.optim);
    algorithm = "rvs";
    if (!run.converged && opts.algorithm == FitAlgorithm::RvsThenMarquardt) {
      OptimResult second = marquardt_maximize(objective, run.x, opts.optim);
      for (IterationRecord& rec : second.trace)
        rec.iteration += run.iterations;
      second.iterations += run.iterations;
      second.trace.insert(second.trace.begin(), run.trace.begin(),
                          run.trace.end());
      run = std::move(second);
      algorithm = "rvs+marquardt";
    }
  }

  FitResult fit;
  const Eigen::VectorXd x_full = objective.expand(run.x);
  fit.params_hat = layout.unpack(x_full);
  fit.loglik = run.value;
  fit.labels = labels;
  const Eigen::VectorXd natural = layout.natural_values(fit.params_hat);
  const Eigen::VectorXd jacobian = layout.transform_jacobian(x_full);
  fit.estimates.resize(active.size());
  Eigen::VectorXd jac_active(active.size());
  for (std::size_t c = 0; c < active.size(); ++c) {
    fit.estimates[c] = natural[active[c]];
    jac_active[c] = jacobian[active[c]];
  }
  fit.score = run.score;
  fit.score_var = run.score_var;
  fit.iterations = run.iterations;
  fit.converged = run.converged;
  fit.stopping_criterion_value = run.criterion;
  fit.trace = std::move(run.trace);
  fit.algorithm_used = algorithm;
  fit.message = run.message;

  try {
    fit.std_errors = standard_errors(fit.score_var, jac_active, labels);
    fit.se_ok = true;
  } catch (const NumericalError& e) {
    fit.std_errors = Eigen::VectorXd::Constant(
        static_cast<int>(active.size()),
        std::numeric_limits<double>::quiet_NaN());
    fit.se_ok = false;
    fit.se_message = e.what();
  }
  return fit;
}

}  // namespace latproc
