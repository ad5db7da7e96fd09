// Batch front end: fit / simulate / predict / histogram over cohort CSV
// files and a JSON run configuration. Exit codes: 0 success, 2 validation
// failure, 3 numerical failure (including a fit that did not converge).
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "latproc/io.hpp"
#include "latproc/predict.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Args {
  std::string data;
  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
};

latproc::RunConfig effective_config(const Args& a, bool simulate_seed) {
  latproc::RunConfig cfg = a.config.empty() ? latproc::parse_config("{}")
                                            : latproc::load_config(a.config);
  if (a.threads > 0) {
    cfg.likelihood.threads = a.threads;
    cfg.design.threads = a.threads;
  }
  if (a.seed != std::uint64_t(-1)) {
    if (simulate_seed)
      cfg.design.seed = a.seed;
    else
      cfg.likelihood.base_seed = a.seed;
  }
  return cfg;
}

ordered_json report_head(const char* command, const latproc::RunConfig& cfg,
                         std::uint64_t seed) {
  ordered_json j;
  j["command"] = command;
  j["config_hash"] = latproc::hash_hex(cfg.config_hash);
  j["seed"] = seed;
  return j;
}

void write_report(const fs::path& path, const ordered_json& j) {
  latproc::write_text_file(path.string(), j.dump(2) + "\n");
}

int run_fit(const Args& a) {
  const latproc::RunConfig cfg = effective_config(a, false);
  const auto cohort = latproc::read_cohort_csv(a.data, cfg.spec);
  latproc::FitOptions opts;
  opts.optim = cfg.optim;
  opts.likelihood = cfg.likelihood;
  opts.algorithm = cfg.algorithm;
  opts.frozen = cfg.frozen;
  const latproc::FitResult fit =
      latproc::fit_model(cfg.spec, cohort, cfg.params, opts);

  std::string csv = "label,estimate,std_error\n";
  for (std::size_t i = 0; i < fit.labels.size(); ++i) {
    csv += fit.labels[i];
    csv.push_back(',');
    csv += latproc::format_double(fit.estimates[i]);
    csv.push_back(',');
    if (fit.se_ok) csv += latproc::format_double(fit.std_errors[i]);
    csv.push_back('\n');
  }
  latproc::write_text_file((fs::path(a.out_dir) / "parameters.csv").string(),
                           csv);

  ordered_json j = report_head("fit", cfg, cfg.likelihood.base_seed);
  j["converged"] = fit.converged;
  j["algorithm"] = fit.algorithm_used;
  j["iterations"] = fit.iterations;
  j["loglik"] = fit.loglik;
  j["stopping_criterion"] = fit.stopping_criterion_value;
  j["se_ok"] = fit.se_ok;
  j["se_message"] = fit.se_message;
  j["message"] = fit.message;
  j["frozen"] = cfg.frozen;
  ordered_json params = ordered_json::array();
  for (std::size_t i = 0; i < fit.labels.size(); ++i) {
    ordered_json row;
    row["label"] = fit.labels[i];
    row["estimate"] = fit.estimates[i];
    if (fit.se_ok)
      row["std_error"] = fit.std_errors[i];
    else
      row["std_error"] = nullptr;
    params.push_back(row);
  }
  j["parameters"] = params;
  write_report(fs::path(a.out_dir) / "fit.json", j);

  std::printf("fit: %s after %d iterations, loglik %s\n",
              fit.converged ? "converged" : "did not converge",
              fit.iterations, latproc::format_double(fit.loglik).c_str());
  if (!fit.converged && !fit.message.empty())
    std::fprintf(stderr, "fit: %s\n", fit.message.c_str());
  return fit.converged ? 0 : 3;
}

int run_simulate(const Args& a) {
  const latproc::RunConfig cfg = effective_config(a, true);
  const latproc::SimulatedCohort sim =
      latproc::simulate_cohort(cfg.spec, cfg.params, cfg.design);

  latproc::write_text_file((fs::path(a.out_dir) / "cohort.csv").string(),
                           latproc::cohort_csv_text(cfg.spec, sim.subjects));
  latproc::write_text_file((fs::path(a.out_dir) / "truth.csv").string(),
                           latproc::truth_csv_text(cfg.spec, sim));

  ordered_json j = report_head("simulate", cfg, cfg.design.seed);
  j["subjects"] = sim.subjects.size();
  ordered_json obs;
  for (int k = 0; k < cfg.spec.test_count(); ++k) {
    std::int64_t count = 0;
    for (const auto& s : sim.subjects)
      for (int v = 0; v < s.visits(); ++v)
        if (s.observations(k, v) != latproc::kMissingValue) ++count;
    obs[cfg.spec.tests[k].name] = count;
  }
  j["observations"] = obs;
  j["first_visit_rejections"] = sim.rejected_attempts;
  write_report(fs::path(a.out_dir) / "simulate.json", j);

  std::printf("simulate: %zu subjects, %lld first-visit rejections\n",
              sim.subjects.size(),
              static_cast<long long>(sim.rejected_attempts));
  return 0;
}

int run_predict(const Args& a) {
  const latproc::RunConfig cfg = effective_config(a, false);
  if (std::isnan(cfg.prediction.history_cutoff))
    throw latproc::ConfigError(
        "config: prediction.history_cutoff is required for predict");
  const auto cohort = latproc::read_cohort_csv(a.data, cfg.spec);

  struct Row {
    std::string id;
    double t_next;
    double p;
    int outcome;  // kMissingValue when not recorded
  };
  std::vector<Row> rows;
  for (const auto& s : cohort) {
    int nh = 0;
    while (nh < s.visits() &&
           s.visit_times[nh] <= cfg.prediction.history_cutoff)
      ++nh;
    if (nh == 0 || nh == s.visits()) continue;
    bool diagnosed = false;
    for (int j = 0; j < nh; ++j)
      if (s.observations(cfg.spec.entry_test, j) == 1) diagnosed = true;
    if (diagnosed) continue;

    latproc::SubjectRecord h;
    h.id = s.id;
    h.visit_times.assign(s.visit_times.begin(), s.visit_times.begin() + nh);
    h.observations = s.observations.leftCols(nh);
    h.covariates = s.covariates;
    const double t_next = s.visit_times[nh];
    const auto pred =
        latproc::predict_prob(cfg.spec, cfg.params, h, t_next, cfg.likelihood);
    rows.push_back(
        {s.id, t_next, pred.p, s.observations(cfg.spec.entry_test, nh)});
  }
  if (rows.empty()) throw latproc::DataError("no eligible subjects");

  std::string csv = "subject_id,t_next,p,outcome\n";
  std::vector<double> all_p, outcome_p, outcome_scores;
  std::vector<int> outcomes;
  for (const Row& r : rows) {
    csv += r.id;
    csv.push_back(',');
    csv += latproc::format_double(r.t_next);
    csv.push_back(',');
    csv += latproc::format_double(r.p);
    csv.push_back(',');
    if (r.outcome != latproc::kMissingValue) csv += std::to_string(r.outcome);
    csv.push_back('\n');
    all_p.push_back(r.p);
    if (r.outcome != latproc::kMissingValue) {
      outcome_p.push_back(r.p);
      outcome_scores.push_back(r.p);
      outcomes.push_back(r.outcome);
    }
  }
  latproc::write_text_file((fs::path(a.out_dir) / "predictions.csv").string(),
                           csv);

  const auto agg = latproc::predict_count(all_p, cfg.prediction.level);
  ordered_json j = report_head("predict", cfg, cfg.likelihood.base_seed);
  j["history_cutoff"] = cfg.prediction.history_cutoff;
  j["level"] = cfg.prediction.level;
  j["n_eligible"] = rows.size();
  j["expected_count"] = agg.expected;
  j["interval"] = {agg.lo, agg.hi};

  if (!outcomes.empty()) {
    std::int64_t observed = 0;
    bool has_pos = false, has_neg = false;
    for (int y : outcomes) {
      observed += y;
      (y == 1 ? has_pos : has_neg) = true;
    }
    const auto sub = latproc::predict_count(outcome_p, cfg.prediction.level);
    ordered_json o;
    o["n"] = outcomes.size();
    o["observed_count"] = observed;
    o["expected_count"] = sub.expected;
    o["interval"] = {sub.lo, sub.hi};
    if (has_pos && has_neg) {
      const auto curve = latproc::roc(outcome_scores, outcomes);
      o["auc"] = curve.auc;
      std::string roc_csv = "fpr,tpr\n";
      for (const auto& pt : curve.points) {
        roc_csv += latproc::format_double(pt.fpr);
        roc_csv.push_back(',');
        roc_csv += latproc::format_double(pt.tpr);
        roc_csv.push_back('\n');
      }
      latproc::write_text_file((fs::path(a.out_dir) / "roc.csv").string(),
                               roc_csv);
    } else {
      o["auc"] = nullptr;
    }
    j["outcomes"] = o;
  }
  write_report(fs::path(a.out_dir) / "prediction.json", j);

  std::printf("predict: %zu eligible subjects, expected count %s\n",
              rows.size(), latproc::format_double(agg.expected).c_str());
  return 0;
}

int run_histogram(const Args& a) {
  const latproc::RunConfig cfg = effective_config(a, false);
  const auto cohort = latproc::read_cohort_csv(a.data, cfg.spec);

  int ord = -1;
  for (int k = 0; k < cfg.spec.test_count(); ++k)
    if (cfg.spec.tests[k].kind == latproc::TestKind::Ordinal) {
      ord = k;
      break;
    }
  if (ord < 0)
    throw latproc::ConfigError("histogram requires an ordinal test");
  const latproc::TestSpec& test = cfg.spec.tests[ord];
  const Eigen::VectorXd grid =
      latproc::cutoff_grid(test, cfg.params.cutoffs[ord]);

  std::vector<std::int64_t> observed(test.categories, 0);
  std::vector<double> expected(test.categories, 0.0);
  for (const auto& s : cohort) {
    const double mu =
        latproc::intermediate_mean(cfg.spec, cfg.params, s, ord, 0);
    const auto cov = latproc::assemble_cov(cfg.spec, cfg.params, s);
    const int axis = latproc::flat_index(ord, 0, s.visits());
    const double sd = std::sqrt(cov.sigma_total(axis, axis));
    double below = 0.0;
    for (int m = 0; m < test.categories; ++m) {
      const double upper = m == test.categories - 1
                               ? 1.0
                               : latproc::normal_cdf((grid[m] - mu) / sd);
      expected[m] += upper - below;
      below = upper;
    }
    const int y = s.observations(ord, 0);
    if (y != latproc::kMissingValue) ++observed[y];
  }

  std::string csv = "score,observed,expected\n";
  std::int64_t obs_total = 0;
  double total = 0.0;
  for (int m = 0; m < test.categories; ++m) {
    csv += std::to_string(m);
    csv.push_back(',');
    csv += std::to_string(observed[m]);
    csv.push_back(',');
    csv += latproc::format_double(expected[m]);
    csv.push_back('\n');
    obs_total += observed[m];
    total += expected[m];
  }
  latproc::write_text_file((fs::path(a.out_dir) / "histogram.csv").string(),
                           csv);

  ordered_json j = report_head("histogram", cfg, cfg.likelihood.base_seed);
  j["test"] = test.name;
  j["subjects"] = cohort.size();
  j["observed_total"] = obs_total;
  j["expected_total"] = total;
  write_report(fs::path(a.out_dir) / "histogram.json", j);

  std::printf("histogram: %zu subjects, expected total %s\n", cohort.size(),
              latproc::format_double(total).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent-process joint model for longitudinal tests and a "
               "binary diagnosis"};
  app.require_subcommand(1);

  Args a;
  a.seed = std::uint64_t(-1);  // sentinel: no override
  const auto add_common = [&a](CLI::App* c, bool needs_data) {
    if (needs_data)
      c->add_option("--data", a.data, "cohort CSV file")
          ->required()
          ->check(CLI::ExistingFile);
    c->add_option("--config", a.config, "run configuration JSON")
        ->check(CLI::ExistingFile);
    c->add_option("--out-dir", a.out_dir, "output directory")->required();
    c->add_option("--seed", a.seed, "override the config seed");
    c->add_option("--threads", a.threads, "override thread counts")
        ->check(CLI::PositiveNumber);
  };
  add_common(app.add_subcommand("fit", "maximize the joint likelihood"),
             true);
  add_common(app.add_subcommand("simulate", "draw a cohort from the model"),
             false);
  add_common(app.add_subcommand(
                 "predict", "conditional diagnosis probabilities and ROC"),
             true);
  add_common(app.add_subcommand(
                 "histogram", "expected vs observed first-visit scores"),
             true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    std::filesystem::create_directories(a.out_dir);
    if (sub->get_name() == "fit") return run_fit(a);
    if (sub->get_name() == "simulate") return run_simulate(a);
    if (sub->get_name() == "predict") return run_predict(a);
    return run_histogram(a);
  } catch (const latproc::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const latproc::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const latproc::DomainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const latproc::FactorizationError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const latproc::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
}
