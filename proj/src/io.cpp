#include "latproc/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include "json.hpp"

namespace latproc {

namespace {

constexpr const char* kCohortHeader = "subject_id,visit_time,test,value,ed";

bool parse_full_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

bool parse_full_int(const std::string& s, int& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

[[noreturn]] void line_error(const std::string& path, int line,
                             const std::string& what) {
  throw DataError(path + ": line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("short write to " + path);
}

std::vector<SubjectRecord> read_cohort_csv(const std::string& path,
                                           const ModelSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);

  struct Raw {
    double ed = 0.0;
    int ed_line = 0;
    // (time, test) -> (value, line)
    std::map<std::pair<double, int>, std::pair<int, int>> cells;
  };
  std::vector<std::string> order;
  std::map<std::string, Raw> by_id;

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kCohortHeader)
        line_error(path, 1,
                   "expected header `" + std::string(kCohortHeader) + "`");
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 5)
      line_error(path, lineno,
                 "expected 5 fields, got " + std::to_string(f.size()));
    const std::string& id = f[0];
    if (id.empty()) line_error(path, lineno, "empty subject_id");

    double time = 0.0;
    if (!parse_full_double(f[1], time))
      line_error(path, lineno, "bad visit_time `" + f[1] + "`");

    int test = -1;
    for (int k = 0; k < spec.test_count(); ++k)
      if (spec.tests[k].name == f[2]) test = k;
    if (test < 0) line_error(path, lineno, "unknown test `" + f[2] + "`");

    int value = kMissingValue;
    if (!f[3].empty()) {
      if (!parse_full_int(f[3], value) || value < 0)
        line_error(path, lineno, "bad value `" + f[3] + "`");
    }

    double ed = 0.0;
    if (!parse_full_double(f[4], ed) || (ed != 0.0 && ed != 1.0))
      line_error(path, lineno, "ed must be 0 or 1, got `" + f[4] + "`");

    auto ins = by_id.emplace(id, Raw{});
    Raw& raw = ins.first->second;
    if (ins.second) {
      order.push_back(id);
      raw.ed = ed;
      raw.ed_line = lineno;
    } else if (raw.ed != ed) {
      line_error(path, lineno,
                 "subject " + id + ": ed differs from line " +
                     std::to_string(raw.ed_line));
    }
    auto cell = raw.cells.emplace(std::make_pair(time, test),
                                  std::make_pair(value, lineno));
    if (!cell.second)
      line_error(path, lineno,
                 "duplicate (subject_id, visit_time, test); first seen at "
                 "line " +
                     std::to_string(cell.first->second.second));
  }
  if (lineno == 0) throw DataError(path + ": empty file");

  std::vector<SubjectRecord> cohort;
  cohort.reserve(order.size());
  for (const std::string& id : order) {
    const Raw& raw = by_id[id];
    std::vector<double> times;
    for (const auto& c : raw.cells)
      if (times.empty() || c.first.first != times.back())
        times.push_back(c.first.first);
    SubjectRecord s;
    s.id = id;
    s.visit_times = times;
    s.observations = Eigen::MatrixXi::Constant(
        spec.test_count(), static_cast<int>(times.size()), kMissingValue);
    s.covariates["ed"] = raw.ed;
    for (const auto& c : raw.cells) {
      const int col = static_cast<int>(
          std::lower_bound(times.begin(), times.end(), c.first.first) -
          times.begin());
      s.observations(c.first.second, col) = c.second.first;
    }
    validate_subject(spec, s);
    cohort.push_back(std::move(s));
  }
  return cohort;
}

std::string cohort_csv_text(const ModelSpec& spec,
                            const std::vector<SubjectRecord>& cohort) {
  std::string out = kCohortHeader;
  out.push_back('\n');
  for (const SubjectRecord& s : cohort) {
    const auto ed_it = s.covariates.find("ed");
    if (ed_it == s.covariates.end())
      throw DataError("subject " + s.id + " has no ed covariate");
    const std::string ed = format_double(ed_it->second);
    for (int j = 0; j < s.visits(); ++j) {
      const std::string time = format_double(s.visit_times[j]);
      for (int k = 0; k < spec.test_count(); ++k) {
        out += s.id;
        out.push_back(',');
        out += time;
        out.push_back(',');
        out += spec.tests[k].name;
        out.push_back(',');
        if (s.observations(k, j) != kMissingValue)
          out += std::to_string(s.observations(k, j));
        out.push_back(',');
        out += ed;
        out.push_back('\n');
      }
    }
  }
  return out;
}

std::string truth_csv_text(const ModelSpec& spec, const SimulatedCohort& sim) {
  std::string out = "subject_id,visit_time,entry_age,a1";
  for (const TestSpec& t : spec.tests) out += ",d_" + t.name;
  out += ",w";
  for (const TestSpec& t : spec.tests) out += ",theta_" + t.name;
  out += ",attempts\n";
  for (std::size_t i = 0; i < sim.subjects.size(); ++i) {
    const SubjectRecord& s = sim.subjects[i];
    const SubjectTruth& tr = sim.truth[i];
    for (int j = 0; j < s.visits(); ++j) {
      out += s.id;
      out.push_back(',');
      out += format_double(s.visit_times[j]);
      out.push_back(',');
      out += format_double(tr.entry_age);
      out.push_back(',');
      out += format_double(tr.a1);
      for (int k = 0; k < spec.test_count(); ++k) {
        out.push_back(',');
        out += format_double(tr.d[k]);
      }
      out.push_back(',');
      out += format_double(tr.w[j]);
      for (int k = 0; k < spec.test_count(); ++k) {
        out.push_back(',');
        out += format_double(tr.theta(k, j));
      }
      out.push_back(',');
      out += std::to_string(tr.attempts);
      out.push_back('\n');
    }
  }
  return out;
}

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + path + ": " + what);
}

std::string joined(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known) bad(joined(path, it.key()), "unknown key");
  }
}

const json& expect_object(const json& v, const std::string& path) {
  if (!v.is_object()) bad(path, "expected an object");
  return v;
}

double get_num(const json& obj, const char* key, const std::string& path,
               double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (!v.is_number()) bad(joined(path, key), "expected a number");
  return v.get<double>();
}

int get_int(const json& obj, const char* key, const std::string& path,
            int fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (!v.is_number_integer()) bad(joined(path, key), "expected an integer");
  return v.get<int>();
}

std::int64_t get_int64(const json& obj, const char* key,
                       const std::string& path, std::int64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (!v.is_number_integer()) bad(joined(path, key), "expected an integer");
  return v.get<std::int64_t>();
}

std::uint64_t get_seed(const json& obj, const char* key,
                       const std::string& path, std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  bad(joined(path, key), "expected a nonnegative integer");
}

bool get_bool(const json& obj, const char* key, const std::string& path,
              bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (!v.is_boolean()) bad(joined(path, key), "expected true or false");
  return v.get<bool>();
}

std::string get_str(const json& obj, const char* key, const std::string& path,
                    const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (!v.is_string()) bad(joined(path, key), "expected a string");
  return v.get<std::string>();
}

Eigen::VectorXd get_vec(const json& v, const std::string& path) {
  if (!v.is_array()) bad(path, "expected an array of numbers");
  Eigen::VectorXd out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number())
      bad(path + "[" + std::to_string(i) + "]", "expected a number");
    out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  }
  return out;
}

int test_index(const ModelSpec& spec, const std::string& name,
               const std::string& path) {
  for (int k = 0; k < spec.test_count(); ++k)
    if (spec.tests[k].name == name) return k;
  bad(path, "no test named `" + name + "` in the model");
}

TestSpec parse_test(const json& v, const std::string& path) {
  expect_object(v, path);
  check_keys(v, path,
             {"name", "kind", "categories", "cutoff_model", "fixed_top",
              "random_effect", "error_term", "effects"});
  TestSpec t;
  t.name = get_str(v, "name", path, "");
  if (t.name.empty()) bad(joined(path, "name"), "required");
  const std::string kind = get_str(v, "kind", path, "binary");
  if (kind == "binary") t.kind = TestKind::Binary;
  else if (kind == "ordinal") t.kind = TestKind::Ordinal;
  else bad(joined(path, "kind"), "expected `binary` or `ordinal`");
  t.categories = get_int(v, "categories", path, t.kind == TestKind::Binary
                                                    ? 2
                                                    : t.categories);
  const std::string cm = get_str(v, "cutoff_model", path,
                                 t.kind == TestKind::Binary ? "single_threshold"
                                                            : "power_grid");
  if (cm == "single_threshold") t.cutoff_model = CutoffKind::SingleThreshold;
  else if (cm == "power_grid") t.cutoff_model = CutoffKind::PowerGrid;
  else bad(joined(path, "cutoff_model"),
           "expected `single_threshold` or `power_grid`");
  t.fixed_top = get_num(v, "fixed_top", path, t.fixed_top);
  t.has_random_effect = get_bool(v, "random_effect", path, false);
  t.has_error_term = get_bool(v, "error_term", path, false);
  if (v.contains("effects")) {
    const json& eff = v["effects"];
    if (!eff.is_array()) bad(joined(path, "effects"), "expected an array");
    for (std::size_t i = 0; i < eff.size(); ++i) {
      const std::string p = path + ".effects[" + std::to_string(i) + "]";
      if (!eff[i].is_string()) bad(p, "expected a string");
      const std::string e = eff[i].get<std::string>();
      if (e == "education")
        t.fixed_effect_terms.push_back(CovTerm::Education);
      else if (e == "practice")
        t.fixed_effect_terms.push_back(CovTerm::Practice);
      else if (e == "education_practice")
        t.fixed_effect_terms.push_back(CovTerm::EducationPractice);
      else
        bad(p, "expected `education`, `practice`, or `education_practice`");
    }
  }
  return t;
}

ModelSpec parse_model(const json& v) {
  const std::string path = "model";
  expect_object(v, path);
  check_keys(v, path,
             {"latent_mean", "random_effects", "intercept_fixed",
              "time_origin", "entry_truncation", "entry_test", "tests"});
  ModelSpec spec = dementia_mmse_spec();
  const std::string mean = get_str(v, "latent_mean", path, "power_time");
  if (mean == "linear") spec.latent_mean = LatentMeanKind::Linear;
  else if (mean == "power_time") spec.latent_mean = LatentMeanKind::PowerTime;
  else bad(joined(path, "latent_mean"), "expected `linear` or `power_time`");
  spec.random_effects =
      get_int(v, "random_effects", path, spec.random_effects);
  spec.intercept_fixed =
      get_bool(v, "intercept_fixed", path, spec.intercept_fixed);
  spec.time_origin = get_num(v, "time_origin", path, spec.time_origin);
  spec.entry_truncation =
      get_bool(v, "entry_truncation", path, spec.entry_truncation);
  if (v.contains("tests")) {
    const json& ts = v["tests"];
    if (!ts.is_array() || ts.empty())
      bad(joined(path, "tests"), "expected a nonempty array");
    spec.tests.clear();
    for (std::size_t i = 0; i < ts.size(); ++i)
      spec.tests.push_back(
          parse_test(ts[i], path + ".tests[" + std::to_string(i) + "]"));
    spec.entry_test = 0;
  }
  if (v.contains("entry_test")) {
    const std::string name = get_str(v, "entry_test", path, "");
    spec.entry_test = test_index(spec, name, joined(path, "entry_test"));
  }
  return spec;
}

void parse_parameters(const json& v, const ModelSpec& spec,
                      ParameterVector& p) {
  const std::string path = "parameters";
  expect_object(v, path);
  check_keys(v, path, {"beta", "test_effects", "cutoffs", "sigma_a",
                       "sigma_d", "sigma_eps"});
  if (v.contains("beta")) {
    const Eigen::VectorXd b = get_vec(v["beta"], joined(path, "beta"));
    if (b.size() != p.beta.size())
      bad(joined(path, "beta"),
          "expected " + std::to_string(p.beta.size()) + " entries");
    p.beta = b;
  }
  p.sigma_a = get_num(v, "sigma_a", path, p.sigma_a);
  const auto per_test_vec = [&](const char* key,
                                std::vector<Eigen::VectorXd>& slot,
                                auto expected_len) {
    if (!v.contains(key)) return;
    const std::string kp = joined(path, key);
    const json& obj = expect_object(v[key], kp);
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      const std::string ip = joined(kp, it.key());
      const int k = test_index(spec, it.key(), ip);
      const Eigen::VectorXd val = get_vec(it.value(), ip);
      const int want = expected_len(spec.tests[k]);
      if (val.size() != want)
        bad(ip, "expected " + std::to_string(want) + " entries");
      slot[k] = val;
    }
  };
  per_test_vec("test_effects", p.test_effects, [](const TestSpec& t) {
    return static_cast<int>(t.fixed_effect_terms.size());
  });
  per_test_vec("cutoffs", p.cutoffs,
               [](const TestSpec& t) { return t.cutoff_param_count(); });
  const auto per_test_scalar = [&](const char* key, Eigen::VectorXd& slot) {
    if (!v.contains(key)) return;
    const std::string kp = joined(path, key);
    const json& obj = expect_object(v[key], kp);
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      const std::string ip = joined(kp, it.key());
      const int k = test_index(spec, it.key(), ip);
      if (!it.value().is_number()) bad(ip, "expected a number");
      slot[k] = it.value().get<double>();
    }
  };
  per_test_scalar("sigma_d", p.sigma_d);
  per_test_scalar("sigma_eps", p.sigma_eps);
}

void parse_integrator(const json& v, LikelihoodOptions& o) {
  const std::string path = "integrator";
  expect_object(v, path);
  check_keys(v, path, {"target_abs_error", "max_samples", "shifts", "seed",
                       "fd_step", "threads"});
  o.target_abs_error =
      get_num(v, "target_abs_error", path, o.target_abs_error);
  o.max_samples = get_int64(v, "max_samples", path, o.max_samples);
  o.shifts = get_int(v, "shifts", path, o.shifts);
  o.base_seed = get_seed(v, "seed", path, o.base_seed);
  o.fd_step = get_num(v, "fd_step", path, o.fd_step);
  o.threads = get_int(v, "threads", path, o.threads);
  if (o.threads < 1) bad(joined(path, "threads"), "must be at least 1");
}

void parse_optimizer(const json& v, RunConfig& cfg) {
  const std::string path = "optimizer";
  expect_object(v, path);
  check_keys(v, path, {"tolerance", "max_iter", "max_halvings",
                       "hessian_step", "algorithm", "frozen"});
  cfg.optim.tolerance = get_num(v, "tolerance", path, cfg.optim.tolerance);
  cfg.optim.max_iter = get_int(v, "max_iter", path, cfg.optim.max_iter);
  cfg.optim.max_halvings =
      get_int(v, "max_halvings", path, cfg.optim.max_halvings);
  cfg.optim.hessian_step =
      get_num(v, "hessian_step", path, cfg.optim.hessian_step);
  const std::string algo = get_str(v, "algorithm", path, "rvs_then_marquardt");
  if (algo == "rvs") cfg.algorithm = FitAlgorithm::Rvs;
  else if (algo == "marquardt") cfg.algorithm = FitAlgorithm::Marquardt;
  else if (algo == "rvs_then_marquardt")
    cfg.algorithm = FitAlgorithm::RvsThenMarquardt;
  else bad(joined(path, "algorithm"),
           "expected `rvs`, `marquardt`, or `rvs_then_marquardt`");
  if (v.contains("frozen")) {
    const json& fr = v["frozen"];
    if (!fr.is_array()) bad(joined(path, "frozen"), "expected an array");
    for (std::size_t i = 0; i < fr.size(); ++i) {
      if (!fr[i].is_string())
        bad(path + ".frozen[" + std::to_string(i) + "]", "expected a string");
      cfg.frozen.push_back(fr[i].get<std::string>());
    }
  }
}

void parse_simulation(const json& v, SimulationDesign& d) {
  const std::string path = "simulation";
  expect_object(v, path);
  check_keys(v, path,
             {"n_subjects", "education_prob", "visit_offsets", "seed",
              "entry_truncation", "censor_after_diagnosis", "missing_prob",
              "threads", "entry_age"});
  d.n_subjects = get_int(v, "n_subjects", path, d.n_subjects);
  d.education_prob =
      get_num(v, "education_prob", path, d.education_prob);
  if (v.contains("visit_offsets")) {
    const Eigen::VectorXd off =
        get_vec(v["visit_offsets"], joined(path, "visit_offsets"));
    d.visit_offsets.assign(off.data(), off.data() + off.size());
  }
  d.seed = get_seed(v, "seed", path, d.seed);
  d.apply_entry_truncation =
      get_bool(v, "entry_truncation", path, d.apply_entry_truncation);
  d.censor_after_diagnosis =
      get_bool(v, "censor_after_diagnosis", path, d.censor_after_diagnosis);
  d.missing_prob = get_num(v, "missing_prob", path, d.missing_prob);
  d.threads = get_int(v, "threads", path, d.threads);
  if (v.contains("entry_age")) {
    const std::string ap = joined(path, "entry_age");
    const json& age = expect_object(v["entry_age"], ap);
    check_keys(age, ap, {"uniform", "table"});
    if (age.contains("uniform") && age.contains("table"))
      bad(ap, "give either `uniform` or `table`, not both");
    if (age.contains("uniform")) {
      const Eigen::VectorXd u =
          get_vec(age["uniform"], joined(ap, "uniform"));
      if (u.size() != 2) bad(joined(ap, "uniform"), "expected [lo, hi]");
      d.entry_age.uniform_lo = u[0];
      d.entry_age.uniform_hi = u[1];
    }
    if (age.contains("table")) {
      const json& tab = age["table"];
      const std::string tp = joined(ap, "table");
      if (!tab.is_array() || tab.empty())
        bad(tp, "expected a nonempty array of [age, weight] pairs");
      for (std::size_t i = 0; i < tab.size(); ++i) {
        const Eigen::VectorXd row =
            get_vec(tab[i], tp + "[" + std::to_string(i) + "]");
        if (row.size() != 2)
          bad(tp + "[" + std::to_string(i) + "]",
              "expected an [age, weight] pair");
        d.entry_age.table.emplace_back(row[0], row[1]);
      }
    }
  }
}

void parse_prediction(const json& v, PredictionRule& r) {
  const std::string path = "prediction";
  expect_object(v, path);
  check_keys(v, path, {"history_cutoff", "level"});
  r.history_cutoff = get_num(v, "history_cutoff", path, r.history_cutoff);
  r.level = get_num(v, "level", path, r.level);
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  expect_object(doc, "top level");
  check_keys(doc, "", {"model", "parameters", "integrator", "optimizer",
                       "simulation", "prediction"});
  RunConfig cfg;
  cfg.spec = doc.contains("model") ? parse_model(doc["model"])
                                   : dementia_mmse_spec();
  validate_spec(cfg.spec);
  cfg.params = default_parameters(cfg.spec);
  if (doc.contains("parameters"))
    parse_parameters(doc["parameters"], cfg.spec, cfg.params);
  validate_parameters(cfg.spec, cfg.params);
  if (doc.contains("integrator"))
    parse_integrator(doc["integrator"], cfg.likelihood);
  if (doc.contains("optimizer")) parse_optimizer(doc["optimizer"], cfg);
  if (doc.contains("simulation"))
    parse_simulation(doc["simulation"], cfg.design);
  if (doc.contains("prediction"))
    parse_prediction(doc["prediction"], cfg.prediction);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  const std::string text = read_text_file(path);
  RunConfig cfg = parse_config(text);
  cfg.config_hash = fnv1a64(text);
  return cfg;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace latproc
