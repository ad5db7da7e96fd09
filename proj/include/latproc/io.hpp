#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latproc/likelihood.hpp"
#include "latproc/model.hpp"
#include "latproc/optimizer.hpp"
#include "latproc/simulate.hpp"

namespace latproc {

/// Shortest decimal string that parses back to the same double.
std::string format_double(double x);

/// Long-format cohort file. Header is exactly
/// `subject_id,visit_time,test,value,ed`; the test column carries a test
/// name from the spec; an empty value field means the test was not taken.
/// Rows of one subject must agree on ed, and (subject_id, visit_time, test)
/// must be unique. Parse failures name the offending line. Subjects come
/// back in first-appearance order with visit times sorted ascending.
std::vector<SubjectRecord> read_cohort_csv(const std::string& path,
                                           const ModelSpec& spec);

/// Serializes a cohort in the same long format, one row per
/// (subject, visit, test) cell including missing cells, so a write/read
/// round trip is lossless.
std::string cohort_csv_text(const ModelSpec& spec,
                            const std::vector<SubjectRecord>& cohort);

/// Latent truth behind a simulated cohort, one row per subject visit:
/// entry age, subject effects, process value, and latent responses.
std::string truth_csv_text(const ModelSpec& spec, const SimulatedCohort& sim);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

/// How batch prediction picks its target time: visits at or before
/// history_cutoff form the history, the first later visit is predicted.
struct PredictionRule {
  double history_cutoff = std::numeric_limits<double>::quiet_NaN();
  double level = 0.95;
};

/// One parsed run configuration. Every section is optional; absent sections
/// keep the defaults (the built-in two-test model, its default parameters,
/// and default option structs).
struct RunConfig {
  ModelSpec spec;
  ParameterVector params;
  LikelihoodOptions likelihood;
  OptimOptions optim;
  FitAlgorithm algorithm = FitAlgorithm::RvsThenMarquardt;
  std::vector<std::string> frozen;
  SimulationDesign design;
  PredictionRule prediction;
  // FNV-1a over the raw config bytes; reports embed it for traceability.
  std::uint64_t config_hash = 0;
};

/// Parses and validates a JSON run configuration. Sections: model,
/// parameters, integrator, optimizer, simulation, prediction. Unknown keys
/// anywhere are rejected with their full path.
RunConfig parse_config(const std::string& json_text);

/// Reads, parses, and hashes a configuration file.
RunConfig load_config(const std::string& path);

std::string hash_hex(std::uint64_t h);

}  // namespace latproc
