#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mlmi/dgp.hpp"
#include "mlmi/imputers.hpp"
#include "mlmi/pooling.hpp"

namespace mlmi {

enum class Preset { desk, paper };
enum class ExecMode { serial, openmp };

Preset preset_from_string(const std::string& s);
ExecMode exec_from_string(const std::string& s);

struct MethodSpec {
  enum class Base { jm1l, fcs1l, jm2l, fcs2l, smc_jm_2l, smc_sm_2l, smc_jm_3l };
  std::string label;
  Base base = Base::jm1l;
  Variant variant = Variant::plain;

  bool long_format() const {
    return base == Base::smc_jm_2l || base == Base::smc_sm_2l ||
           base == Base::smc_jm_3l;
  }
};

// Registration order fixes the row order of every emitted table.
const std::vector<std::string>& registered_methods();
MethodSpec method_spec(const std::string& label);
bool method_valid_for(const std::string& label, AnalysisModel model);
std::vector<std::string> methods_for_model(AnalysisModel model);

// Burn-in / spacing / m per method and preset.
ImputationConfig method_defaults(const MethodSpec& spec, Preset preset,
                                 AnalysisModel model);

struct ResultRow {
  std::string scenario;
  int rep = 0;
  std::string method;
  std::string parameter;  // beta0..beta7, vc3, vc2, vc1
  double estimate = 0.0;
  double se_total = 0.0;  // sqrt(T); 0 for vc rows
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool converged = true;
};

struct RunOptions {
  Preset preset = Preset::desk;
  ExecMode exec = ExecMode::openmp;
  int workers = 0;   // 0 = library default
  int reps = -1;     // -1 = preset default
  int m = -1;        // -1 = preset default
};

struct RunManifest {
  std::uint64_t master_seed = 0;
  int reps = 0;
  std::string scenario;
  std::string preset;
  std::vector<std::string> methods;
  std::map<std::string, std::string> method_configs;
  std::vector<std::uint64_t> rep_seeds;
  std::vector<std::string> failures;  // "rep/method: reason"
  std::string version = "mlmi 1.0";

  std::string to_text() const;
};

struct ScenarioResults {
  std::vector<ResultRow> rows;
  RunManifest manifest;
};

// generate -> calibrate -> impose, deterministic in (scenario, rep seed)
LongDataset make_incomplete(const ScenarioConfig& scenario, std::uint64_t rep_seed);

// One method applied to one incomplete dataset, through pooling.
RepEstimate run_method(const LongDataset& incomplete, const ScenarioConfig& scenario,
                       const MethodSpec& spec, const ImputationConfig& cfg);

ScenarioResults run_scenario(const ScenarioConfig& scenario,
                             const std::vector<std::string>& methods, int reps,
                             std::uint64_t master_seed, const RunOptions& opt);

// True parameter values keyed like ResultRow::parameter.
std::map<std::string, double> truth_for(const ScenarioConfig& scenario);

struct MetricRow {
  std::string scenario;
  std::string method;
  std::string parameter;
  int n_reps = 0;
  double avg_estimate = 0.0;
  double bias = 0.0;
  double rel_bias_pct = 0.0;
  double emp_se = 0.0;
  double mod_se = 0.0;       // coefficients only
  double coverage_pct = 0.0;  // coefficients only
  double coverage_mc_err_pct = 0.0;
};

std::vector<MetricRow> compute_metrics(const std::vector<ResultRow>& rows,
                                       const std::map<std::string, double>& truth);

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(const std::string& path);

// One CSV per (scenario, parameter group); Table-style column set.
void emit_tables(const std::vector<MetricRow>& metrics, const std::string& dir);

void write_truth_file(const std::string& path,
                      const std::map<std::string, double>& truth);
std::map<std::string, double> read_truth_file(const std::string& path);

// Plain-text config: [section] headers, key = value lines, # comments.
std::map<std::string, std::map<std::string, std::string>> parse_config(
    const std::string& path);
ScenarioConfig scenario_from_config(
    const std::map<std::string, std::string>& section, const std::string& name);

}  // namespace mlmi
