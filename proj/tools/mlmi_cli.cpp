#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mlmi/harness.hpp"
#include "mlmi/svgplot.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_run(const std::string& config_path, const std::string& scenario_name,
            const std::string& methods_csv, int reps, const std::string& out_dir,
            const std::string& preset_name, const std::string& exec_name,
            int workers, std::uint64_t seed_override, bool has_seed) {
  mlmi::ScenarioConfig scenario;
  scenario.name = scenario_name;
  if (!config_path.empty()) {
    auto cfg = mlmi::parse_config(config_path);
    auto it = cfg.find(scenario_name);
    if (it == cfg.end()) {
      std::cerr << "scenario [" << scenario_name << "] not found in " << config_path
                << "\n";
      return 1;
    }
    scenario = mlmi::scenario_from_config(it->second, scenario_name);
  }
  if (has_seed) scenario.seed = seed_override;

  mlmi::RunOptions opt;
  opt.preset = mlmi::preset_from_string(preset_name);
  opt.exec = mlmi::exec_from_string(exec_name);
  opt.workers = workers;

  std::vector<std::string> methods =
      methods_csv.empty() ? mlmi::methods_for_model(scenario.analysis_model)
                          : split_list(methods_csv);

  auto results =
      mlmi::run_scenario(scenario, methods, reps, scenario.seed, opt);

  std::filesystem::create_directories(out_dir);
  mlmi::write_results_csv(out_dir + "/results.csv", results.rows);
  std::ofstream mf(out_dir + "/manifest.txt");
  mf << results.manifest.to_text();
  mlmi::write_truth_file(out_dir + "/truth.txt", mlmi::truth_for(scenario));

  std::cout << "wrote " << results.rows.size() << " result rows to " << out_dir
            << "/results.csv\n";
  if (!results.manifest.failures.empty())
    std::cout << results.manifest.failures.size()
              << " failures recorded in the manifest\n";
  return 0;
}

int cmd_metrics(const std::string& in_dir, const std::string& truth_path) {
  auto rows = mlmi::read_results_csv(in_dir + "/results.csv");
  auto truth = mlmi::read_truth_file(
      truth_path.empty() ? in_dir + "/truth.txt" : truth_path);
  auto metrics = mlmi::compute_metrics(rows, truth);
  mlmi::emit_tables(metrics, in_dir);
  std::cout << "wrote " << metrics.size() << " metric rows to " << in_dir << "\n";
  return 0;
}

int cmd_plot(const std::string& in_dir) {
  auto rows = mlmi::read_results_csv(in_dir + "/results.csv");
  auto truth = mlmi::read_truth_file(in_dir + "/truth.txt");
  mlmi::emit_plots(rows, truth, in_dir);
  std::cout << "wrote plots to " << in_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multilevel multiple-imputation simulation harness"};
  app.require_subcommand(1);

  std::string config_path, scenario = "scenario", methods, out_dir = "out";
  std::string preset = "desk", exec = "openmp", truth_path, in_dir;
  int reps = -1, workers = 0;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "run a scenario end to end");
  run->add_option("--config", config_path, "config file with [scenario] sections");
  run->add_option("--scenario", scenario, "scenario name")->required();
  run->add_option("--methods", methods, "comma-separated method labels");
  run->add_option("--reps", reps, "replication count (preset default if omitted)");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--preset", preset, "desk|paper");
  run->add_option("--exec", exec, "serial|openmp");
  run->add_option("--workers", workers, "worker threads (0 = default)");
  auto* seed_opt = run->add_option("--seed", seed, "master seed override");

  auto* metrics = app.add_subcommand("metrics", "compute performance tables");
  metrics->add_option("--in", in_dir, "directory with results.csv")->required();
  metrics->add_option("--truth", truth_path, "truth file (default <in>/truth.txt)");

  auto* plot = app.add_subcommand("plot", "emit SVG figures");
  plot->add_option("--in", in_dir, "directory with results.csv")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, scenario, methods, reps, out_dir, preset, exec,
                     workers, seed, seed_opt->count() > 0);
    if (metrics->parsed()) return cmd_metrics(in_dir, truth_path);
    if (plot->parsed()) return cmd_plot(in_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
