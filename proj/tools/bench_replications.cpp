// Compares the serial and OpenMP replication loops on a small scenario and
// checks that both produce identical result rows.

#include <chrono>
#include <iostream>

#include "mlmi/harness.hpp"

int main(int argc, char** argv) {
  int reps = argc > 1 ? std::atoi(argv[1]) : 8;

  mlmi::ScenarioConfig scenario;
  scenario.name = "bench";
  scenario.n_schools = 10;
  scenario.school_size = 12;
  scenario.analysis_model = mlmi::AnalysisModel::model1;
  scenario.seed = 20240901;

  std::vector<std::string> methods = {"JM-1L-DI-wide", "FCS-1L-DI-wide"};
  mlmi::RunOptions opt;
  opt.preset = mlmi::Preset::desk;
  opt.m = 4;

  auto time_run = [&](mlmi::ExecMode exec) {
    opt.exec = exec;
    auto t0 = std::chrono::steady_clock::now();
    auto res = mlmi::run_scenario(scenario, methods, reps, scenario.seed, opt);
    auto t1 = std::chrono::steady_clock::now();
    double sec = std::chrono::duration<double>(t1 - t0).count();
    return std::make_pair(sec, res.rows);
  };

  auto [serial_sec, serial_rows] = time_run(mlmi::ExecMode::serial);
  auto [omp_sec, omp_rows] = time_run(mlmi::ExecMode::openmp);

  bool identical = serial_rows.size() == omp_rows.size();
  for (std::size_t i = 0; identical && i < serial_rows.size(); ++i) {
    const auto& a = serial_rows[i];
    const auto& b = omp_rows[i];
    identical = a.rep == b.rep && a.method == b.method &&
                a.parameter == b.parameter && a.estimate == b.estimate &&
                a.se_total == b.se_total;
  }

  std::cout << "replications: " << reps << "\n"
            << "serial: " << serial_sec << " s\n"
            << "openmp: " << omp_sec << " s\n"
            << "speedup: " << serial_sec / omp_sec << "x\n"
            << "rows identical: " << (identical ? "yes" : "NO") << "\n";
  return identical ? 0 : 1;
}
