#pragma once

#include <string>
#include <vector>

#include "mlmi/harness.hpp"

namespace mlmi {

// Tukey box summary: type-7 quartiles, whiskers clipped to the most extreme
// points inside Q1 - 1.5 IQR / Q3 + 1.5 IQR.
struct BoxStats {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
  double whisker_lo = 0.0, whisker_hi = 0.0;
  std::vector<double> outliers;

  static BoxStats from(const std::vector<double>& values);
};

// One labelled box per group, horizontal reference line at `reference`.
void write_box_plot_svg(const std::string& path, const std::string& title,
                        const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& groups,
                        double reference);

// Empirical vs model-based SE per method with +/- 1.96 MC-error bars on the
// empirical points.
void write_se_plot_svg(const std::string& path, const std::string& title,
                       const std::vector<std::string>& labels,
                       const std::vector<double>& emp_se,
                       const std::vector<double>& mod_se,
                       const std::vector<double>& emp_se_mc_err);

// Figure set for one scenario: estimate-distribution box plots for the
// exposure and interaction coefficients and an EmpSE/ModSE comparison.
void emit_plots(const std::vector<ResultRow>& rows,
                const std::map<std::string, double>& truth, const std::string& dir);

}  // namespace mlmi
