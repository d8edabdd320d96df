#include "mlmi/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mlmi/stats.hpp"

namespace mlmi {

BoxStats BoxStats::from(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("box stats of empty sample");
  BoxStats b;
  b.q1 = quantile(values, 0.25);
  b.median = quantile(values, 0.5);
  b.q3 = quantile(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr;
  const double hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_lo = b.q3;
  b.whisker_hi = b.q1;
  bool any_in = false;
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      b.outliers.push_back(v);
      continue;
    }
    if (!any_in) {
      b.whisker_lo = b.whisker_hi = v;
      any_in = true;
    } else {
      b.whisker_lo = std::min(b.whisker_lo, v);
      b.whisker_hi = std::max(b.whisker_hi, v);
    }
  }
  if (!any_in) {
    b.whisker_lo = b.q1;
    b.whisker_hi = b.q3;
  }
  std::sort(b.outliers.begin(), b.outliers.end());
  return b;
}

namespace {

constexpr double kWidth = 900.0, kHeight = 480.0;
constexpr double kLeft = 70.0, kRight = 20.0, kTop = 40.0, kBottom = 110.0;

struct Scale {
  double vmin = 0.0, vmax = 1.0;
  double map(double v) const {
    const double t = (v - vmin) / (vmax - vmin);
    return kHeight - kBottom - t * (kHeight - kTop - kBottom);
  }
};

Scale make_scale(double lo, double hi) {
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.07 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::ofstream open_svg(const std::string& path, const std::string& title) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.precision(10);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='"
    << kHeight << "' viewBox='0 0 " << kWidth << ' ' << kHeight << "'>\n"
    << "<rect width='100%' height='100%' fill='white'/>\n"
    << "<text x='" << kWidth / 2 << "' y='24' text-anchor='middle' "
    << "font-family='sans-serif' font-size='16'>" << title << "</text>\n";
  return f;
}

void axis_and_ticks(std::ofstream& f, const Scale& sc) {
  f << "<line x1='" << kLeft << "' y1='" << kTop << "' x2='" << kLeft << "' y2='"
    << kHeight - kBottom << "' stroke='black'/>\n";
  for (int i = 0; i <= 6; ++i) {
    const double v = sc.vmin + (sc.vmax - sc.vmin) * i / 6.0;
    const double y = sc.map(v);
    f << "<line x1='" << kLeft - 4 << "' y1='" << y << "' x2='" << kLeft
      << "' y2='" << y << "' stroke='black'/>\n";
    std::ostringstream num;
    num.precision(3);
    num << v;
    f << "<text x='" << kLeft - 8 << "' y='" << y + 4
      << "' text-anchor='end' font-family='sans-serif' font-size='11'>"
      << num.str() << "</text>\n";
  }
}

void group_label(std::ofstream& f, double x, const std::string& label) {
  f << "<text x='" << x << "' y='" << kHeight - kBottom + 14
    << "' text-anchor='end' font-family='sans-serif' font-size='11' "
    << "transform='rotate(-45 " << x << ' ' << kHeight - kBottom + 14 << ")'>"
    << label << "</text>\n";
}

}  // namespace

void write_box_plot_svg(const std::string& path, const std::string& title,
                        const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& groups,
                        double reference) {
  if (labels.size() != groups.size())
    throw std::invalid_argument("box plot labels/groups mismatch");
  double lo = reference, hi = reference;
  std::vector<BoxStats> stats;
  for (const auto& g : groups) {
    BoxStats b = BoxStats::from(g);
    lo = std::min({lo, b.whisker_lo, b.outliers.empty() ? b.whisker_lo : b.outliers.front()});
    hi = std::max({hi, b.whisker_hi, b.outliers.empty() ? b.whisker_hi : b.outliers.back()});
    stats.push_back(std::move(b));
  }
  const Scale sc = make_scale(lo, hi);
  auto f = open_svg(path, title);
  axis_and_ticks(f, sc);

  const double yref = sc.map(reference);
  f << "<line x1='" << kLeft << "' y1='" << yref << "' x2='" << kWidth - kRight
    << "' y2='" << yref << "' stroke='firebrick' stroke-dasharray='6 4'/>\n";

  const double span = (kWidth - kLeft - kRight) / static_cast<double>(groups.size());
  const double bw = std::min(40.0, 0.5 * span);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const double cx = kLeft + span * (static_cast<double>(i) + 0.5);
    const BoxStats& b = stats[i];
    const double yq1 = sc.map(b.q1), yq3 = sc.map(b.q3), ymed = sc.map(b.median);
    const double ywl = sc.map(b.whisker_lo), ywh = sc.map(b.whisker_hi);
    f << "<line x1='" << cx << "' y1='" << ywl << "' x2='" << cx << "' y2='" << yq1
      << "' stroke='black'/>\n"
      << "<line x1='" << cx << "' y1='" << yq3 << "' x2='" << cx << "' y2='" << ywh
      << "' stroke='black'/>\n"
      << "<line x1='" << cx - bw / 3 << "' y1='" << ywl << "' x2='" << cx + bw / 3
      << "' y2='" << ywl << "' stroke='black'/>\n"
      << "<line x1='" << cx - bw / 3 << "' y1='" << ywh << "' x2='" << cx + bw / 3
      << "' y2='" << ywh << "' stroke='black'/>\n"
      << "<rect x='" << cx - bw / 2 << "' y='" << yq3 << "' width='" << bw
      << "' height='" << yq1 - yq3
      << "' fill='steelblue' fill-opacity='0.5' stroke='black'/>\n"
      << "<line x1='" << cx - bw / 2 << "' y1='" << ymed << "' x2='" << cx + bw / 2
      << "' y2='" << ymed << "' stroke='black' stroke-width='2'/>\n";
    for (double o : b.outliers)
      f << "<circle cx='" << cx << "' cy='" << sc.map(o)
        << "' r='2' fill='none' stroke='black'/>\n";
    group_label(f, cx, labels[i]);
  }
  f << "</svg>\n";
}

void write_se_plot_svg(const std::string& path, const std::string& title,
                       const std::vector<std::string>& labels,
                       const std::vector<double>& emp_se,
                       const std::vector<double>& mod_se,
                       const std::vector<double>& emp_se_mc_err) {
  if (labels.size() != emp_se.size() || labels.size() != mod_se.size() ||
      labels.size() != emp_se_mc_err.size())
    throw std::invalid_argument("se plot input length mismatch");
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    lo = std::min({lo, emp_se[i] - 1.96 * emp_se_mc_err[i], mod_se[i]});
    hi = std::max({hi, emp_se[i] + 1.96 * emp_se_mc_err[i], mod_se[i]});
  }
  const Scale sc = make_scale(std::min(lo, 0.0), hi);
  auto f = open_svg(path, title);
  axis_and_ticks(f, sc);

  const double span = (kWidth - kLeft - kRight) / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double cx = kLeft + span * (static_cast<double>(i) + 0.5);
    const double ylo = sc.map(emp_se[i] - 1.96 * emp_se_mc_err[i]);
    const double yhi = sc.map(emp_se[i] + 1.96 * emp_se_mc_err[i]);
    f << "<line x1='" << cx - 8 << "' y1='" << ylo << "' x2='" << cx - 8
      << "' y2='" << yhi << "' stroke='steelblue'/>\n"
      << "<circle cx='" << cx - 8 << "' cy='" << sc.map(emp_se[i])
      << "' r='4' fill='steelblue'/>\n"
      << "<circle cx='" << cx + 8 << "' cy='" << sc.map(mod_se[i])
      << "' r='4' fill='darkorange'/>\n";
    group_label(f, cx, labels[i]);
  }
  f << "<text x='" << kWidth - kRight << "' y='" << kTop
    << "' text-anchor='end' font-family='sans-serif' font-size='11'>"
    << "blue: empirical SE (with 1.96 MC error), orange: model SE</text>\n";
  f << "</svg>\n";
}

void emit_plots(const std::vector<ResultRow>& rows,
                const std::map<std::string, double>& truth, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::set<std::string> scenarios;
  for (const auto& r : rows) scenarios.insert(r.scenario);

  for (const auto& scenario : scenarios) {
    for (const std::string param : {"beta1", "beta3"}) {
      std::vector<std::string> labels;
      std::vector<std::vector<double>> groups;
      for (const auto& label : registered_methods()) {
        std::vector<double> vals;
        for (const auto& r : rows)
          if (r.scenario == scenario && r.method == label && r.parameter == param)
            vals.push_back(r.estimate);
        if (vals.size() >= 2) {
          labels.push_back(label);
          groups.push_back(std::move(vals));
        }
      }
      if (labels.empty()) continue;
      write_box_plot_svg(dir + "/" + scenario + "_" + param + "_box.svg",
                         scenario + ": " + param + " estimates", labels, groups,
                         truth.at(param));
    }

    // EmpSE vs ModSE for the interaction coefficient
    auto metrics = compute_metrics(rows, truth);
    std::vector<std::string> labels;
    std::vector<double> emp, mod, err;
    for (const auto& label : registered_methods()) {
      for (const auto& m : metrics) {
        if (m.scenario != scenario || m.method != label || m.parameter != "beta3")
          continue;
        labels.push_back(label);
        emp.push_back(m.emp_se);
        mod.push_back(m.mod_se);
        // MC error of a sample SD, normal approximation
        err.push_back(m.emp_se / std::sqrt(2.0 * (m.n_reps - 1.0)));
      }
    }
    if (!labels.empty())
      write_se_plot_svg(dir + "/" + scenario + "_beta3_se.svg",
                        scenario + ": empirical vs model SE (beta3)", labels, emp,
                        mod, err);
  }
}

}  // namespace mlmi
