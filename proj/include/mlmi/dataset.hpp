#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mlmi {

// Missing cells are std::nullopt, never a numeric code.  Numeric kernels
// extract dense matrices through dense_column()/DesignMatrix and throw if a
// missing cell leaks through.
using Cell = std::optional<double>;

enum class ColumnRole { outcome, exposure, confounder, auxiliary, derived, id, time };

std::string to_string(ColumnRole role);
ColumnRole role_from_string(const std::string& s);

struct Column {
  std::string name;
  ColumnRole role = ColumnRole::confounder;
  int level = 2;        // 1 = time-varying, 2 = child, 3 = school
  int wave_offset = 0;  // level 1 only: measurement wave = row wave + offset
  std::string formula;  // derived columns: "a*b" or "a^2"
  std::vector<Cell> values;
};

// (school, child, wave) addressing for long rows; wave is absent (0) in wide rows.
struct HierIndex {
  int school_id = 0;
  int child_id = 0;
  int wave = 0;
};

struct DesignMatrix {
  Eigen::MatrixXd entries;
  std::vector<std::string> column_labels;
};

// Balanced panel: one row per (school, child, wave) for every wave in `waves`,
// rows ordered by school, child, wave.
struct LongDataset {
  std::vector<int> school;
  std::vector<int> child;
  std::vector<int> wave;
  std::vector<int> waves;  // analysis waves, ascending
  std::vector<Column> columns;

  std::size_t n_rows() const { return school.size(); }
  std::size_t n_children() const { return n_rows() / waves.size(); }

  const Column& column(const std::string& name) const;
  Column& column(const std::string& name);
  bool has_column(const std::string& name) const;

  // Throws if the panel is unbalanced or a level-2/3 column varies within its
  // group; the message names the offending child or column.
  void validate() const;

  Eigen::VectorXd dense_column(const std::string& name) const;
};

struct WideVarInfo {
  std::string base;
  ColumnRole role = ColumnRole::confounder;
  int wave_offset = 0;
};

// One row per (school, child); time-varying columns split per wave and named
// <base><measurement wave>, e.g. dep4.
struct WideDataset {
  std::vector<int> school;
  std::vector<int> child;
  std::vector<int> waves;
  std::vector<Column> columns;
  std::vector<WideVarInfo> time_varying;

  std::size_t n_rows() const { return school.size(); }
  const Column& column(const std::string& name) const;
  Column& column(const std::string& name);
  bool has_column(const std::string& name) const;
  Eigen::VectorXd dense_column(const std::string& name) const;
};

WideDataset reshape_wide(const LongDataset& data);
LongDataset reshape_long(const WideDataset& data);

// I-1 indicator columns; the smallest id is the all-zero reference.
DesignMatrix build_dummy_indicators(const std::vector<int>& cluster_ids);

// CSV with header row, missing cells as the empty string; sidecar metadata
// (name=value lines) records column roles, levels and wave offsets.
void write_csv(const LongDataset& data, const std::string& csv_path,
               const std::string& meta_path);
void write_csv(const WideDataset& data, const std::string& csv_path,
               const std::string& meta_path);
LongDataset read_long_csv(const std::string& csv_path, const std::string& meta_path);

}  // namespace mlmi
