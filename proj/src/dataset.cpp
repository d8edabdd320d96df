#include "mlmi/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mlmi {

std::string to_string(ColumnRole role) {
  switch (role) {
    case ColumnRole::outcome: return "outcome";
    case ColumnRole::exposure: return "exposure";
    case ColumnRole::confounder: return "confounder";
    case ColumnRole::auxiliary: return "auxiliary";
    case ColumnRole::derived: return "derived";
    case ColumnRole::id: return "id";
    case ColumnRole::time: return "time";
  }
  return "confounder";
}

ColumnRole role_from_string(const std::string& s) {
  if (s == "outcome") return ColumnRole::outcome;
  if (s == "exposure") return ColumnRole::exposure;
  if (s == "confounder") return ColumnRole::confounder;
  if (s == "auxiliary") return ColumnRole::auxiliary;
  if (s == "derived") return ColumnRole::derived;
  if (s == "id") return ColumnRole::id;
  if (s == "time") return ColumnRole::time;
  throw std::invalid_argument("unknown column role: " + s);
}

namespace {

template <typename D>
const Column& find_column(const D& d, const std::string& name) {
  for (const auto& c : d.columns)
    if (c.name == name) return c;
  throw std::invalid_argument("no such column: " + name);
}

template <typename D>
Eigen::VectorXd extract_dense(const D& d, const std::string& name) {
  const Column& c = find_column(d, name);
  Eigen::VectorXd v(static_cast<Eigen::Index>(c.values.size()));
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    if (!c.values[i])
      throw std::runtime_error("missing cell in column " + name + " at row " +
                               std::to_string(i));
    v(static_cast<Eigen::Index>(i)) = *c.values[i];
  }
  return v;
}

}  // namespace

const Column& LongDataset::column(const std::string& name) const {
  return find_column(*this, name);
}
Column& LongDataset::column(const std::string& name) {
  return const_cast<Column&>(find_column(*this, name));
}
bool LongDataset::has_column(const std::string& name) const {
  for (const auto& c : columns)
    if (c.name == name) return true;
  return false;
}
Eigen::VectorXd LongDataset::dense_column(const std::string& name) const {
  return extract_dense(*this, name);
}

const Column& WideDataset::column(const std::string& name) const {
  return find_column(*this, name);
}
Column& WideDataset::column(const std::string& name) {
  return const_cast<Column&>(find_column(*this, name));
}
bool WideDataset::has_column(const std::string& name) const {
  for (const auto& c : columns)
    if (c.name == name) return true;
  return false;
}
Eigen::VectorXd WideDataset::dense_column(const std::string& name) const {
  return extract_dense(*this, name);
}

void LongDataset::validate() const {
  const std::size_t n = n_rows();
  if (child.size() != n || wave.size() != n)
    throw std::runtime_error("index vectors have inconsistent lengths");
  for (const auto& c : columns) {
    if (c.values.size() != n)
      throw std::runtime_error("column " + c.name + " has wrong length");
  }
  if (waves.empty()) throw std::runtime_error("no analysis waves declared");

  // Balance: every child carries exactly the declared waves, in order.
  const std::size_t w = waves.size();
  if (n % w != 0)
    throw std::runtime_error("unbalanced panel: row count not divisible by wave count");
  for (std::size_t r = 0; r < n; ++r) {
    if (wave[r] != waves[r % w] ||
        (r % w != 0 && (school[r] != school[r - 1] || child[r] != child[r - 1]))) {
      throw std::runtime_error("unbalanced panel at school " +
                               std::to_string(school[r]) + " child " +
                               std::to_string(child[r]));
    }
  }

  // Level constancy.
  for (const auto& c : columns) {
    if (c.level < 2) continue;
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t ref = (c.level == 2) ? (r / w) * w : r;
      if (c.level == 3) {
        // first row of this school
        while (ref > 0 && school[ref - 1] == school[r]) --ref;
      }
      if (c.values[r] != c.values[ref])
        throw std::runtime_error("level-" + std::to_string(c.level) +
                                 " column " + c.name + " varies within group");
    }
  }
}

WideDataset reshape_wide(const LongDataset& data) {
  data.validate();
  const std::size_t w = data.waves.size();
  const std::size_t n_children = data.n_rows() / w;

  WideDataset out;
  out.waves = data.waves;
  out.school.resize(n_children);
  out.child.resize(n_children);
  for (std::size_t c = 0; c < n_children; ++c) {
    out.school[c] = data.school[c * w];
    out.child[c] = data.child[c * w];
  }

  for (const auto& col : data.columns) {
    if (col.level == 1) {
      out.time_varying.push_back({col.name, col.role, col.wave_offset});
      for (std::size_t k = 0; k < w; ++k) {
        Column wc;
        wc.name = col.name + std::to_string(data.waves[k] + col.wave_offset);
        wc.role = col.role;
        wc.level = 1;
        wc.wave_offset = col.wave_offset;
        wc.formula = col.formula;
        wc.values.resize(n_children);
        for (std::size_t c = 0; c < n_children; ++c)
          wc.values[c] = col.values[c * w + k];
        out.columns.push_back(std::move(wc));
      }
    } else {
      Column wc = col;
      wc.values.resize(n_children);
      for (std::size_t c = 0; c < n_children; ++c)
        wc.values[c] = col.values[c * w];
      out.columns.push_back(std::move(wc));
    }
  }
  return out;
}

LongDataset reshape_long(const WideDataset& data) {
  const std::size_t w = data.waves.size();
  const std::size_t n_children = data.n_rows();

  LongDataset out;
  out.waves = data.waves;
  out.school.resize(n_children * w);
  out.child.resize(n_children * w);
  out.wave.resize(n_children * w);
  for (std::size_t c = 0; c < n_children; ++c) {
    for (std::size_t k = 0; k < w; ++k) {
      out.school[c * w + k] = data.school[c];
      out.child[c * w + k] = data.child[c];
      out.wave[c * w + k] = data.waves[k];
    }
  }

  std::set<std::string> consumed;
  for (const auto& tv : data.time_varying) {
    Column lc;
    lc.name = tv.base;
    lc.role = tv.role;
    lc.level = 1;
    lc.wave_offset = tv.wave_offset;
    lc.values.resize(n_children * w);
    for (std::size_t k = 0; k < w; ++k) {
      std::string suffixed = tv.base + std::to_string(data.waves[k] + tv.wave_offset);
      if (!data.has_column(suffixed))
        throw std::runtime_error("reshape_long: expected wide column " + suffixed);
      const Column& wc = data.column(suffixed);
      lc.formula = wc.formula;
      consumed.insert(suffixed);
      for (std::size_t c = 0; c < n_children; ++c)
        lc.values[c * w + k] = wc.values[c];
    }
    out.columns.push_back(std::move(lc));
  }
  for (const auto& wc : data.columns) {
    if (consumed.count(wc.name)) continue;
    if (wc.level == 1)
      throw std::runtime_error("reshape_long: unknown time-varying suffix column " +
                               wc.name);
    Column lc = wc;
    lc.values.resize(n_children * w);
    for (std::size_t c = 0; c < n_children; ++c)
      for (std::size_t k = 0; k < w; ++k) lc.values[c * w + k] = wc.values[c];
    out.columns.push_back(std::move(lc));
  }

  // Restore the wide column order so reshape_wide . reshape_long is the
  // identity: each time-varying base sits where its first suffix appeared.
  std::vector<Column> ordered;
  ordered.reserve(out.columns.size());
  std::size_t tv_i = 0, other_i = data.time_varying.size();
  for (const auto& wc : data.columns) {
    if (consumed.count(wc.name)) {
      if (tv_i < data.time_varying.size() &&
          wc.name == data.time_varying[tv_i].base +
                         std::to_string(data.waves[0] +
                                        data.time_varying[tv_i].wave_offset)) {
        ordered.push_back(std::move(out.columns[tv_i++]));
      }
    } else {
      ordered.push_back(std::move(out.columns[other_i++]));
    }
  }
  out.columns = std::move(ordered);
  out.validate();
  return out;
}

DesignMatrix build_dummy_indicators(const std::vector<int>& cluster_ids) {
  std::set<int> distinct(cluster_ids.begin(), cluster_ids.end());
  DesignMatrix out;
  if (distinct.empty()) {
    out.entries.resize(0, 0);
    return out;
  }
  std::map<int, int> col_of;
  int col = -1;  // smallest id is the reference
  for (int id : distinct) col_of[id] = col++;

  out.entries = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cluster_ids.size()),
                                      static_cast<Eigen::Index>(distinct.size()) - 1);
  for (std::size_t r = 0; r < cluster_ids.size(); ++r) {
    int c = col_of.at(cluster_ids[r]);
    if (c >= 0) out.entries(static_cast<Eigen::Index>(r), c) = 1.0;
  }
  bool first = true;
  for (int id : distinct) {
    if (first) {
      first = false;
      continue;
    }
    out.column_labels.push_back("cluster" + std::to_string(id));
  }
  return out;
}

namespace {

std::string cell_to_string(const Cell& c) {
  if (!c) return "";
  std::ostringstream os;
  os.precision(17);
  os << *c;
  return os.str();
}

template <typename D>
void write_meta(const D& d, const std::string& meta_path) {
  std::ofstream f(meta_path);
  if (!f) throw std::runtime_error("cannot write " + meta_path);
  f << "waves=";
  for (std::size_t i = 0; i < d.waves.size(); ++i)
    f << (i ? "," : "") << d.waves[i];
  f << "\n";
  for (const auto& c : d.columns) {
    f << "column." << c.name << ".role=" << to_string(c.role) << "\n";
    f << "column." << c.name << ".level=" << c.level << "\n";
    if (c.level == 1)
      f << "column." << c.name << ".offset=" << c.wave_offset << "\n";
    if (!c.formula.empty())
      f << "column." << c.name << ".formula=" << c.formula << "\n";
  }
}

}  // namespace

void write_csv(const LongDataset& data, const std::string& csv_path,
               const std::string& meta_path) {
  std::ofstream f(csv_path);
  if (!f) throw std::runtime_error("cannot write " + csv_path);
  f << "school,child,wave";
  for (const auto& c : data.columns) f << "," << c.name;
  f << "\n";
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    f << data.school[r] << "," << data.child[r] << "," << data.wave[r];
    for (const auto& c : data.columns) f << "," << cell_to_string(c.values[r]);
    f << "\n";
  }
  write_meta(data, meta_path);
}

void write_csv(const WideDataset& data, const std::string& csv_path,
               const std::string& meta_path) {
  std::ofstream f(csv_path);
  if (!f) throw std::runtime_error("cannot write " + csv_path);
  f << "school,child";
  for (const auto& c : data.columns) f << "," << c.name;
  f << "\n";
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    f << data.school[r] << "," << data.child[r];
    for (const auto& c : data.columns) f << "," << cell_to_string(c.values[r]);
    f << "\n";
  }
  write_meta(data, meta_path);
}

LongDataset read_long_csv(const std::string& csv_path, const std::string& meta_path) {
  std::map<std::string, std::string> meta;
  {
    std::ifstream f(meta_path);
    if (!f) throw std::runtime_error("cannot read " + meta_path);
    std::string line;
    while (std::getline(f, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  LongDataset out;
  {
    std::stringstream ws(meta.at("waves"));
    std::string tok;
    while (std::getline(ws, tok, ',')) out.waves.push_back(std::stoi(tok));
  }

  std::ifstream f(csv_path);
  if (!f) throw std::runtime_error("cannot read " + csv_path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty csv " + csv_path);
  std::vector<std::string> headers;
  {
    std::stringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) headers.push_back(tok);
  }
  if (headers.size() < 3 || headers[0] != "school")
    throw std::runtime_error("unexpected csv header in " + csv_path);
  for (std::size_t i = 3; i < headers.size(); ++i) {
    Column c;
    c.name = headers[i];
    c.role = role_from_string(meta.at("column." + c.name + ".role"));
    c.level = std::stoi(meta.at("column." + c.name + ".level"));
    if (auto it = meta.find("column." + c.name + ".offset"); it != meta.end())
      c.wave_offset = std::stoi(it->second);
    if (auto it = meta.find("column." + c.name + ".formula"); it != meta.end())
      c.formula = it->second;
    out.columns.push_back(std::move(c));
  }

  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string tok;
    std::vector<std::string> cells;
    while (std::getline(ls, tok, ',')) cells.push_back(tok);
    cells.resize(headers.size());
    out.school.push_back(std::stoi(cells[0]));
    out.child.push_back(std::stoi(cells[1]));
    out.wave.push_back(std::stoi(cells[2]));
    for (std::size_t i = 3; i < headers.size(); ++i) {
      out.columns[i - 3].values.push_back(
          cells[i].empty() ? Cell{} : Cell{std::stod(cells[i])});
    }
  }
  out.validate();
  return out;
}

}  // namespace mlmi
