#pragma once

// Text file formats: tab-separated data matrices with "NA" for missing cells,
// two/four-column keyed tables, "key = value" configuration files, and the
// on-disk posterior archive (one CSV per parameter plus index.json).

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lpt/archive.hpp"
#include "lpt/coalescent.hpp"
#include "lpt/core.hpp"
#include "lpt/error.hpp"
#include "lpt/simulate.hpp"

namespace lpt::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Shortest round-trip decimal form.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view token, const std::string& where) {
  while (!token.empty() && (token.back() == '\r' || token.back() == ' ')) token.remove_suffix(1);
  while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
  double value = 0.0;
  const char* begin = token.data();
  if (!token.empty() && token.front() == '+') ++begin;
  const auto res = std::from_chars(begin, token.data() + token.size(), value);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size() || token.empty())
    throw InputError(where + ": cannot parse number '" + std::string(token) + "'");
  return value;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(field);
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::vector<std::vector<std::string>> read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split(line, '\t'));
  }
  return rows;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

/// Data matrix: header "ig_id<TAB>sample...", one row per IG, "NA" for missing.
inline void write_matrix_tsv(const fs::path& path, const MatrixXd& values, const BoolMatrix& missing,
                             const std::vector<std::string>& row_ids, const std::vector<std::string>& col_ids) {
  std::string text = "ig_id";
  for (const auto& s : col_ids) text += "\t" + s;
  text += "\n";
  for (Index i = 0; i < values.rows(); ++i) {
    text += row_ids[i];
    for (Index n = 0; n < values.cols(); ++n) text += "\t" + (missing(i, n) ? std::string("NA") : fmt(values(i, n)));
    text += "\n";
  }
  write_text(path, text);
}

struct MatrixTable {
  MatrixXd values;
  BoolMatrix missing;
  std::vector<std::string> row_ids, col_ids;
};

inline MatrixTable read_matrix_tsv(const fs::path& path) {
  const auto rows = read_table(path);
  require(!rows.empty(), path.string() + ": empty file");
  MatrixTable t;
  t.col_ids.assign(rows[0].begin() + 1, rows[0].end());
  const Index n = static_cast<Index>(t.col_ids.size()), p = static_cast<Index>(rows.size()) - 1;
  require(n >= 1 && p >= 1, path.string() + ": need a header and at least one data row");
  t.values.resize(p, n);
  t.missing = BoolMatrix::Constant(p, n, false);
  for (Index i = 0; i < p; ++i) {
    const auto& r = rows[i + 1];
    require(static_cast<Index>(r.size()) == n + 1,
            path.string() + ": row " + std::to_string(i + 2) + " has " + std::to_string(r.size()) + " fields");
    t.row_ids.push_back(r[0]);
    for (Index c = 0; c < n; ++c) {
      if (r[c + 1] == "NA" || r[c + 1].empty()) {
        t.missing(i, c) = true;
        t.values(i, c) = std::numeric_limits<double>::quiet_NaN();
      } else {
        t.values(i, c) = parse_double(r[c + 1], path.string() + " row " + std::to_string(i + 2));
        require(std::isfinite(t.values(i, c)), path.string() + ": non-finite value");
      }
    }
  }
  return t;
}

/// Keyed table with a header row; returns key -> remaining fields.
inline std::vector<std::pair<std::string, std::vector<std::string>>> read_keyed(const fs::path& path,
                                                                                std::size_t min_fields) {
  const auto rows = read_table(path);
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    require(rows[r].size() >= min_fields, path.string() + ": row " + std::to_string(r + 1) + " is too short");
    out.emplace_back(rows[r][0], std::vector<std::string>(rows[r].begin() + 1, rows[r].end()));
  }
  return out;
}

/// Assembles a Dataset from the data matrix plus batch, annotation and metadata tables.
inline Dataset load_dataset(const fs::path& data_path, const fs::path& batch_path, const fs::path& annotation_path = {},
                            const fs::path& metadata_path = {}) {
  MatrixTable t = read_matrix_tsv(data_path);
  Dataset d;
  d.values = std::move(t.values);
  d.missing = std::move(t.missing);
  d.ig_ids = std::move(t.row_ids);
  d.sample_ids = std::move(t.col_ids);
  std::map<std::string, int> sample_index, ig_index;
  for (std::size_t n = 0; n < d.sample_ids.size(); ++n)
    require(sample_index.emplace(d.sample_ids[n], static_cast<int>(n)).second, "duplicate sample id " + d.sample_ids[n]);
  for (std::size_t i = 0; i < d.ig_ids.size(); ++i)
    require(ig_index.emplace(d.ig_ids[i], static_cast<int>(i)).second, "duplicate IG id " + d.ig_ids[i]);

  d.batch.assign(d.sample_ids.size(), -1);
  std::map<std::string, int> batch_code;
  for (const auto& [sample, fields] : read_keyed(batch_path, 2)) {
    auto it = sample_index.find(sample);
    require(it != sample_index.end(), batch_path.string() + ": unknown sample " + sample);
    auto [code, fresh] = batch_code.emplace(fields[0], static_cast<int>(batch_code.size()));
    if (fresh) d.batch_names.push_back(fields[0]);
    d.batch[it->second] = code->second;
  }
  for (std::size_t n = 0; n < d.batch.size(); ++n)
    require(d.batch[n] >= 0, batch_path.string() + ": no batch for sample " + d.sample_ids[n]);

  if (!annotation_path.empty())
    for (const auto& [ig, fields] : read_keyed(annotation_path, 2)) {
      auto it = ig_index.find(ig);
      require(it != ig_index.end(), annotation_path.string() + ": unknown IG " + ig);
      if (!fields[0].empty()) d.annotations[it->second] = fields[0];
    }

  if (!metadata_path.empty()) {
    const auto rows = read_keyed(metadata_path, 4);
    d.subject.assign(d.sample_ids.size(), "");
    d.time.assign(d.sample_ids.size(), 0.0);
    d.replicate_group.assign(d.sample_ids.size(), -1);
    std::vector<bool> seen(d.sample_ids.size(), false);
    std::map<std::string, int> group_code;
    for (const auto& [sample, fields] : rows) {
      auto it = sample_index.find(sample);
      require(it != sample_index.end(), metadata_path.string() + ": unknown sample " + sample);
      d.subject[it->second] = fields[0];
      d.time[it->second] = parse_double(fields[1], metadata_path.string());
      d.replicate_group[it->second] = group_code.emplace(fields[2], static_cast<int>(group_code.size())).first->second;
      seen[it->second] = true;
    }
    for (std::size_t n = 0; n < seen.size(); ++n)
      require(seen[n], metadata_path.string() + ": no metadata for sample " + d.sample_ids[n]);
  }
  d.validate();
  return d;
}

inline void save_dataset(const fs::path& dir, const Dataset& d) {
  write_matrix_tsv(dir / "data.tsv", d.values, d.missing, d.ig_ids, d.sample_ids);
  std::string batches = "sample_id\tbatch\n";
  for (std::size_t n = 0; n < d.sample_ids.size(); ++n) batches += d.sample_ids[n] + "\t" + d.batch_names[d.batch[n]] + "\n";
  write_text(dir / "batches.tsv", batches);
  std::string ann = "ig_id\tprotein\n";
  for (const auto& [row, label] : d.annotations) ann += d.ig_ids[row] + "\t" + label + "\n";
  write_text(dir / "annotations.tsv", ann);
}

// ---------------------------------------------------------------------------
// Configuration

/// "key = value" lines; '#' starts a comment.
inline std::map<std::string, std::string> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int number = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, path.string() + ":" + std::to_string(number) + ": expected 'key = value'");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground truth

inline std::string matrix_csv(const MatrixXd& m) {
  std::string text;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) text += (j ? "," : "") + fmt(m(i, j));
    text += "\n";
  }
  return text;
}

inline MatrixXd read_matrix_csv(const fs::path& path, bool skip_header = false) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  if (skip_header) std::getline(in, line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> r;
    for (const auto& f : split(line, ',')) r.push_back(parse_double(f, path.string()));
    require(rows.empty() || r.size() == rows.front().size(), path.string() + ": ragged rows");
    rows.push_back(std::move(r));
  }
  MatrixXd m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  return m;
}

inline void save_truth(const fs::path& dir, const GroundTruth& t, const Dataset& d) {
  write_text(dir / "sigma.csv", matrix_csv(t.Sigma));
  write_text(dir / "S.csv", matrix_csv(t.S));
  write_text(dir / "W.csv", matrix_csv(t.W));
  write_text(dir / "mu.csv", matrix_csv(t.mu));
  write_text(dir / "A.csv", matrix_csv(t.A));
  write_matrix_tsv(dir / "complete.tsv", t.complete, BoolMatrix::Constant(t.complete.rows(), t.complete.cols(), false),
                   d.ig_ids, d.sample_ids);
  std::string labels = "ig_id\tprotein\tloading\tnoise_var\n";
  for (Index i = 0; i < t.b.size(); ++i)
    labels += d.ig_ids[i] + "\t" + t.protein_labels[t.u[i]] + "\t" + fmt(t.b[i]) + "\t" + fmt(t.psi[i]) + "\n";
  write_text(dir / "labels.tsv", labels);
  std::string mask = "ig_id";
  for (const auto& s : d.sample_ids) mask += "\t" + s;
  mask += "\n";
  for (Index i = 0; i < t.missing.rows(); ++i) {
    mask += d.ig_ids[i];
    for (Index n = 0; n < t.missing.cols(); ++n) mask += t.missing(i, n) ? "\t1" : "\t0";
    mask += "\n";
  }
  write_text(dir / "mask.tsv", mask);
  std::string proteins = "protein\n";
  for (const auto& l : t.protein_labels) proteins += l + "\n";
  write_text(dir / "proteins.tsv", proteins);
  if (!t.effect.empty()) {
    std::string eff = "sample_id\teffect\n";
    for (std::size_t n = 0; n < t.effect.size(); ++n) eff += d.sample_ids[n] + "\t" + std::to_string(t.effect[n]) + "\n";
    write_text(dir / "effects.tsv", eff);
  }
}

/// Truth as needed for evaluation.
struct TruthTables {
  MatrixXd sigma;
  std::vector<std::string> ig_ids;
  std::vector<std::string> ig_protein;
  std::vector<std::string> protein_labels;
  MatrixXd complete;
  std::vector<int> effect;  // empty unless the truth came from the confounded generator
  std::vector<std::string> effect_samples;
};

inline TruthTables load_truth(const fs::path& dir) {
  TruthTables t;
  t.sigma = read_matrix_csv(dir / "sigma.csv");
  for (const auto& [ig, fields] : read_keyed(dir / "labels.tsv", 2)) {
    t.ig_ids.push_back(ig);
    t.ig_protein.push_back(fields[0]);
  }
  for (const auto& row : read_table(dir / "proteins.tsv")) t.protein_labels.push_back(row.at(0));
  if (!t.protein_labels.empty()) t.protein_labels.erase(t.protein_labels.begin());
  t.complete = read_matrix_tsv(dir / "complete.tsv").values;
  if (fs::exists(dir / "effects.tsv"))
    for (const auto& [sample, fields] : read_keyed(dir / "effects.tsv", 2)) {
      t.effect_samples.push_back(sample);
      t.effect.push_back(static_cast<int>(parse_double(fields[0], "effects.tsv")));
    }
  return t;
}

// ---------------------------------------------------------------------------
// Posterior archive

/// One CSV row per draw for each parameter; matrices are flattened column-major.
inline void save_archive(const fs::path& dir, const PosteriorArchive& archive, const std::vector<std::string>& ig_ids) {
  fs::create_directories(dir);
  struct Field {
    std::string name;
    std::function<VectorXd(const Draw&)> get;
    std::vector<Index> shape;
  };
  const Draw* first = archive.empty() ? nullptr : &archive.draws.front();
  auto shape_of = [&](auto f) { return first ? f(*first) : std::vector<Index>{0}; };
  auto flat = [](const MatrixXd& m) { return VectorXd(Eigen::Map<const VectorXd>(m.data(), m.size())); };
  std::vector<Field> fields = {
      {"psi", [](const Draw& d) { return d.state.psi; }, shape_of([](const Draw& d) { return std::vector<Index>{d.state.psi.size()}; })},
      {"mu", [&](const Draw& d) { return flat(d.state.mu); }, shape_of([](const Draw& d) { return std::vector<Index>{d.state.mu.rows(), d.state.mu.cols()}; })},
      {"A", [&](const Draw& d) { return flat(d.state.A); }, shape_of([](const Draw& d) { return std::vector<Index>{d.state.A.rows(), d.state.A.cols()}; })},
      {"rho", [](const Draw& d) { return d.state.rho; }, shape_of([](const Draw& d) { return std::vector<Index>{d.state.rho.size()}; })},
      {"Z", [&](const Draw& d) { return flat(d.state.Z); }, shape_of([](const Draw& d) { return std::vector<Index>{d.state.Z.rows(), d.state.Z.cols()}; })},
      {"b", [](const Draw& d) { return d.state.b; }, shape_of([](const Draw& d) { return std::vector<Index>{d.state.b.size()}; })},
      {"W", [&](const Draw& d) { return flat(d.state.W); }, shape_of([](const Draw& d) { return std::vector<Index>{d.state.W.rows(), d.state.W.cols()}; })},
      {"imputed", [](const Draw& d) { return d.state.imputed; }, shape_of([](const Draw& d) { return std::vector<Index>{d.state.imputed.size()}; })},
  };
  json index;
  index["seed"] = archive.seed;
  index["draws"] = archive.size();
  index["protein_labels"] = archive.protein_labels;
  index["ig_ids"] = ig_ids;
  index["layout"] = "one row per draw; matrices flattened column-major";
  for (const auto& f : fields) {
    std::string text;
    for (const auto& d : archive.draws) {
      const VectorXd v = f.get(d);
      for (Index j = 0; j < v.size(); ++j) text += (j ? "," : "") + fmt(v[j]);
      text += "\n";
    }
    write_text(dir / (f.name + ".csv"), text);
    index["files"][f.name] = {{"file", f.name + ".csv"}, {"shape", f.shape}};
  }
  std::string u_text, scalars = "lambda2,alpha,tree_log_marginal\n";
  for (const auto& d : archive.draws) {
    for (std::size_t i = 0; i < d.state.u.size(); ++i) u_text += (i ? "," : "") + std::to_string(d.state.u[i]);
    u_text += "\n";
    scalars += fmt(d.state.lambda2) + "," + fmt(d.state.alpha) + "," + fmt(d.tree_log_marginal) + "\n";
  }
  write_text(dir / "u.csv", u_text);
  write_text(dir / "scalars.csv", scalars);
  index["files"]["u"] = {{"file", "u.csv"}, {"shape", {first ? static_cast<Index>(first->state.u.size()) : 0}}};
  index["files"]["scalars"] = {{"file", "scalars.csv"}, {"columns", {"lambda2", "alpha", "tree_log_marginal"}}};
  write_text(dir / "index.json", index.dump(2) + "\n");
}

/// Reads the parameters needed for evaluation back into draws (tree fields stay empty).
inline PosteriorArchive load_archive(const fs::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw InputError("cannot open " + (dir / "index.json").string());
  const json index = json::parse(in);
  PosteriorArchive archive;
  archive.seed = index.at("seed").get<std::uint64_t>();
  archive.protein_labels = index.at("protein_labels").get<std::vector<std::string>>();
  const std::size_t draws = index.at("draws").get<std::size_t>();
  archive.draws.resize(draws);
  if (draws == 0) return archive;
  auto load = [&](const std::string& name) {
    const MatrixXd m = read_matrix_csv(dir / (name + ".csv"));
    require(static_cast<std::size_t>(m.rows()) == draws, name + ".csv: draw count mismatch");
    return m;
  };
  auto shape = [&](const std::string& name) { return index.at("files").at(name).at("shape").get<std::vector<Index>>(); };
  auto unflat = [](const VectorXd& v, const std::vector<Index>& s) {
    return MatrixXd(Eigen::Map<const MatrixXd>(v.data(), s.at(0), s.at(1)));
  };
  const MatrixXd psi = load("psi"), mu = load("mu"), A = load("A"), rho = load("rho"), Z = load("Z"), b = load("b"),
                 W = load("W");
  const bool has_imputed = shape("imputed").at(0) > 0;
  const MatrixXd imputed = has_imputed ? load("imputed") : MatrixXd(draws, 0);
  const MatrixXd u = read_matrix_csv(dir / "u.csv");
  const MatrixXd scalars = read_matrix_csv(dir / "scalars.csv", true);
  for (std::size_t d = 0; d < draws; ++d) {
    ModelState& s = archive.draws[d].state;
    s.psi = psi.row(d).transpose();
    s.mu = unflat(mu.row(d).transpose(), shape("mu"));
    s.A = unflat(A.row(d).transpose(), shape("A"));
    s.rho = rho.row(d).transpose();
    s.Z = unflat(Z.row(d).transpose(), shape("Z"));
    s.b = b.row(d).transpose();
    s.W = unflat(W.row(d).transpose(), shape("W"));
    s.imputed = imputed.row(d).transpose();
    s.u.resize(u.cols());
    for (Index i = 0; i < u.cols(); ++i) s.u[i] = static_cast<int>(u(d, i));
    s.lambda2 = scalars(d, 0);
    s.alpha = scalars(d, 1);
    archive.draws[d].tree_log_marginal = scalars(d, 2);
  }
  return archive;
}

// ---------------------------------------------------------------------------
// Manifest

/// Writes JSON to a temporary sibling, then renames it into place.
inline void write_json_atomic(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  write_text(tmp, j.dump(2) + "\n");
  fs::rename(tmp, path);
}

}  // namespace lpt::io
