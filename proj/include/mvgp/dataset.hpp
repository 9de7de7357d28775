#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mvgp/common.hpp"
#include "mvgp/rng.hpp"

namespace mvgp {

/// Aligned per-view feature matrices with shared +/-1 labels.
/// Immutable after construction; row i of every view describes the same example.
struct MultiViewDataset {
  std::vector<Matrix> views;
  Vector labels;
  std::vector<std::string> view_names;

  Index n() const { return labels.size(); }
  Index view_count() const { return static_cast<Index>(views.size()); }

  void validate() const {
    if (views.empty()) throw DataError("dataset: at least one view is required");
    const Index rows = labels.size();
    if (rows < 1) throw DataError("dataset: N >= 1 required");
    if (view_names.size() != views.size()) throw DataError("dataset: one name per view required");
    for (std::size_t v = 0; v < views.size(); ++v) {
      if (views[v].rows() != rows) {
        throw DataError("dataset: view '" + view_names[v] + "' has " + std::to_string(views[v].rows()) +
                        " rows, expected " + std::to_string(rows));
      }
      if (!views[v].allFinite()) {
        throw DataError("dataset: view '" + view_names[v] + "' contains NaN or infinite features");
      }
    }
    for (Index i = 0; i < rows; ++i) {
      if (labels[i] != 1.0 && labels[i] != -1.0) {
        throw DataError("dataset: label at row " + std::to_string(i) + " is not +1 or -1");
      }
    }
  }
};

inline MultiViewDataset make_dataset(std::vector<Matrix> views, Vector labels,
                                     std::vector<std::string> view_names = {}) {
  MultiViewDataset ds;
  ds.views = std::move(views);
  ds.labels = std::move(labels);
  if (view_names.empty()) {
    for (std::size_t v = 0; v < ds.views.size(); ++v) view_names.push_back("view" + std::to_string(v + 1));
  }
  ds.view_names = std::move(view_names);
  ds.validate();
  return ds;
}

/// Parameters of a deterministic train/test split.
struct SplitSpec {
  double train_fraction = 0.6;
  std::uint64_t seed = 0;
  bool stratified = false;
};

/// Label column selector: a header name, or a 0-based column index.
struct LabelSpec {
  std::string name = "label";
  std::optional<Index> index;

  static LabelSpec by_name(std::string n) { return {std::move(n), std::nullopt}; }
  static LabelSpec by_index(Index i) { return {"", i}; }

  /// Parses a CLI value: integers select by index, anything else by name.
  static LabelSpec parse(const std::string& raw) {
    if (raw.empty()) return {};
    if (raw.find_first_not_of("0123456789") == std::string::npos) {
      return by_index(static_cast<Index>(std::stoll(raw)));
    }
    return by_name(raw);
  }
};

namespace detail {

inline bool parse_double(std::string_view cell, double& out) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return false;
  const char* first = cell.data();
  const char* last = first + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::string trimmed(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Accepted raw label encodings: {+1,-1}, {1,0}, {1,2}; 0 and 2 map to -1.
inline double map_label(double raw, const std::string& file, std::size_t line_no) {
  if (raw == 1.0) return 1.0;
  if (raw == -1.0 || raw == 0.0 || raw == 2.0) return -1.0;
  std::ostringstream oss;
  oss << file << ":" << line_no << ": unknown label encoding '" << raw
      << "' (accepted: +1/-1, 1/0, 1/2)";
  throw DataError(oss.str());
}

struct CsvTable {
  std::vector<std::string> header;  // empty if the file has no header row
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each data row
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trimmed(line).empty()) continue;
    auto cells = split_cells(line);
    if (first_content) {
      first_content = false;
      bool all_numeric = true;
      double tmp;
      for (const auto& c : cells) {
        if (!parse_double(c, tmp)) {
          all_numeric = false;
          break;
        }
      }
      if (!all_numeric) {
        for (auto& c : cells) table.header.push_back(trimmed(c));
        continue;
      }
    }
    if (!table.rows.empty() && cells.size() != table.rows.front().size()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(table.rows.front().size()) + " columns, found " +
                      std::to_string(cells.size()));
    }
    table.rows.push_back(std::move(cells));
    table.line_numbers.push_back(line_no);
  }
  if (table.rows.empty()) throw DataError(path + ": no data rows");
  if (!table.header.empty() && table.header.size() != table.rows.front().size()) {
    throw DataError(path + ": header has " + std::to_string(table.header.size()) +
                    " columns but data rows have " + std::to_string(table.rows.front().size()));
  }
  return table;
}

}  // namespace detail

/// Loads one CSV file per view. Only the first file carries the label column;
/// every file must have the same number of data rows, aligned by position.
inline MultiViewDataset load_csv(const std::vector<std::string>& paths, const LabelSpec& label = {}) {
  if (paths.empty()) throw UsageError("load_csv: at least one view file is required");

  std::vector<Matrix> views;
  Vector labels;
  std::vector<std::string> names;
  std::size_t expected_rows = 0;

  for (std::size_t v = 0; v < paths.size(); ++v) {
    const auto& path = paths[v];
    detail::CsvTable table = detail::read_csv(path);
    const std::size_t n_rows = table.rows.size();
    const std::size_t n_cols = table.rows.front().size();

    if (v == 0) {
      expected_rows = n_rows;
    } else if (n_rows != expected_rows) {
      throw DataError("row-count mismatch: " + paths[0] + " has " + std::to_string(expected_rows) +
                      " data rows but " + path + " has " + std::to_string(n_rows));
    }

    Index label_col = -1;
    if (v == 0) {
      if (label.index.has_value()) {
        label_col = *label.index;
        if (label_col < 0 || label_col >= static_cast<Index>(n_cols)) {
          throw DataError(path + ": label column index " + std::to_string(label_col) +
                          " out of range (file has " + std::to_string(n_cols) + " columns)");
        }
      } else {
        if (table.header.empty()) {
          throw DataError(path + ": label column '" + label.name +
                          "' requires a header row; pass a column index for headerless files");
        }
        auto it = std::find(table.header.begin(), table.header.end(), label.name);
        if (it == table.header.end()) {
          throw DataError(path + ": label column '" + label.name + "' not found in header");
        }
        label_col = static_cast<Index>(it - table.header.begin());
      }
      labels.resize(static_cast<Index>(n_rows));
    }

    const Index n_features = static_cast<Index>(n_cols) - (v == 0 ? 1 : 0);
    if (n_features < 1) throw DataError(path + ": no feature columns");
    Matrix view(static_cast<Index>(n_rows), n_features);

    for (std::size_t r = 0; r < n_rows; ++r) {
      const auto& cells = table.rows[r];
      const std::size_t line_no = table.line_numbers[r];
      Index fcol = 0;
      for (std::size_t c = 0; c < n_cols; ++c) {
        double value;
        if (!detail::parse_double(cells[c], value)) {
          throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + cells[c] +
                          "' in column " + std::to_string(c));
        }
        if (v == 0 && static_cast<Index>(c) == label_col) {
          labels[static_cast<Index>(r)] = detail::map_label(value, path, line_no);
        } else {
          if (!std::isfinite(value)) {
            throw DataError(path + ":" + std::to_string(line_no) + ": non-finite feature in column " +
                            std::to_string(c));
          }
          view(static_cast<Index>(r), fcol++) = value;
        }
      }
    }
    views.push_back(std::move(view));
    names.push_back("view" + std::to_string(v + 1));
  }

  return make_dataset(std::move(views), std::move(labels), std::move(names));
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Writes one CSV per view; labels go into the first file as a trailing
/// `label` column. Values use shortest round-trip formatting, so reloading
/// reproduces the matrices bit for bit.
inline void save_csv(const MultiViewDataset& ds, const std::vector<std::string>& paths) {
  if (paths.size() != ds.views.size()) {
    throw UsageError("save_csv: need exactly one path per view");
  }
  for (std::size_t v = 0; v < paths.size(); ++v) {
    std::ofstream out(paths[v]);
    if (!out) throw DataError("cannot write file: " + paths[v]);
    const Matrix& view = ds.views[v];
    for (Index c = 0; c < view.cols(); ++c) out << (c ? "," : "") << "f" << c;
    if (v == 0) out << ",label";
    out << "\n";
    for (Index r = 0; r < view.rows(); ++r) {
      for (Index c = 0; c < view.cols(); ++c) {
        if (c) out << ",";
        out << detail::format_double(view(r, c));
      }
      if (v == 0) out << "," << (ds.labels[r] > 0 ? "1" : "-1");
      out << "\n";
    }
  }
}

/// Subset of the dataset given by row indices (kept in the given order).
inline MultiViewDataset take_rows(const MultiViewDataset& ds, const std::vector<Index>& rows) {
  if (rows.empty()) throw DataError("take_rows: empty index set");
  MultiViewDataset out;
  out.view_names = ds.view_names;
  out.labels.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= ds.n()) throw DataError("take_rows: index out of range");
    out.labels[static_cast<Index>(i)] = ds.labels[rows[i]];
  }
  for (const Matrix& view : ds.views) {
    Matrix sub(static_cast<Index>(rows.size()), view.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Index>(i)) = view.row(rows[i]);
    out.views.push_back(std::move(sub));
  }
  return out;
}

/// Single-view dataset from view v.
inline MultiViewDataset select_view(const MultiViewDataset& ds, Index v) {
  if (v < 0 || v >= ds.view_count()) {
    throw DataError("select_view: view " + std::to_string(v) + " out of range (dataset has " +
                    std::to_string(ds.view_count()) + ")");
  }
  return make_dataset({ds.views[static_cast<std::size_t>(v)]}, ds.labels,
                      {ds.view_names[static_cast<std::size_t>(v)]});
}

/// Single-view dataset from the column-concatenation of all views.
inline MultiViewDataset concat_views(const MultiViewDataset& ds) {
  if (ds.view_count() < 2) {
    throw DataError("concatenation requires >= 2 views (dataset has " +
                    std::to_string(ds.view_count()) + ")");
  }
  Index total_cols = 0;
  for (const Matrix& v : ds.views) total_cols += v.cols();
  Matrix cat(ds.n(), total_cols);
  Index at = 0;
  for (const Matrix& v : ds.views) {
    cat.middleCols(at, v.cols()) = v;
    at += v.cols();
  }
  return make_dataset({std::move(cat)}, ds.labels, {"concat"});
}

/// Synthesizes a second view by projecting the centered single view onto its
/// top principal directions (descending eigenvalue order). Each direction's
/// sign is fixed so its largest-magnitude component is positive.
inline MultiViewDataset pca_second_view(const MultiViewDataset& ds, Index n_components) {
  if (ds.view_count() != 1) throw UsageError("pca_second_view: dataset must have exactly one view");
  const Matrix& x = ds.views[0];
  const Index n = x.rows();
  const Index m = x.cols();
  if (n_components < 1 || n_components > std::min(n, m)) {
    throw UsageError("pca_second_view: n_components must be in [1, min(N, M)] = [1, " +
                     std::to_string(std::min(n, m)) + "]");
  }

  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean;
  const Matrix cov = centered.transpose() * centered / static_cast<double>(std::max<Index>(n - 1, 1));

  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(cov));
  if (eig.info() != Eigen::Success) throw NumericError("pca_second_view: eigendecomposition failed");

  // eigenvalues come back ascending; take the top n_components in descending order
  Matrix directions(m, n_components);
  for (Index c = 0; c < n_components; ++c) {
    Vector dir = eig.eigenvectors().col(m - 1 - c);
    Index max_idx = 0;
    dir.cwiseAbs().maxCoeff(&max_idx);
    if (dir[max_idx] < 0.0) dir = -dir;
    directions.col(c) = dir;
  }

  MultiViewDataset out;
  out.views = {x, centered * directions};
  out.labels = ds.labels;
  out.view_names = {ds.view_names[0], ds.view_names[0] + "_pca"};
  out.validate();
  return out;
}

/// Deterministic index partition for SplitSpec; parts are sorted ascending.
inline std::pair<std::vector<Index>, std::vector<Index>> split_indices(const Vector& labels,
                                                                       const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw UsageError("split: train_fraction must lie in (0, 1)");
  }
  const Index n = labels.size();
  Rng rng(spec.seed);
  std::vector<Index> train, test;

  auto drain = [&](std::vector<Index>& pool, const char* what) {
    rng.shuffle(pool);
    const auto take = static_cast<std::size_t>(
        std::llround(spec.train_fraction * static_cast<double>(pool.size())));
    if (take == 0 || take >= pool.size()) {
      throw DataError(std::string("split would leave an empty ") + what);
    }
    train.insert(train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    test.insert(test.end(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end());
  };

  if (spec.stratified) {
    std::vector<Index> pos, neg;
    for (Index i = 0; i < n; ++i) (labels[i] > 0 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) {
      throw DataError("stratified split requires both classes to be present");
    }
    drain(pos, "class part under stratification");
    drain(neg, "class part under stratification");
  } else {
    std::vector<Index> all(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    drain(all, "part");
  }

  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

inline std::pair<MultiViewDataset, MultiViewDataset> split(const MultiViewDataset& ds,
                                                           const SplitSpec& spec) {
  auto [train_idx, test_idx] = split_indices(ds.labels, spec);
  return {take_rows(ds, train_idx), take_rows(ds, test_idx)};
}

/// k independent random train/validation partitions of 0..n-1. Each round
/// draws a fresh validation part of about 20% of the indices (repeated random
/// splits, not classic disjoint folds); train and validation are disjoint and
/// cover all n.
inline std::vector<std::pair<std::vector<Index>, std::vector<Index>>> kfold_indices(
    Index n, int k, std::uint64_t seed) {
  if (k < 2) throw UsageError("kfold_indices: k must be >= 2");
  if (n < k) throw UsageError("kfold_indices: n must be >= k");
  Index v = static_cast<Index>(std::llround(0.2 * static_cast<double>(n)));
  v = std::clamp<Index>(v, 1, n - 1);

  Rng rng(seed);
  std::vector<std::pair<std::vector<Index>, std::vector<Index>>> folds;
  std::vector<Index> all(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;

  for (int f = 0; f < k; ++f) {
    rng.shuffle(all);
    std::vector<Index> val(all.begin(), all.begin() + v);
    std::vector<Index> train(all.begin() + v, all.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    folds.emplace_back(std::move(train), std::move(val));
  }
  return folds;
}

}  // namespace mvgp
