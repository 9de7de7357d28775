#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvgp/common.hpp"
#include "mvgp/dataset.hpp"
#include "mvgp/trainer.hpp"

namespace mvgp {

inline constexpr int kModelFormatVersion = 1;

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Content hash over shapes, feature values (row-major) and labels.
inline std::uint64_t dataset_hash(const MultiViewDataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Matrix& view : ds.views) {
    const std::uint64_t dims[2] = {static_cast<std::uint64_t>(view.rows()),
                                   static_cast<std::uint64_t>(view.cols())};
    h = fnv1a64(dims, sizeof(dims), h);
    for (Index r = 0; r < view.rows(); ++r) {
      for (Index c = 0; c < view.cols(); ++c) {
        const double v = view(r, c);
        h = fnv1a64(&v, sizeof(v), h);
      }
    }
  }
  for (Index i = 0; i < ds.labels.size(); ++i) {
    const double v = ds.labels[i];
    h = fnv1a64(&v, sizeof(v), h);
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// How a model's training data was produced: source files, label column,
/// optional PCA view synthesis and the retained training row indices.
struct DatasetRef {
  std::vector<std::string> paths;
  std::string label_raw = "label";  // name or numeric index, as given on the CLI
  Index pca_components = 0;         // 0 = no synthesized view
  std::vector<Index> train_indices;
  std::uint64_t content_hash = 0;   // hash of the full (pre-split) dataset
};

/// Loads the referenced dataset (applying PCA view synthesis when recorded)
/// and verifies the content hash.
inline MultiViewDataset resolve_dataset_ref(const DatasetRef& ref) {
  MultiViewDataset full = load_csv(ref.paths, LabelSpec::parse(ref.label_raw));
  if (ref.pca_components > 0) full = pca_second_view(full, ref.pca_components);
  const std::uint64_t h = dataset_hash(full);
  if (h != ref.content_hash) {
    throw DataError("model/data mismatch: referenced dataset hash " + hash_hex(h) +
                    " differs from recorded " + hash_hex(ref.content_hash));
  }
  return full;
}

namespace detail {

inline nlohmann::json tradeoff_to_json(const TradeoffParams& t) {
  nlohmann::json j;
  j["weights"] = std::vector<double>(t.weights.data(), t.weights.data() + t.weights.size());
  std::vector<std::vector<double>> rows;
  for (Index r = 0; r < t.couplings.rows(); ++r) {
    rows.emplace_back(t.couplings.row(r).begin(), t.couplings.row(r).end());
  }
  j["couplings"] = rows;
  return j;
}

inline TradeoffParams tradeoff_from_json(const nlohmann::json& j) {
  TradeoffParams t;
  const auto w = j.at("weights").get<std::vector<double>>();
  t.weights = Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size()));
  const auto rows = j.at("couplings").get<std::vector<std::vector<double>>>();
  const Index k = static_cast<Index>(rows.size());
  t.couplings.resize(k, k);
  for (Index r = 0; r < k; ++r) {
    if (static_cast<Index>(rows[static_cast<std::size_t>(r)].size()) != k) {
      throw DataError("model file: coupling matrix is not square");
    }
    for (Index c = 0; c < k; ++c) t.couplings(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  t.validate();
  return t;
}

}  // namespace detail

/// Serializes the model: hyperparameters in log domain, trade-off parameters,
/// the consistent set and a by-reference description of the training data.
/// Output is deterministic for identical inputs (sorted keys, shortest
/// round-trip numbers).
inline void save_model(const TrainedModel& model, const DatasetRef& ref, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["method"] = method_name(model.method);
  j["view_names"] = model.train_data.view_names;

  nlohmann::json hps = nlohmann::json::array();
  for (const auto& hp : model.view_hps) {
    hps.push_back({{"log_sf", hp.kernel.log_sf}, {"log_l", hp.kernel.log_l}, {"log_sigma", hp.log_sigma}});
  }
  j["view_hyperparams"] = hps;
  j["tradeoff"] = detail::tradeoff_to_json(model.tradeoff);
  if (model.consistent_set) j["consistent_set"] = *model.consistent_set;
  j["final_objective"] = model.log.final_objective;

  j["dataset"] = {{"paths", ref.paths},
                  {"label", ref.label_raw},
                  {"pca_components", ref.pca_components},
                  {"train_indices", ref.train_indices},
                  {"hash", hash_hex(ref.content_hash)}};

  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file: " + path);
  out << j.dump(2) << "\n";
}

struct LoadedModel {
  TrainedModel model;
  DatasetRef ref;
};

/// Reads a model file and reconstructs its training data from the recorded
/// dataset reference. Fails loudly on unknown format versions.
inline LoadedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model file " + path + " is not valid JSON: " + e.what());
  }

  const int version = j.value("format_version", -1);
  if (version < 0) throw DataError("model file " + path + " has no format_version");
  if (version > kModelFormatVersion) {
    throw DataError("model file " + path + " has format_version " + std::to_string(version) +
                    "; this build reads up to " + std::to_string(kModelFormatVersion));
  }

  LoadedModel out;
  try {
    out.model.method = parse_method(j.at("method").get<std::string>());
    for (const auto& hp : j.at("view_hyperparams")) {
      ViewHyperparams v;
      v.kernel.log_sf = hp.at("log_sf").get<double>();
      v.kernel.log_l = hp.at("log_l").get<double>();
      v.log_sigma = hp.at("log_sigma").get<double>();
      out.model.view_hps.push_back(v);
    }
    out.model.tradeoff = detail::tradeoff_from_json(j.at("tradeoff"));
    if (j.contains("consistent_set")) {
      out.model.consistent_set = j.at("consistent_set").get<std::vector<Index>>();
    }
    out.model.log.final_objective = j.value("final_objective", 0.0);

    const auto& d = j.at("dataset");
    out.ref.paths = d.at("paths").get<std::vector<std::string>>();
    out.ref.label_raw = d.at("label").get<std::string>();
    out.ref.pca_components = d.at("pca_components").get<Index>();
    out.ref.train_indices = d.at("train_indices").get<std::vector<Index>>();
    out.ref.content_hash = std::stoull(d.at("hash").get<std::string>(), nullptr, 16);
  } catch (const std::exception& e) {
    throw DataError("model file " + path + " is malformed: " + e.what());
  }

  MultiViewDataset full = resolve_dataset_ref(out.ref);
  MultiViewDataset rows = out.ref.train_indices.empty()
                              ? std::move(full)
                              : take_rows(full, out.ref.train_indices);
  // baseline methods retain the derived (selected/concatenated) view
  out.model.train_data = transform_for_method(out.model.method, rows);
  return out;
}

/// Structured training log, one record per accepted iteration.
inline void save_training_log(const TrainingLog& log, const std::string& path) {
  nlohmann::json j;
  j["initial_objective"] = log.initial_objective;
  j["final_objective"] = log.final_objective;
  j["final_grad_norm"] = log.final_grad_norm;
  j["termination"] = log.termination;
  j["jitter_events"] = log.jitter_events;
  j["max_jitter"] = log.max_jitter;
  j["warnings"] = log.warnings;
  nlohmann::json iters = nlohmann::json::array();
  for (const auto& it : log.iterations) {
    iters.push_back({{"iter", it.iter},
                     {"objective", it.objective},
                     {"grad_norm", it.grad_norm},
                     {"step", it.step}});
  }
  j["iterations"] = iters;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write training log: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace mvgp
