#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvgp/dataset.hpp"
#include "mvgp/model_io.hpp"
#include "mvgp/trainer.hpp"

namespace mvgp {

inline constexpr int kReportFormatVersion = 1;

/// Knobs of the full experiment protocol: per-repeat fresh train/test split,
/// grid search with repeated validation, final fit, test evaluation.
struct ExperimentConfig {
  std::vector<std::string> view_paths;
  std::string label_raw = "label";
  Method method = Method::mvgp2;
  SplitSpec split;        // train_fraction, base seed, stratification
  GridSpec grids = GridSpec::default_grids();
  OptimizerConfig optimizer;
  int repeats = 5;
  int cv_repeats = 10;
  Index pca_components = 0;  // synthesize a second view before anything else
  std::string out_dir;

  void validate() const {
    grids.validate();
    optimizer.validate();
    if (repeats < 1) throw UsageError("benchmark: repeats must be >= 1");
    if (cv_repeats < 1) throw UsageError("benchmark: cv-repeats must be >= 1");
  }
};

struct RepeatOutcome {
  int repeat = 0;
  double accuracy = 0.0;
  double a = 0.0;
  double b = 0.0;
  Index n_train = 0;
  Index n_test = 0;
  std::optional<std::size_t> consistent_set_size;
  double split_seconds = 0.0;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

struct ExperimentReport {
  std::vector<RepeatOutcome> repeats;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population standard deviation; 0 for one repeat

  void finalize() {
    mean_accuracy = 0.0;
    for (const auto& r : repeats) mean_accuracy += r.accuracy;
    mean_accuracy /= static_cast<double>(repeats.size());
    double var = 0.0;
    for (const auto& r : repeats) {
      var += (r.accuracy - mean_accuracy) * (r.accuracy - mean_accuracy);
    }
    std_accuracy = std::sqrt(var / static_cast<double>(repeats.size()));
  }
};

/// mean +/- std in percent with two decimals, mirroring the usual table format.
inline std::string format_accuracy(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", 100.0 * mean, 100.0 * stddev);
  return buf;
}

/// Runs the full protocol on already-loaded data. `progress`, when non-null,
/// receives one line per repeat.
inline ExperimentReport run_benchmark(const ExperimentConfig& config, const MultiViewDataset& data,
                                      std::ostream* progress = nullptr) {
  config.validate();
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point start) {
    return std::chrono::duration<double>(clock::now() - start).count();
  };

  ExperimentReport report;
  for (int r = 0; r < config.repeats; ++r) {
    RepeatOutcome outcome;
    outcome.repeat = r;

    auto t0 = clock::now();
    SplitSpec split_spec = config.split;
    split_spec.seed = mix_seed(config.split.seed, 0x500 + static_cast<std::uint64_t>(r));
    auto [train_data, test_data] = split(data, split_spec);
    outcome.n_train = train_data.n();
    outcome.n_test = test_data.n();
    outcome.split_seconds = seconds_since(t0);

    t0 = clock::now();
    OptimizerConfig opt = config.optimizer;
    opt.seed = mix_seed(config.optimizer.seed, 0x900 + static_cast<std::uint64_t>(r));
    TrainedModel model = train_method(config.method, train_data, config.grids, opt, config.cv_repeats);
    outcome.train_seconds = seconds_since(t0);

    t0 = clock::now();
    const ModelPredictions predictions = model_predict(model, test_data);
    outcome.accuracy = accuracy(predictions.labels, test_data.labels);
    outcome.eval_seconds = seconds_since(t0);

    outcome.a = model.tradeoff.a();
    outcome.b = model.tradeoff.b();
    if (model.consistent_set) outcome.consistent_set_size = model.consistent_set->size();

    if (progress) {
      (*progress) << "repeat " << r << ": accuracy " << outcome.accuracy << " (a=" << outcome.a
                  << ", b=" << outcome.b;
      if (outcome.consistent_set_size) (*progress) << ", |T|=" << *outcome.consistent_set_size;
      (*progress) << ", " << outcome.train_seconds << "s)\n";
    }
    report.repeats.push_back(outcome);
  }
  report.finalize();
  return report;
}

/// Deterministic report serialization; wall-clock timings are deliberately
/// kept out (they go to the timings sidecar).
inline nlohmann::json report_to_json(const ExperimentConfig& config, const ExperimentReport& report) {
  nlohmann::json j;
  j["format_version"] = kReportFormatVersion;
  j["method"] = method_name(config.method);
  j["dataset"] = {{"paths", config.view_paths},
                  {"label", config.label_raw},
                  {"pca_components", config.pca_components}};
  j["protocol"] = {{"train_fraction", config.split.train_fraction},
                   {"stratified", config.split.stratified},
                   {"seed", config.split.seed},
                   {"repeats", config.repeats},
                   {"cv_repeats", config.cv_repeats},
                   {"a_grid", config.grids.a_values},
                   {"b_grid", config.grids.b_values},
                   {"optimizer", {{"max_iters", config.optimizer.max_iters},
                                  {"grad_tol", config.optimizer.grad_tol},
                                  {"objective_tol", config.optimizer.objective_tol}}}};
  nlohmann::json per_repeat = nlohmann::json::array();
  for (const auto& r : report.repeats) {
    nlohmann::json jr = {{"repeat", r.repeat}, {"accuracy", r.accuracy},
                         {"a", r.a},           {"b", r.b},
                         {"n_train", r.n_train}, {"n_test", r.n_test}};
    if (r.consistent_set_size) jr["consistent_set_size"] = *r.consistent_set_size;
    per_repeat.push_back(jr);
  }
  j["per_repeat"] = per_repeat;
  j["mean_accuracy"] = report.mean_accuracy;
  j["std_accuracy"] = report.std_accuracy;
  return j;
}

inline nlohmann::json timings_to_json(const ExperimentReport& report) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : report.repeats) {
    arr.push_back({{"repeat", r.repeat},
                   {"split_seconds", r.split_seconds},
                   {"train_seconds", r.train_seconds},
                   {"eval_seconds", r.eval_seconds}});
  }
  return nlohmann::json{{"per_repeat", arr}};
}

}  // namespace mvgp
