// Command-line front end: train/evaluate/benchmark pipelines, the gradient
// verification harness and PCA view synthesis.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mvgp/mvgp.hpp"

namespace fs = std::filesystem;
using namespace mvgp;

namespace {

/// Grid tokens are plain numbers or powers written as base^exponent,
/// e.g. "0,0.1,0.2" or "2^-18,2^-12,2,2^8".
std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> values;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    if (token.empty()) continue;
    const auto caret = token.find('^');
    try {
      if (caret == std::string::npos) {
        values.push_back(std::stod(token));
      } else {
        const double base = std::stod(token.substr(0, caret));
        const double expo = std::stod(token.substr(caret + 1));
        values.push_back(std::pow(base, expo));
      }
    } catch (const std::exception&) {
      throw UsageError("cannot parse grid token '" + token + "'");
    }
  }
  if (values.empty()) throw UsageError("empty grid specification '" + text + "'");
  return values;
}

struct CommonOptions {
  std::vector<std::string> views;
  std::string label = "label";
  std::string method = "mvgp1";
  std::string a_grid = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  std::string b_grid = "2^-18,2^-12,2^-8,2,2^3,2^8";
  double train_frac = 0.6;
  bool stratified = false;
  std::uint64_t seed = 0;
  int repeats = 5;
  int cv_repeats = 10;
  int max_iters = 200;
  double grad_tol = 1e-5;
  double objective_tol = 1e-9;
  Index pca_components = 0;
  int threads = 0;
  std::string out_dir;
};

void add_data_options(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--views", opt.views, "One CSV file per view (labels in the first)")
      ->required()
      ->expected(-1);
  cmd->add_option("--label-col", opt.label,
                  "Label column name, or 0-based index for headerless files");
  cmd->add_option("--pca-view", opt.pca_components,
                  "Synthesize a second view by PCA with this many components (single-view data)");
}

void add_training_options(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--method", opt.method, "gp1|gp2|gp3|mvgp1|mvgp2");
  cmd->add_option("--seed", opt.seed, "Seed for splits and initialization");
  cmd->add_option("--a-grid", opt.a_grid, "Comma-separated view-weight grid");
  cmd->add_option("--b-grid", opt.b_grid, "Comma-separated coupling grid (supports 2^k tokens)");
  cmd->add_option("--cv-repeats,--folds", opt.cv_repeats, "Validation re-splits per grid search");
  cmd->add_option("--max-iters", opt.max_iters, "Gradient descent iteration cap");
  cmd->add_option("--grad-tol", opt.grad_tol, "Stop when the gradient infinity norm falls below");
  cmd->add_option("--objective-tol", opt.objective_tol,
                  "Stop when the relative objective decrease falls below");
  cmd->add_option("--threads", opt.threads, "Worker threads for grid cells (0 = hardware)");
}

MultiViewDataset load_input(const CommonOptions& opt) {
  MultiViewDataset data = load_csv(opt.views, LabelSpec::parse(opt.label));
  if (opt.pca_components > 0) {
    if (data.view_count() != 1) {
      throw UsageError("--pca-view requires single-view input data");
    }
    data = pca_second_view(data, opt.pca_components);
  }
  return data;
}

ExperimentConfig to_experiment_config(const CommonOptions& opt) {
  ExperimentConfig config;
  config.view_paths = opt.views;
  config.label_raw = opt.label;
  config.method = parse_method(opt.method);
  config.split.train_fraction = opt.train_frac;
  config.split.seed = opt.seed;
  config.split.stratified = opt.stratified;
  config.grids.a_values = parse_grid(opt.a_grid);
  config.grids.b_values = parse_grid(opt.b_grid);
  config.optimizer.max_iters = opt.max_iters;
  config.optimizer.grad_tol = opt.grad_tol;
  config.optimizer.objective_tol = opt.objective_tol;
  config.optimizer.seed = opt.seed;
  config.repeats = opt.repeats;
  config.cv_repeats = opt.cv_repeats;
  config.pca_components = opt.pca_components;
  config.out_dir = opt.out_dir;
  return config;
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

int run_train(const CommonOptions& opt, bool split_requested) {
  thread_limit() = opt.threads;
  const ExperimentConfig config = to_experiment_config(opt);
  config.validate();
  const MultiViewDataset full = load_input(opt);
  fs::create_directories(opt.out_dir);

  DatasetRef ref;
  ref.paths = opt.views;
  ref.label_raw = opt.label;
  ref.pca_components = opt.pca_components;
  ref.content_hash = dataset_hash(full);

  MultiViewDataset train_part = full;
  if (split_requested) {
    auto [train_idx, test_idx] = split_indices(full.labels, config.split);
    ref.train_indices = train_idx;
    train_part = take_rows(full, train_idx);
    // write the held-out rows next to the model so they can be evaluated later
    std::vector<std::string> holdout_paths;
    for (Index v = 0; v < full.view_count(); ++v) {
      holdout_paths.push_back(
          (fs::path(opt.out_dir) / ("holdout_view" + std::to_string(v + 1) + ".csv")).string());
    }
    save_csv(take_rows(full, test_idx), holdout_paths);
    std::cout << "split: " << train_part.n() << " train / " << test_idx.size()
              << " held out (written to " << opt.out_dir << ")\n";
  } else {
    ref.train_indices.resize(static_cast<std::size_t>(full.n()));
    for (Index i = 0; i < full.n(); ++i) ref.train_indices[static_cast<std::size_t>(i)] = i;
  }

  const TrainedModel model =
      train_method(config.method, train_part, config.grids, config.optimizer, config.cv_repeats);

  const std::string model_path = (fs::path(opt.out_dir) / "model.json").string();
  save_model(model, ref, model_path);
  save_training_log(model.log, (fs::path(opt.out_dir) / "training_log.json").string());

  std::cout << "method " << method_name(model.method) << ": final objective "
            << model.log.final_objective << " after " << model.log.iterations.size() - 1
            << " iterations (" << model.log.termination << ")\n";
  if (model.method == Method::mvgp1 || model.method == Method::mvgp2) {
    std::cout << "selected a=" << model.tradeoff.a() << " b=" << model.tradeoff.b() << "\n";
  }
  if (model.consistent_set) {
    std::cout << "consistent set size " << model.consistent_set->size() << "\n";
  }
  for (const auto& w : model.log.warnings) std::cout << "warning: " << w << "\n";
  std::cout << "model written to " << model_path << "\n";
  return 0;
}

int run_evaluate(const std::string& model_path, const CommonOptions& opt) {
  const LoadedModel loaded = load_model(model_path);

  MultiViewDataset test = load_csv(opt.views, LabelSpec::parse(opt.label));
  if (loaded.ref.pca_components > 0 && test.view_count() == 1) {
    // the model was trained with a synthesized second view; mirror it
    test = pca_second_view(test, loaded.ref.pca_components);
    std::cout << "applied PCA view synthesis (" << loaded.ref.pca_components
              << " components) to the test data\n";
  }

  const ModelPredictions pred = model_predict(loaded.model, test);
  const double acc = accuracy(pred.labels, test.labels);

  fs::create_directories(opt.out_dir);
  const std::string pred_path = (fs::path(opt.out_dir) / "predictions.csv").string();
  std::ofstream out(pred_path);
  if (!out) throw DataError("cannot write predictions: " + pred_path);
  out << "index";
  for (std::size_t v = 0; v < pred.view_means.size(); ++v) out << ",mean_view" << v + 1;
  out << ",combined,predicted,true\n";
  for (Index i = 0; i < pred.labels.size(); ++i) {
    out << i;
    for (const auto& means : pred.view_means) out << "," << detail::format_double(means[i]);
    out << "," << detail::format_double(pred.combined[i]) << "," << (pred.labels[i] > 0 ? 1 : -1)
        << "," << (test.labels[i] > 0 ? 1 : -1) << "\n";
  }
  const Index correct = static_cast<Index>(std::llround(acc * static_cast<double>(test.n())));
  std::cout << "accuracy " << acc << " (" << correct << "/" << test.n() << ")\n";
  std::cout << "predictions written to " << pred_path << "\n";
  return 0;
}

int run_benchmark_cmd(const CommonOptions& opt) {
  thread_limit() = opt.threads;
  const ExperimentConfig config = to_experiment_config(opt);
  config.validate();
  const MultiViewDataset data = load_input(opt);

  const ExperimentReport report = run_benchmark(config, data, &std::cout);

  fs::create_directories(opt.out_dir);
  write_json(report_to_json(config, report), (fs::path(opt.out_dir) / "report.json").string());
  write_json(timings_to_json(report), (fs::path(opt.out_dir) / "timings.json").string());

  std::cout << method_name(config.method) << ": "
            << format_accuracy(report.mean_accuracy, report.std_accuracy) << " (%) over "
            << config.repeats << " repeats\n";
  std::cout << "report written to " << opt.out_dir << "/report.json\n";
  return 0;
}

int run_gradcheck_cmd(const GradCheckOptions& opt) {
  const GradCheckReport report = run_gradcheck(opt);
  for (const auto& c : report.cases) {
    std::cout << c.description << ": fd rel err " << c.fd_rel_err;
    if (c.direct_rel_err > 0.0) std::cout << ", direct-form rel err " << c.direct_rel_err;
    std::cout << "\n";
  }
  std::cout << "max rel err vs finite differences: " << report.max_fd_rel_err << "\n";
  std::cout << "max rel err vs direct transcription (coupling coefficient halved): "
            << report.max_direct_rel_err << "\n";
  std::cout << "note: without the 1/2 on its coupling groups the direct form computes twice "
               "the objective's coupling derivative; the halved form matches both the "
               "chain-rule gradient and finite differences\n";
  std::cout << (report.pass ? "PASS" : "FAIL") << " (tolerance " << opt.tolerance << ")\n";
  return report.pass ? 0 : 3;
}

int run_pca_view(const CommonOptions& opt, const std::string& out_file) {
  MultiViewDataset data = load_csv(opt.views, LabelSpec::parse(opt.label));
  const MultiViewDataset two = pca_second_view(data, opt.pca_components);

  std::ofstream out(out_file);
  if (!out) throw DataError("cannot write file: " + out_file);
  const Matrix& v2 = two.views[1];
  for (Index c = 0; c < v2.cols(); ++c) out << (c ? "," : "") << "pc" << c;
  out << "\n";
  for (Index r = 0; r < v2.rows(); ++r) {
    for (Index c = 0; c < v2.cols(); ++c) {
      if (c) out << ",";
      out << detail::format_double(v2(r, c));
    }
    out << "\n";
  }
  std::cout << "synthesized view with " << v2.cols() << " components written to " << out_file
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view regularized Gaussian process classifier"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a TOML/INI config file (flags override)");

  CommonOptions opt;
  GradCheckOptions gopt;
  std::string model_path;
  std::string pca_out;
  int rc = 0;

  auto* train = app.add_subcommand("train", "Fit a model and persist it");
  add_data_options(train, opt);
  add_training_options(train, opt);
  train->add_option("--train-frac", opt.train_frac,
                    "Train on this fraction (holding the rest out); omit to use all rows");
  train->add_flag("--stratified", opt.stratified, "Stratify the train/holdout split");
  train->add_option("--out", opt.out_dir, "Output directory")->required();
  train->callback([&] { rc = run_train(opt, train->count("--train-frac") > 0); });

  auto* evaluate = app.add_subcommand("evaluate", "Score a saved model on test data");
  add_data_options(evaluate, opt);
  evaluate->add_option("--model", model_path, "Model file from `train`")->required();
  evaluate->add_option("--out", opt.out_dir, "Output directory for predictions.csv");
  evaluate->callback([&] {
    if (opt.out_dir.empty()) opt.out_dir = ".";
    rc = run_evaluate(model_path, opt);
  });

  auto* bench = app.add_subcommand("benchmark", "Run the full repeated-split protocol");
  add_data_options(bench, opt);
  add_training_options(bench, opt);
  bench->add_option("--train-frac", opt.train_frac, "Training fraction per repeat");
  bench->add_flag("--stratified", opt.stratified, "Stratify the train/test splits");
  bench->add_option("--repeats", opt.repeats, "Outer repeats of the whole protocol");
  bench->add_option("--out", opt.out_dir, "Output directory")->required();
  bool fast = false;
  bench->add_flag("--fast", fast, "Coarse screening profile: smaller grids, 3 validation repeats");
  bench->callback([&] {
    if (!bench->count("--method")) opt.method = "mvgp2";
    if (fast) {
      if (!bench->count("--a-grid")) opt.a_grid = "0,0.5,1";
      if (!bench->count("--b-grid")) opt.b_grid = "2^-12,2^3";
      if (!bench->count("--cv-repeats")) opt.cv_repeats = 3;
      if (!bench->count("--repeats")) opt.repeats = 3;
      if (!bench->count("--max-iters")) opt.max_iters = 40;
    }
    rc = run_benchmark_cmd(opt);
  });

  auto* gradcheck = app.add_subcommand("gradcheck", "Verify analytic gradients numerically");
  gradcheck->add_option("--seeds", gopt.seeds, "Random instances to draw");
  gradcheck->add_option("--n-min", gopt.n_min, "Smallest training set size");
  gradcheck->add_option("--n-max", gopt.n_max, "Largest training set size");
  gradcheck->add_option("--dim-min", gopt.dim_min, "Smallest feature dimension");
  gradcheck->add_option("--dim-max", gopt.dim_max, "Largest feature dimension");
  gradcheck->add_option("--step", gopt.fd_step, "Finite difference step");
  gradcheck->add_option("--tol", gopt.tolerance, "Failure threshold on the max relative error");
  gradcheck
      ->add_flag("--self-test-corrupt", gopt.corrupt,
                 "Perturb the analytic gradient to prove the harness catches errors")
      ->group("");  // hidden
  gradcheck->callback([&] { rc = run_gradcheck_cmd(gopt); });

  auto* pca = app.add_subcommand("pca-view", "Write a PCA-synthesized second view as CSV");
  add_data_options(pca, opt);
  pca->add_option("--components", opt.pca_components, "Number of principal components")
      ->required();
  pca->add_option("--out", pca_out, "Output CSV file")->required();
  pca->callback([&] { rc = run_pca_view(opt, pca_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return rc;
}
