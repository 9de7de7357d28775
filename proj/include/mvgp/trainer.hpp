#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mvgp/common.hpp"
#include "mvgp/dataset.hpp"
#include "mvgp/objective.hpp"
#include "mvgp/rng.hpp"

namespace mvgp {

enum class Method { gp1, gp2, gp3, mvgp1, mvgp2 };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::gp1: return "gp1";
    case Method::gp2: return "gp2";
    case Method::gp3: return "gp3";
    case Method::mvgp1: return "mvgp1";
    default: return "mvgp2";
  }
}

inline Method parse_method(const std::string& name) {
  if (name == "gp1") return Method::gp1;
  if (name == "gp2") return Method::gp2;
  if (name == "gp3") return Method::gp3;
  if (name == "mvgp1") return Method::mvgp1;
  if (name == "mvgp2") return Method::mvgp2;
  throw UsageError("unknown method '" + name + "' (expected gp1|gp2|gp3|mvgp1|mvgp2)");
}

/// Termination triple for the descent loop plus the initialization seed.
struct OptimizerConfig {
  int max_iters = 200;
  double grad_tol = 1e-5;
  double objective_tol = 1e-9;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iters < 1) throw UsageError("optimizer: max_iters must be >= 1");
    if (grad_tol < 0.0 || objective_tol < 0.0) {
      throw UsageError("optimizer: tolerances must be >= 0");
    }
  }
};

struct IterationRecord {
  int iter = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
};

struct TrainingLog {
  std::vector<IterationRecord> iterations;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double final_grad_norm = 0.0;
  std::string termination;  // grad_tol | objective_tol | max_iters | line_search_stall
  int jitter_events = 0;
  double max_jitter = 0.0;
  std::vector<std::string> warnings;
};

/// Worker threads used for grid-search cells; 0 means hardware concurrency.
inline int& thread_limit() {
  static int limit = 0;
  return limit;
}

namespace detail {

inline void parallel_for(std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  int limit = thread_limit();
  if (limit <= 0) limit = static_cast<int>(std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>(std::max(limit, 1), jobs);
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs) return;
      try {
        fn(i);
      } catch (...) {
        std::scoped_lock lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Log-domain hyperparameters drawn uniformly from [-1, 1], one triple per view.
inline std::vector<ViewHyperparams> random_init(Index views, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ViewHyperparams> hps(static_cast<std::size_t>(views));
  for (auto& hp : hps) {
    hp.kernel.log_sf = rng.uniform(-1.0, 1.0);
    hp.kernel.log_l = rng.uniform(-1.0, 1.0);
    hp.log_sigma = rng.uniform(-1.0, 1.0);
  }
  return hps;
}

/// Gradient descent with backtracking line search (sufficient decrease) along
/// the normalized steepest-descent direction; the step length is a distance in
/// the log-hyperparameter space, which keeps the search stable in the cliff
/// regions the coupling term creates when posterior covariances approach
/// singularity. Only the view hyperparameters move; trade-off parameters stay
/// fixed. The objective never increases between accepted iterations.
inline std::pair<ObjectiveState, TrainingLog> optimize(ObjectiveState state,
                                                       const MultiViewDataset& data,
                                                       const OptimizerConfig& config) {
  config.validate();
  constexpr double kSufficientDecrease = 1e-4;
  constexpr int kMaxBacktracks = 40;
  constexpr double kMaxStep = 4.0;

  TrainingLog log;
  EvalStats stats;
  Vector theta = pack_hyperparams(state.view_hps);

  auto value_at = [&](const Vector& t) {
    unpack_hyperparams(t, state.view_hps);
    try {
      return eval(state, data, &stats);
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();  // reject the trial step
    }
  };

  unpack_hyperparams(theta, state.view_hps);
  auto [f, g] = eval_with_grad(state, data, &stats);
  if (!std::isfinite(f)) {
    throw NumericError("optimize: objective is not finite at the initial point");
  }
  log.initial_objective = f;
  double grad_norm = g.lpNorm<Eigen::Infinity>();
  log.iterations.push_back({0, f, grad_norm, 0.0});

  double step = 1.0;
  log.termination = "max_iters";
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    if (grad_norm < config.grad_tol) {
      log.termination = "grad_tol";
      break;
    }
    const double g2 = g.norm();
    const Vector direction = -g / g2;  // unit steepest descent
    double t = step;
    bool accepted = false;
    double f_trial = f;
    Vector theta_trial;
    for (int bt = 0; bt < kMaxBacktracks; ++bt) {
      theta_trial = theta + t * direction;
      f_trial = value_at(theta_trial);
      // directional derivative along `direction` is -|g|
      if (f_trial <= f - kSufficientDecrease * t * g2) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      log.termination = "line_search_stall";
      break;
    }

    theta = theta_trial;
    unpack_hyperparams(theta, state.view_hps);
    const double f_prev = f;
    std::tie(f, g) = eval_with_grad(state, data, &stats);
    grad_norm = g.lpNorm<Eigen::Infinity>();
    log.iterations.push_back({iter, f, grad_norm, t});
    step = std::min(2.0 * t, kMaxStep);

    const double rel_decrease = (f_prev - f) / std::max(1.0, std::abs(f_prev));
    if (rel_decrease < config.objective_tol) {
      log.termination = "objective_tol";
      break;
    }
  }

  unpack_hyperparams(theta, state.view_hps);
  log.final_objective = f;
  log.final_grad_norm = grad_norm;
  log.jitter_events = stats.jitter_events;
  log.max_jitter = stats.max_jitter;
  return {std::move(state), std::move(log)};
}

/// Grids explored for the trade-off parameters.
struct GridSpec {
  std::vector<double> a_values;
  std::vector<double> b_values;

  void validate() const {
    if (a_values.empty() || b_values.empty()) throw UsageError("grid: grids must be non-empty");
  }

  /// Default search grids: a in {0, 0.1, ..., 1}, b in {2^-18, 2^-12, 2^-8, 2, 2^3, 2^8}.
  static GridSpec default_grids() {
    GridSpec g;
    for (int i = 0; i <= 10; ++i) g.a_values.push_back(0.1 * i);
    g.b_values = {std::exp2(-18.0), std::exp2(-12.0), std::exp2(-8.0), 2.0, std::exp2(3.0),
                  std::exp2(8.0)};
    return g;
  }
};

struct GridCellResult {
  double a = 0.0;
  double b = 0.0;
  std::vector<double> per_repeat_accuracy;
  double mean_accuracy = 0.0;
};

struct GridSearchResult {
  TradeoffParams best;
  double best_mean_accuracy = 0.0;
  std::vector<GridCellResult> table;
};

inline double accuracy(const Vector& predicted, const Vector& truth) {
  if (predicted.size() != truth.size()) throw UsageError("accuracy: length mismatch");
  if (predicted.size() == 0) throw DataError("accuracy: empty prediction set");
  Index correct = 0;
  for (Index i = 0; i < predicted.size(); ++i) correct += predicted[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

namespace detail {

/// Positions (within `subset`, which is sorted) of elements also in sorted `t`.
inline std::vector<Index> remap_index_set(const std::vector<Index>& t,
                                          const std::vector<Index>& subset) {
  std::vector<Index> local;
  std::size_t ti = 0;
  for (std::size_t pos = 0; pos < subset.size(); ++pos) {
    while (ti < t.size() && t[ti] < subset[pos]) ++ti;
    if (ti < t.size() && t[ti] == subset[pos]) local.push_back(static_cast<Index>(pos));
  }
  return local;
}

inline TradeoffParams cell_tradeoff(Index views, double a, double b) {
  if (views == 2) return TradeoffParams::two_view(a, b);
  return TradeoffParams::uniform(views, b);
}

}  // namespace detail

/// Repeated-validation grid search (the 10-round 80/20 protocol): for each
/// repeat the training data is re-split, every (a, b) cell is optimized on the
/// training part and scored by hybrid-prediction accuracy on the validation
/// part. Selects the cell with the highest mean accuracy; ties break toward
/// smaller b, then a closer to 0.5, then smaller a.
///
/// `coupling_set` holds full-training-set indices; it is remapped into each
/// repeat's training part. For more than two views the a-grid is ignored and
/// weights are uniform.
inline GridSearchResult grid_search(const MultiViewDataset& train, const GridSpec& grids,
                                    const OptimizerConfig& config, int repeats,
                                    const std::optional<std::vector<Index>>& coupling_set =
                                        std::nullopt) {
  grids.validate();
  config.validate();
  if (repeats < 1) throw UsageError("grid_search: repeats must be >= 1");
  const Index k = train.view_count();

  const auto folds = kfold_indices(train.n(), std::max(repeats, 2), mix_seed(config.seed, 0xCF01));
  const auto init_hps = random_init(k, config.seed);

  std::vector<std::pair<double, double>> cells;
  if (k == 2) {
    for (double a : grids.a_values)
      for (double b : grids.b_values) cells.emplace_back(a, b);
  } else {
    for (double b : grids.b_values) cells.emplace_back(1.0 / static_cast<double>(k), b);
  }

  // per-repeat sub-datasets and remapped coupling sets, shared across cells
  std::vector<MultiViewDataset> fold_train(static_cast<std::size_t>(repeats));
  std::vector<MultiViewDataset> fold_val(static_cast<std::size_t>(repeats));
  std::vector<std::optional<std::vector<Index>>> fold_coupling(static_cast<std::size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    const auto& [train_idx, val_idx] = folds[static_cast<std::size_t>(r)];
    fold_train[static_cast<std::size_t>(r)] = take_rows(train, train_idx);
    fold_val[static_cast<std::size_t>(r)] = take_rows(train, val_idx);
    if (coupling_set) {
      auto local = detail::remap_index_set(*coupling_set, train_idx);
      if (!local.empty()) fold_coupling[static_cast<std::size_t>(r)] = std::move(local);
    }
  }

  GridSearchResult result;
  result.table.resize(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    result.table[c].a = cells[c].first;
    result.table[c].b = cells[c].second;
    result.table[c].per_repeat_accuracy.assign(static_cast<std::size_t>(repeats), 0.0);
  }

  const std::size_t jobs = cells.size() * static_cast<std::size_t>(repeats);
  detail::parallel_for(jobs, [&](std::size_t job) {
    const std::size_t c = job / static_cast<std::size_t>(repeats);
    const int r = static_cast<int>(job % static_cast<std::size_t>(repeats));
    const auto& sub_train = fold_train[static_cast<std::size_t>(r)];
    const auto& sub_val = fold_val[static_cast<std::size_t>(r)];

    ObjectiveState state;
    state.view_hps = init_hps;
    state.tradeoff = detail::cell_tradeoff(k, cells[c].first, cells[c].second);
    if (coupling_set && cells[c].second != 0.0) {
      if (fold_coupling[static_cast<std::size_t>(r)]) {
        state.coupling_index_set = fold_coupling[static_cast<std::size_t>(r)];
      } else {
        // the repeat's training part misses the whole consistent set; decouple
        state.tradeoff.couplings.setZero();
      }
    }

    auto [fitted, log] = optimize(std::move(state), sub_train, config);
    std::vector<Vector> means(static_cast<std::size_t>(k));
    for (Index v = 0; v < k; ++v) {
      ViewInference vi(fitted.view_hps[static_cast<std::size_t>(v)],
                       sub_train.views[static_cast<std::size_t>(v)], sub_train.labels);
      means[static_cast<std::size_t>(v)] = vi.predict(sub_val.views[static_cast<std::size_t>(v)]).mean;
    }
    const Vector predicted = hybrid_predict(means, fitted.tradeoff);
    result.table[c].per_repeat_accuracy[static_cast<std::size_t>(r)] =
        accuracy(predicted, sub_val.labels);
  });

  std::size_t best = 0;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& cell = result.table[c];
    cell.mean_accuracy = 0.0;
    for (double acc : cell.per_repeat_accuracy) cell.mean_accuracy += acc;
    cell.mean_accuracy /= static_cast<double>(repeats);
    if (c == 0) continue;
    const auto& bc = result.table[best];
    const bool better =
        cell.mean_accuracy > bc.mean_accuracy ||
        (cell.mean_accuracy == bc.mean_accuracy &&
         (cell.b < bc.b ||
          (cell.b == bc.b && (std::abs(cell.a - 0.5) < std::abs(bc.a - 0.5) ||
                              (std::abs(cell.a - 0.5) == std::abs(bc.a - 0.5) && cell.a < bc.a)))));
    if (better) best = c;
  }
  result.best = detail::cell_tradeoff(k, result.table[best].a, result.table[best].b);
  result.best_mean_accuracy = result.table[best].mean_accuracy;
  return result;
}

/// A trained classifier: optimized hyperparameters, selected trade-off
/// parameters and the retained training data needed for GP prediction.
struct TrainedModel {
  Method method = Method::mvgp1;
  std::vector<ViewHyperparams> view_hps;
  TradeoffParams tradeoff;
  MultiViewDataset train_data;
  std::optional<std::vector<Index>> consistent_set;
  TrainingLog log;
  GridSearchResult grid;
};

/// Applies the method's view transformation to raw input data.
inline MultiViewDataset transform_for_method(Method m, const MultiViewDataset& data) {
  switch (m) {
    case Method::gp1: return select_view(data, 0);
    case Method::gp2: return select_view(data, 1);
    case Method::gp3: return concat_views(data);
    default: return data;
  }
}

struct ModelPredictions {
  std::vector<Vector> view_means;
  Vector combined;  // weighted score before thresholding
  Vector labels;    // in {+1, -1}
};

inline ModelPredictions model_predict(const TrainedModel& model, const MultiViewDataset& test_raw) {
  const MultiViewDataset test = transform_for_method(model.method, test_raw);
  if (test.view_count() != model.train_data.view_count()) {
    throw DataError("predict: model expects " + std::to_string(model.train_data.view_count()) +
                    " views, test data has " + std::to_string(test.view_count()));
  }
  ModelPredictions out;
  const Index k = test.view_count();
  out.view_means.resize(static_cast<std::size_t>(k));
  for (Index v = 0; v < k; ++v) {
    ViewInference vi(model.view_hps[static_cast<std::size_t>(v)],
                     model.train_data.views[static_cast<std::size_t>(v)], model.train_data.labels);
    out.view_means[static_cast<std::size_t>(v)] =
        vi.predict(test.views[static_cast<std::size_t>(v)]).mean;
  }
  out.combined = hybrid_score(out.view_means, model.tradeoff);
  out.labels.resize(out.combined.size());
  for (Index i = 0; i < out.combined.size(); ++i) {
    out.labels[i] = out.combined[i] >= 0.0 ? 1.0 : -1.0;
  }
  return out;
}

/// Multi-view GPs with posterior consistency: grid search for (a, b), then a
/// final fit on the full training set with the selected trade-off parameters.
inline TrainedModel train_mvgp1(const MultiViewDataset& train, const GridSpec& grids,
                                const OptimizerConfig& config, int cv_repeats = 10) {
  if (train.view_count() < 2) throw UsageError("mvgp1: at least two views required");
  GridSearchResult gs = grid_search(train, grids, config, cv_repeats);

  ObjectiveState state;
  state.view_hps = random_init(train.view_count(), config.seed);
  state.tradeoff = gs.best;
  auto [fitted, log] = optimize(std::move(state), train, config);

  TrainedModel model;
  model.method = Method::mvgp1;
  model.view_hps = std::move(fitted.view_hps);
  model.tradeoff = std::move(fitted.tradeoff);
  model.train_data = train;
  model.log = std::move(log);
  model.grid = std::move(gs);
  return model;
}

/// Indices where every view's predicted sign (ties to +1) equals the label.
inline std::vector<Index> consistent_indices(const std::vector<Vector>& view_means,
                                             const Vector& labels) {
  std::vector<Index> t;
  for (Index i = 0; i < labels.size(); ++i) {
    bool keep = true;
    for (const Vector& means : view_means) {
      if (means.size() != labels.size()) {
        throw UsageError("consistent_indices: mean vector length mismatch");
      }
      const double sign = means[i] >= 0.0 ? 1.0 : -1.0;
      if (sign != labels[i]) {
        keep = false;
        break;
      }
    }
    if (keep) t.push_back(i);
  }
  return t;
}

/// Training indices where every view's prediction (sign of the latent mean,
/// ties to +1) agrees with the true label.
inline std::vector<Index> build_consistent_set(const TrainedModel& model,
                                               const MultiViewDataset& train) {
  const Index k = train.view_count();
  if (static_cast<Index>(model.view_hps.size()) != k) {
    throw UsageError("build_consistent_set: model does not match the dataset's view count");
  }
  std::vector<Vector> means(static_cast<std::size_t>(k));
  for (Index v = 0; v < k; ++v) {
    ViewInference vi(model.view_hps[static_cast<std::size_t>(v)],
                     train.views[static_cast<std::size_t>(v)], train.labels);
    means[static_cast<std::size_t>(v)] = vi.predict(train.views[static_cast<std::size_t>(v)]).mean;
  }
  return consistent_indices(means, train.labels);
}

/// Second stage of MvGP2: grid search and final fit with the coupling
/// restricted to the index set `t`. An empty `t` drops the coupling entirely
/// (b = 0) and records a warning.
inline TrainedModel train_with_consistent_set(const MultiViewDataset& train, const GridSpec& grids,
                                              const OptimizerConfig& config, int cv_repeats,
                                              std::vector<Index> t) {
  if (train.view_count() < 2) throw UsageError("mvgp2: at least two views required");
  TrainedModel model;
  model.method = Method::mvgp2;
  model.train_data = train;

  if (t.empty()) {
    GridSpec decoupled = grids;
    decoupled.b_values = {0.0};
    GridSearchResult gs = grid_search(train, decoupled, config, cv_repeats);
    ObjectiveState state;
    state.view_hps = random_init(train.view_count(), config.seed);
    state.tradeoff = gs.best;
    auto [fitted, log] = optimize(std::move(state), train, config);
    model.view_hps = std::move(fitted.view_hps);
    model.tradeoff = std::move(fitted.tradeoff);
    model.log = std::move(log);
    model.log.warnings.push_back("consistent set is empty; coupling dropped (trained with b = 0)");
    model.grid = std::move(gs);
    model.consistent_set = std::move(t);
    return model;
  }

  GridSearchResult gs = grid_search(train, grids, config, cv_repeats, t);
  ObjectiveState state;
  state.view_hps = random_init(train.view_count(), config.seed);
  state.tradeoff = gs.best;
  state.coupling_index_set = t;
  auto [fitted, log] = optimize(std::move(state), train, config);
  model.view_hps = std::move(fitted.view_hps);
  model.tradeoff = std::move(fitted.tradeoff);
  model.log = std::move(log);
  model.grid = std::move(gs);
  model.consistent_set = std::move(t);
  return model;
}

/// Multi-view GPs with selective posterior consistency: run MvGP1, build the
/// consistent set from its predictions on the training data, then re-run the
/// search and final fit with the coupling restricted to that set.
inline TrainedModel train_mvgp2(const MultiViewDataset& train, const GridSpec& grids,
                                const OptimizerConfig& config, int cv_repeats = 10) {
  TrainedModel stage1 = train_mvgp1(train, grids, config, cv_repeats);
  std::vector<Index> t = build_consistent_set(stage1, train);
  return train_with_consistent_set(train, grids, config, cv_repeats, std::move(t));
}

enum class BaselineView { first, second, concatenated };

/// Single-view GP baseline (GP1/GP2/GP3): minimizes the view's negative log
/// marginal likelihood with the same descent machinery.
inline TrainedModel train_baseline(const MultiViewDataset& train, BaselineView selector,
                                   const OptimizerConfig& config) {
  Method method;
  MultiViewDataset derived;
  switch (selector) {
    case BaselineView::first:
      method = Method::gp1;
      derived = select_view(train, 0);
      break;
    case BaselineView::second:
      method = Method::gp2;
      derived = select_view(train, 1);
      break;
    default:
      method = Method::gp3;
      derived = concat_views(train);
      break;
  }

  ObjectiveState state;
  state.view_hps = random_init(1, config.seed);
  state.tradeoff = TradeoffParams::single_view();
  auto [fitted, log] = optimize(std::move(state), derived, config);

  TrainedModel model;
  model.method = method;
  model.view_hps = std::move(fitted.view_hps);
  model.tradeoff = TradeoffParams::single_view();
  model.train_data = std::move(derived);
  model.log = std::move(log);
  return model;
}

inline TrainedModel train_method(Method method, const MultiViewDataset& train,
                                 const GridSpec& grids, const OptimizerConfig& config,
                                 int cv_repeats = 10) {
  switch (method) {
    case Method::gp1: return train_baseline(train, BaselineView::first, config);
    case Method::gp2: return train_baseline(train, BaselineView::second, config);
    case Method::gp3: return train_baseline(train, BaselineView::concatenated, config);
    case Method::mvgp1: return train_mvgp1(train, grids, config, cv_repeats);
    default: return train_mvgp2(train, grids, config, cv_repeats);
  }
}

}  // namespace mvgp
