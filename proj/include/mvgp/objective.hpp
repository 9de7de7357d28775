#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "mvgp/common.hpp"
#include "mvgp/dataset.hpp"
#include "mvgp/divergence.hpp"
#include "mvgp/gp_view.hpp"

namespace mvgp {

/// Trade-off parameters: view weights on the simplex and pairwise coupling
/// strengths. For two views this reduces to the scalar pair (a, b) with
/// weights (a, 1-a) and coupling b = couplings(0, 1).
struct TradeoffParams {
  Vector weights;    // length K, entries in [0,1], summing to 1
  Matrix couplings;  // K x K symmetric, zero diagonal, entries >= 0

  static TradeoffParams two_view(double a, double b) {
    TradeoffParams t;
    t.weights.resize(2);
    t.weights << a, 1.0 - a;
    t.couplings = Matrix::Zero(2, 2);
    t.couplings(0, 1) = t.couplings(1, 0) = b;
    t.validate();
    return t;
  }

  static TradeoffParams single_view() {
    TradeoffParams t;
    t.weights = Vector::Ones(1);
    t.couplings = Matrix::Zero(1, 1);
    return t;
  }

  /// Uniform weights and a shared coupling strength for every view pair.
  static TradeoffParams uniform(Index k, double b) {
    TradeoffParams t;
    t.weights = Vector::Constant(k, 1.0 / static_cast<double>(k));
    t.couplings = Matrix::Constant(k, k, b);
    t.couplings.diagonal().setZero();
    t.validate();
    return t;
  }

  double a() const { return weights[0]; }
  double b() const { return couplings.rows() > 1 ? couplings(0, 1) : 0.0; }
  Index view_count() const { return weights.size(); }

  void validate() const {
    const Index k = weights.size();
    if (k < 1) throw UsageError("tradeoff: at least one view weight required");
    for (Index i = 0; i < k; ++i) {
      if (!(weights[i] >= 0.0 && weights[i] <= 1.0)) {
        throw UsageError("tradeoff: view weights must lie in [0, 1]");
      }
    }
    if (std::abs(weights.sum() - 1.0) > 1e-12) {
      throw UsageError("tradeoff: view weights must sum to 1");
    }
    if (couplings.rows() != k || couplings.cols() != k) {
      throw UsageError("tradeoff: coupling matrix must be K x K");
    }
    for (Index i = 0; i < k; ++i) {
      for (Index j = 0; j < k; ++j) {
        if (!(couplings(i, j) >= 0.0) || !std::isfinite(couplings(i, j))) {
          throw UsageError("tradeoff: couplings must be finite and >= 0");
        }
        if (couplings(i, j) != couplings(j, i)) {
          throw UsageError("tradeoff: coupling matrix must be symmetric");
        }
      }
      if (couplings(i, i) != 0.0) throw UsageError("tradeoff: coupling diagonal must be zero");
    }
  }
};

/// Full objective state: per-view GP hyperparameters, trade-off parameters and
/// an optional index set restricting the coupling posteriors (absent = full set).
struct ObjectiveState {
  std::vector<ViewHyperparams> view_hps;
  TradeoffParams tradeoff;
  std::optional<std::vector<Index>> coupling_index_set;
};

/// Jitter bookkeeping accumulated across an objective evaluation.
struct EvalStats {
  int jitter_events = 0;
  double max_jitter = 0.0;

  void record(double jitter) {
    if (jitter > 0.0) {
      ++jitter_events;
      max_jitter = std::max(max_jitter, jitter);
    }
  }
};

namespace detail {

inline void validate_pairing(const ObjectiveState& state, const MultiViewDataset& data) {
  const Index k = data.view_count();
  if (static_cast<Index>(state.view_hps.size()) != k) {
    throw UsageError("objective: state has " + std::to_string(state.view_hps.size()) +
                     " view hyperparameter sets for " + std::to_string(k) + " views");
  }
  state.tradeoff.validate();
  if (state.tradeoff.view_count() != k) {
    throw UsageError("objective: tradeoff parameters cover " +
                     std::to_string(state.tradeoff.view_count()) + " views, dataset has " +
                     std::to_string(k));
  }
  if (state.coupling_index_set) {
    const auto& t = *state.coupling_index_set;
    if (t.empty()) throw UsageError("objective: coupling index set must be non-empty");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] < 0 || t[i] >= data.n()) throw UsageError("objective: coupling index out of range");
      if (i > 0 && t[i] <= t[i - 1]) {
        throw UsageError("objective: coupling index set must be sorted and duplicate-free");
      }
    }
  }
}

struct ObjectiveEvaluation {
  double value = 0.0;
  Vector grad;
};

/// Shared implementation of eval and grad. Likelihood terms always use the
/// full training set; coupling posteriors use the restricted rows when a
/// coupling index set is present.
inline ObjectiveEvaluation evaluate(const ObjectiveState& state, const MultiViewDataset& data,
                                    bool want_grad, EvalStats* stats) {
  validate_pairing(state, data);
  const Index k = data.view_count();
  const Vector& w = state.tradeoff.weights;
  const Matrix& b = state.tradeoff.couplings;

  EvalStats local;
  EvalStats& st = stats ? *stats : local;

  ObjectiveEvaluation out;
  if (want_grad) out.grad = Vector::Zero(kHyperCount * k);

  const bool any_coupling = (b.array() != 0.0).any();
  const bool restricted = state.coupling_index_set.has_value();

  // one shared factorization per view on the full data, reused by the
  // coupling posteriors when the coupling set is unrestricted
  std::vector<std::unique_ptr<ViewInference>> full_inf(static_cast<std::size_t>(k));
  auto full_inference = [&](Index v) -> ViewInference& {
    auto& slot = full_inf[static_cast<std::size_t>(v)];
    if (!slot) {
      slot = std::make_unique<ViewInference>(state.view_hps[static_cast<std::size_t>(v)],
                                             data.views[static_cast<std::size_t>(v)], data.labels);
      st.record(slot->c_jitter());
    }
    return *slot;
  };

  // weighted negative log marginal likelihoods on the full training set
  for (Index v = 0; v < k; ++v) {
    if (w[v] == 0.0) continue;
    ViewInference& vi = full_inference(v);
    out.value += w[v] * vi.nll();
    if (want_grad) {
      out.grad.segment(kHyperCount * v, kHyperCount) += w[v] * Vector(vi.nll_grad());
    }
  }

  if (!any_coupling) return out;

  // posteriors for the coupling terms, on the restricted rows when requested
  MultiViewDataset restricted_storage;
  if (restricted) restricted_storage = take_rows(data, *state.coupling_index_set);

  std::vector<std::unique_ptr<ViewInference>> restricted_inf(static_cast<std::size_t>(k));
  std::vector<std::optional<GaussianPosterior>> posteriors(static_cast<std::size_t>(k));
  std::vector<std::optional<PosteriorGrads>> post_grads(static_cast<std::size_t>(k));
  for (Index v = 0; v < k; ++v) {
    if ((b.row(v).array() != 0.0).any()) {
      ViewInference* vi;
      if (restricted) {
        restricted_inf[static_cast<std::size_t>(v)] = std::make_unique<ViewInference>(
            state.view_hps[static_cast<std::size_t>(v)],
            restricted_storage.views[static_cast<std::size_t>(v)], restricted_storage.labels);
        vi = restricted_inf[static_cast<std::size_t>(v)].get();
        st.record(vi->c_jitter());
      } else {
        vi = &full_inference(v);
      }
      auto p = vi->posterior();
      st.record(p.jitter);
      posteriors[static_cast<std::size_t>(v)] = std::move(p);
      if (want_grad) post_grads[static_cast<std::size_t>(v)] = vi->posterior_grads();
    }
  }

  for (Index i = 0; i < k; ++i) {
    for (Index j = i + 1; j < k; ++j) {
      const double bij = b(i, j);
      if (bij == 0.0) continue;
      const auto& pi = *posteriors[static_cast<std::size_t>(i)];
      const auto& pj = *posteriors[static_cast<std::size_t>(j)];
      out.value += 0.5 * bij * (kl(pi, pj).total + kl(pj, pi).total);
      if (!want_grad) continue;

      const KlParamGrad gij = kl_param_grad(pi, pj);
      const KlParamGrad gji = kl_param_grad(pj, pi);
      const Vector gm_i = gij.mean_a + gji.mean_b;
      const Matrix gc_i = gij.cov_a + gji.cov_b;
      const Vector gm_j = gij.mean_b + gji.mean_a;
      const Matrix gc_j = gij.cov_b + gji.cov_a;

      const auto& pgi = *post_grads[static_cast<std::size_t>(i)];
      const auto& pgj = *post_grads[static_cast<std::size_t>(j)];
      for (int t = 0; t < kHyperCount; ++t) {
        out.grad[kHyperCount * i + t] +=
            0.5 * bij * (gm_i.dot(pgi.mean[static_cast<std::size_t>(t)]) +
                         gc_i.cwiseProduct(pgi.cov[static_cast<std::size_t>(t)]).sum());
        out.grad[kHyperCount * j + t] +=
            0.5 * bij * (gm_j.dot(pgj.mean[static_cast<std::size_t>(t)]) +
                         gc_j.cwiseProduct(pgj.cov[static_cast<std::size_t>(t)]).sum());
      }
    }
  }
  return out;
}

}  // namespace detail

/// Multi-view objective: sum_k a_k * nll_k + sum_{i<j} (b_ij/2) [KL(p_i||p_j) + KL(p_j||p_i)].
inline double eval(const ObjectiveState& state, const MultiViewDataset& data,
                   EvalStats* stats = nullptr) {
  return detail::evaluate(state, data, false, stats).value;
}

/// Gradient of eval over all K x {log_sf, log_l, log_sigma} coordinates,
/// flattened view-major.
inline Vector grad(const ObjectiveState& state, const MultiViewDataset& data,
                   EvalStats* stats = nullptr) {
  return detail::evaluate(state, data, true, stats).grad;
}

inline std::pair<double, Vector> eval_with_grad(const ObjectiveState& state,
                                                const MultiViewDataset& data,
                                                EvalStats* stats = nullptr) {
  auto r = detail::evaluate(state, data, true, stats);
  return {r.value, std::move(r.grad)};
}

/// Flattened log-domain hyperparameters, view-major.
inline Vector pack_hyperparams(const std::vector<ViewHyperparams>& hps) {
  Vector v(kHyperCount * static_cast<Index>(hps.size()));
  for (std::size_t i = 0; i < hps.size(); ++i) {
    v[kHyperCount * static_cast<Index>(i) + kLogSf] = hps[i].kernel.log_sf;
    v[kHyperCount * static_cast<Index>(i) + kLogL] = hps[i].kernel.log_l;
    v[kHyperCount * static_cast<Index>(i) + kLogSigma] = hps[i].log_sigma;
  }
  return v;
}

inline void unpack_hyperparams(const Vector& v, std::vector<ViewHyperparams>& hps) {
  if (v.size() != kHyperCount * static_cast<Index>(hps.size())) {
    throw UsageError("unpack_hyperparams: size mismatch");
  }
  for (std::size_t i = 0; i < hps.size(); ++i) {
    hps[i].kernel.log_sf = v[kHyperCount * static_cast<Index>(i) + kLogSf];
    hps[i].kernel.log_l = v[kHyperCount * static_cast<Index>(i) + kLogL];
    hps[i].log_sigma = v[kHyperCount * static_cast<Index>(i) + kLogSigma];
  }
}

/// Weighted combination of per-view predictive means (the pre-sign score).
inline Vector hybrid_score(const std::vector<Vector>& view_means, const TradeoffParams& tradeoff) {
  tradeoff.validate();
  if (static_cast<Index>(view_means.size()) != tradeoff.view_count()) {
    throw UsageError("hybrid_score: need one mean vector per view");
  }
  const Index p = view_means.empty() ? 0 : view_means[0].size();
  Vector combined = Vector::Zero(p);
  for (std::size_t v = 0; v < view_means.size(); ++v) {
    if (view_means[v].size() != p) throw UsageError("hybrid_score: mean vector length mismatch");
    combined += tradeoff.weights[static_cast<Index>(v)] * view_means[v];
  }
  return combined;
}

/// Hybrid prediction: sign of the weighted combination of per-view predictive
/// means; sign(0) resolves to +1.
inline Vector hybrid_predict(const std::vector<Vector>& view_means, const TradeoffParams& tradeoff) {
  Vector combined = hybrid_score(view_means, tradeoff);
  Vector labels(combined.size());
  for (Index i = 0; i < combined.size(); ++i) labels[i] = combined[i] >= 0.0 ? 1.0 : -1.0;
  return labels;
}

}  // namespace mvgp
