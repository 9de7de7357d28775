#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "mvgp/gradcheck.hpp"
#include "mvgp/objective.hpp"
#include "mvgp/rng.hpp"

using namespace mvgp;

namespace {

MultiViewDataset two_view_problem(std::uint64_t seed, Index n = 8) {
  Rng rng(seed);
  return random_problem(rng, n, {3, 2});
}

std::vector<ViewHyperparams> hps_for(std::uint64_t seed, Index views) {
  Rng rng(mix_seed(seed, 0xAB));
  return random_tame_hyperparams(rng, views);
}

}  // namespace

TEST_CASE("tradeoff validation") {
  REQUIRE_THROWS_AS(TradeoffParams::two_view(-0.1, 1.0), UsageError);
  REQUIRE_THROWS_AS(TradeoffParams::two_view(0.5, -2.0), UsageError);
  const auto t = TradeoffParams::two_view(0.3, 4.0);
  REQUIRE(t.a() == 0.3);
  REQUIRE(t.b() == 4.0);
  REQUIRE(t.weights[1] == Catch::Approx(0.7));

  TradeoffParams bad = t;
  bad.couplings(0, 1) = 5.0;  // asymmetric
  REQUIRE_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("eval: decoupled objective reduces to weighted per-view likelihoods") {
  const auto data = two_view_problem(1);
  const auto hps = hps_for(1, 2);

  SECTION("b = 0, a = 1 equals view 1's nll") {
    ObjectiveState state{hps, TradeoffParams::two_view(1.0, 0.0), std::nullopt};
    const double lhs = eval(state, data);
    const double rhs = nll(hps[0], data.views[0], data.labels);
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
  }

  SECTION("b = 0, general a equals the weighted sum") {
    for (double a : {0.0, 0.25, 0.6, 1.0}) {
      ObjectiveState state{hps, TradeoffParams::two_view(a, 0.0), std::nullopt};
      const double expected = a * nll(hps[0], data.views[0], data.labels) +
                              (1.0 - a) * nll(hps[1], data.views[1], data.labels);
      REQUIRE(eval(state, data) == Catch::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("eval: identical views with identical hyperparameters have zero coupling") {
  Rng rng(3);
  Matrix x(6, 2);
  for (Index r = 0; r < 6; ++r)
    for (Index c = 0; c < 2; ++c) x(r, c) = rng.uniform(-2.0, 2.0);
  Vector y(6);
  for (Index i = 0; i < 6; ++i) y[i] = i % 2 ? 1.0 : -1.0;
  const auto data = make_dataset({x, x}, y);

  ViewHyperparams hp;
  hp.kernel.log_l = -0.3;
  const std::vector<ViewHyperparams> hps = {hp, hp};

  for (double b : {0.5, 2.0, 256.0}) {
    ObjectiveState coupled{hps, TradeoffParams::two_view(0.5, b), std::nullopt};
    ObjectiveState decoupled{hps, TradeoffParams::two_view(0.5, 0.0), std::nullopt};
    REQUIRE(std::abs(eval(coupled, data) - eval(decoupled, data)) < 1e-10);
  }
}

TEST_CASE("eval: invariant under a simultaneous row permutation") {
  const auto data = two_view_problem(4, 9);
  const auto hps = hps_for(4, 2);
  ObjectiveState state{hps, TradeoffParams::two_view(0.4, 2.0), std::nullopt};
  state.coupling_index_set = std::vector<Index>{1, 3, 4, 7};

  std::vector<Index> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(5);
  rng.shuffle(perm);
  const auto permuted = take_rows(data, perm);

  // remap the coupling set through the permutation
  std::vector<Index> mapped;
  for (std::size_t pos = 0; pos < perm.size(); ++pos) {
    for (Index t : *state.coupling_index_set) {
      if (perm[pos] == t) mapped.push_back(static_cast<Index>(pos));
    }
  }
  std::sort(mapped.begin(), mapped.end());
  ObjectiveState mapped_state = state;
  mapped_state.coupling_index_set = mapped;

  REQUIRE(std::abs(eval(state, data) - eval(mapped_state, permuted)) < 1e-10);
}

TEST_CASE("eval: coupling term is never below -1e-8") {
  for (int rep = 0; rep < 30; ++rep) {
    Rng rng(mix_seed(0xC0FF, static_cast<std::uint64_t>(rep)));
    const auto data = random_problem(rng, 4 + static_cast<Index>(rng.below(6)), {2, 3});
    const auto hps = random_tame_hyperparams(rng, 2);
    const double a = rng.uniform();
    ObjectiveState coupled{hps, TradeoffParams::two_view(a, 2.0), std::nullopt};
    ObjectiveState plain{hps, TradeoffParams::two_view(a, 0.0), std::nullopt};
    REQUIRE(eval(coupled, data) >= eval(plain, data) - 1e-8);
  }
}

TEST_CASE("eval: three views with a single active pair match the two-view value") {
  Rng rng(6);
  const auto data = random_problem(rng, 7, {2, 2, 3});
  const auto hps = random_tame_hyperparams(rng, 3);

  TradeoffParams three;
  three.weights.resize(3);
  three.weights << 0.5, 0.3, 0.2;
  three.couplings = Matrix::Zero(3, 3);
  three.couplings(0, 1) = three.couplings(1, 0) = 4.0;  // b13 = b23 = 0
  ObjectiveState state3{hps, three, std::nullopt};

  const auto data2 = make_dataset({data.views[0], data.views[1]}, data.labels);

  // the three-view weights (0.5, 0.3, 0.2) are not expressible as a two-view
  // simplex pair, so adjust the view-2 likelihood weight by hand
  const double nll3 = nll(hps[2], data.views[2], data.labels);
  ObjectiveState state2{{hps[0], hps[1]}, TradeoffParams::two_view(0.5, 4.0), std::nullopt};
  // two_view(0.5, .) has weights (0.5, 0.5); correct the view-2 weight difference
  const double adjust = (0.3 - 0.5) * nll(hps[1], data.views[1], data.labels);
  const double expected = eval(state2, data2) + adjust + 0.2 * nll3;
  REQUIRE(eval(state3, data) == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("grad: decoupled gradient equals the weighted per-view nll gradients") {
  const auto data = two_view_problem(7);
  const auto hps = hps_for(7, 2);
  ObjectiveState state{hps, TradeoffParams::two_view(0.3, 0.0), std::nullopt};
  const Vector g = grad(state, data);
  const auto g1 = nll_grad(hps[0], data.views[0], data.labels);
  const auto g2 = nll_grad(hps[1], data.views[1], data.labels);
  for (int t = 0; t < kHyperCount; ++t) {
    REQUIRE(g[t] == Catch::Approx(0.3 * g1[t]).margin(1e-14));
    REQUIRE(g[kHyperCount + t] == Catch::Approx(0.7 * g2[t]).margin(1e-14));
  }
}

TEST_CASE("grad: matches finite differences on a random two-view problem") {
  const auto data = two_view_problem(8);
  const auto hps = hps_for(8, 2);
  ObjectiveState state{hps, TradeoffParams::two_view(0.5, 2.0), std::nullopt};

  ObjectiveState probe = state;
  auto f = [&](const Vector& theta) {
    unpack_hyperparams(theta, probe.view_hps);
    return eval(probe, data);
  };
  const Vector analytic = grad(state, data);
  const Vector numeric =
      finite_difference_gradient(f, pack_hyperparams(state.view_hps), 1e-5);
  REQUIRE(max_guarded_rel_err(analytic, numeric) < 1e-5);
}

TEST_CASE("grad: symmetric problem gives coordinate-wise equal view gradients") {
  Rng rng(9);
  Matrix x(6, 3);
  for (Index r = 0; r < 6; ++r)
    for (Index c = 0; c < 3; ++c) x(r, c) = rng.uniform(-2.0, 2.0);
  Vector y(6);
  for (Index i = 0; i < 6; ++i) y[i] = i % 2 ? 1.0 : -1.0;
  const auto data = make_dataset({x, x}, y);

  ViewHyperparams hp;
  hp.kernel.log_sf = 0.2;
  hp.kernel.log_l = -0.4;
  hp.log_sigma = 0.1;
  ObjectiveState state{{hp, hp}, TradeoffParams::two_view(0.5, 8.0), std::nullopt};
  const Vector g = grad(state, data);
  for (int t = 0; t < kHyperCount; ++t) {
    REQUIRE(g[t] == Catch::Approx(g[kHyperCount + t]).margin(1e-12));
  }
}

TEST_CASE("gradcheck harness: randomized suite passes and the corrupt fixture fails") {
  GradCheckOptions opt;
  opt.seeds = 6;
  const auto report = run_gradcheck(opt);
  INFO("max fd rel err " << report.max_fd_rel_err << ", direct " << report.max_direct_rel_err);
  REQUIRE(report.pass);
  REQUIRE(report.max_fd_rel_err < 1e-5);
  REQUIRE(report.max_direct_rel_err < 1e-8);

  GradCheckOptions corrupt = opt;
  corrupt.seeds = 2;
  corrupt.corrupt = true;
  REQUIRE_FALSE(run_gradcheck(corrupt).pass);
}

TEST_CASE("direct transcription: unhalved coupling is exactly twice the corrected one") {
  const auto data = two_view_problem(10);
  const auto hps = hps_for(10, 2);
  ObjectiveState state{hps, TradeoffParams::two_view(0.3, 2.0), std::nullopt};
  ObjectiveState decoupled{hps, TradeoffParams::two_view(0.3, 0.0), std::nullopt};

  const double modular = grad(state, data)[kLogSf];
  const double modular_lik = grad(decoupled, data)[kLogSf];
  const double unhalved = direct_view1_log_sf_grad(state, data, /*halve_coupling=*/false);
  const double corrected = direct_view1_log_sf_grad(state, data, /*halve_coupling=*/true);

  REQUIRE(corrected == Catch::Approx(modular).epsilon(1e-10));
  const double coupling_part = modular - modular_lik;
  REQUIRE(unhalved - corrected == Catch::Approx(0.5 * (unhalved - modular_lik)).epsilon(1e-9));
  REQUIRE(unhalved == Catch::Approx(modular_lik + 2.0 * coupling_part).epsilon(1e-9));
}

TEST_CASE("hybrid_predict: weighting, degenerate weights and the tie-break") {
  const std::vector<Vector> means = {Vector::Constant(1, 2.0), Vector::Constant(1, -1.0)};

  REQUIRE(hybrid_predict(means, TradeoffParams::two_view(0.5, 0.0))[0] == 1.0);  // +0.5
  REQUIRE(hybrid_predict(means, TradeoffParams::two_view(1.0, 0.0))[0] == 1.0);
  REQUIRE(hybrid_predict(means, TradeoffParams::two_view(0.0, 0.0))[0] == -1.0);

  const std::vector<Vector> tied = {Vector::Constant(1, 1.0), Vector::Constant(1, -1.0)};
  REQUIRE(hybrid_predict(tied, TradeoffParams::two_view(0.5, 0.0))[0] == 1.0);  // sign(0) -> +1

  const std::vector<Vector> ragged = {Vector::Constant(2, 1.0), Vector::Constant(1, 1.0)};
  REQUIRE_THROWS_AS(hybrid_predict(ragged, TradeoffParams::two_view(0.5, 0.0)), UsageError);
}

TEST_CASE("objective state validation") {
  const auto data = two_view_problem(11);
  const auto hps = hps_for(11, 2);

  ObjectiveState state{hps, TradeoffParams::two_view(0.5, 1.0), std::vector<Index>{}};
  REQUIRE_THROWS_AS(eval(state, data), UsageError);  // empty coupling set

  state.coupling_index_set = std::vector<Index>{3, 1};  // unsorted
  REQUIRE_THROWS_AS(eval(state, data), UsageError);

  state.coupling_index_set = std::vector<Index>{1, 99};  // out of range
  REQUIRE_THROWS_AS(eval(state, data), UsageError);

  ObjectiveState wrong_k{{hps[0]}, TradeoffParams::single_view(), std::nullopt};
  REQUIRE_THROWS_AS(eval(wrong_k, data), UsageError);
}

TEST_CASE("pack/unpack hyperparameters round-trip") {
  const auto hps = hps_for(12, 3);
  const Vector packed = pack_hyperparams(hps);
  std::vector<ViewHyperparams> back(3);
  unpack_hyperparams(packed, back);
  for (int v = 0; v < 3; ++v) {
    REQUIRE(back[v].kernel.log_sf == hps[v].kernel.log_sf);
    REQUIRE(back[v].kernel.log_l == hps[v].kernel.log_l);
    REQUIRE(back[v].log_sigma == hps[v].log_sigma);
  }
}
