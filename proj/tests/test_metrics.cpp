#include "oasislab/metrics.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "oasislab/kernels.hpp"
#include "oasislab/rng.hpp"

using oasis::ExampleTrace;
using oasis::PathologyScore;
using oasis::Rng;
using oasis::RunTrace;
using oasis::ScoreVariant;
using oasis::SinkReport;
using oasis::StatTensors;
using oasis::Tensor;

TEST_CASE("kurtosis") {
  SUBCASE("two-point symmetric distribution") {
    const std::vector<double> xs = {-1.0, 1.0, -1.0, 1.0};
    CHECK(oasis::kurtosis(xs) == 1.0);
  }
  SUBCASE("gaussian draws sit near 3") {
    Rng rng(71);
    std::vector<double> xs(1000000);
    for (double& x : xs) x = rng.next_gaussian();
    CHECK(std::abs(oasis::kurtosis(xs) - 3.0) <= 0.05);
  }
  SUBCASE("affine invariance") {
    Rng rng(72);
    std::vector<double> xs(500);
    for (double& x : xs) x = rng.next_gaussian();
    std::vector<double> ys(xs);
    for (double& y : ys) y = -2.5 * y + 7.0;
    CHECK(std::abs(oasis::kurtosis(xs) - oasis::kurtosis(ys)) <= 1e-9);
  }
  SUBCASE("degenerate inputs") {
    const std::vector<double> constant = {4.0, 4.0, 4.0};
    CHECK_THROWS_AS(oasis::kurtosis(constant), oasis::Error);
    const std::vector<double> single = {1.0};
    CHECK_THROWS_AS(oasis::kurtosis(single), oasis::Error);
    try {
      oasis::kurtosis(constant);
    } catch (const oasis::Error& e) {
      CHECK(e.kind() == oasis::ErrorKind::Degenerate);
    }
  }
}

namespace {

RunTrace gaussian_trace(std::int64_t examples, std::int64_t layers,
                        std::int64_t blocks, std::uint64_t seed) {
  Rng rng(seed);
  RunTrace tr;
  for (std::int64_t e = 0; e < examples; ++e) {
    ExampleTrace ex;
    for (std::int64_t l = 0; l < layers; ++l)
      ex.hidden.push_back(oasis::sample_gaussian(rng, {6, 5}, 0.0, 1.0));
    for (std::int64_t l = 0; l < blocks; ++l)
      ex.branches.push_back(oasis::sample_gaussian(rng, {6, 5}, 0.0, 1.0));
    tr.examples.push_back(std::move(ex));
  }
  return tr;
}

}  // namespace

TEST_CASE("outlier_stats") {
  SUBCASE("aggregation and scale behaviour") {
    RunTrace tr = gaussian_trace(40, 3, 2, 5);
    auto st = oasis::outlier_stats(tr, StatTensors::ResidualStream);
    REQUIRE(st.per_layer_kurtosis.size() == 3);
    for (double k : st.per_layer_kurtosis) CHECK(std::abs(k - 3.0) <= 0.3);
    double mean = (st.per_layer_kurtosis[0] + st.per_layer_kurtosis[1] +
                   st.per_layer_kurtosis[2]) /
                  3.0;
    CHECK(st.avg_kurtosis == mean);

    double expect_inf = 0.0;
    for (const auto& ex : tr.examples)
      for (const auto& h : ex.hidden)
        expect_inf = std::max(expect_inf, oasis::max_abs(h.flat()));
    CHECK(st.max_inf_norm == expect_inf);

    RunTrace scaled = tr;
    for (auto& ex : scaled.examples)
      for (auto& h : ex.hidden)
        for (double& x : h.flat()) x *= 2.0;
    auto st2 = oasis::outlier_stats(scaled, StatTensors::ResidualStream);
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(std::abs(st2.per_layer_kurtosis[l] - st.per_layer_kurtosis[l]) <=
            1e-9);
      CHECK(st2.per_layer_inf_norm[l] == 2.0 * st.per_layer_inf_norm[l]);
    }
  }
  SUBCASE("tensor selection") {
    RunTrace tr = gaussian_trace(4, 3, 2, 6);
    CHECK(oasis::outlier_stats(tr, StatTensors::ResidualStream)
              .per_layer_kurtosis.size() == 3);
    CHECK(oasis::outlier_stats(tr, StatTensors::BlockOutputs)
              .per_layer_kurtosis.size() == 2);
    CHECK(oasis::outlier_stats(tr, StatTensors::Both)
              .per_layer_kurtosis.size() == 5);
  }
  SUBCASE("single layer average equals the layer value") {
    RunTrace tr = gaussian_trace(2, 1, 0, 7);
    auto st = oasis::outlier_stats(tr, StatTensors::ResidualStream);
    CHECK(st.avg_kurtosis == st.per_layer_kurtosis[0]);
    CHECK(st.max_inf_norm == st.per_layer_inf_norm[0]);
  }
  SUBCASE("errors") {
    RunTrace empty;
    CHECK_THROWS_AS(oasis::outlier_stats(empty, StatTensors::ResidualStream),
                    oasis::Error);
    RunTrace no_blocks = gaussian_trace(2, 2, 0, 8);
    CHECK_THROWS_AS(oasis::outlier_stats(no_blocks, StatTensors::BlockOutputs),
                    oasis::Error);
  }
}

namespace {

// two blocks, one head, two tokens, hand-set attention rows and final depth
// weights; null masses zero unless set
ExampleTrace hand_trace() {
  ExampleTrace ex;
  for (int l = 0; l < 2; ++l) {
    oasis::AttentionOutput a;
    a.weights = Tensor({1, 2, 2});
    a.null_mass = Tensor({1, 2});
    a.context = Tensor({2, 2});
    ex.attn.push_back(std::move(a));
  }
  ex.attn[0].weights.at(0, 0, 0) = 1.0;
  ex.attn[0].weights.at(0, 1, 0) = 0.5;
  ex.attn[0].weights.at(0, 1, 1) = 0.5;
  ex.attn[1].weights.at(0, 0, 0) = 1.0;
  ex.attn[1].weights.at(0, 1, 0) = 0.25;
  ex.attn[1].weights.at(0, 1, 1) = 0.75;
  oasis::DepthWeights dw;
  dw.alpha = Tensor({3, 2}, {0.2, 0.4,   // branch 0 (embedding)
                             0.3, 0.3,   // branch 1
                             0.5, 0.3}); // branch 2
  dw.depth_null_mass = Tensor({2});
  ex.depth.push_back(dw);  // target layer 2 (unused by metrics)
  ex.depth.push_back(dw);  // final target layer
  return ex;
}

}  // namespace

TEST_CASE("sink_masses") {
  SUBCASE("hand instance") {
    ExampleTrace ex = hand_trace();
    const std::vector<std::int64_t> k0 = {0};
    SinkReport rep = oasis::sink_masses(ex, k0);
    CHECK(rep.sigma.at(0, 0) == 1.0);
    CHECK(rep.sigma.at(0, 1) == 0.5);
    CHECK(rep.sigma.at(1, 0) == 1.0);
    CHECK(rep.sigma.at(1, 1) == 0.25);
    // t=0: weights (0.3,0.5) -> (3/8, 5/8); both sigmas 1
    CHECK(rep.total[0] == doctest::Approx(1.0).epsilon(1e-15));
    // t=1: weights (0.3,0.3) -> (0.5, 0.5); 0.5*0.5 + 0.5*0.25
    CHECK(rep.total[1] == doctest::Approx(0.375).epsilon(1e-15));
    // vanilla-routing convexity: min sigma <= Sigma <= max sigma
    for (std::int64_t t = 0; t < 2; ++t) {
      const double lo = std::min(rep.sigma.at(0, t), rep.sigma.at(1, t));
      const double hi = std::max(rep.sigma.at(0, t), rep.sigma.at(1, t));
      CHECK(rep.total[t] >= lo - 1e-12);
      CHECK(rep.total[t] <= hi + 1e-12);
    }
  }
  SUBCASE("full sink set completes the simplex") {
    ExampleTrace ex = hand_trace();
    const std::vector<std::int64_t> all = {0, 1};
    SinkReport rep = oasis::sink_masses(ex, all);
    for (std::int64_t l = 0; l < 2; ++l)
      for (std::int64_t t = 0; t < 2; ++t)
        CHECK(std::abs(rep.sigma.at(l, t) - 1.0) <= 1e-12);

    // softmax1-style rows: sigma over all positions is 1 - mean null mass
    ExampleTrace ex1 = hand_trace();
    ex1.attn[0].weights.at(0, 1, 0) = 0.3;
    ex1.attn[0].weights.at(0, 1, 1) = 0.5;
    ex1.attn[0].null_mass.at(0, 1) = 0.2;
    SinkReport rep1 = oasis::sink_masses(ex1, all);
    CHECK(std::abs(rep1.sigma.at(0, 1) - (1.0 - 0.2)) <= 1e-12);
  }
  SUBCASE("errors") {
    ExampleTrace ex = hand_trace();
    const std::vector<std::int64_t> bad = {2};
    CHECK_THROWS_AS(oasis::sink_masses(ex, bad), oasis::Error);
    ExampleTrace empty;
    const std::vector<std::int64_t> k0 = {0};
    CHECK_THROWS_AS(oasis::sink_masses(empty, k0), oasis::Error);
  }
}

TEST_CASE("pathology_score") {
  SUBCASE("uniform row, vanilla, empty irrelevant set") {
    ExampleTrace ex = hand_trace();
    // final block row at t=1 manually uniform over 2 slots
    ex.attn[1].weights.at(0, 1, 0) = 0.5;
    ex.attn[1].weights.at(0, 1, 1) = 0.5;
    PathologyScore s = oasis::pathology_score(ex, 1, {}, 1.5, 2.0,
                                              ScoreVariant::Vanilla);
    CHECK(s.leakage == 0.0);
    CHECK(s.concentration == 0.5);
    CHECK(s.entropy_collapse == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
    CHECK(s.score ==
          doctest::Approx(1.5 * 0.5 - 2.0 * std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("one-hot row, vanilla, sink in the irrelevant set") {
    ExampleTrace ex = hand_trace();
    const std::vector<std::int64_t> n0 = {0};
    PathologyScore s =
        oasis::pathology_score(ex, 0, n0, 1.0, 1.0, ScoreVariant::Vanilla);
    CHECK(s.leakage == 1.0);
    CHECK(s.concentration == 1.0);
    CHECK(s.entropy_collapse == 0.0);
    CHECK(s.score == 2.0);
  }
  SUBCASE("attn-residual hand instance") {
    ExampleTrace ex = hand_trace();
    // equal branch weights at t=1; branch rows (0.5,0.5) and (0.25,0.75)
    const std::vector<std::int64_t> n0 = {0};
    PathologyScore s = oasis::pathology_score(ex, 1, n0, 1.0, 1.0,
                                              ScoreVariant::AttnResidual);
    CHECK(s.leakage == doctest::Approx(0.5 * 0.5 + 0.5 * 0.25).epsilon(1e-15));
    CHECK(s.concentration == doctest::Approx(0.5 * 0.75).epsilon(1e-15));
    const double h1 = std::log(2.0);
    const double h2 = -(0.25 * std::log(0.25) + 0.75 * std::log(0.75));
    const double expect_e = -std::log(2.0) - (0.5 * h1 + 0.5 * h2);
    CHECK(s.entropy_collapse == doctest::Approx(expect_e).epsilon(1e-14));
    CHECK(s.score == s.leakage + s.concentration + s.entropy_collapse);
  }
  SUBCASE("score is linear in the lambdas") {
    ExampleTrace ex = hand_trace();
    PathologyScore a =
        oasis::pathology_score(ex, 1, {}, 1.0, 1.0, ScoreVariant::Vanilla);
    PathologyScore b =
        oasis::pathology_score(ex, 1, {}, 2.0, 1.0, ScoreVariant::Vanilla);
    CHECK(b.score - a.score ==
          doctest::Approx(a.concentration).epsilon(1e-15));
  }
  SUBCASE("errors") {
    ExampleTrace empty;
    CHECK_THROWS_AS(
        oasis::pathology_score(empty, 0, {}, 1.0, 1.0, ScoreVariant::Vanilla),
        oasis::Error);
    ExampleTrace ex = hand_trace();
    CHECK_THROWS_AS(
        oasis::pathology_score(ex, 5, {}, 1.0, 1.0, ScoreVariant::Vanilla),
        oasis::Error);
    const std::vector<std::int64_t> bad = {-1};
    CHECK_THROWS_AS(
        oasis::pathology_score(ex, 0, bad, 1.0, 1.0, ScoreVariant::Vanilla),
        oasis::Error);
  }
}

TEST_CASE("metrics csv goldens") {
  oasis::OutlierStats st;
  st.per_layer_kurtosis = {3.0, 1.5};
  st.per_layer_inf_norm = {2.0, 0.25};
  st.avg_kurtosis = 2.25;
  st.max_inf_norm = 2.0;
  std::ostringstream os;
  oasis::write_outlier_csv(st, os);
  CHECK(os.str() == "layer,kurtosis,inf_norm\n0,3,2\n1,1.5,0.25\n");

  SinkReport rep;
  rep.sigma = Tensor({1, 2}, {1.0, 0.5});
  rep.total = Tensor({2}, {1.0, 0.375});
  std::ostringstream s1;
  oasis::write_sink_sigma_csv(rep, s1);
  CHECK(s1.str() == "layer,token,sigma\n1,0,1\n1,1,0.5\n");
  std::ostringstream s2;
  oasis::write_sink_total_csv(rep, s2);
  CHECK(s2.str() == "token,Sigma\n0,1\n1,0.375\n");

  PathologyScore ps;
  ps.leakage = 0.5;
  ps.concentration = 0.25;
  ps.entropy_collapse = -1.0;
  ps.score = -0.25;
  std::vector<PathologyScore> scores = {ps};
  std::ostringstream s3;
  oasis::write_pathology_csv(scores, ScoreVariant::Vanilla, s3);
  CHECK(s3.str() == "token,L,C,E,S,variant\n0,0.5,0.25,-1,-0.25,vanilla\n");
}

TEST_CASE("sink masses agree with model-captured traces") {
  oasis::ModelConfig cfg;
  cfg.vocab = 16;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 3;
  cfg.mlp_ratio = 2;
  cfg.seq_len = 8;
  cfg.router_mode = oasis::RouterMode::AoS;
  cfg.normalizer.kind = oasis::NormKind::Softmax1;
  oasis::Params p = oasis::init_params(cfg, Rng(77));
  oasis::TokenBatch b;
  b.batch = 2;
  b.t_len = 8;
  b.ids = {0, 3, 5, 7, 9, 11, 13, 15, 0, 2, 4, 6, 8, 10, 12, 14};
  auto fr = oasis::forward(cfg, p, b, true);
  REQUIRE(fr.trace.examples.size() == 2);

  std::vector<std::int64_t> all(8);
  for (std::int64_t i = 0; i < 8; ++i) all[static_cast<std::size_t>(i)] = i;
  for (const auto& ex : fr.trace.examples) {
    SinkReport rep = oasis::sink_masses(ex, all);
    for (std::int64_t l = 0; l < 3; ++l)
      for (std::int64_t t = 0; t < 8; ++t) {
        // completion identity: mass on all positions is 1 - mean head null
        double null = 0.0;
        for (std::int64_t h = 0; h < cfg.n_heads; ++h)
          null += ex.attn[static_cast<std::size_t>(l)].null_mass.at(h, t);
        null /= static_cast<double>(cfg.n_heads);
        CHECK(std::abs(rep.sigma.at(l, t) - (1.0 - null)) <= 1e-12);
      }
    const std::vector<std::int64_t> k0 = {0};
    SinkReport r0 = oasis::sink_masses(ex, k0);
    for (std::int64_t t = 0; t < 8; ++t) {
      CHECK(r0.total[t] >= 0.0);
      CHECK(r0.total[t] <= 1.0 + 1e-12);
    }
  }
}
