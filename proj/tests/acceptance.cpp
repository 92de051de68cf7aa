// Acceptance gate: one pass/fail line per criterion, tolerances pinned
// here. Exit status 0 iff every criterion passes.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "oasislab/depth_router.hpp"
#include "oasislab/error.hpp"
#include "oasislab/experiment.hpp"
#include "oasislab/metrics.hpp"
#include "oasislab/model.hpp"
#include "oasislab/normalizers.hpp"
#include "oasislab/quantizer.hpp"
#include "oasislab/rng.hpp"
#include "oasislab/tensor.hpp"
#include "oasislab/theory.hpp"
#include "reference/reference.hpp"

namespace fs = std::filesystem;
using namespace oasis;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, ...) {
  va_list args;
  va_start(args, f);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

NormalizerSpec spec_of(NormKind k) {
  NormalizerSpec s;
  s.kind = k;
  return s;
}

std::vector<double> random_logits(Rng& rng, std::size_t n, double lo,
                                  double hi) {
  std::vector<double> z(n);
  for (auto& v : z) v = lo + (hi - lo) * rng.next_double();
  return z;
}

// --- criterion 1: normalizer axioms --------------------------------------

Outcome normalizer_axioms() {
  constexpr double kSumTol = 1e-12;    // simplex sum / Softmax1 completion
  constexpr double kShiftTol = 1e-9;   // shift invariance / covariance
  constexpr int kVectors = 10000;
  const NormKind simplex[] = {NormKind::Softmax, NormKind::Sparsemax,
                              NormKind::Entmax15};
  Rng rng(2026);
  double worst_sum = 0, worst_comp = 0, worst_shift = 0, worst_cov = 0;
  for (int i = 0; i < kVectors; ++i) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.next_below(16));
    const std::vector<double> z = random_logits(rng, n, -30, 30);
    std::vector<std::uint8_t> mask(n);
    for (auto& m : mask) m = rng.next_double() < 0.25 ? 1 : 0;
    const bool all_masked =
        std::all_of(mask.begin(), mask.end(), [](auto m) { return m == 1; });
    const double c = -50 + 100 * rng.next_double();
    std::vector<double> zc = z;
    for (double& v : zc) v += c;

    for (NormKind k : simplex) {
      const NormalizerSpec spec = spec_of(k);
      const NormalizedWeights w = normalize(spec, z, mask);
      if (w.null_mass != 0.0)
        return {false, fmt("%s produced null mass", norm_kind_name(k))};
      if (w.fully_masked != all_masked)
        return {false, fmt("%s fully_masked flag wrong", norm_kind_name(k))};
      if (all_masked) continue;
      double s = 0;
      for (double p : w.probs) s += p;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      const NormalizedWeights wc = normalize(spec, zc, mask);
      for (std::size_t j = 0; j < n; ++j)
        worst_shift = std::max(worst_shift, std::abs(wc.probs[j] - w.probs[j]));
    }

    const NormalizerSpec s1 = spec_of(NormKind::Softmax1);
    const NormalizedWeights w1 = normalize(s1, z, mask);
    double s = 0;
    for (double p : w1.probs) s += p;
    worst_comp = std::max(worst_comp, std::abs(s + w1.null_mass - 1.0));
    if (!all_masked && !(w1.null_mass > 0.0))
      return {false, "softmax1 null mass not positive"};
    double S = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (!mask[j]) S += std::exp(z[j]);
    const double q = S * std::exp(c);
    const double target = q / (1.0 + q);
    const NormalizedWeights w1c = normalize(s1, zc, mask);
    double sc = 0;
    for (double p : w1c.probs) sc += p;
    worst_cov = std::max(worst_cov, std::abs(sc - target));
  }
  const bool ok = worst_sum <= kSumTol && worst_comp <= kSumTol &&
                  worst_shift <= kShiftTol && worst_cov <= kShiftTol;
  return {ok, fmt("%d vectors; sum %.2e<=%.0e, completion %.2e<=%.0e, "
                  "shift %.2e<=%.0e, covariance %.2e<=%.0e",
                  kVectors, worst_sum, kSumTol, worst_comp, kSumTol,
                  worst_shift, kShiftTol, worst_cov, kShiftTol)};
}

// --- criterion 2: jacobian fidelity ---------------------------------------

// distance of z from the nearest kink of the piecewise map; finite
// differences are only trusted away from kinks
double kink_margin(const NormalizerSpec& spec, std::span<const double> z) {
  const NormalizedWeights w = normalize(spec, z);
  switch (spec.kind) {
    case NormKind::Softmax:
    case NormKind::Softmax1:
      return kInf;
    case NormKind::ClippedSoftmax: {
      const NormalizedWeights s = normalize(spec_of(NormKind::Softmax), z);
      double m = kInf;
      for (double p : s.probs) {
        const double y = (spec.zeta - spec.gamma) * p + spec.gamma;
        m = std::min(m, std::min(std::abs(y), std::abs(y - 1.0)));
      }
      return m;
    }
    case NormKind::Sparsemax: {
      double shift = -kInf;
      for (double v : z) shift = std::max(shift, v);
      double tau = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        if (w.probs[i] > 0.0) {
          tau = z[i] - shift - w.probs[i];
          break;
        }
      }
      double m = kInf;
      for (std::size_t i = 0; i < z.size(); ++i)
        m = std::min(m, std::abs(z[i] - shift - tau));
      return m;
    }
    case NormKind::Entmax15: {
      double shift = -kInf;
      for (double v : z) shift = std::max(shift, v);
      double tau = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        if (w.probs[i] > 0.0) {
          tau = (z[i] - shift) / 2.0 - std::sqrt(w.probs[i]);
          break;
        }
      }
      double m = kInf;
      for (std::size_t i = 0; i < z.size(); ++i)
        m = std::min(m, std::abs((z[i] - shift) / 2.0 - tau));
      return m;
    }
  }
  return 0.0;
}

Outcome jacobian_fidelity() {
  constexpr double kH = 1e-5;
  constexpr int kPoints = 100;
  const NormKind kinds[] = {NormKind::Softmax, NormKind::Softmax1,
                            NormKind::ClippedSoftmax, NormKind::Sparsemax,
                            NormKind::Entmax15};
  Rng rng(73);
  double worst_ratio = 0;  // max entry error / tolerance
  for (NormKind k : kinds) {
    const NormalizerSpec spec = spec_of(k);
    int done = 0, attempts = 0;
    while (done < kPoints) {
      if (++attempts > 100 * kPoints)
        return {false, fmt("%s: too few points away from kinks",
                           norm_kind_name(k))};
      const std::size_t n = 2 + static_cast<std::size_t>(rng.next_below(7));
      const std::vector<double> z = random_logits(rng, n, -5, 5);
      if (kink_margin(spec, z) < 1e-3) continue;
      ++done;
      auto f = [&spec](std::span<const double> x) {
        return normalize(spec, x).probs;
      };
      const Tensor analytic = jacobian(spec, z);
      const Tensor fd = refimpl::fd_jacobian(f, z, kH);
      double max_abs = 0;
      for (std::int64_t i = 0; i < analytic.numel(); ++i)
        max_abs = std::max(max_abs, std::abs(analytic[i]));
      // relative error <= 1e-6 against the largest Jacobian entry, with a
      // 1e-3 floor so all-zero rows do not demand exact agreement
      const double tol = 1e-6 * std::max(max_abs, 1e-3);
      for (std::int64_t i = 0; i < analytic.numel(); ++i)
        worst_ratio =
            std::max(worst_ratio, std::abs(analytic[i] - fd[i]) / tol);
    }
  }
  return {worst_ratio <= 1.0,
          fmt("%d points x 5 kinds, h=%.0e; worst err %.3f of tol "
              "1e-6*max(|J|,1e-3)",
              kPoints, kH, worst_ratio)};
}

// --- criterion 3: model gradient fidelity ---------------------------------

Outcome model_gradients() {
  constexpr double kH = 1e-4;
  constexpr double kRelTol = 1e-5;
  constexpr int kCoords = 100;
  ModelConfig base;
  base.vocab = 11;
  base.d_model = 8;
  base.n_heads = 2;
  base.n_layers = 2;
  base.mlp_ratio = 2;
  base.seq_len = 4;

  double worst_rel = 0;
  int configs = 0;
  for (NormKind kind : {NormKind::Softmax, NormKind::Softmax1})
    for (RouterMode mode :
         {RouterMode::Vanilla, RouterMode::AoS, RouterMode::OASIS})
      for (bool gated : {false, true}) {
        ++configs;
        ModelConfig cfg = base;
        cfg.normalizer.kind = kind;
        cfg.router_mode = mode;
        cfg.gated = gated;
        Rng root(17);
        Params p = init_params(cfg, root);
        TokenBatch b;
        b.batch = 2;
        b.t_len = 4;
        b.ids = {0, 3, 5, 7, 0, 2, 2, 9};
        const LossGrads lg = loss_and_grads(cfg, p, b);

        std::int64_t total = 0;
        double scale = 1e-3;  // floor keeps the tolerance meaningful if a
                              // config's gradient field is near-zero
        for (const auto& [name, t] : lg.grads.entries) {
          total += t.numel();
          for (std::int64_t i = 0; i < t.numel(); ++i)
            scale = std::max(scale, std::abs(t[i]));
        }
        Rng pick = root.fork("coords");
        for (int trial = 0; trial < kCoords; ++trial) {
          std::int64_t flat = pick.next_below(total);
          std::size_t entry = 0;
          while (flat >= p.entries[entry].second.numel()) {
            flat -= p.entries[entry].second.numel();
            ++entry;
          }
          Params pp = p, pm = p;
          pp.entries[entry].second[flat] += kH;
          pm.entries[entry].second[flat] -= kH;
          const double fd =
              (mean_loss(cfg, pp, b) - mean_loss(cfg, pm, b)) / (2 * kH);
          const double an = lg.grads.entries[entry].second[flat];
          // error relative to the gradient's overall scale: per-coordinate
          // ratios blow up on tiny entries where h^2 truncation dominates
          worst_rel = std::max(worst_rel, std::abs(fd - an) / scale);
        }
      }
  return {worst_rel <= kRelTol,
          fmt("%d coords x %d configs, h=%.0e; worst rel %.2e<=%.0e", kCoords,
              configs, kH, worst_rel, kRelTol)};
}

// --- criterion 4: theorem suites ------------------------------------------

Outcome theorem_suites() {
  constexpr std::int64_t kN = 10000;
  constexpr std::uint64_t kSeed = 1;
  const TheorySuite suites[] = {TheorySuite::Lemma1, TheorySuite::Thm2,
                                TheorySuite::Lemma2, TheorySuite::Thm3,
                                TheorySuite::Proposition};
  std::int64_t violations = 0;
  std::string inconclusive;
  for (TheorySuite s : suites) {
    const SuiteResult r = run_suite(s, kN, kSeed);
    violations += r.report.violations;
    inconclusive += fmt(" %s=%lld", theory_suite_name(s),
                        static_cast<long long>(r.report.inconclusive));
  }
  return {violations == 0,
          fmt("n=%lld seed=%llu; violations %lld; inconclusive%s",
              static_cast<long long>(kN),
              static_cast<unsigned long long>(kSeed),
              static_cast<long long>(violations), inconclusive.c_str())};
}

// --- criterion 5: OASIS degeneracy ----------------------------------------

Outcome oasis_degeneracy() {
  constexpr double kFrozenBeta = -60.0;  // softplus(-60) ~ 9e-27
  constexpr double kLogitTol = 1e-12;
  constexpr double kLossTol = 1e-9;

  ModelConfig cfg_a;
  cfg_a.normalizer.kind = NormKind::Softmax1;
  cfg_a.router_mode = RouterMode::AoS;
  ModelConfig cfg_o = cfg_a;
  cfg_o.router_mode = RouterMode::OASIS;

  TrainConfig tcfg;
  tcfg.steps = 60;
  tcfg.trace_every = 0;
  tcfg.seed = 11;

  const TrainResult res_a = train(cfg_a, tcfg, TaskKind::NoisyCopy);
  const Rng root(tcfg.seed);
  Params start = init_params(cfg_o, root.fork("init"));
  start.at("router.beta_raw")[0] = kFrozenBeta;
  const TrainResult res_o = train(cfg_o, tcfg, TaskKind::NoisyCopy, &start);
  if (res_a.diverged || res_o.diverged) return {false, "training diverged"};
  if (res_a.loss_curve.size() != res_o.loss_curve.size())
    return {false, "loss curve lengths differ"};
  double worst_loss = 0;
  for (std::size_t s = 0; s < res_a.loss_curve.size(); ++s)
    worst_loss = std::max(worst_loss,
                          std::abs(res_a.loss_curve[s] - res_o.loss_curve[s]));

  // frozen-beta forward on the AoS-trained weights themselves
  Params eq = res_a.params;
  eq.entries.emplace_back("router.beta_raw", Tensor::scalar(kFrozenBeta));
  const TokenBatch b =
      eval_batch(cfg_a, TaskKind::NoisyCopy, tcfg.seed, tcfg.batch);
  const Tensor la = forward(cfg_a, res_a.params, b, false).logits;
  const Tensor lo = forward(cfg_o, eq, b, false).logits;
  double worst_logit = 0;
  for (std::int64_t i = 0; i < la.numel(); ++i)
    worst_logit = std::max(worst_logit, std::abs(la[i] - lo[i]));

  // constant psi across branches: exact zero injection, so the OASIS depth
  // weights must equal the AoS ones bit for bit in every token column
  const std::int64_t ell = 4, T = 5;
  Rng r(3);
  Tensor g({ell});
  for (std::int64_t i = 0; i < ell; ++i) g[i] = -1 + 2 * r.next_double();
  Tensor psi({ell, T});
  for (std::int64_t t = 0; t < T; ++t) {
    const double q = 0.3 * r.next_double();
    for (std::int64_t i = 0; i < ell; ++i) psi[i * T + t] = q;
  }
  BranchNullStats stats{psi, center(psi)};
  for (std::int64_t i = 0; i < stats.delta_psi.numel(); ++i)
    if (stats.delta_psi[i] != 0.0)
      return {false, "constant psi did not center to exact zeros"};
  DepthRouterState sa;
  sa.mode = RouterMode::AoS;
  sa.base_logits.resize(static_cast<std::size_t>(ell));
  sa.base_logits[static_cast<std::size_t>(ell - 1)] = g;
  DepthRouterState so = sa;
  so.mode = RouterMode::OASIS;
  so.beta_raw = -5.0;
  const DepthWeights wa = depth_weights(sa, ell, nullptr);
  const DepthWeights wo = depth_weights(so, ell, &stats);
  auto bits = [](double x) { return std::bit_cast<std::uint64_t>(x); };
  for (std::int64_t i = 0; i < ell; ++i)
    for (std::int64_t t = 0; t < T; ++t)
      if (bits(wo.alpha[i * T + t]) != bits(wa.alpha[i]))
        return {false, "constant-psi depth weights not bit-identical"};
  for (std::int64_t t = 0; t < T; ++t)
    if (bits(wo.depth_null_mass[t]) != bits(wa.depth_null_mass[0]))
      return {false, "constant-psi depth null mass not bit-identical"};

  const bool ok = worst_logit <= kLogitTol && worst_loss <= kLossTol;
  return {ok, fmt("beta_raw=%g; logits %.2e<=%.0e, loss/step %.2e<=%.0e, "
                  "constant-psi depth weights bit-identical",
                  kFrozenBeta, worst_logit, kLogitTol, worst_loss, kLossTol)};
}

// --- criteria 6-8: trained toy runs ---------------------------------------

constexpr std::int64_t kSeeds = 5;
constexpr std::int64_t kSinkToken = 0;
constexpr std::int64_t kEvalN = 256;
// At the library-default lr the task is still unlearned after 300 steps and
// every comparison below is noise; past ~2e-3 the two variants' convergence
// speeds diverge and confound the sink/norm directions. 1e-3 is the window
// where the routing mechanism itself is the dominant difference.
constexpr double kToyLr = 1e-3;

struct RunCache {
  ModelConfig cfg;
  TrainResult result;
  TokenBatch eval;
  double mean_sink = 0;  // depth-aggregated sink mass, mean over tokens
  double max_inf = 0;    // residual-stream max infinity norm
  std::vector<DepthWeights> depth;  // eval example 0
};

RunCache make_run(NormKind kind, RouterMode mode, std::uint64_t seed) {
  RunCache rc;
  rc.cfg.normalizer.kind = kind;
  rc.cfg.router_mode = mode;
  TrainConfig tcfg;
  tcfg.trace_every = 0;
  tcfg.seed = seed;
  tcfg.lr = kToyLr;
  rc.result = train(rc.cfg, tcfg, TaskKind::NoisyCopy);
  rc.eval = eval_batch(rc.cfg, TaskKind::NoisyCopy, seed, kEvalN);
  const ForwardResult fr = forward(rc.cfg, rc.result.params, rc.eval, true);
  const std::int64_t sink[] = {kSinkToken};
  double acc = 0;
  std::int64_t cnt = 0;
  for (const ExampleTrace& ex : fr.trace.examples) {
    const SinkReport rep = sink_masses(ex, sink);
    for (std::int64_t t = 0; t < rep.total.numel(); ++t) acc += rep.total[t];
    cnt += rep.total.numel();
  }
  rc.mean_sink = acc / static_cast<double>(cnt);
  rc.max_inf = outlier_stats(fr.trace, StatTensors::ResidualStream).max_inf_norm;
  rc.depth = fr.trace.examples.front().depth;
  return rc;
}

struct Matrix {
  std::vector<RunCache> vanilla;  // softmax / Vanilla, seeds 0..4
  std::vector<RunCache> aos;      // softmax1 / AoS
  std::vector<RunCache> oasis;    // softmax1 / OASIS (criterion 8)
};

Outcome directional_reproduction(Matrix& m) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    m.vanilla.push_back(make_run(NormKind::Softmax, RouterMode::Vanilla, s));
    m.aos.push_back(make_run(NormKind::Softmax1, RouterMode::AoS, s));
  }
  int sink_wins = 0, inf_wins = 0;
  double sink_a = 0, sink_v = 0, inf_a = 0, inf_v = 0;
  for (std::int64_t s = 0; s < kSeeds; ++s) {
    if (m.vanilla[s].result.diverged || m.aos[s].result.diverged)
      return {false, fmt("seed %lld diverged", static_cast<long long>(s))};
    sink_wins += m.aos[s].mean_sink < m.vanilla[s].mean_sink;
    inf_wins += m.aos[s].max_inf < m.vanilla[s].max_inf;
    sink_a += m.aos[s].mean_sink / kSeeds;
    sink_v += m.vanilla[s].mean_sink / kSeeds;
    inf_a += m.aos[s].max_inf / kSeeds;
    inf_v += m.vanilla[s].max_inf / kSeeds;
  }
  return {sink_wins >= 4 && inf_wins >= 4,
          fmt("noisy_copy, 300 steps, %lld seeds; softmax1/aos wins: sink "
              "mass %d/%lld (mean %.3f vs %.3f), inf-norm %d/%lld (mean "
              "%.2f vs %.2f); need >=4",
              static_cast<long long>(kSeeds), sink_wins,
              static_cast<long long>(kSeeds), sink_a, sink_v, inf_wins,
              static_cast<long long>(kSeeds), inf_a, inf_v)};
}

Outcome quant_robustness(const Matrix& m) {
  if (m.aos.size() != kSeeds) return {false, "criterion 6 runs unavailable"};
  QuantSpec w8, w4;
  w4.weight_bits = 4;
  w4.act_bits = 4;
  int wins8 = 0, wins4 = 0;
  double r8a = 0, r8v = 0, r4a = 0, r4v = 0;
  for (std::int64_t s = 0; s < kSeeds; ++s) {
    const RunCache& a = m.aos[s];
    const RunCache& v = m.vanilla[s];
    const QuantEval a8 = eval_quantized(a.cfg, a.result.params, w8, a.eval);
    const QuantEval v8 = eval_quantized(v.cfg, v.result.params, w8, v.eval);
    const QuantEval a4 = eval_quantized(a.cfg, a.result.params, w4, a.eval);
    const QuantEval v4 = eval_quantized(v.cfg, v.result.params, w4, v.eval);
    wins8 += a8.degradation_ratio < v8.degradation_ratio;
    wins4 += a4.degradation_ratio < v4.degradation_ratio;
    r8a += a8.degradation_ratio / kSeeds;
    r8v += v8.degradation_ratio / kSeeds;
    r4a += a4.degradation_ratio / kSeeds;
    r4v += v4.degradation_ratio / kSeeds;
  }
  return {wins8 >= 4 && wins4 >= 4,
          fmt("RTN ratio wins for softmax1/aos: w8a8 %d/%lld (mean %.4f vs "
              "%.4f), w4a4 %d/%lld (mean %.4f vs %.4f); need >=4",
              wins8, static_cast<long long>(kSeeds), r8a, r8v, wins4,
              static_cast<long long>(kSeeds), r4a, r4v)};
}

Outcome oasis_vs_aos(Matrix& m) {
  constexpr double kAlphaTol = 1e-6;
  if (m.aos.size() != kSeeds) return {false, "criterion 6 runs unavailable"};
  for (std::uint64_t s = 0; s < kSeeds; ++s)
    m.oasis.push_back(make_run(NormKind::Softmax1, RouterMode::OASIS, s));
  double min_over_seeds = kInf;
  for (std::int64_t s = 0; s < kSeeds; ++s) {
    const RunCache& o = m.oasis[s];
    const double loss = o.result.loss_curve.back();
    if (o.result.diverged || !std::isfinite(loss))
      return {false, fmt("seed %lld: non-finite loss or divergence",
                         static_cast<long long>(s))};
    double max_diff = 0;  // over target layers, branches, tokens
    for (std::size_t k = 0; k < o.depth.size(); ++k) {
      const Tensor& ao = o.depth[k].alpha;          // [ell x T]
      const Tensor& aa = m.aos[s].depth[k].alpha;   // [ell]
      const std::int64_t ell = aa.numel();
      const std::int64_t T = ao.numel() / ell;
      for (std::int64_t i = 0; i < ell; ++i)
        for (std::int64_t t = 0; t < T; ++t)
          max_diff = std::max(max_diff, std::abs(ao[i * T + t] - aa[i]));
    }
    min_over_seeds = std::min(min_over_seeds, max_diff);
  }
  return {min_over_seeds > kAlphaTol,
          fmt("beta_raw init -5; finite loss on %lld/%lld seeds; "
              "min over seeds of max|alpha_oasis-alpha_aos| %.2e>%.0e",
              static_cast<long long>(kSeeds), static_cast<long long>(kSeeds),
              min_over_seeds, kAlphaTol)};
}

// --- criterion 9: determinism and idempotence ------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    m[fs::relative(e.path(), root).string()] = ss.str();
  }
  return m;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "oasislab-acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path conf = root / "exp.conf";
  {
    std::ofstream f(conf);
    f << "[model]\nvocab = 16\nd_model = 8\nn_heads = 2\nn_layers = 2\n"
         "mlp_ratio = 2\nseq_len = 8\nnormalizer = softmax1\n"
         "router_mode = aos\n"
         "[train]\ntask = noisy_copy\nsteps = 5\nbatch = 4\ntrace_every = 0\n"
         "[run]\nseeds = 3\n";
  }
  CliOptions opt;
  opt.config_path = conf.string();
  opt.out_dir = (root / "out").string();
  std::ostringstream sink;

  struct Step {
    const char* name;
    std::function<int()> run;
  };
  const Step steps[] = {
      {"train", [&] { return cmd_train(opt, sink, sink); }},
      {"analyze", [&] { return cmd_analyze(opt, "", sink, sink); }},
      {"theory", [&] { return cmd_theory(opt, "all", 25, sink, sink); }},
      {"quant", [&] { return cmd_quant(opt, "", sink, sink); }},
  };
  std::size_t files = 0;
  for (const Step& s : steps) {
    if (s.run() != 0) return {false, fmt("%s failed on first run", s.name)};
    const auto first = tree_bytes(root / "out");
    if (s.run() != 0) return {false, fmt("%s failed on rerun", s.name)};
    if (tree_bytes(root / "out") != first)
      return {false, fmt("%s artifacts changed across reruns", s.name)};
    files = first.size();
  }
  fs::remove_all(root);
  return {true, fmt("train/analyze/theory/quant reruns byte-identical "
                    "(%zu files)",
                    files)};
}

}  // namespace

int main() {
  unsetenv("OASIS_LAB_OUT");
  Matrix matrix;
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {1, "normalizer axioms", normalizer_axioms},
      {2, "jacobian fidelity", jacobian_fidelity},
      {3, "model gradient fidelity", model_gradients},
      {4, "theorem suites", theorem_suites},
      {5, "oasis degeneracy", oasis_degeneracy},
      {6, "directional reproduction",
       [&] { return directional_reproduction(matrix); }},
      {7, "quantization robustness", [&] { return quant_robustness(matrix); }},
      {8, "oasis vs aos", [&] { return oasis_vs_aos(matrix); }},
      {9, "determinism", determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt("exception: %s", e.what())};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    failed += !o.ok;
    std::printf("criterion %d [%s]: %s (%s; %.1fs)\n", c.id, c.name,
                o.ok ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/9 criteria passed\n", 9 - failed);
  return failed == 0 ? 0 : 1;
}
