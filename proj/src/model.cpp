#include "oasislab/model.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

#include "oasislab/kernels.hpp"
#include "oasislab/tape.hpp"

namespace oasis {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kBetaRawInit = -5.0;
constexpr double kDivergeFactor = 10.0;
constexpr int kDivergeStreak = 50;
}  // namespace

void ModelConfig::validate() const {
  require(vocab > 0 && d_model > 0 && n_heads > 0 && n_layers > 0 &&
              mlp_ratio > 0 && seq_len > 0,
          ErrorKind::Config, "model config: extents must be positive");
  require(d_model % n_heads == 0, ErrorKind::Config,
          "model config: d_model must be divisible by n_heads");
  require(seq_len >= 2, ErrorKind::Config,
          "model config: next-token loss needs seq_len >= 2");
  normalizer.validate();
}

AttentionConfig ModelConfig::attention_config() const {
  AttentionConfig a;
  a.d_model = d_model;
  a.n_heads = n_heads;
  a.normalizer = normalizer;
  a.gated = gated;
  return a;
}

void TrainConfig::validate() const {
  require(steps >= 0, ErrorKind::Config, "train config: steps must be >= 0");
  require(batch > 0, ErrorKind::Config, "train config: batch must be positive");
  require(lr > 0.0, ErrorKind::Config, "train config: lr must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          ErrorKind::Config, "train config: betas must lie in [0,1)");
  require(eps > 0.0, ErrorKind::Config, "train config: eps must be positive");
  require(grad_clip >= 0.0, ErrorKind::Config,
          "train config: grad_clip must be >= 0");
  require(trace_every >= 0, ErrorKind::Config,
          "train config: trace_every must be >= 0");
}

Tensor& Params::at(const std::string& name) {
  for (auto& [n, t] : entries)
    if (n == name) return t;
  raise(ErrorKind::Parameter, "params: unknown name " + name);
}

const Tensor& Params::at(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return t;
  raise(ErrorKind::Parameter, "params: unknown name " + name);
}

bool Params::has(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return true;
  return false;
}

std::span<const std::int64_t> TokenBatch::row(std::int64_t b) const {
  require(b >= 0 && b < batch, ErrorKind::Parameter, "token batch: bad row");
  return {ids.data() + b * t_len, static_cast<std::size_t>(t_len)};
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> param_shapes(
    const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.d_model;
  const std::int64_t hid = cfg.mlp_ratio * d;
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  out.emplace_back("embed", std::vector<std::int64_t>{cfg.vocab, d});
  if (cfg.positional)
    out.emplace_back("pos", std::vector<std::int64_t>{cfg.seq_len, d});
  for (std::int64_t l = 1; l <= cfg.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    out.emplace_back(p + "attn_gain", std::vector<std::int64_t>{d});
    for (const char* w : {"wq", "wk", "wv", "wo"})
      out.emplace_back(p + w, std::vector<std::int64_t>{d, d});
    if (cfg.gated) {
      out.emplace_back(p + "wg", std::vector<std::int64_t>{d, d});
      out.emplace_back(p + "bg", std::vector<std::int64_t>{d});
    }
    out.emplace_back(p + "w1", std::vector<std::int64_t>{d, hid});
    out.emplace_back(p + "b1", std::vector<std::int64_t>{hid});
    out.emplace_back(p + "w2", std::vector<std::int64_t>{hid, d});
    out.emplace_back(p + "b2", std::vector<std::int64_t>{d});
  }
  out.emplace_back("final_gain", std::vector<std::int64_t>{d});
  out.emplace_back("unembed", std::vector<std::int64_t>{d, cfg.vocab});
  for (std::int64_t ell = 2; ell <= cfg.n_layers + 1; ++ell)
    out.emplace_back("router.g" + std::to_string(ell),
                     std::vector<std::int64_t>{ell});
  if (cfg.router_mode == RouterMode::OASIS)
    out.emplace_back("router.beta_raw", std::vector<std::int64_t>{1});
  return out;
}

Params init_params(const ModelConfig& cfg, const Rng& root) {
  Params p;
  for (auto& [name, shape] : param_shapes(cfg)) {
    Tensor t(shape);
    if (name.ends_with("attn_gain") || name == "final_gain") {
      for (double& x : t.flat()) x = 1.0;
    } else if (name == "router.beta_raw") {
      t[0] = kBetaRawInit;
    } else if (name.ends_with(".b1") || name.ends_with(".b2") ||
               name.ends_with(".bg") || name.starts_with("router.g")) {
      // zeros: uniform initial depth mixture, centred gates
    } else {
      Rng r = root.fork(name);
      t = sample_gaussian(r, shape, 0.0, kInitStd);
    }
    p.entries.emplace_back(name, std::move(t));
  }
  return p;
}

namespace {

struct GraphCtx {
  Tape& tape;
  const ModelConfig& cfg;
  std::unordered_map<std::string, Var> pvars;
  const ActHook* hook = nullptr;

  Var p(const std::string& name) const {
    auto it = pvars.find(name);
    require(it != pvars.end(), ErrorKind::Parameter,
            "model: missing parameter " + name);
    return it->second;
  }
  Var boundary(Var v, const char* name) const {
    if (!hook || !*hook) return v;
    return tape.leaf((*hook)(tape.val(v), name), false);
  }
};

Var build_example(GraphCtx& ctx, std::span<const std::int64_t> ids,
                  Var* logits_out, ExampleTrace* tr) {
  Tape& t = ctx.tape;
  const ModelConfig& cfg = ctx.cfg;
  const std::int64_t T = static_cast<std::int64_t>(ids.size());
  const AttentionConfig acfg = cfg.attention_config();

  Var x = t.embed_rows(ctx.p("embed"), ids);
  if (cfg.positional) x = t.add(x, ctx.p("pos"));
  Var h = x;
  if (tr) tr->hidden.push_back(t.val(h));

  NormalizerSpec router_spec;
  router_spec.kind = cfg.router_mode == RouterMode::Vanilla
                         ? NormKind::Softmax
                         : NormKind::Softmax1;
  const bool oasis = cfg.router_mode == RouterMode::OASIS;

  Var beta;
  Var zero_psi;
  if (oasis) {
    beta = t.softplus_scalar(ctx.p("router.beta_raw"));
    zero_psi = t.leaf(Tensor({T}), false);  // embedding branch: no null evidence
  }

  std::vector<Var> branches = {h};  // u_0 = h_1
  std::vector<Var> psis;

  for (std::int64_t l = 1; l <= cfg.n_layers; ++l) {
    const std::string pre = "l" + std::to_string(l) + ".";
    Var n = t.rmsnorm(h, ctx.p(pre + "attn_gain"));
    n = ctx.boundary(n, "attn_in");
    Tape::AttendOut att =
        cfg.gated
            ? t.attend_op(acfg, n, ctx.p(pre + "wq"), ctx.p(pre + "wk"),
                          ctx.p(pre + "wv"), ctx.p(pre + "wo"),
                          ctx.p(pre + "wg"), ctx.p(pre + "bg"))
            : t.attend_op(acfg, n, ctx.p(pre + "wq"), ctx.p(pre + "wk"),
                          ctx.p(pre + "wv"), ctx.p(pre + "wo"));
    Var actx = ctx.boundary(att.context, "attn_out");
    Var m = t.gelu(
        t.add_row_broadcast(t.matmul(actx, ctx.p(pre + "w1")), ctx.p(pre + "b1")));
    Var f = t.add_row_broadcast(t.matmul(m, ctx.p(pre + "w2")), ctx.p(pre + "b2"));
    f = ctx.boundary(f, "mlp_out");
    require(t.val(f).all_finite(), ErrorKind::Numeric,
            "model: non-finite block output at layer " + std::to_string(l));
    branches.push_back(f);
    if (oasis) psis.push_back(t.mean_axis0(att.null));

    const std::int64_t ell = l + 1;
    Var z = t.broadcast_cols(ctx.p("router.g" + std::to_string(ell)), T);
    if (oasis) {
      std::vector<Var> rows = {zero_psi};
      rows.insert(rows.end(), psis.begin(), psis.end());
      z = t.sub(z, t.scalar_mul(beta, t.center_rows(t.stack_rows(rows))));
    }
    Tape::NormColsOut nc = t.normalize_cols(router_spec, z);
    Var prev = cfg.null_target == NullTarget::PreviousState ? h : Var{-1, 0};
    Var hn = t.mix_op(nc.probs, nc.null_mass, branches, prev);
    hn = ctx.boundary(hn, "mix_out");
    require(t.val(hn).all_finite(), ErrorKind::Numeric,
            "model: non-finite hidden state at layer " + std::to_string(ell));
    if (tr) {
      tr->hidden.push_back(t.val(hn));
      tr->branches.push_back(t.val(f));
      AttentionOutput ao;
      ao.context = t.val(att.context);
      ao.null_mass = t.val(att.null);
      ao.weights = t.val(att.weights);
      tr->attn.push_back(std::move(ao));
      DepthWeights dw;
      dw.alpha = t.val(nc.probs);
      dw.depth_null_mass = t.val(nc.null_mass);
      tr->depth.push_back(std::move(dw));
    }
    h = hn;
  }

  Var logits = t.matmul(t.rmsnorm(h, ctx.p("final_gain")), ctx.p("unembed"));
  if (logits_out) *logits_out = logits;
  return t.cross_entropy(logits, ids);
}

Var build_batch(GraphCtx& ctx, const TokenBatch& batch,
                std::vector<Var>* logits_out, RunTrace* trace) {
  require(batch.batch > 0, ErrorKind::Input, "model: empty batch");
  require(batch.t_len == ctx.cfg.seq_len, ErrorKind::Dimension,
          "model: batch length must equal seq_len");
  require(static_cast<std::int64_t>(batch.ids.size()) ==
              batch.batch * batch.t_len,
          ErrorKind::Dimension, "model: ragged token batch");
  std::vector<Var> losses;
  losses.reserve(static_cast<std::size_t>(batch.batch));
  for (std::int64_t b = 0; b < batch.batch; ++b) {
    ExampleTrace et;
    Var logits;
    Var loss = build_example(ctx, batch.row(b), logits_out ? &logits : nullptr,
                             trace ? &et : nullptr);
    if (logits_out) logits_out->push_back(logits);
    if (trace) trace->examples.push_back(std::move(et));
    losses.push_back(loss);
  }
  return ctx.tape.mean_scalars(losses);
}

GraphCtx make_ctx(Tape& tape, const ModelConfig& cfg, const Params& params,
                  bool needs_grad, const ActHook* hook) {
  cfg.validate();
  GraphCtx ctx{tape, cfg, {}, hook};
  for (const auto& [name, value] : params.entries)
    ctx.pvars.emplace(name, tape.leaf(value, needs_grad));
  return ctx;
}

}  // namespace

ForwardResult forward(const ModelConfig& cfg, const Params& params,
                      const TokenBatch& batch, bool capture,
                      const ActHook* hook) {
  Tape tape;
  GraphCtx ctx = make_ctx(tape, cfg, params, false, hook);
  std::vector<Var> logit_vars;
  ForwardResult res;
  build_batch(ctx, batch, &logit_vars, capture ? &res.trace : nullptr);
  res.logits = Tensor({batch.batch, batch.t_len, cfg.vocab});
  for (std::int64_t b = 0; b < batch.batch; ++b) {
    const Tensor& lv = tape.val(logit_vars[static_cast<std::size_t>(b)]);
    for (std::int64_t r = 0; r < batch.t_len; ++r)
      for (std::int64_t c = 0; c < cfg.vocab; ++c)
        res.logits.at(b, r, c) = lv.at(r, c);
  }
  return res;
}

LossGrads loss_and_grads(const ModelConfig& cfg, const Params& params,
                         const TokenBatch& batch, RunTrace* trace) {
  Tape tape;
  GraphCtx ctx = make_ctx(tape, cfg, params, true, nullptr);
  Var loss = build_batch(ctx, batch, nullptr, trace);
  LossGrads out;
  out.loss = tape.val(loss)[0];
  require(std::isfinite(out.loss), ErrorKind::Numeric,
          "model: non-finite loss");
  tape.backward(loss);
  out.grads.entries.reserve(params.entries.size());
  for (const auto& [name, value] : params.entries)
    out.grads.entries.emplace_back(name, tape.grad(ctx.p(name)));
  return out;
}

double mean_loss(const ModelConfig& cfg, const Params& params,
                 const TokenBatch& batch, const ActHook* hook) {
  Tape tape;
  GraphCtx ctx = make_ctx(tape, cfg, params, false, hook);
  Var loss = build_batch(ctx, batch, nullptr, nullptr);
  return tape.val(loss)[0];
}

double perplexity(const ModelConfig& cfg, const Params& params,
                  const TokenBatch& batch, const ActHook* hook) {
  return std::exp(mean_loss(cfg, params, batch, hook));
}

TrainResult train(const ModelConfig& cfg, const TrainConfig& tcfg,
                  TaskKind task, const Params* start) {
  cfg.validate();
  tcfg.validate();
  const Rng root(tcfg.seed);
  TrainResult res;
  if (start) {
    const auto shapes = param_shapes(cfg);
    require(start->entries.size() == shapes.size(), ErrorKind::Parameter,
            "train: start params do not match the config layout");
    for (std::size_t i = 0; i < shapes.size(); ++i)
      require(start->entries[i].first == shapes[i].first &&
                  start->entries[i].second.shape() == shapes[i].second,
              ErrorKind::Parameter,
              "train: start params mismatch at " + shapes[i].first);
    res.params = *start;
  } else {
    res.params = init_params(cfg, root.fork("init"));
  }
  const TaskDef def = make_task(task, cfg, root.fork("task-def"));

  std::vector<Tensor> m, v;
  m.reserve(res.params.entries.size());
  v.reserve(res.params.entries.size());
  for (const auto& [name, value] : res.params.entries) {
    m.emplace_back(value.shape());
    v.emplace_back(value.shape());
  }

  double initial = 0.0;
  int streak = 0;
  for (std::int64_t s = 0; s < tcfg.steps; ++s) {
    Rng brng = root.fork("batch", static_cast<std::uint64_t>(s));
    const TokenBatch batch = sample_batch(def, cfg, tcfg.batch, brng);
    const bool capture = (tcfg.trace_every > 0 && s % tcfg.trace_every == 0) ||
                         s == tcfg.steps - 1;
    RunTrace tr;
    const LossGrads lg =
        loss_and_grads(cfg, res.params, batch, capture ? &tr : nullptr);
    res.loss_curve.push_back(lg.loss);
    if (s == 0) initial = lg.loss;
    if (capture) {
      tr.loss_curve = res.loss_curve;
      res.traces.push_back(std::move(tr));
    }

    streak = lg.loss > kDivergeFactor * initial ? streak + 1 : 0;
    if (streak >= kDivergeStreak) {
      res.diverged = true;
      res.message = "training diverged: loss " + std::to_string(lg.loss) +
                    " stayed above 10x the initial " +
                    std::to_string(initial) + " for " +
                    std::to_string(kDivergeStreak) + " steps (stopped at step " +
                    std::to_string(s) + ")";
      return res;
    }

    double sq = 0.0;
    for (const auto& [name, g] : lg.grads.entries)
      for (double x : g.flat()) sq += x * x;
    const double norm = std::sqrt(sq);
    const double clip_scale =
        tcfg.grad_clip > 0.0 && norm > tcfg.grad_clip ? tcfg.grad_clip / norm
                                                      : 1.0;

    const double t_adam = static_cast<double>(s + 1);
    const double bc1 = 1.0 - std::pow(tcfg.beta1, t_adam);
    const double bc2 = 1.0 - std::pow(tcfg.beta2, t_adam);
    for (std::size_t i = 0; i < res.params.entries.size(); ++i) {
      Tensor& p = res.params.entries[i].second;
      const Tensor& g = lg.grads.entries[i].second;
      for (std::int64_t j = 0; j < p.numel(); ++j) {
        const double gj = g[j] * clip_scale;
        m[i][j] = tcfg.beta1 * m[i][j] + (1.0 - tcfg.beta1) * gj;
        v[i][j] = tcfg.beta2 * v[i][j] + (1.0 - tcfg.beta2) * gj * gj;
        p[j] -= tcfg.lr * (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + tcfg.eps);
      }
    }
  }
  return res;
}

}  // namespace oasis
