#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oasislab/attention.hpp"
#include "oasislab/depth_router.hpp"
#include "oasislab/normalizers.hpp"
#include "oasislab/rng.hpp"
#include "oasislab/tensor.hpp"

namespace oasis {

struct ModelConfig {
  std::int64_t vocab = 64;
  std::int64_t d_model = 32;
  std::int64_t n_heads = 4;
  std::int64_t n_layers = 4;
  std::int64_t mlp_ratio = 4;
  std::int64_t seq_len = 32;
  NormalizerSpec normalizer;       // token-level attention normalizer
  RouterMode router_mode = RouterMode::Vanilla;
  bool gated = false;
  NullTarget null_target = NullTarget::PreviousState;
  bool positional = true;

  void validate() const;
  AttentionConfig attention_config() const;
};

struct TrainConfig {
  std::int64_t steps = 300;
  std::int64_t batch = 8;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::int64_t trace_every = 100;  // 0 disables periodic captures

  void validate() const;
};

// Ordered name -> tensor list. The order fixes gradient layout, optimizer
// update order, and checkpoint layout, so training is bit-reproducible.
struct Params {
  std::vector<std::pair<std::string, Tensor>> entries;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
};

struct TokenBatch {
  std::int64_t batch = 0;
  std::int64_t t_len = 0;
  std::vector<std::int64_t> ids;  // row-major [batch][t_len]

  std::span<const std::int64_t> row(std::int64_t b) const;
};

struct ExampleTrace {
  std::vector<Tensor> hidden;         // h_1 .. h_{L+1}, each [T x d]
  std::vector<Tensor> branches;       // block outputs f_1 .. f_L
  std::vector<AttentionOutput> attn;  // one per block
  std::vector<DepthWeights> depth;    // target layers 2 .. L+1
};

struct RunTrace {
  std::vector<ExampleTrace> examples;
  std::vector<double> loss_curve;
};

// Eval-only activation transform applied at the four quantization
// boundaries: attn_in, attn_out, mlp_out, mix_out. Cuts the value out of
// the gradient graph, so never combine with loss_and_grads.
using ActHook = std::function<Tensor(const Tensor&, const std::string&)>;

std::vector<std::pair<std::string, std::vector<std::int64_t>>> param_shapes(
    const ModelConfig& cfg);
// Weights are drawn from a per-name forked stream, so the layout of other
// parameters never shifts a tensor's values.
Params init_params(const ModelConfig& cfg, const Rng& root);

struct ForwardResult {
  Tensor logits;   // [B x T x vocab]
  RunTrace trace;  // filled only when capture is set
};
ForwardResult forward(const ModelConfig& cfg, const Params& params,
                      const TokenBatch& batch, bool capture,
                      const ActHook* hook = nullptr);

struct LossGrads {
  double loss = 0.0;
  Params grads;  // same names and order as the input params
};
LossGrads loss_and_grads(const ModelConfig& cfg, const Params& params,
                         const TokenBatch& batch, RunTrace* trace = nullptr);

double mean_loss(const ModelConfig& cfg, const Params& params,
                 const TokenBatch& batch, const ActHook* hook = nullptr);
double perplexity(const ModelConfig& cfg, const Params& params,
                  const TokenBatch& batch, const ActHook* hook = nullptr);

enum class TaskKind { Copy, NoisyCopy, CharLm };
const char* task_name(TaskKind kind);
TaskKind task_from_name(const std::string& name);

// copy: BOS then a per-example 8-token content cycle; the continuation is
// predictable from earlier occurrences. noisy_copy: odd positions carry a
// 5-token content cycle, even positions are fresh uniform noise with zero
// predictive value, creating no-op pressure on the distractors. char_lm:
// first-order Markov chain with 4 successors per state at fixed
// probabilities (0.4, 0.3, 0.2, 0.1).
struct TaskDef {
  TaskKind kind = TaskKind::Copy;
  std::vector<std::int64_t> markov_next;  // [vocab x 4], char_lm only
};
TaskDef make_task(TaskKind kind, const ModelConfig& cfg, Rng rng);
TokenBatch sample_batch(const TaskDef& task, const ModelConfig& cfg,
                        std::int64_t batch, Rng& rng);

struct TrainResult {
  Params params;
  std::vector<double> loss_curve;
  std::vector<RunTrace> traces;  // every trace_every steps plus the last step
  bool diverged = false;
  std::string message;
};
// Adam with global-norm clipping; fixed-order updates from seeded forked
// streams make the result bit-reproducible. Divergence (loss > 10x initial
// for 50 consecutive steps) stops training and reports instead of running on.
// start overrides the seeded initialization (it must match param_shapes).
TrainResult train(const ModelConfig& cfg, const TrainConfig& tcfg,
                  TaskKind task, const Params* start = nullptr);

}  // namespace oasis
