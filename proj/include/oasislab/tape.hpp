#pragma once

#include <functional>
#include <span>
#include <vector>

#include "oasislab/attention.hpp"
#include "oasislab/normalizers.hpp"
#include "oasislab/tensor.hpp"

namespace oasis {

// Reverse-mode tape. Values are computed eagerly; backward() replays the
// recorded nodes in reverse and accumulates gradients in fixed order, so
// gradients are as deterministic as the forward pass. One tape per
// loss-and-gradient evaluation; parameters enter as grad-tracked leaves.
class Tape {
 public:
  struct Var {
    std::int32_t node = -1;
    std::int32_t slot = 0;
    bool valid() const { return node >= 0; }
  };

  Var leaf(Tensor value, bool needs_grad = false);

  const Tensor& val(Var v) const;
  // Gradient of the backward() root with respect to v; zero tensor if the
  // node was not reached.
  const Tensor& grad(Var v) const;

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double c);
  // s is a [1] tensor: out = s[0] * a
  Var scalar_mul(Var s, Var a);
  // a[T x k] + bias[k] broadcast over rows
  Var add_row_broadcast(Var a, Var bias);
  // rows scaled to unit RMS then by gain: y[t,c] = gain[c] * x[t,c] / rms_t
  Var rmsnorm(Var x, Var gain);
  Var gelu(Var a);
  Var softplus_scalar(Var a);
  // out[t,:] = table[ids[t],:]
  Var embed_rows(Var table, std::span<const std::int64_t> ids);
  // [H x T] -> [T], mean over axis 0
  Var mean_axis0(Var a);
  // k vectors of length T stacked into [k x T]
  Var stack_rows(const std::vector<Var>& rows);
  // delta[i,t] = psi[i,t] - column mean; the centering projector is its own
  // adjoint, so backward reuses the forward map
  Var center_rows(Var psi);
  // g[l] -> [l x T] with identical columns
  Var broadcast_cols(Var g, std::int64_t t_len);

  struct AttendOut {
    Var context;  // [T x d]
    Var null;     // [H x T]
    Var weights;  // [H x T x T]; differentiable like the others
  };
  // Multi-head causal attention; forward delegates to attend(), backward is
  // the hand-derived pullback chained through normalize_vjp row by row.
  AttendOut attend_op(const AttentionConfig& cfg, Var x, Var wq, Var wk,
                      Var wv, Var wo, Var wg = Var{-1, 0},
                      Var bg = Var{-1, 0});

  struct NormColsOut {
    Var probs;      // same shape as input [l x T]
    Var null_mass;  // [T]
  };
  // Column-wise normalize of an [l x T] logit matrix.
  NormColsOut normalize_cols(const NormalizerSpec& spec, Var z);

  // out[t,:] = sum_i alpha[i,t] * branches[i][t,:] + null[t] * prev[t,:];
  // prev may be invalid when the null mass is identically zero or the null
  // target is the zero vector.
  Var mix_op(Var alpha, Var null_mass, const std::vector<Var>& branches,
             Var prev);

  // mean over positions t < T-1 of -log p(targets[t+1] | logits[t]); [1]
  Var cross_entropy(Var logits, std::span<const std::int64_t> targets);

  Var mean_scalars(const std::vector<Var>& xs);

  // [1] holding the sum of every entry of a
  Var sum_all(Var a);

  void backward(Var root);

 private:
  struct Node {
    std::vector<Var> inputs;
    std::vector<Tensor> out;
    std::vector<Tensor> grad;
    std::function<void(Tape&, std::int32_t)> back;
    bool needs_grad = false;
  };

  Var push(std::vector<Var> inputs, std::vector<Tensor> outputs,
           std::function<void(Tape&, std::int32_t)> back);
  Tensor& gref(Var v);
  bool any_needs_grad(const std::vector<Var>& vars) const;

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

using Var = Tape::Var;

}  // namespace oasis
