#pragma once

#include <string>
#include <vector>

#include "oasislab/tensor.hpp"

namespace oasis {

// Depth mixing over branch outputs: branch 0 is the embedding state h1,
// branch i >= 1 is the block output f_i(h_i). Three regimes:
//   Vanilla - softmax over the branch logits, no null channel
//   AoS     - Softmax1 over the branch logits, token-independent
//   OASIS   - Softmax1 over logits adjusted per token by the centered
//             attention null masses, g - softplus(beta_raw) * delta_psi
enum class RouterMode : int { Vanilla, AoS, OASIS };

const char* router_mode_name(RouterMode mode);
RouterMode router_mode_from_name(const std::string& name);

// Where the depth null mass routes: a zero vector or the previous state.
enum class NullTarget : int { Zero, PreviousState };

struct DepthRouterState {
  RouterMode mode = RouterMode::Vanilla;
  // base_logits[i] is g for target layer i+1 and has exactly i+1 entries
  // (branches 0..i); entries the model never mixes may stay empty.
  std::vector<Tensor> base_logits;
  double beta_raw = -5.0;
  NullTarget null_target = NullTarget::PreviousState;

  void validate() const;
};

struct BranchNullStats {
  Tensor psi;        // [ell x T]
  Tensor delta_psi;  // [ell x T], columns sum to zero
};

// alpha is [ell] when token-independent (Vanilla/AoS) and [ell x T] under
// OASIS; depth_null_mass is [1] respectively [T], all zeros for Vanilla.
struct DepthWeights {
  Tensor alpha;
  Tensor depth_null_mass;
};

// psi[i,t]: mean over heads of the attention null mass of branch i. Input
// covers branches 1..ell-1; row 0 (the embedding branch, which has no
// attention heads) is fixed at zero.
Tensor branch_null_stat(const std::vector<Tensor>& head_null);

// delta_psi[i,t] = psi[i,t] - mean_r psi[r,t], computed as the mean of
// pairwise differences so a constant column yields exact zeros.
Tensor center(const Tensor& psi);

// g - softplus(beta_raw) * delta_psi
Tensor inject(const Tensor& g_old, const Tensor& delta_psi, double beta_raw);

DepthWeights depth_weights(const DepthRouterState& state, std::int64_t ell,
                           const BranchNullStats* null_stats);

// h[t] = sum_i alpha[i,t] * u_i[t] + null_mass[t] * n[t] with u_0 = h1,
// u_i = branch_outputs[i-1]; n is zero or h_prev per null_target. h_prev may
// be empty when the null mass is identically zero.
Tensor mix(const DepthWeights& weights, const Tensor& h1,
           const std::vector<Tensor>& branch_outputs, const Tensor& h_prev,
           NullTarget null_target);

// CSV rows (target_layer, source_branch, token, alpha, null_mass) for one
// target layer's weights.
void write_depth_weights_csv(const DepthWeights& weights, std::int64_t ell,
                             std::int64_t T, std::ostream& os);

}  // namespace oasis
