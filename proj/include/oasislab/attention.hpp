#pragma once

#include <iosfwd>

#include "oasislab/normalizers.hpp"
#include "oasislab/tensor.hpp"

namespace oasis {

// Multi-head causal self-attention with a pluggable row normalizer and an
// optional per-head sigmoid output gate.
struct AttentionConfig {
  std::int64_t d_model = 32;
  std::int64_t n_heads = 4;
  NormalizerSpec normalizer;
  bool gated = false;
  double scale = 0.0;  // <= 0 means the default 1/sqrt(head_dim)

  void validate() const;
  std::int64_t head_dim() const { return d_model / n_heads; }
  double effective_scale() const;
};

// All projections are [d_model x d_model]; per-head slices are consecutive
// column blocks of width head_dim. Gate params are used only when gated.
struct AttentionParams {
  Tensor wq, wk, wv, wo;
  Tensor wg;  // [d_model x d_model]
  Tensor bg;  // [d_model]
};

// weights[h,t,j] is the normalized attention of query t to key j (0 for
// j > t); null_mass[h,t] is the implicit-null weight of that row (zero
// tensor for null-free normalizer kinds).
struct AttentionOutput {
  Tensor context;    // [T x d_model]
  Tensor weights;    // [H x T x T]
  Tensor null_mass;  // [H x T]
};

AttentionOutput attend(const AttentionConfig& cfg, const Tensor& x,
                       const AttentionParams& params);

// The per-head per-query null posterior; validates entries lie in [0,1].
const Tensor& head_null_posterior(const AttentionOutput& out);

// One T x T block per head, row = query. Blocks are separated by a line
// naming the head.
void write_attention_csv(const AttentionOutput& out, std::ostream& os);

// Binary 8-bit PGM heatmap of one head, pixel = round(255 * p).
void write_attention_pgm(const AttentionOutput& out, std::int64_t head,
                         std::ostream& os);

}  // namespace oasis
