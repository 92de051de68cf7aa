#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>

#include "oasislab/model.hpp"
#include "oasislab/tensor.hpp"

namespace oasis {

enum class WeightGranularity { PerTensor, PerOutputChannel };

const char* granularity_name(WeightGranularity g);
WeightGranularity granularity_from_name(const std::string& name);

// Symmetric signed RTN grid: integers in [-(2^{b-1}-1), 2^{b-1}-1] scaled by
// s = max|x| / (2^{b-1}-1) per scale group.
struct QuantSpec {
  int weight_bits = 8;
  int act_bits = 8;
  WeightGranularity weight_granularity = WeightGranularity::PerTensor;
  bool symmetric = true;  // the only supported grid; kept explicit for manifests

  void validate() const;
};

// Output channels are the columns of a rank-2 tensor; PerOutputChannel
// rejects other ranks. An all-zero scale group quantizes to zero with s = 1.
Tensor fake_quant(const Tensor& x, int bits,
                  WeightGranularity granularity = WeightGranularity::PerTensor);

struct QuantEval {
  double ppl_fp = 0.0;
  double ppl_quant = 0.0;
  double degradation_ratio = 0.0;  // ppl_quant / ppl_fp
};

// Weights (every rank-2 parameter) are quantized once up front; activations
// are quantized dynamically per tensor at the four block boundaries via the
// model's eval hook.
QuantEval eval_quantized(const ModelConfig& cfg, const Params& params,
                         const QuantSpec& spec, const TokenBatch& eval_tokens);

struct QuantRow {
  std::string normalizer;
  std::string router_mode;
  std::uint64_t seed = 0;
  int bits_w = 0;
  int bits_a = 0;
  double ppl_fp = 0.0;
  double ppl_quant = 0.0;
  double ratio = 0.0;
};

void write_quant_csv(std::span<const QuantRow> rows, std::ostream& os);

}  // namespace oasis
