#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "oasislab/model.hpp"
#include "oasislab/tensor.hpp"

namespace oasis {

// Pearson (non-excess) kurtosis with population moments over all elements;
// Gaussian data sits near 3. Fewer than 2 elements or zero variance is a
// degenerate input.
double kurtosis(std::span<const double> xs);
double kurtosis(const Tensor& x);

enum class StatTensors { ResidualStream, BlockOutputs, Both };

struct OutlierStats {
  std::vector<double> per_layer_kurtosis;
  double avg_kurtosis = 0.0;
  std::vector<double> per_layer_inf_norm;
  double max_inf_norm = 0.0;
};

// Per-layer element population pools every example in the trace. Layer order:
// h_1..h_{L+1} for ResidualStream, f_1..f_L for BlockOutputs, hidden states
// then block outputs for Both.
OutlierStats outlier_stats(const RunTrace& trace,
                           StatTensors which = StatTensors::ResidualStream);

struct SinkReport {
  std::vector<std::int64_t> sink_set;
  Tensor sigma;      // [L x T]: per-branch head-averaged mass on the sink set
  Tensor total;      // [T]: depth-weighted aggregate Sigma_t
};

// sigma_t^(l) = sum_{j in K} mean-over-heads p_{t,j}^(l). Sigma_t mixes the
// branch masses with the final target layer's depth weights restricted to
// the attention branches 1..L and renormalized per token (branch 0 carries
// the raw embedding and has no attention distribution).
SinkReport sink_masses(const ExampleTrace& trace,
                       std::span<const std::int64_t> sink_set);

enum class ScoreVariant { AttnResidual, Vanilla };
const char* score_variant_name(ScoreVariant v);

struct PathologyScore {
  double leakage = 0.0;
  double concentration = 0.0;
  double entropy_collapse = 0.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double score = 0.0;  // leakage + lambda1*concentration + lambda2*entropy_collapse
};

// Shannon entropy in nats with 0*log0 = 0. AttnResidual scores mix the
// head-averaged branch attention rows at token t with the same renormalized
// final-layer depth weights as sink_masses; the Vanilla variant scores the
// last block's attention row alone.
PathologyScore pathology_score(const ExampleTrace& trace, std::int64_t t,
                               std::span<const std::int64_t> irrelevant_set,
                               double lambda1, double lambda2,
                               ScoreVariant variant);

void write_outlier_csv(const OutlierStats& stats, std::ostream& os);
void write_sink_sigma_csv(const SinkReport& report, std::ostream& os);
void write_sink_total_csv(const SinkReport& report, std::ostream& os);
// rows (token, L, C, E, S, variant), one per entry of scores
void write_pathology_csv(std::span<const PathologyScore> scores,
                         ScoreVariant variant, std::ostream& os);

}  // namespace oasis
