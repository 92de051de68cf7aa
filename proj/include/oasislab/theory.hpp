#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "oasislab/rng.hpp"
#include "oasislab/tensor.hpp"

namespace oasis {

// Numeric verification of the routing bounds: generators build instances
// satisfying the separation assumptions, checkers search for feasible
// configurations and measure the slack of each bound.

struct Lemma1Instance {
  std::int64_t m = 0;     // token count
  std::vector<Tensor> v;  // value vectors, each [d]
  std::int64_t o = 0;     // the low-contribution token
  Tensor u;               // unit separation direction [d]
  double c0 = 0.0;        // recorded tight ||v_o||
  double c1 = 0.0;        // recorded tight min_{j != o} <v_j, u>
  double delta = 0.0;     // output-norm budget

  void validate() const;
};

struct Thm2Instance {
  std::int64_t ell = 0;    // branch count
  std::vector<Tensor> u;   // branch updates, each [d]
  std::int64_t i_star = 0; // minimal-update branch
  Tensor w;                // unit separation direction [d]
  double b0 = 0.0;         // recorded tight ||u_{i*}||
  double b1 = 0.0;         // recorded tight min_{i != i*} <u_i, w>
  double delta_t = 0.0;    // depth-update budget

  void validate() const;
};

struct Lemma1Dims {
  std::int64_t m = 4;
  std::int64_t d = 3;
};

// Constants are drawn uniformly from [lo, hi]; delta may exceed the norm cap
// (always-feasible instances) but must stay below the alignment floor.
struct Lemma1Ranges {
  double c0_lo = 0.02, c0_hi = 0.2;
  double c1_lo = 0.8, c1_hi = 1.4;
  double delta_lo = 0.01, delta_hi = 0.25;
};

Lemma1Instance gen_lemma1(Rng& rng, const Lemma1Dims& dims,
                          const Lemma1Ranges& ranges);

struct Thm2Dims {
  std::int64_t ell = 4;
  std::int64_t d = 3;
};

struct Thm2Ranges {
  double b0_lo = 0.02, b0_hi = 0.2;
  double b1_lo = 0.8, b1_hi = 1.4;
  double delta_lo = 0.01, delta_hi = 0.25;
};

Thm2Instance gen_thm2(Rng& rng, const Thm2Dims& dims, const Thm2Ranges& ranges);

enum class CheckStatus { Pass, Violation, Inconclusive };
const char* check_status_name(CheckStatus s);

// One CSV row. margin is the minimum slack of the instance's bound checks,
// negative only on violation; NaN when no feasible point was found.
struct InstanceResult {
  std::int64_t instance_id = 0;
  std::int64_t feasible_points_found = 0;
  double bound_value = 0.0;
  double worst_observed = 0.0;
  double margin = 0.0;
  CheckStatus status = CheckStatus::Pass;
};

struct CheckReport {
  std::int64_t instances_tested = 0;
  std::int64_t violations = 0;
  std::int64_t inconclusive = 0;
  double worst_margin = 0.0;  // min slack over conclusive instances
  double runtime_seconds = 0.0;
};

// Feasible rows (||sum_j p_j v_j|| <= delta on the simplex) are located by
// projected gradient descent from n_probes random starts plus the one-hot
// and uniform rows; every feasible row must respect the mass bound
// p_o >= (c1 - delta)/(c0 + c1) - 1e-9. A scalarized descent then pushes
// p_o down along the feasible set to probe the bound's slack. No feasible
// row at all yields an inconclusive result, never a violation.
InstanceResult check_lemma1(const Lemma1Instance& inst, std::int64_t n_probes,
                            Rng& rng);

// Same search over depth weights; asserts both the direct bound
// alpha_{i*} >= (b1 - delta_t)/(b0 + b1) - 1e-9 and its complementary form
// 1 - alpha_{i*} <= (b0 + delta_t)/(b0 + b1) + 1e-9.
InstanceResult check_thm2(const Thm2Instance& inst, std::int64_t n_probes,
                          Rng& rng);

// Convexity of the depth-aggregated sink mass Sigma = <alpha, sigma> plus
// the collapse form |Sigma - sigma_{l*}| <= eps (max - min) + 1e-12 with
// l* = argmax alpha and eps = 1 - alpha_{l*}.
InstanceResult check_lemma2(std::span<const double> alpha,
                            std::span<const double> sigma);

struct Thm3Dims {
  std::int64_t m = 6;    // tokens
  std::int64_t ell = 4;  // branches
  std::int64_t d = 4;
};

// Mass-budget bounds under logit shifts c from shift_grid: the null-aware
// output norm stays within V_max (1 - null) + 1e-9 at token level (U_max at
// depth level), a null mass of 1 - delta/V_max caps the output at delta, and
// standard softmax under the same shifts keeps unit mass and stays exactly
// uniform on equal logits.
InstanceResult check_thm3(Rng& rng, const Thm3Dims& dims, double v_max,
                          double u_max, std::span<const double> shift_grid);

// Builds a vanilla attention row, inflates an AttnResidual mixture until
// leakage, concentration, and entropy collapse dominate componentwise, and
// asserts the combined score ordering S_ar >= S_v - 1e-12 for the drawn
// nonnegative lambdas.
InstanceResult check_proposition(Rng& rng, std::int64_t m,
                                 std::int64_t n_branches);

enum class TheorySuite { Lemma1, Thm2, Lemma2, Thm3, Proposition };
const char* theory_suite_name(TheorySuite s);
TheorySuite theory_suite_from_name(const std::string& name);

struct SuiteResult {
  CheckReport report;
  std::vector<InstanceResult> rows;
};

// n generator/checker rounds with per-instance streams forked from the seed,
// so results are reproducible and mergeable in index order.
SuiteResult run_suite(TheorySuite suite, std::int64_t n, std::uint64_t seed);

void write_theory_csv(std::span<const InstanceResult> rows, std::ostream& os);

}  // namespace oasis
