#include "oasislab/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "oasislab/error.hpp"
#include "oasislab/kernels.hpp"

namespace oasis {

namespace {

bool valid_bits(int bits) { return bits == 4 || bits == 6 || bits == 8; }

// The raw scale max|x|/qmax need not survive the multiply/divide round trip
// a second pass performs when it recovers the scale from the quantized
// tensor's own maximum. Iterating that round trip to a fixed point (one step
// in practice) makes fake_quant bit-identically idempotent.
double stable_scale(double max_abs, double qmax) {
  if (max_abs == 0.0) return 1.0;
  double s = max_abs / qmax;
  for (int i = 0; i < 8; ++i) {
    const double next = (qmax * s) / qmax;
    if (next == s) break;
    s = next;
  }
  return s;
}

double snap(double v, double s, double qmax) {
  return std::clamp(std::round(v / s), -qmax, qmax) * s;
}

}  // namespace

const char* granularity_name(WeightGranularity g) {
  return g == WeightGranularity::PerTensor ? "per_tensor" : "per_channel";
}

WeightGranularity granularity_from_name(const std::string& name) {
  if (name == "per_tensor") return WeightGranularity::PerTensor;
  if (name == "per_channel") return WeightGranularity::PerOutputChannel;
  raise(ErrorKind::Parameter, "unknown weight granularity: " + name);
}

void QuantSpec::validate() const {
  require(valid_bits(weight_bits), ErrorKind::Parameter,
          "QuantSpec: weight_bits must be 4, 6, or 8");
  require(valid_bits(act_bits), ErrorKind::Parameter,
          "QuantSpec: act_bits must be 4, 6, or 8");
  require(symmetric, ErrorKind::Parameter,
          "QuantSpec: only symmetric grids are supported");
}

Tensor fake_quant(const Tensor& x, int bits, WeightGranularity granularity) {
  require(valid_bits(bits), ErrorKind::Parameter,
          "fake_quant: bits must be 4, 6, or 8");
  require(x.all_finite(), ErrorKind::Numeric, "fake_quant: non-finite input");
  const double qmax = static_cast<double>((1 << (bits - 1)) - 1);
  Tensor out = x;
  if (granularity == WeightGranularity::PerTensor) {
    const double s = stable_scale(max_abs(x.flat()), qmax);
    for (double& v : out.flat()) v = snap(v, s, qmax);
  } else {
    require(x.rank() == 2, ErrorKind::Dimension,
            "fake_quant: per-output-channel needs a rank-2 tensor");
    const std::int64_t rows = x.extent(0), cols = x.extent(1);
    for (std::int64_t c = 0; c < cols; ++c) {
      double m = 0.0;
      for (std::int64_t r = 0; r < rows; ++r)
        m = std::max(m, std::abs(x.at(r, c)));
      const double s = stable_scale(m, qmax);
      for (std::int64_t r = 0; r < rows; ++r)
        out.at(r, c) = snap(x.at(r, c), s, qmax);
    }
  }
  return out;
}

QuantEval eval_quantized(const ModelConfig& cfg, const Params& params,
                         const QuantSpec& spec, const TokenBatch& eval_tokens) {
  cfg.validate();
  spec.validate();
  Params qparams = params;
  for (auto& [name, tensor] : qparams.entries)
    if (tensor.rank() == 2)
      tensor = fake_quant(tensor, spec.weight_bits, spec.weight_granularity);
  const ActHook hook = [&spec](const Tensor& t, const std::string&) {
    return fake_quant(t, spec.act_bits, WeightGranularity::PerTensor);
  };
  QuantEval ev;
  ev.ppl_fp = perplexity(cfg, params, eval_tokens);
  ev.ppl_quant = perplexity(cfg, qparams, eval_tokens, &hook);
  ev.degradation_ratio = ev.ppl_quant / ev.ppl_fp;
  return ev;
}

void write_quant_csv(std::span<const QuantRow> rows, std::ostream& os) {
  os << "normalizer,router_mode,seed,bits_w,bits_a,ppl_fp,ppl_quant,ratio\n";
  char buf[160];
  for (const QuantRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%d,%d,%.17g,%.17g,%.17g",
                  static_cast<unsigned long long>(r.seed), r.bits_w, r.bits_a,
                  r.ppl_fp, r.ppl_quant, r.ratio);
    os << r.normalizer << ',' << r.router_mode << ',' << buf << '\n';
  }
}

}  // namespace oasis
