#include "oasislab/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

#include "oasislab/kernels.hpp"

namespace oasis {

void AttentionConfig::validate() const {
  require(d_model > 0 && n_heads > 0, ErrorKind::Config,
          "attention: d_model and n_heads must be positive");
  require(d_model % n_heads == 0, ErrorKind::Config,
          "attention: d_model must be divisible by n_heads");
  normalizer.validate();
}

double AttentionConfig::effective_scale() const {
  if (scale > 0.0) return scale;
  return 1.0 / std::sqrt(static_cast<double>(head_dim()));
}

namespace {

void check_params(const AttentionConfig& cfg, const AttentionParams& p) {
  const auto d = cfg.d_model;
  for (const Tensor* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
    require(w->rank() == 2 && w->extent(0) == d && w->extent(1) == d,
            ErrorKind::Dimension, "attention: projection must be d_model^2");
  }
  if (cfg.gated) {
    require(p.wg.rank() == 2 && p.wg.extent(0) == d && p.wg.extent(1) == d,
            ErrorKind::Dimension, "attention: gate weight must be d_model^2");
    require(p.bg.rank() == 1 && p.bg.extent(0) == d, ErrorKind::Dimension,
            "attention: gate bias must be d_model");
  }
}

}  // namespace

AttentionOutput attend(const AttentionConfig& cfg, const Tensor& x,
                       const AttentionParams& params) {
  cfg.validate();
  if (x.empty()) return {};
  require(x.rank() == 2 && x.extent(1) == cfg.d_model, ErrorKind::Dimension,
          "attention: input must be T x d_model");
  require(x.all_finite(), ErrorKind::Numeric, "attention: non-finite input");
  check_params(cfg, params);

  const std::int64_t T = x.extent(0);
  const std::int64_t H = cfg.n_heads;
  const std::int64_t hd = cfg.head_dim();
  const double sc = cfg.effective_scale();

  const Tensor q = matmul(x, params.wq);
  const Tensor k = matmul(x, params.wk);
  const Tensor v = matmul(x, params.wv);

  AttentionOutput out;
  out.weights = Tensor({H, T, T});
  out.null_mass = Tensor({H, T});
  Tensor pre_concat({T, cfg.d_model});

#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t h = 0; h < H; ++h) {
    for (std::int64_t t = 0; t < T; ++t) {
      const std::int64_t c0 = h * hd;
      std::vector<double> z(static_cast<std::size_t>(t) + 1);
      for (std::int64_t j = 0; j <= t; ++j) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < hd; ++c)
          acc += q.at(t, c0 + c) * k.at(j, c0 + c);
        z[static_cast<std::size_t>(j)] = sc * acc;
      }
      const NormalizedWeights w = normalize(cfg.normalizer, z);
      for (std::int64_t j = 0; j <= t; ++j)
        out.weights.at(h, t, j) = w.probs[static_cast<std::size_t>(j)];
      out.null_mass.at(h, t) = w.null_mass;

      for (std::int64_t c = 0; c < hd; ++c) {
        double acc = 0.0;
        for (std::int64_t j = 0; j <= t; ++j)
          acc += w.probs[static_cast<std::size_t>(j)] * v.at(j, c0 + c);
        pre_concat.at(t, c0 + c) = acc;
      }
      if (cfg.gated) {
        for (std::int64_t c = 0; c < hd; ++c) {
          double acc = params.bg[c0 + c];
          for (std::int64_t r = 0; r < cfg.d_model; ++r)
            acc += x.at(t, r) * params.wg.at(r, c0 + c);
          pre_concat.at(t, c0 + c) *= sigmoid(acc);
        }
      }
    }
  }

  out.context = matmul(pre_concat, params.wo);
  return out;
}

const Tensor& head_null_posterior(const AttentionOutput& out) {
  for (double v : out.null_mass.flat()) {
    require(v >= 0.0 && v <= 1.0, ErrorKind::Numeric,
            "null posterior outside [0,1]");
  }
  return out.null_mass;
}

void write_attention_csv(const AttentionOutput& out, std::ostream& os) {
  const auto& w = out.weights;
  if (w.empty()) return;
  const std::int64_t H = w.extent(0), T = w.extent(1);
  char buf[32];
  for (std::int64_t h = 0; h < H; ++h) {
    os << "head," << h << "\n";
    for (std::int64_t t = 0; t < T; ++t) {
      for (std::int64_t j = 0; j < T; ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", w.at(h, t, j));
        os << (j ? "," : "") << buf;
      }
      os << "\n";
    }
  }
}

void write_attention_pgm(const AttentionOutput& out, std::int64_t head,
                         std::ostream& os) {
  const auto& w = out.weights;
  require(!w.empty() && head >= 0 && head < w.extent(0), ErrorKind::Parameter,
          "pgm: head index out of range");
  const std::int64_t T = w.extent(1);
  os << "P5\n" << T << " " << T << "\n255\n";
  for (std::int64_t t = 0; t < T; ++t) {
    for (std::int64_t j = 0; j < T; ++j) {
      const double p = w.at(head, t, j);
      const int px = static_cast<int>(std::lround(255.0 * std::min(std::max(p, 0.0), 1.0)));
      os.put(static_cast<char>(px));
    }
  }
}

}  // namespace oasis
