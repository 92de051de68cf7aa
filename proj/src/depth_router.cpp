#include "oasislab/depth_router.hpp"

#include <cstdio>
#include <ostream>

#include "oasislab/kernels.hpp"
#include "oasislab/normalizers.hpp"

namespace oasis {

const char* router_mode_name(RouterMode mode) {
  switch (mode) {
    case RouterMode::Vanilla: return "vanilla";
    case RouterMode::AoS: return "aos";
    case RouterMode::OASIS: return "oasis";
  }
  return "?";
}

RouterMode router_mode_from_name(const std::string& name) {
  if (name == "vanilla") return RouterMode::Vanilla;
  if (name == "aos") return RouterMode::AoS;
  if (name == "oasis") return RouterMode::OASIS;
  raise(ErrorKind::Parameter, "unknown router mode: " + name);
}

void DepthRouterState::validate() const {
  for (std::size_t i = 0; i < base_logits.size(); ++i) {
    const Tensor& g = base_logits[i];
    if (g.empty()) continue;
    require(g.rank() == 1 &&
                g.extent(0) == static_cast<std::int64_t>(i) + 1,
            ErrorKind::Config,
            "router: base logits for target layer l must have l entries");
  }
}

Tensor branch_null_stat(const std::vector<Tensor>& head_null) {
  require(!head_null.empty(), ErrorKind::Input,
          "branch_null_stat: no attention branches");
  const std::int64_t H = head_null.front().extent(0);
  const std::int64_t T = head_null.front().extent(1);
  for (const Tensor& b : head_null) {
    require(b.rank() == 2 && b.extent(0) == H && b.extent(1) == T,
            ErrorKind::Dimension, "branch_null_stat: branch shapes differ");
  }
  const std::int64_t ell = static_cast<std::int64_t>(head_null.size()) + 1;
  Tensor psi({ell, T});
  for (std::int64_t i = 1; i < ell; ++i) {
    const Tensor& b = head_null[static_cast<std::size_t>(i - 1)];
    for (std::int64_t t = 0; t < T; ++t) {
      double acc = 0.0;
      for (std::int64_t h = 0; h < H; ++h) {
        const double v = b.at(h, t);
        require(v >= 0.0 && v <= 1.0, ErrorKind::Numeric,
                "branch_null_stat: null mass outside [0,1]");
        acc += v;
      }
      psi.at(i, t) = acc / static_cast<double>(H);
    }
  }
  return psi;
}

Tensor center(const Tensor& psi) {
  require(!psi.empty(), ErrorKind::Input, "center: empty input");
  require(psi.rank() == 2, ErrorKind::Dimension, "center: expected ell x T");
  require(psi.all_finite(), ErrorKind::Numeric, "center: non-finite input");
  const std::int64_t ell = psi.extent(0), T = psi.extent(1);
  Tensor d({ell, T});
  for (std::int64_t i = 0; i < ell; ++i) {
    for (std::int64_t t = 0; t < T; ++t) {
      // mean of pairwise differences: exact zero when the column is constant
      double acc = 0.0;
      for (std::int64_t r = 0; r < ell; ++r)
        acc += psi.at(i, t) - psi.at(r, t);
      d.at(i, t) = acc / static_cast<double>(ell);
    }
  }
  return d;
}

Tensor inject(const Tensor& g_old, const Tensor& delta_psi, double beta_raw) {
  require(g_old.same_shape(delta_psi), ErrorKind::Dimension,
          "inject: shapes disagree");
  const double beta = softplus(beta_raw);
  Tensor g = g_old;
  for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= beta * delta_psi[i];
  return g;
}

DepthWeights depth_weights(const DepthRouterState& state, std::int64_t ell,
                           const BranchNullStats* null_stats) {
  state.validate();
  require(ell >= 1, ErrorKind::Parameter, "depth_weights: ell must be >= 1");
  require(static_cast<std::size_t>(ell) <= state.base_logits.size(),
          ErrorKind::Config, "depth_weights: no base logits for this layer");
  const Tensor& g = state.base_logits[static_cast<std::size_t>(ell - 1)];
  require(g.rank() == 1 && g.extent(0) == ell, ErrorKind::Config,
          "depth_weights: base logits missing or wrong length");

  DepthWeights out;
  NormalizerSpec norm;
  switch (state.mode) {
    case RouterMode::Vanilla: {
      norm.kind = NormKind::Softmax;
      const NormalizedWeights w = normalize(norm, g.flat());
      out.alpha = Tensor({ell}, w.probs);
      out.depth_null_mass = Tensor({1});
      break;
    }
    case RouterMode::AoS: {
      norm.kind = NormKind::Softmax1;
      const NormalizedWeights w = normalize(norm, g.flat());
      out.alpha = Tensor({ell}, w.probs);
      out.depth_null_mass = Tensor({1}, {w.null_mass});
      break;
    }
    case RouterMode::OASIS: {
      require(null_stats != nullptr, ErrorKind::Config,
              "depth_weights: OASIS mode needs branch null stats");
      const Tensor& d = null_stats->delta_psi;
      require(d.rank() == 2 && d.extent(0) == ell, ErrorKind::Dimension,
              "depth_weights: delta_psi must be ell x T");
      const std::int64_t T = d.extent(1);
      norm.kind = NormKind::Softmax1;
      const double beta = softplus(state.beta_raw);
      out.alpha = Tensor({ell, T});
      out.depth_null_mass = Tensor({T});
      std::vector<double> z(static_cast<std::size_t>(ell));
      for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t i = 0; i < ell; ++i)
          z[static_cast<std::size_t>(i)] = g[i] - beta * d.at(i, t);
        const NormalizedWeights w = normalize(norm, z);
        for (std::int64_t i = 0; i < ell; ++i)
          out.alpha.at(i, t) = w.probs[static_cast<std::size_t>(i)];
        out.depth_null_mass[t] = w.null_mass;
      }
      break;
    }
  }
  return out;
}

Tensor mix(const DepthWeights& weights, const Tensor& h1,
           const std::vector<Tensor>& branch_outputs, const Tensor& h_prev,
           NullTarget null_target) {
  const Tensor& alpha = weights.alpha;
  require(alpha.rank() == 1 || alpha.rank() == 2, ErrorKind::Dimension,
          "mix: alpha must be [ell] or [ell x T]");
  const std::int64_t ell = alpha.extent(0);
  require(static_cast<std::int64_t>(branch_outputs.size()) == ell - 1,
          ErrorKind::Dimension, "mix: need ell-1 branch outputs");
  require(h1.rank() == 2, ErrorKind::Dimension, "mix: h1 must be T x d");
  const std::int64_t T = h1.extent(0), d = h1.extent(1);
  for (const Tensor& b : branch_outputs) {
    require(b.same_shape(h1), ErrorKind::Dimension,
            "mix: branch output shape differs from h1");
  }
  if (alpha.rank() == 2) {
    require(alpha.extent(1) == T, ErrorKind::Dimension,
            "mix: alpha token count differs from input");
  }

  const Tensor& nm = weights.depth_null_mass;
  bool null_active = false;
  for (double v : nm.flat()) null_active = null_active || v != 0.0;
  const bool need_prev = null_active && null_target == NullTarget::PreviousState;
  if (need_prev) {
    require(h_prev.same_shape(h1), ErrorKind::Dimension,
            "mix: h_prev shape differs from h1");
  }

  auto alpha_at = [&](std::int64_t i, std::int64_t t) {
    return alpha.rank() == 1 ? alpha[i] : alpha.at(i, t);
  };
  auto null_at = [&](std::int64_t t) {
    return nm.numel() == 1 ? nm[0] : nm[t];
  };

  Tensor h({T, d});
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < T; ++t) {
    for (std::int64_t c = 0; c < d; ++c) {
      double acc = alpha_at(0, t) * h1.at(t, c);
      for (std::int64_t i = 1; i < ell; ++i)
        acc += alpha_at(i, t) *
               branch_outputs[static_cast<std::size_t>(i - 1)].at(t, c);
      if (need_prev) acc += null_at(t) * h_prev.at(t, c);
      h.at(t, c) = acc;
    }
  }
  return h;
}

void write_depth_weights_csv(const DepthWeights& weights, std::int64_t ell,
                             std::int64_t T, std::ostream& os) {
  char buf[64];
  os << "target_layer,source_branch,token,alpha,null_mass\n";
  for (std::int64_t i = 0; i < weights.alpha.extent(0); ++i) {
    for (std::int64_t t = 0; t < T; ++t) {
      const double a =
          weights.alpha.rank() == 1 ? weights.alpha[i] : weights.alpha.at(i, t);
      const double nm = weights.depth_null_mass.numel() == 1
                            ? weights.depth_null_mass[0]
                            : weights.depth_null_mass[t];
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", a, nm);
      os << ell << "," << i << "," << t << "," << buf << "\n";
    }
  }
}

}  // namespace oasis
