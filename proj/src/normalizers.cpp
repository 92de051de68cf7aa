#include "oasislab/normalizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "oasislab/kernels.hpp"

namespace oasis {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool slot_masked(std::span<const double> z, Mask mask, std::size_t i) {
  if (!mask.empty() && mask[i]) return true;
  return z[i] == -kInf;
}

// Indices of usable slots, in ascending order.
std::vector<int> unmasked_slots(std::span<const double> z, Mask mask) {
  std::vector<int> idx;
  idx.reserve(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!slot_masked(z, mask, i)) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

// Slots sorted by logit descending, ties broken by index so the result is
// stable across platforms.
std::vector<int> sorted_slots(std::span<const double> z,
                              const std::vector<int>& idx) {
  std::vector<int> order = idx;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (z[static_cast<std::size_t>(a)] != z[static_cast<std::size_t>(b)]) {
      return z[static_cast<std::size_t>(a)] > z[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  return order;
}

double max_logit(std::span<const double> z, const std::vector<int>& idx) {
  double m = -kInf;
  for (int i : idx) m = std::max(m, z[static_cast<std::size_t>(i)]);
  return m;
}

void softmax_into(std::span<const double> z, const std::vector<int>& idx,
                  std::vector<double>& probs) {
  const double m = max_logit(z, idx);
  double denom = 0.0;
  for (int i : idx) denom += std::exp(z[static_cast<std::size_t>(i)] - m);
  for (int i : idx) {
    probs[static_cast<std::size_t>(i)] =
        std::exp(z[static_cast<std::size_t>(i)] - m) / denom;
  }
}

// Sparsemax threshold over the unmasked slots; returns tau. Shift invariant
// by construction (threshold is computed after max subtraction).
double sparsemax_tau(std::span<const double> z, const std::vector<int>& order,
                     double shift) {
  double cumsum = 0.0;
  double tau = 0.0;
  std::size_t k_max = 0;
  double cumsum_at_k = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double v = z[static_cast<std::size_t>(order[k])] - shift;
    cumsum += v;
    if (1.0 + static_cast<double>(k + 1) * v > cumsum) {
      k_max = k + 1;
      cumsum_at_k = cumsum;
    }
  }
  tau = (cumsum_at_k - 1.0) / static_cast<double>(k_max);
  return tau;
}

// Exact alpha = 1.5 entmax threshold over s = (z - shift) / 2, sorted
// descending in `order`. Returns tau; probabilities are (s - tau)_+^2.
double entmax15_tau(std::span<const double> z, const std::vector<int>& order,
                    double shift) {
  double sum = 0.0, sum_sq = 0.0;
  double tau_star = 0.0;
  std::size_t support = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double s = (z[static_cast<std::size_t>(order[k])] - shift) / 2.0;
    sum += s;
    sum_sq += s * s;
    const double kk = static_cast<double>(k + 1);
    const double mean = sum / kk;
    const double var = sum_sq / kk - mean * mean;
    const double delta = std::max(1.0 / kk - var, 0.0);
    const double tau = mean - std::sqrt(delta);
    if (tau <= s) {
      support = k + 1;
      tau_star = tau;
    }
  }
  (void)support;
  return tau_star;
}

}  // namespace

const char* norm_kind_name(NormKind kind) {
  switch (kind) {
    case NormKind::Softmax: return "softmax";
    case NormKind::Softmax1: return "softmax1";
    case NormKind::ClippedSoftmax: return "clipped";
    case NormKind::Sparsemax: return "sparsemax";
    case NormKind::Entmax15: return "entmax15";
  }
  return "?";
}

NormKind norm_kind_from_name(const std::string& name) {
  if (name == "softmax") return NormKind::Softmax;
  if (name == "softmax1") return NormKind::Softmax1;
  if (name == "clipped") return NormKind::ClippedSoftmax;
  if (name == "sparsemax") return NormKind::Sparsemax;
  if (name == "entmax15") return NormKind::Entmax15;
  raise(ErrorKind::Parameter, "unknown normalizer kind: " + name);
}

void NormalizerSpec::validate() const {
  if (kind == NormKind::ClippedSoftmax) {
    require(gamma < zeta, ErrorKind::Parameter,
            "clipped softmax requires gamma < zeta");
  }
}

NormalizedWeights normalize(const NormalizerSpec& spec,
                            std::span<const double> z, Mask mask) {
  spec.validate();
  require(mask.empty() || mask.size() == z.size(), ErrorKind::Dimension,
          "normalize: mask length differs from logits");
  NormalizedWeights w;
  w.probs.assign(z.size(), 0.0);
  const std::vector<int> idx = unmasked_slots(z, mask);

  if (idx.empty()) {
    if (spec.kind == NormKind::Softmax1) {
      w.null_mass = 1.0;
    } else {
      w.fully_masked = true;
    }
    return w;
  }

  switch (spec.kind) {
    case NormKind::Softmax: {
      softmax_into(z, idx, w.probs);
      break;
    }
    case NormKind::Softmax1: {
      // The implicit null logit 0 joins the max subtraction.
      const double m = std::max(0.0, max_logit(z, idx));
      double denom = std::exp(-m);
      for (int i : idx) denom += std::exp(z[static_cast<std::size_t>(i)] - m);
      for (int i : idx) {
        w.probs[static_cast<std::size_t>(i)] =
            std::exp(z[static_cast<std::size_t>(i)] - m) / denom;
      }
      w.null_mass = std::exp(-m) / denom;
      break;
    }
    case NormKind::ClippedSoftmax: {
      softmax_into(z, idx, w.probs);
      const double span = spec.zeta - spec.gamma;
      for (int i : idx) {
        const double y = span * w.probs[static_cast<std::size_t>(i)] + spec.gamma;
        w.probs[static_cast<std::size_t>(i)] = std::clamp(y, 0.0, 1.0);
      }
      break;
    }
    case NormKind::Sparsemax: {
      const double shift = max_logit(z, idx);
      const std::vector<int> order = sorted_slots(z, idx);
      const double tau = sparsemax_tau(z, order, shift);
      for (int i : idx) {
        w.probs[static_cast<std::size_t>(i)] =
            std::max(z[static_cast<std::size_t>(i)] - shift - tau, 0.0);
      }
      break;
    }
    case NormKind::Entmax15: {
      const double shift = max_logit(z, idx);
      const std::vector<int> order = sorted_slots(z, idx);
      const double tau = entmax15_tau(z, order, shift);
      for (int i : idx) {
        const double q = std::max(
            (z[static_cast<std::size_t>(i)] - shift) / 2.0 - tau, 0.0);
        w.probs[static_cast<std::size_t>(i)] = q * q;
      }
      break;
    }
  }
  return w;
}

Tensor jacobian(const NormalizerSpec& spec, std::span<const double> z,
                Mask mask) {
  const std::int64_t n = static_cast<std::int64_t>(z.size());
  Tensor jac({std::max<std::int64_t>(n, 1), std::max<std::int64_t>(n, 1)});
  if (n == 0) return jac;
  const NormalizedWeights w = normalize(spec, z, mask);
  const std::vector<int> idx = unmasked_slots(z, mask);
  if (idx.empty()) return jac;  // zero matrix

  switch (spec.kind) {
    case NormKind::Softmax:
    case NormKind::Softmax1: {
      // diag(p) - p p^T over unmasked slots (probs of real slots for both).
      for (int a : idx) {
        const double pa = w.probs[static_cast<std::size_t>(a)];
        for (int b : idx) {
          const double pb = w.probs[static_cast<std::size_t>(b)];
          jac.at(a, b) = (a == b ? pa : 0.0) - pa * pb;
        }
      }
      break;
    }
    case NormKind::ClippedSoftmax: {
      std::vector<double> s(z.size(), 0.0);
      softmax_into(z, idx, s);
      const double span = spec.zeta - spec.gamma;
      for (int a : idx) {
        const double ya = span * s[static_cast<std::size_t>(a)] + spec.gamma;
        const bool active = ya > 0.0 && ya < 1.0;
        if (!active) continue;  // clipped slots are locally constant
        const double sa = s[static_cast<std::size_t>(a)];
        for (int b : idx) {
          const double sb = s[static_cast<std::size_t>(b)];
          jac.at(a, b) = span * ((a == b ? sa : 0.0) - sa * sb);
        }
      }
      break;
    }
    case NormKind::Sparsemax: {
      std::vector<int> support;
      for (int i : idx) {
        if (w.probs[static_cast<std::size_t>(i)] > 0.0) support.push_back(i);
      }
      const double inv = 1.0 / static_cast<double>(support.size());
      for (int a : support) {
        for (int b : support) {
          jac.at(a, b) = (a == b ? 1.0 : 0.0) - inv;
        }
      }
      break;
    }
    case NormKind::Entmax15: {
      std::vector<int> support;
      double qsum = 0.0;
      for (int i : idx) {
        const double p = w.probs[static_cast<std::size_t>(i)];
        if (p > 0.0) {
          support.push_back(i);
          qsum += std::sqrt(p);
        }
      }
      for (int a : support) {
        const double qa = std::sqrt(w.probs[static_cast<std::size_t>(a)]);
        for (int b : support) {
          const double qb = std::sqrt(w.probs[static_cast<std::size_t>(b)]);
          jac.at(a, b) = (a == b ? qa : 0.0) - qa * qb / qsum;
        }
      }
      break;
    }
  }
  return jac;
}

double null_mass_under_shift(const NormalizerSpec& spec,
                             std::span<const double> z, double c) {
  require(spec.kind == NormKind::Softmax1, ErrorKind::Parameter,
          "null_mass_under_shift requires a Softmax1 spec");
  std::vector<double> shifted(z.begin(), z.end());
  for (double& v : shifted) {
    if (v != -kInf) v += c;
  }
  return normalize(spec, shifted).null_mass;
}

void normalize_vjp(const NormalizerSpec& spec, std::span<const double> z,
                   Mask mask, const NormalizedWeights& w,
                   std::span<const double> dprobs, double dnull,
                   std::span<double> dz) {
  require(dprobs.size() == z.size() && dz.size() == z.size(),
          ErrorKind::Dimension, "normalize_vjp: size mismatch");
  std::fill(dz.begin(), dz.end(), 0.0);
  const std::vector<int> idx = unmasked_slots(z, mask);
  if (idx.empty()) return;

  switch (spec.kind) {
    case NormKind::Softmax: {
      double inner = 0.0;
      for (int i : idx) {
        inner += dprobs[static_cast<std::size_t>(i)] *
                 w.probs[static_cast<std::size_t>(i)];
      }
      for (int i : idx) {
        const double p = w.probs[static_cast<std::size_t>(i)];
        dz[static_cast<std::size_t>(i)] =
            p * (dprobs[static_cast<std::size_t>(i)] - inner);
      }
      break;
    }
    case NormKind::Softmax1: {
      double inner = 0.0;
      for (int i : idx) {
        inner += dprobs[static_cast<std::size_t>(i)] *
                 w.probs[static_cast<std::size_t>(i)];
      }
      inner += dnull * w.null_mass;
      for (int i : idx) {
        const double p = w.probs[static_cast<std::size_t>(i)];
        dz[static_cast<std::size_t>(i)] =
            p * (dprobs[static_cast<std::size_t>(i)] - inner);
      }
      break;
    }
    case NormKind::ClippedSoftmax: {
      std::vector<double> s(z.size(), 0.0);
      softmax_into(z, idx, s);
      const double span = spec.zeta - spec.gamma;
      double inner = 0.0;
      std::vector<double> g(z.size(), 0.0);
      for (int i : idx) {
        const double y = span * s[static_cast<std::size_t>(i)] + spec.gamma;
        if (y > 0.0 && y < 1.0) {
          g[static_cast<std::size_t>(i)] =
              span * dprobs[static_cast<std::size_t>(i)];
        }
        inner += g[static_cast<std::size_t>(i)] * s[static_cast<std::size_t>(i)];
      }
      for (int i : idx) {
        dz[static_cast<std::size_t>(i)] =
            s[static_cast<std::size_t>(i)] *
            (g[static_cast<std::size_t>(i)] - inner);
      }
      break;
    }
    case NormKind::Sparsemax: {
      double mean = 0.0;
      std::int64_t k = 0;
      for (int i : idx) {
        if (w.probs[static_cast<std::size_t>(i)] > 0.0) {
          mean += dprobs[static_cast<std::size_t>(i)];
          ++k;
        }
      }
      mean /= static_cast<double>(k);
      for (int i : idx) {
        if (w.probs[static_cast<std::size_t>(i)] > 0.0) {
          dz[static_cast<std::size_t>(i)] =
              dprobs[static_cast<std::size_t>(i)] - mean;
        }
      }
      break;
    }
    case NormKind::Entmax15: {
      double qsum = 0.0, inner = 0.0;
      for (int i : idx) {
        const double p = w.probs[static_cast<std::size_t>(i)];
        if (p > 0.0) {
          const double q = std::sqrt(p);
          qsum += q;
          inner += q * dprobs[static_cast<std::size_t>(i)];
        }
      }
      for (int i : idx) {
        const double p = w.probs[static_cast<std::size_t>(i)];
        if (p > 0.0) {
          const double q = std::sqrt(p);
          dz[static_cast<std::size_t>(i)] =
              q * dprobs[static_cast<std::size_t>(i)] - q * inner / qsum;
        }
      }
      break;
    }
  }
}

}  // namespace oasis
