#include "oasislab/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "oasislab/error.hpp"
#include "oasislab/kernels.hpp"
#include "oasislab/normalizers.hpp"

namespace oasis {

namespace {

constexpr double kTol = 1e-9;    // slack on the search-based bounds
constexpr double kExact = 1e-12; // slack on the exact convexity/score forms

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

const char* fmt(double v) {
  static thread_local char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

Tensor unit_direction(Rng& rng, std::int64_t d) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Tensor u({d});
    for (double& x : u.flat()) x = rng.next_gaussian();
    const double n = norm(u.flat());
    if (n < 1e-9) continue;
    for (double& x : u.flat()) x /= n;
    return u;
  }
  raise(ErrorKind::Generator, "unit direction sampling failed");
}

std::vector<double> dirichlet(Rng& rng, std::int64_t n) {
  std::vector<double> p(static_cast<std::size_t>(n));
  double s = 0.0;
  for (double& x : p) {
    x = -std::log(1.0 - rng.next_double());
    s += x;
  }
  if (s <= 0.0) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(n));
    return p;
  }
  for (double& x : p) x /= s;
  return p;
}

double uniform_in(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * rng.next_double();
}

// Euclidean projection onto the probability simplex (the sparsemax map).
std::vector<double> project_simplex(std::span<const double> y) {
  NormalizerSpec spec;
  spec.kind = NormKind::Sparsemax;
  return normalize(spec, y).probs;
}

// Projected gradient search over the simplex for rows p minimizing
// ||sum_j p_j v_j||^2 + kappa p_special. Convex, so the kappa = 0 phase
// reaches the global minimum-norm row up to the iteration budget.
struct SepSearch {
  std::span<const Tensor> vecs;
  std::int64_t special = 0;
  double budget = 0.0;

  std::int64_t m() const { return static_cast<std::int64_t>(vecs.size()); }
  std::int64_t d() const { return vecs.front().extent(0); }

  void combine(std::span<const double> p, std::span<double> a) const {
    std::fill(a.begin(), a.end(), 0.0);
    for (std::int64_t j = 0; j < m(); ++j) {
      const auto vj = vecs[static_cast<std::size_t>(j)].flat();
      for (std::int64_t k = 0; k < d(); ++k) a[k] += p[j] * vj[k];
    }
  }

  double out_norm(std::span<const double> p) const {
    std::vector<double> a(static_cast<std::size_t>(d()));
    combine(p, a);
    return norm(a);
  }

  bool feasible(std::span<const double> p) const {
    return out_norm(p) <= budget;
  }

  std::vector<double> descend(std::vector<double> p, double kappa) const {
    double lip = 1e-12;
    for (const Tensor& v : vecs) lip += 2.0 * dot(v.flat(), v.flat());
    const double eta = 1.0 / lip;
    std::vector<double> a(static_cast<std::size_t>(d()));
    std::vector<double> y(p.size());
    for (int it = 0; it < 600; ++it) {
      combine(p, a);
      for (std::int64_t j = 0; j < m(); ++j)
        y[j] = p[j] - eta * 2.0 * dot(a, vecs[static_cast<std::size_t>(j)].flat());
      y[static_cast<std::size_t>(special)] -= eta * kappa;
      std::vector<double> next = project_simplex(y);
      double step = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j)
        step = std::max(step, std::abs(next[j] - p[j]));
      p = std::move(next);
      if (step < 1e-14) break;
    }
    return p;
  }
};

struct SepOutcome {
  std::int64_t feasible_found = 0;
  double min_special = std::numeric_limits<double>::infinity();
};

SepOutcome sep_search(const SepSearch& pb, std::int64_t n_probes, Rng& rng) {
  std::vector<std::vector<double>> starts;
  std::vector<double> onehot(static_cast<std::size_t>(pb.m()), 0.0);
  onehot[static_cast<std::size_t>(pb.special)] = 1.0;
  starts.push_back(onehot);
  starts.emplace_back(static_cast<std::size_t>(pb.m()),
                      1.0 / static_cast<double>(pb.m()));
  for (std::int64_t i = 0; i < n_probes; ++i)
    starts.push_back(dirichlet(rng, pb.m()));

  SepOutcome out;
  std::vector<double> best;
  auto consider = [&](const std::vector<double>& p) {
    if (!pb.feasible(p)) return;
    ++out.feasible_found;
    const double ps = p[static_cast<std::size_t>(pb.special)];
    if (ps < out.min_special) {
      out.min_special = ps;
      best = p;
    }
  };

  for (const auto& s : starts) consider(pb.descend(s, 0.0));
  if (out.feasible_found > 0) {
    // scalarized descent trades output norm for a lower special coordinate,
    // tracing the feasible set toward the bound
    for (double kappa : {1e-3, 1e-2, 0.1, 1.0, 10.0})
      consider(pb.descend(best, kappa));
  }
  return out;
}

void require_ranges(double lo_small, double hi_small, double lo_big,
                    double d_lo, double d_hi, const char* who) {
  require(std::isfinite(lo_small) && std::isfinite(hi_small) &&
              std::isfinite(lo_big) && std::isfinite(d_lo) &&
              std::isfinite(d_hi),
          ErrorKind::Parameter, std::string(who) + ": ranges must be finite");
  require(lo_small >= 0.0 && hi_small >= lo_small, ErrorKind::Parameter,
          std::string(who) + ": norm-cap range is invalid");
  require(hi_small < lo_big, ErrorKind::Parameter,
          std::string(who) + ": norm cap must stay below the alignment floor");
  require(d_lo >= 0.0 && d_hi >= d_lo, ErrorKind::Parameter,
          std::string(who) + ": budget range is invalid");
  require(d_hi < lo_big, ErrorKind::Parameter,
          std::string(who) + ": budget must stay below the alignment floor");
}

struct SepDraw {
  std::vector<Tensor> vecs;
  Tensor dir;
  std::int64_t special = 0;
  double tight_small = 0.0;
  double tight_big = 0.0;
};

// Rejection loop shared by both separation generators: one low-norm vector,
// the rest aligned with the direction at least `big`, re-verified on every
// draw before acceptance.
SepDraw draw_separated(Rng& rng, std::int64_t n, std::int64_t d, double small,
                       double big, const char* who) {
  for (int attempt = 0; attempt < 256; ++attempt) {
    SepDraw out;
    out.dir = unit_direction(rng, d);
    out.special = rng.next_below(n);
    out.vecs.assign(static_cast<std::size_t>(n), Tensor({d}));
    for (std::int64_t j = 0; j < n; ++j) {
      Tensor& vj = out.vecs[static_cast<std::size_t>(j)];
      if (j == out.special) {
        if (small > 0.0) {
          Tensor dir = unit_direction(rng, d);
          const double r = small * rng.next_double();
          for (std::int64_t k = 0; k < d; ++k) vj[k] = r * dir[k];
        }
        continue;
      }
      const double align = big * (1.0 + 0.5 * rng.next_double());
      Tensor g({d});
      for (double& x : g.flat()) x = rng.next_gaussian();
      const double along = dot(g.flat(), out.dir.flat());
      for (std::int64_t k = 0; k < d; ++k)
        vj[k] = align * out.dir[k] + 0.3 * big * (g[k] - along * out.dir[k]);
    }
    out.tight_small =
        norm(out.vecs[static_cast<std::size_t>(out.special)].flat());
    out.tight_big = std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < n; ++j) {
      if (j == out.special) continue;
      out.tight_big = std::min(
          out.tight_big,
          dot(out.vecs[static_cast<std::size_t>(j)].flat(), out.dir.flat()));
    }
    if (out.tight_small > small) continue;
    if (out.tight_big < big) continue;
    return out;
  }
  raise(ErrorKind::Generator,
        std::string(who) + ": rejection budget exhausted");
}

void validate_separated(std::int64_t n, const std::vector<Tensor>& vecs,
                        std::int64_t special, const Tensor& dir, double small,
                        double big, double budget, const char* who) {
  require(n >= 2, ErrorKind::Input, std::string(who) + ": need at least two vectors");
  require(static_cast<std::int64_t>(vecs.size()) == n, ErrorKind::Input,
          std::string(who) + ": vector count mismatch");
  require(special >= 0 && special < n, ErrorKind::Input,
          std::string(who) + ": special index out of range");
  require(dir.rank() == 1 && dir.extent(0) >= 1, ErrorKind::Input,
          std::string(who) + ": direction must be a nonempty vector");
  require(dir.all_finite(), ErrorKind::Input,
          std::string(who) + ": direction must be finite");
  for (const Tensor& v : vecs) {
    require(v.rank() == 1 && v.extent(0) == dir.extent(0), ErrorKind::Input,
            std::string(who) + ": vector shape mismatch");
    require(v.all_finite(), ErrorKind::Input,
            std::string(who) + ": vectors must be finite");
  }
  require(std::abs(norm(dir.flat()) - 1.0) <= 1e-12, ErrorKind::Input,
          std::string(who) + ": direction is not unit length");
  require(small >= 0.0 && small < big, ErrorKind::Input,
          std::string(who) + ": separation constants are not ordered");
  require(budget >= 0.0 && budget < big, ErrorKind::Input,
          std::string(who) + ": budget must stay below the alignment floor");
  require(norm(vecs[static_cast<std::size_t>(special)].flat()) <= small + 1e-12,
          ErrorKind::Input,
          std::string(who) + ": special vector exceeds its norm cap");
  for (std::int64_t j = 0; j < n; ++j) {
    if (j == special) continue;
    require(dot(vecs[static_cast<std::size_t>(j)].flat(), dir.flat()) >=
                big - 1e-12,
            ErrorKind::Input,
            std::string(who) + ": alignment drops below the floor");
  }
}

InstanceResult check_separated(const std::vector<Tensor>& vecs,
                               std::int64_t special, double small, double big,
                               double budget, bool complementary,
                               std::int64_t n_probes, Rng& rng) {
  require(n_probes >= 0, ErrorKind::Parameter, "checker: n_probes must be >= 0");
  const double bound = (big - budget) / (small + big);
  SepSearch pb{vecs, special, budget};
  const SepOutcome out = sep_search(pb, n_probes, rng);

  InstanceResult r;
  r.feasible_points_found = out.feasible_found;
  r.bound_value = bound;
  if (out.feasible_found == 0) {
    r.worst_observed = nan_value();
    r.margin = nan_value();
    r.status = CheckStatus::Inconclusive;
    return r;
  }
  r.worst_observed = out.min_special;
  double margin = out.min_special - bound;
  bool violated = margin < -kTol;
  if (complementary) {
    const double comp = (small + budget) / (small + big);
    const double comp_margin = comp - (1.0 - out.min_special);
    violated = violated || comp_margin < -kTol;
    margin = std::min(margin, comp_margin);
  }
  r.margin = margin;
  r.status = violated ? CheckStatus::Violation : CheckStatus::Pass;
  return r;
}

}  // namespace

void Lemma1Instance::validate() const {
  validate_separated(m, v, o, u, c0, c1, delta, "Lemma1Instance");
}

void Thm2Instance::validate() const {
  validate_separated(ell, u, i_star, w, b0, b1, delta_t, "Thm2Instance");
}

Lemma1Instance gen_lemma1(Rng& rng, const Lemma1Dims& dims,
                          const Lemma1Ranges& rg) {
  require(dims.m >= 2, ErrorKind::Parameter, "gen_lemma1: need at least two tokens");
  require(dims.d >= 1, ErrorKind::Parameter, "gen_lemma1: dimension must be positive");
  require_ranges(rg.c0_lo, rg.c0_hi, rg.c1_lo, rg.delta_lo, rg.delta_hi,
                 "gen_lemma1");
  const double c0_req = uniform_in(rng, rg.c0_lo, rg.c0_hi);
  const double c1_req = uniform_in(rng, rg.c1_lo, rg.c1_hi);
  SepDraw d = draw_separated(rng, dims.m, dims.d, c0_req, c1_req, "gen_lemma1");
  Lemma1Instance inst;
  inst.m = dims.m;
  inst.v = std::move(d.vecs);
  inst.o = d.special;
  inst.u = std::move(d.dir);
  inst.c0 = d.tight_small;
  inst.c1 = d.tight_big;
  inst.delta = uniform_in(rng, rg.delta_lo, rg.delta_hi);
  inst.validate();
  return inst;
}

Thm2Instance gen_thm2(Rng& rng, const Thm2Dims& dims, const Thm2Ranges& rg) {
  require(dims.ell >= 2, ErrorKind::Parameter, "gen_thm2: need at least two branches");
  require(dims.d >= 1, ErrorKind::Parameter, "gen_thm2: dimension must be positive");
  require_ranges(rg.b0_lo, rg.b0_hi, rg.b1_lo, rg.delta_lo, rg.delta_hi,
                 "gen_thm2");
  const double b0_req = uniform_in(rng, rg.b0_lo, rg.b0_hi);
  const double b1_req = uniform_in(rng, rg.b1_lo, rg.b1_hi);
  SepDraw d = draw_separated(rng, dims.ell, dims.d, b0_req, b1_req, "gen_thm2");
  Thm2Instance inst;
  inst.ell = dims.ell;
  inst.u = std::move(d.vecs);
  inst.i_star = d.special;
  inst.w = std::move(d.dir);
  inst.b0 = d.tight_small;
  inst.b1 = d.tight_big;
  inst.delta_t = uniform_in(rng, rg.delta_lo, rg.delta_hi);
  inst.validate();
  return inst;
}

const char* check_status_name(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "pass";
    case CheckStatus::Violation: return "violation";
    case CheckStatus::Inconclusive: return "inconclusive";
  }
  raise(ErrorKind::Parameter, "unknown check status");
}

InstanceResult check_lemma1(const Lemma1Instance& inst, std::int64_t n_probes,
                            Rng& rng) {
  inst.validate();
  return check_separated(inst.v, inst.o, inst.c0, inst.c1, inst.delta,
                         /*complementary=*/false, n_probes, rng);
}

InstanceResult check_thm2(const Thm2Instance& inst, std::int64_t n_probes,
                          Rng& rng) {
  inst.validate();
  return check_separated(inst.u, inst.i_star, inst.b0, inst.b1, inst.delta_t,
                         /*complementary=*/true, n_probes, rng);
}

InstanceResult check_lemma2(std::span<const double> alpha,
                            std::span<const double> sigma) {
  require(!alpha.empty() && alpha.size() == sigma.size(), ErrorKind::Input,
          "check_lemma2: alpha and sigma must be nonempty and equal length");
  double s = 0.0;
  for (double a : alpha) {
    require(std::isfinite(a) && a >= -1e-12, ErrorKind::Input,
            "check_lemma2: alpha is not on the simplex");
    s += a;
  }
  require(std::abs(s - 1.0) <= 1e-9, ErrorKind::Input,
          "check_lemma2: alpha is not on the simplex");
  for (double x : sigma)
    require(std::isfinite(x) && x >= -1e-12 && x <= 1.0 + 1e-12,
            ErrorKind::Input, "check_lemma2: sigma outside [0, 1]");

  const double total = dot(alpha, sigma);
  double mn = sigma[0], mx = sigma[0];
  std::size_t star = 0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    mn = std::min(mn, sigma[i]);
    mx = std::max(mx, sigma[i]);
    if (alpha[i] > alpha[star]) star = i;
  }
  const double eps = std::max(0.0, 1.0 - alpha[star]);
  const double collapse_bound = eps * (mx - mn) + kExact;
  const double collapse_observed = std::abs(total - sigma[star]);

  const double margin = std::min({total - mn + kExact, mx - total + kExact,
                                  collapse_bound - collapse_observed});
  InstanceResult r;
  r.feasible_points_found = 1;
  r.bound_value = collapse_bound;
  r.worst_observed = collapse_observed;
  r.margin = margin;
  r.status = margin < 0.0 ? CheckStatus::Violation : CheckStatus::Pass;
  return r;
}

InstanceResult check_thm3(Rng& rng, const Thm3Dims& dims, double v_max,
                          double u_max, std::span<const double> shift_grid) {
  require(dims.m >= 1 && dims.ell >= 1 && dims.d >= 1, ErrorKind::Parameter,
          "check_thm3: dims must be positive");
  require(v_max >= 0.0 && u_max >= 0.0, ErrorKind::Parameter,
          "check_thm3: norm caps must be nonnegative");
  require(!shift_grid.empty(), ErrorKind::Parameter,
          "check_thm3: shift grid is empty");
  const double deepest = *std::min_element(shift_grid.begin(), shift_grid.end());
  require(deepest <= -40.0, ErrorKind::Parameter,
          "check_thm3: shift grid must reach -40");

  auto draw_set = [&](std::int64_t n, double cap) {
    std::vector<Tensor> vs(static_cast<std::size_t>(n), Tensor({dims.d}));
    if (cap > 0.0) {
      for (Tensor& v : vs) {
        Tensor dir = unit_direction(rng, dims.d);
        const double r = cap * rng.next_double();
        for (std::int64_t k = 0; k < dims.d; ++k) v[k] = r * dir[k];
      }
    }
    return vs;
  };
  const std::vector<Tensor> vals = draw_set(dims.m, v_max);
  const std::vector<Tensor> ups = draw_set(dims.ell, u_max);
  std::vector<double> z(static_cast<std::size_t>(dims.m));
  std::vector<double> g(static_cast<std::size_t>(dims.ell));
  for (double& x : z) x = uniform_in(rng, -3.0, 3.0);
  for (double& x : g) x = uniform_in(rng, -3.0, 3.0);
  const double z_eq = uniform_in(rng, -3.0, 3.0);

  NormalizerSpec softmax1;
  softmax1.kind = NormKind::Softmax1;
  NormalizerSpec softmax;
  softmax.kind = NormKind::Softmax;

  InstanceResult r;
  r.margin = std::numeric_limits<double>::infinity();
  bool violated = false;
  auto note = [&](double bound, double observed, double tol) {
    ++r.feasible_points_found;
    const double slack = bound - observed;
    if (slack < r.margin) {
      r.margin = slack;
      r.bound_value = bound;
      r.worst_observed = observed;
    }
    violated = violated || observed > bound + tol;
  };

  auto mixture_norm = [&](const std::vector<double>& probs,
                          const std::vector<Tensor>& vecs) {
    std::vector<double> a(static_cast<std::size_t>(dims.d), 0.0);
    for (std::size_t j = 0; j < probs.size(); ++j)
      for (std::int64_t k = 0; k < dims.d; ++k)
        a[static_cast<std::size_t>(k)] += probs[j] * vecs[j][k];
    return norm(a);
  };

  auto shifted = [](std::span<const double> base, double c) {
    std::vector<double> out(base.begin(), base.end());
    for (double& x : out) x += c;
    return out;
  };

  // mass-budget form at one level: ||sum p_j v_j|| <= cap (1 - null), and a
  // null mass of 1 - delta/cap caps the output norm at delta
  auto budget_checks = [&](std::span<const double> logits,
                           const std::vector<Tensor>& vecs, double cap,
                           double c) {
    const NormalizedWeights w = normalize(softmax1, shifted(logits, c));
    const double nrm = mixture_norm(w.probs, vecs);
    note(cap * (1.0 - w.null_mass), nrm, kTol);
    if (cap > 0.0) {
      const double delta = 1e-3 * cap;
      if (w.null_mass >= 1.0 - delta / cap) note(delta, nrm, kTol);
    }
  };

  for (double c : shift_grid) {
    budget_checks(z, vals, v_max, c);
    budget_checks(g, ups, u_max, c);
    const NormalizedWeights p = normalize(softmax, shifted(z, c));
    note(kExact, std::abs(sum(p.probs) - 1.0), 0.0);
  }

  // equal logits at the deepest shift: softmax stays exactly uniform while
  // the null channel absorbs all mass
  const std::vector<double> zeq(static_cast<std::size_t>(dims.m), z_eq);
  const NormalizedWeights pu = normalize(softmax, shifted(zeq, deepest));
  double dev = 0.0;
  for (double x : pu.probs)
    dev = std::max(dev, std::abs(x - 1.0 / static_cast<double>(dims.m)));
  note(kTol, dev, 0.0);
  const NormalizedWeights w1 = normalize(softmax1, shifted(zeq, deepest));
  note(1e-12, 1.0 - w1.null_mass, 0.0);
  note(1e-10 * v_max, mixture_norm(w1.probs, vals), 0.0);

  r.status = violated ? CheckStatus::Violation : CheckStatus::Pass;
  return r;
}

namespace {

struct RowScore {
  double leakage = 0.0;
  double concentration = 0.0;
  double neg_entropy = 0.0;
  double score = 0.0;
};

RowScore score_row(std::span<const double> p, std::span<const std::uint8_t> irrelevant,
                   double lambda1, double lambda2) {
  RowScore s;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (irrelevant[j]) s.leakage += p[j];
    s.concentration = std::max(s.concentration, p[j]);
    if (p[j] > 0.0) s.neg_entropy += p[j] * std::log(p[j]);
  }
  s.score = s.leakage + lambda1 * s.concentration + lambda2 * s.neg_entropy;
  return s;
}

}  // namespace

InstanceResult check_proposition(Rng& rng, std::int64_t m,
                                 std::int64_t n_branches) {
  require(m >= 2, ErrorKind::Parameter, "check_proposition: need at least two tokens");
  require(n_branches >= 1, ErrorKind::Parameter,
          "check_proposition: need at least one branch");

  const std::vector<double> pv = dirichlet(rng, m);
  std::vector<std::uint8_t> irr(static_cast<std::size_t>(m), 0);
  const std::int64_t k = 1 + rng.next_below(m - 1);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = 0; i < k; ++i) {
    const std::int64_t pick = i + rng.next_below(m - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick)]);
    irr[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
  }
  const double lambda1 = 3.0 * rng.next_double();
  const double lambda2 = 3.0 * rng.next_double();
  const RowScore sv = score_row(pv, irr, lambda1, lambda2);

  std::vector<double> mixed = pv;
  if (n_branches > 1) {
    std::size_t j_star = 0;
    bool seen = false;
    for (std::size_t j = 0; j < pv.size(); ++j) {
      if (!irr[j]) continue;
      if (!seen || pv[j] > pv[j_star]) {
        j_star = j;
        seen = true;
      }
    }
    // inflate toward a spike on an irrelevant token until all three terms
    // dominate the vanilla row; verified on the actual mixture, never assumed
    bool ok = false;
    for (double t = 0.5; t > 1e-18; t *= 0.5) {
      const double a_last = t / 2.0;
      std::vector<double> other(pv.size());
      for (std::size_t j = 0; j < pv.size(); ++j) {
        const double q = t * pv[j] + (j == j_star ? 1.0 - t : 0.0);
        other[j] = (q - a_last * pv[j]) / (1.0 - a_last);
      }
      for (std::size_t j = 0; j < pv.size(); ++j)
        mixed[j] = a_last * pv[j] + (1.0 - a_last) * other[j];
      const RowScore sm = score_row(mixed, irr, lambda1, lambda2);
      if (sm.leakage >= sv.leakage && sm.concentration >= sv.concentration &&
          sm.neg_entropy >= sv.neg_entropy) {
        ok = true;
        break;
      }
    }
    if (!ok)
      raise(ErrorKind::Generator,
            "check_proposition: no dominant inflation found");
  }

  const RowScore sar = score_row(mixed, irr, lambda1, lambda2);
  InstanceResult r;
  r.feasible_points_found = 1;
  r.bound_value = sv.score;
  r.worst_observed = sar.score;
  r.margin = sar.score - sv.score;
  r.status = r.margin < -kExact ? CheckStatus::Violation : CheckStatus::Pass;
  return r;
}

const char* theory_suite_name(TheorySuite s) {
  switch (s) {
    case TheorySuite::Lemma1: return "lemma1";
    case TheorySuite::Thm2: return "thm2";
    case TheorySuite::Lemma2: return "lemma2";
    case TheorySuite::Thm3: return "thm3";
    case TheorySuite::Proposition: return "proposition";
  }
  raise(ErrorKind::Parameter, "unknown theory suite");
}

TheorySuite theory_suite_from_name(const std::string& name) {
  for (TheorySuite s : {TheorySuite::Lemma1, TheorySuite::Thm2,
                        TheorySuite::Lemma2, TheorySuite::Thm3,
                        TheorySuite::Proposition})
    if (name == theory_suite_name(s)) return s;
  raise(ErrorKind::Parameter, "unknown theory suite: " + name);
}

SuiteResult run_suite(TheorySuite suite, std::int64_t n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::Parameter, "run_suite: n must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult res;
  res.rows.reserve(static_cast<std::size_t>(n));
  res.report.worst_margin = std::numeric_limits<double>::infinity();
  const Rng root(seed);
  static constexpr double kShiftGrid[] = {0.0, -5.0, -10.0, -20.0, -40.0};

  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng = root.fork(theory_suite_name(suite), static_cast<std::uint64_t>(i));
    InstanceResult r;
    switch (suite) {
      case TheorySuite::Lemma1: {
        Lemma1Dims dims{3 + rng.next_below(6), 2 + rng.next_below(5)};
        Lemma1Instance inst = gen_lemma1(rng, dims, Lemma1Ranges{});
        r = check_lemma1(inst, 8, rng);
        break;
      }
      case TheorySuite::Thm2: {
        Thm2Dims dims{2 + rng.next_below(5), 2 + rng.next_below(5)};
        Thm2Instance inst = gen_thm2(rng, dims, Thm2Ranges{});
        r = check_thm2(inst, 8, rng);
        break;
      }
      case TheorySuite::Lemma2: {
        const std::int64_t ell = 2 + rng.next_below(5);
        std::vector<double> sigma(static_cast<std::size_t>(ell));
        for (double& x : sigma) x = rng.next_double();
        std::vector<double> alpha;
        if (i % 3 == 0) {
          // collapsed regime: nearly all depth mass on one branch
          const std::size_t star =
              static_cast<std::size_t>(rng.next_below(ell));
          const double eps = 0.05 * rng.next_double();
          alpha.assign(static_cast<std::size_t>(ell), 0.0);
          std::vector<double> rest = dirichlet(rng, ell - 1);
          std::size_t at = 0;
          for (std::size_t j = 0; j < alpha.size(); ++j)
            if (j != star) alpha[j] = eps * rest[at++];
          alpha[star] = 1.0 - eps;
        } else {
          alpha = dirichlet(rng, ell);
        }
        r = check_lemma2(alpha, sigma);
        break;
      }
      case TheorySuite::Thm3: {
        Thm3Dims dims{4 + rng.next_below(5), 2 + rng.next_below(4),
                      2 + rng.next_below(4)};
        const double v_max = (i % 7 == 0) ? 0.0 : uniform_in(rng, 0.5, 2.5);
        const double u_max = uniform_in(rng, 0.5, 2.5);
        r = check_thm3(rng, dims, v_max, u_max, kShiftGrid);
        break;
      }
      case TheorySuite::Proposition: {
        r = check_proposition(rng, 3 + rng.next_below(6),
                              2 + rng.next_below(3));
        break;
      }
    }
    r.instance_id = i;
    res.report.instances_tested += 1;
    if (r.status == CheckStatus::Violation) res.report.violations += 1;
    if (r.status == CheckStatus::Inconclusive) {
      res.report.inconclusive += 1;
    } else if (r.margin < res.report.worst_margin) {
      res.report.worst_margin = r.margin;
    }
    res.rows.push_back(r);
  }
  res.report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

void write_theory_csv(std::span<const InstanceResult> rows, std::ostream& os) {
  os << "instance_id,feasible_points_found,bound_value,worst_observed,margin,"
        "status\n";
  for (const InstanceResult& r : rows) {
    os << r.instance_id << ',' << r.feasible_points_found << ','
       << fmt(r.bound_value) << ',' << fmt(r.worst_observed) << ','
       << fmt(r.margin) << ',' << check_status_name(r.status) << '\n';
  }
}

}  // namespace oasis
