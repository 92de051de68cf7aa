#include "oasislab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "oasislab/kernels.hpp"

namespace oasis {

namespace {

const char* fmt(double v) {
  static thread_local char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

// head-averaged attention row for block index lb at query token t
std::vector<double> head_mean_row(const AttentionOutput& a, std::int64_t t) {
  const std::int64_t H = a.weights.extent(0), T = a.weights.extent(2);
  std::vector<double> row(static_cast<std::size_t>(T), 0.0);
  for (std::int64_t j = 0; j < T; ++j) {
    double acc = 0.0;
    for (std::int64_t h = 0; h < H; ++h) acc += a.weights.at(h, t, j);
    row[static_cast<std::size_t>(j)] = acc / static_cast<double>(H);
  }
  return row;
}

// final target layer's depth weights over attention branches 1..L,
// renormalized per token into a convex combination
std::vector<double> branch_weights(const ExampleTrace& trace, std::int64_t t) {
  require(!trace.depth.empty(), ErrorKind::Input,
          "metrics: depth weights not captured");
  const Tensor& alpha = trace.depth.back().alpha;
  const std::int64_t L = static_cast<std::int64_t>(trace.attn.size());
  require(alpha.rank() == 2 && alpha.extent(0) == L + 1, ErrorKind::Dimension,
          "metrics: final depth weights do not cover all branches");
  std::vector<double> w(static_cast<std::size_t>(L));
  double s = 0.0;
  for (std::int64_t l = 0; l < L; ++l) {
    w[static_cast<std::size_t>(l)] = alpha.at(l + 1, t);
    s += w[static_cast<std::size_t>(l)];
  }
  require(s > 0.0, ErrorKind::Degenerate,
          "metrics: attention branches carry zero depth weight");
  for (double& x : w) x /= s;
  return w;
}

void check_positions(std::span<const std::int64_t> set, std::int64_t t_len,
                     const char* what) {
  for (std::int64_t j : set)
    require(j >= 0 && j < t_len, ErrorKind::Input,
            std::string("metrics: ") + what + " position out of range");
}

}  // namespace

double kurtosis(std::span<const double> xs) {
  const std::size_t n = xs.size();
  require(n >= 2, ErrorKind::Degenerate,
          "kurtosis: need at least 2 elements");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  double m2 = 0.0, m4 = 0.0;
  for (double x : xs) {
    const double d = x - mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= static_cast<double>(n);
  m4 /= static_cast<double>(n);
  require(m2 > 0.0, ErrorKind::Degenerate, "kurtosis: zero variance");
  return m4 / (m2 * m2);
}

double kurtosis(const Tensor& x) { return kurtosis(x.flat()); }

OutlierStats outlier_stats(const RunTrace& trace, StatTensors which) {
  require(!trace.examples.empty(), ErrorKind::Input,
          "outlier_stats: empty trace");
  const ExampleTrace& first = trace.examples.front();
  std::vector<const std::vector<Tensor> ExampleTrace::*> groups;
  if (which == StatTensors::ResidualStream || which == StatTensors::Both)
    groups.push_back(&ExampleTrace::hidden);
  if (which == StatTensors::BlockOutputs || which == StatTensors::Both)
    groups.push_back(&ExampleTrace::branches);

  OutlierStats out;
  for (auto group : groups) {
    const std::size_t layers = (first.*group).size();
    require(layers > 0, ErrorKind::Input,
            "outlier_stats: trace captured without the requested tensors");
    for (const ExampleTrace& ex : trace.examples)
      require((ex.*group).size() == layers, ErrorKind::Dimension,
              "outlier_stats: ragged trace");
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<double> pool;
      double inf = 0.0;
      for (const ExampleTrace& ex : trace.examples) {
        const Tensor& t = (ex.*group)[l];
        pool.insert(pool.end(), t.flat().begin(), t.flat().end());
        inf = std::max(inf, max_abs(t.flat()));
      }
      out.per_layer_kurtosis.push_back(kurtosis(pool));
      out.per_layer_inf_norm.push_back(inf);
    }
  }
  double acc = 0.0;
  for (double k : out.per_layer_kurtosis) acc += k;
  out.avg_kurtosis = acc / static_cast<double>(out.per_layer_kurtosis.size());
  out.max_inf_norm = *std::max_element(out.per_layer_inf_norm.begin(),
                                       out.per_layer_inf_norm.end());
  return out;
}

SinkReport sink_masses(const ExampleTrace& trace,
                       std::span<const std::int64_t> sink_set) {
  require(!trace.attn.empty(), ErrorKind::Input,
          "sink_masses: attention weights not captured");
  const std::int64_t L = static_cast<std::int64_t>(trace.attn.size());
  const std::int64_t T = trace.attn.front().weights.extent(1);
  check_positions(sink_set, T, "sink");

  SinkReport rep;
  rep.sink_set.assign(sink_set.begin(), sink_set.end());
  rep.sigma = Tensor({L, T});
  rep.total = Tensor({T});
  for (std::int64_t l = 0; l < L; ++l) {
    require(trace.attn[static_cast<std::size_t>(l)].weights.extent(1) == T,
            ErrorKind::Dimension, "sink_masses: ragged attention trace");
    for (std::int64_t t = 0; t < T; ++t) {
      const std::vector<double> row =
          head_mean_row(trace.attn[static_cast<std::size_t>(l)], t);
      double s = 0.0;
      for (std::int64_t j : sink_set) s += row[static_cast<std::size_t>(j)];
      rep.sigma.at(l, t) = s;
    }
  }
  for (std::int64_t t = 0; t < T; ++t) {
    const std::vector<double> w = branch_weights(trace, t);
    double acc = 0.0;
    for (std::int64_t l = 0; l < L; ++l)
      acc += w[static_cast<std::size_t>(l)] * rep.sigma.at(l, t);
    rep.total[t] = acc;
  }
  return rep;
}

const char* score_variant_name(ScoreVariant v) {
  return v == ScoreVariant::AttnResidual ? "attn_residual" : "vanilla";
}

PathologyScore pathology_score(const ExampleTrace& trace, std::int64_t t,
                               std::span<const std::int64_t> irrelevant_set,
                               double lambda1, double lambda2,
                               ScoreVariant variant) {
  require(!trace.attn.empty(), ErrorKind::Input,
          "pathology_score: attention weights not captured");
  const std::int64_t L = static_cast<std::int64_t>(trace.attn.size());
  const std::int64_t T = trace.attn.front().weights.extent(1);
  require(t >= 0 && t < T, ErrorKind::Input,
          "pathology_score: token out of range");
  check_positions(irrelevant_set, T, "irrelevant-set");

  PathologyScore ps;
  ps.lambda1 = lambda1;
  ps.lambda2 = lambda2;
  if (variant == ScoreVariant::Vanilla) {
    const std::vector<double> p =
        head_mean_row(trace.attn[static_cast<std::size_t>(L - 1)], t);
    for (std::int64_t j : irrelevant_set)
      ps.leakage += p[static_cast<std::size_t>(j)];
    ps.concentration = *std::max_element(p.begin(), p.end());
    ps.entropy_collapse = -entropy(p);
  } else {
    const std::vector<double> w = branch_weights(trace, t);
    double mix_entropy = 0.0;
    for (std::int64_t l = 0; l < L; ++l) {
      const double wl = w[static_cast<std::size_t>(l)];
      const std::vector<double> p =
          head_mean_row(trace.attn[static_cast<std::size_t>(l)], t);
      double leak = 0.0;
      for (std::int64_t j : irrelevant_set)
        leak += p[static_cast<std::size_t>(j)];
      ps.leakage += wl * leak;
      for (double pj : p) ps.concentration = std::max(ps.concentration, wl * pj);
      mix_entropy += wl * entropy(p);
    }
    ps.entropy_collapse = -entropy(w) - mix_entropy;
  }
  ps.score = ps.leakage + lambda1 * ps.concentration + lambda2 * ps.entropy_collapse;
  return ps;
}

void write_outlier_csv(const OutlierStats& stats, std::ostream& os) {
  os << "layer,kurtosis,inf_norm\n";
  for (std::size_t l = 0; l < stats.per_layer_kurtosis.size(); ++l) {
    os << l << ',' << fmt(stats.per_layer_kurtosis[l]) << ',';
    os << fmt(stats.per_layer_inf_norm[l]) << '\n';
  }
}

void write_sink_sigma_csv(const SinkReport& report, std::ostream& os) {
  os << "layer,token,sigma\n";
  for (std::int64_t l = 0; l < report.sigma.extent(0); ++l)
    for (std::int64_t t = 0; t < report.sigma.extent(1); ++t)
      os << (l + 1) << ',' << t << ',' << fmt(report.sigma.at(l, t)) << '\n';
}

void write_sink_total_csv(const SinkReport& report, std::ostream& os) {
  os << "token,Sigma\n";
  for (std::int64_t t = 0; t < report.total.extent(0); ++t)
    os << t << ',' << fmt(report.total[t]) << '\n';
}

void write_pathology_csv(std::span<const PathologyScore> scores,
                         ScoreVariant variant, std::ostream& os) {
  os << "token,L,C,E,S,variant\n";
  for (std::size_t t = 0; t < scores.size(); ++t) {
    const PathologyScore& s = scores[t];
    os << t << ',' << fmt(s.leakage) << ',' << fmt(s.concentration) << ','
       << fmt(s.entropy_collapse) << ',' << fmt(s.score) << ','
       << score_variant_name(variant) << '\n';
  }
}

}  // namespace oasis
