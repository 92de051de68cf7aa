#include "oasislab/experiment.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "oasislab/attention.hpp"
#include "oasislab/theory.hpp"

namespace oasis {

namespace fs = std::filesystem;

namespace {

const char* fmt(double v) {
  static thread_local char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.')
      return false;
  return true;
}

bool parse_i64(const std::string& s, std::int64_t& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  if (s.empty() || s.front() == '-') return false;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_f64(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

std::ofstream open_text(const fs::path& path) {
  std::ofstream os(path);
  require(os.good(), ErrorKind::Config, "cannot write " + path.string());
  return os;
}

std::ofstream open_binary(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorKind::Config, "cannot write " + path.string());
  return os;
}

const char* null_target_name(NullTarget t) {
  return t == NullTarget::Zero ? "zero" : "previous_state";
}

const char* stat_tensors_name(StatTensors which) {
  switch (which) {
    case StatTensors::ResidualStream: return "residual_stream";
    case StatTensors::BlockOutputs: return "block_outputs";
    case StatTensors::Both: return "both";
  }
  return "?";
}

// re-anchor a name-lookup error at the config line that supplied the value
template <class F>
auto anchored(const ConfigReader& r, const std::string& section,
              const std::string& key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    r.fail(section, key, e.what());
  }
}

void read_model_keys(const ConfigReader& r, ModelConfig& m) {
  m.vocab = r.integer("model", "vocab", m.vocab);
  m.d_model = r.integer("model", "d_model", m.d_model);
  m.n_heads = r.integer("model", "n_heads", m.n_heads);
  m.n_layers = r.integer("model", "n_layers", m.n_layers);
  m.mlp_ratio = r.integer("model", "mlp_ratio", m.mlp_ratio);
  m.seq_len = r.integer("model", "seq_len", m.seq_len);
  m.normalizer.gamma = r.real("model", "gamma", m.normalizer.gamma);
  m.normalizer.zeta = r.real("model", "zeta", m.normalizer.zeta);
  m.gated = r.boolean("model", "gated", m.gated);
  m.positional = r.boolean("model", "positional", m.positional);
  const std::string nt =
      r.str("model", "null_target", null_target_name(m.null_target));
  if (nt == "zero") m.null_target = NullTarget::Zero;
  else if (nt == "previous_state") m.null_target = NullTarget::PreviousState;
  else r.fail("model", "null_target", "expected zero|previous_state, got '" + nt + "'");
}

void read_train_keys(const ConfigReader& r, TrainConfig& t) {
  t.steps = r.integer("train", "steps", t.steps);
  t.batch = r.integer("train", "batch", t.batch);
  t.lr = r.real("train", "lr", t.lr);
  t.beta1 = r.real("train", "beta1", t.beta1);
  t.beta2 = r.real("train", "beta2", t.beta2);
  t.eps = r.real("train", "eps", t.eps);
  t.grad_clip = r.real("train", "grad_clip", t.grad_clip);
  t.trace_every = r.integer("train", "trace_every", t.trace_every);
}

QuantSpec parse_quant_spec(const std::string& s) {
  QuantSpec spec;
  const auto bad = [&] {
    raise(ErrorKind::Config, "expected w<bits>a<bits> (e.g. w8a8), got '" + s + "'");
  };
  if (s.size() < 4 || s.front() != 'w') bad();
  const auto a = s.find('a', 1);
  if (a == std::string::npos || a == 1 || a + 1 >= s.size()) bad();
  std::int64_t w = 0, act = 0;
  if (!parse_i64(s.substr(1, a - 1), w) || !parse_i64(s.substr(a + 1), act)) bad();
  spec.weight_bits = static_cast<int>(w);
  spec.act_bits = static_cast<int>(act);
  spec.validate();
  return spec;
}

int exit_code_for(const Error& e) {
  return e.kind() == ErrorKind::Input ? kExitMissing : kExitConfig;
}

}  // namespace

ConfigDoc ConfigDoc::parse(std::istream& is, std::string origin) {
  ConfigDoc doc;
  doc.origin = std::move(origin);
  std::string line;
  std::string section;
  int lineno = 0;
  const auto fail = [&](const std::string& msg) {
    raise(ErrorKind::Config,
          doc.origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') fail("expected ']' to close the section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      if (!valid_name(section)) fail("invalid section name");
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!valid_name(key)) fail("invalid key name '" + key + "'");
    if (value.empty()) fail("key '" + key + "' has no value");
    if (section.empty()) fail("key '" + key + "' appears before any [section]");
    for (const ConfigEntry& e : doc.entries)
      if (e.section == section && e.key == key)
        fail("duplicate key '" + section + "." + key + "' (first set on line " +
             std::to_string(e.line) + ")");
    doc.entries.push_back({section, key, value, lineno});
  }
  return doc;
}

ConfigDoc ConfigDoc::parse_file(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), ErrorKind::Config, "cannot open config file: " + path);
  return parse(is, path);
}

const ConfigEntry* ConfigDoc::find(std::string_view section,
                                   std::string_view key) const {
  for (const ConfigEntry& e : entries)
    if (e.section == section && e.key == key) return &e;
  return nullptr;
}

ConfigReader::ConfigReader(const ConfigDoc& doc)
    : doc_(&doc), used_(doc.entries.size(), 0) {}

const ConfigEntry* ConfigReader::take(const std::string& section,
                                      const std::string& key) const {
  for (std::size_t i = 0; i < doc_->entries.size(); ++i) {
    const ConfigEntry& e = doc_->entries[i];
    if (e.section == section && e.key == key) {
      used_[i] = 1;
      return &e;
    }
  }
  return nullptr;
}

void ConfigReader::fail(const std::string& section, const std::string& key,
                        const std::string& msg) const {
  const ConfigEntry* e = doc_->find(section, key);
  const std::string at =
      e ? doc_->origin + ":" + std::to_string(e->line) : doc_->origin;
  raise(ErrorKind::Config, at + ": [" + section + "] " + key + ": " + msg);
}

std::string ConfigReader::str(const std::string& section,
                              const std::string& key,
                              const std::string& fallback) const {
  const ConfigEntry* e = take(section, key);
  return e ? e->value : fallback;
}

std::int64_t ConfigReader::integer(const std::string& section,
                                   const std::string& key,
                                   std::int64_t fallback) const {
  const ConfigEntry* e = take(section, key);
  if (!e) return fallback;
  std::int64_t out = 0;
  if (!parse_i64(e->value, out))
    fail(section, key, "expected an integer, got '" + e->value + "'");
  return out;
}

std::uint64_t ConfigReader::uinteger(const std::string& section,
                                     const std::string& key,
                                     std::uint64_t fallback) const {
  const ConfigEntry* e = take(section, key);
  if (!e) return fallback;
  std::uint64_t out = 0;
  if (!parse_u64(e->value, out))
    fail(section, key, "expected a nonnegative integer, got '" + e->value + "'");
  return out;
}

double ConfigReader::real(const std::string& section, const std::string& key,
                          double fallback) const {
  const ConfigEntry* e = take(section, key);
  if (!e) return fallback;
  double out = 0.0;
  if (!parse_f64(e->value, out) || !std::isfinite(out))
    fail(section, key, "expected a finite real, got '" + e->value + "'");
  return out;
}

bool ConfigReader::boolean(const std::string& section, const std::string& key,
                           bool fallback) const {
  const ConfigEntry* e = take(section, key);
  if (!e) return fallback;
  if (e->value == "true") return true;
  if (e->value == "false") return false;
  fail(section, key, "expected true|false, got '" + e->value + "'");
}

std::vector<std::string> ConfigReader::items(
    const std::string& section, const std::string& key,
    std::vector<std::string> fallback) const {
  const ConfigEntry* e = take(section, key);
  if (!e) return fallback;
  std::vector<std::string> out;
  std::size_t start = 0;
  const std::string& v = e->value;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto end = comma == std::string::npos ? v.size() : comma;
    const std::string item = trim(std::string_view(v).substr(start, end - start));
    if (item.empty())
      fail(section, key, "empty item in list '" + v + "'");
    out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void ConfigReader::finish() const {
  for (std::size_t i = 0; i < doc_->entries.size(); ++i) {
    if (used_[i]) continue;
    const ConfigEntry& e = doc_->entries[i];
    raise(ErrorKind::Config, doc_->origin + ":" + std::to_string(e.line) +
                                 ": unknown key [" + e.section + "] " + e.key);
  }
}

ExperimentConfig ExperimentConfig::from_doc(const ConfigDoc& doc) {
  ConfigReader r(doc);
  ExperimentConfig cfg;
  read_model_keys(r, cfg.model);

  cfg.normalizers.clear();
  for (const std::string& s : r.items("model", "normalizer", {"softmax"})) {
    const NormKind kind =
        anchored(r, "model", "normalizer", [&] { return norm_kind_from_name(s); });
    if (std::find(cfg.normalizers.begin(), cfg.normalizers.end(), kind) !=
        cfg.normalizers.end())
      r.fail("model", "normalizer", "duplicate entry '" + s + "'");
    cfg.normalizers.push_back(kind);
  }
  cfg.router_modes.clear();
  for (const std::string& s : r.items("model", "router_mode", {"vanilla"})) {
    const RouterMode mode = anchored(r, "model", "router_mode",
                                     [&] { return router_mode_from_name(s); });
    if (std::find(cfg.router_modes.begin(), cfg.router_modes.end(), mode) !=
        cfg.router_modes.end())
      r.fail("model", "router_mode", "duplicate entry '" + s + "'");
    cfg.router_modes.push_back(mode);
  }

  read_train_keys(r, cfg.train);
  cfg.task = anchored(r, "train", "task", [&] {
    return task_from_name(r.str("train", "task", task_name(cfg.task)));
  });

  cfg.seeds.clear();
  for (const std::string& s : r.items("run", "seeds", {"0"})) {
    std::uint64_t seed = 0;
    if (!parse_u64(s, seed))
      r.fail("run", "seeds", "expected a nonnegative integer, got '" + s + "'");
    if (std::find(cfg.seeds.begin(), cfg.seeds.end(), seed) != cfg.seeds.end())
      r.fail("run", "seeds", "duplicate seed " + s);
    cfg.seeds.push_back(seed);
  }
  cfg.out_dir = r.str("run", "out_dir", cfg.out_dir);

  cfg.sink_set.clear();
  for (const std::string& s : r.items("metrics", "sink_set", {"0"})) {
    std::int64_t k = 0;
    if (!parse_i64(s, k))
      r.fail("metrics", "sink_set", "expected an integer, got '" + s + "'");
    if (std::find(cfg.sink_set.begin(), cfg.sink_set.end(), k) !=
        cfg.sink_set.end())
      r.fail("metrics", "sink_set", "duplicate position " + s);
    cfg.sink_set.push_back(k);
  }
  cfg.lambda1 = r.real("metrics", "lambda1", cfg.lambda1);
  cfg.lambda2 = r.real("metrics", "lambda2", cfg.lambda2);
  const std::string which =
      r.str("metrics", "stat_tensors", stat_tensors_name(cfg.stat_tensors));
  if (which == "residual_stream") cfg.stat_tensors = StatTensors::ResidualStream;
  else if (which == "block_outputs") cfg.stat_tensors = StatTensors::BlockOutputs;
  else if (which == "both") cfg.stat_tensors = StatTensors::Both;
  else r.fail("metrics", "stat_tensors",
              "expected residual_stream|block_outputs|both, got '" + which + "'");

  const WeightGranularity gran = anchored(r, "quant", "weight_granularity", [&] {
    return granularity_from_name(r.str("quant", "weight_granularity",
                                       granularity_name(WeightGranularity::PerTensor)));
  });
  cfg.quant.clear();
  for (const std::string& s : r.items("quant", "specs", {"w8a8", "w4a4"})) {
    QuantSpec spec =
        anchored(r, "quant", "specs", [&] { return parse_quant_spec(s); });
    spec.weight_granularity = gran;
    cfg.quant.push_back(spec);
  }

  r.finish();
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  require(!normalizers.empty(), ErrorKind::Config,
          "experiment: normalizer list is empty");
  require(!router_modes.empty(), ErrorKind::Config,
          "experiment: router_mode list is empty");
  require(!seeds.empty(), ErrorKind::Config, "experiment: seeds must be nonempty");
  require(!out_dir.empty(), ErrorKind::Config, "experiment: out_dir is empty");
  require(!sink_set.empty(), ErrorKind::Config, "experiment: sink_set is empty");
  for (const std::int64_t k : sink_set)
    require(k >= 0 && k < model.seq_len, ErrorKind::Config,
            "experiment: sink_set position " + std::to_string(k) +
                " outside [0, seq_len)");
  require(std::isfinite(lambda1) && lambda1 >= 0.0, ErrorKind::Config,
          "experiment: lambda1 must be finite and nonnegative");
  require(std::isfinite(lambda2) && lambda2 >= 0.0, ErrorKind::Config,
          "experiment: lambda2 must be finite and nonnegative");
  require(!quant.empty(), ErrorKind::Config, "experiment: quant spec list is empty");
  for (const QuantSpec& q : quant) q.validate();
}

std::string run_dir_name(NormKind norm, RouterMode mode, std::uint64_t seed) {
  return std::string(norm_kind_name(norm)) + "-" + router_mode_name(mode) +
         "-seed" + std::to_string(seed);
}

std::vector<RunSpec> expand_matrix(const ExperimentConfig& cfg) {
  std::vector<RunSpec> out;
  out.reserve(cfg.normalizers.size() * cfg.router_modes.size() *
              cfg.seeds.size());
  for (const NormKind norm : cfg.normalizers)
    for (const RouterMode mode : cfg.router_modes)
      for (const std::uint64_t seed : cfg.seeds) {
        RunSpec rs;
        rs.model = cfg.model;
        rs.model.normalizer.kind = norm;
        rs.model.router_mode = mode;
        rs.train = cfg.train;
        rs.train.seed = seed;
        rs.task = cfg.task;
        rs.name = run_dir_name(norm, mode, seed);
        out.push_back(std::move(rs));
      }
  return out;
}

namespace {

// FIPS 180-1 SHA-1, enough for the git-style content hash of checkpoints.
struct Sha1 {
  std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u,
                        0xC3D2E1F0u};
  std::uint64_t total = 0;
  unsigned char block[64] = {};
  std::size_t fill = 0;

  static std::uint32_t rol(std::uint32_t x, int s) {
    return (x << s) | (x >> (32 - s));
  }

  void compress(const unsigned char* p) {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    for (int i = 16; i < 80; ++i)
      w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      const std::uint32_t t = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = t;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
  }

  void update(const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    total += n;
    while (n > 0) {
      const std::size_t take = std::min(n, std::size_t{64} - fill);
      std::memcpy(block + fill, p, take);
      fill += take;
      p += take;
      n -= take;
      if (fill == 64) {
        compress(block);
        fill = 0;
      }
    }
  }

  std::string hex() {
    const std::uint64_t bits = total * 8;
    const unsigned char one = 0x80, zero = 0;
    update(&one, 1);
    while (fill != 56) update(&zero, 1);
    unsigned char len[8];
    for (int i = 0; i < 8; ++i)
      len[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len, 8);
    std::string out(40, '0');
    for (int i = 0; i < 5; ++i)
      std::snprintf(out.data() + 8 * i, 9, "%08x", h[i]);
    return out;
  }
};

}  // namespace

std::string sha1_hex(std::string_view bytes) {
  Sha1 s;
  s.update(bytes.data(), bytes.size());
  return s.hex();
}

std::string git_blob_hash(std::string_view content) {
  std::string header = "blob " + std::to_string(content.size());
  header.push_back('\0');
  Sha1 s;
  s.update(header.data(), header.size());
  s.update(content.data(), content.size());
  return s.hex();
}

std::string params_content_hash(const Params& params) {
  std::ostringstream os;
  for (const auto& [name, value] : params.entries) {
    os << name << '\n';
    value.dump(os);
  }
  return git_blob_hash(os.str());
}

TokenBatch eval_batch(const ModelConfig& cfg, TaskKind task,
                      std::uint64_t seed, std::int64_t batch) {
  const Rng root(seed);
  // same task-def stream as train(), so char_lm evaluates the chain it
  // trained on; the "eval" stream never collides with training batches
  const TaskDef def = make_task(task, cfg, root.fork("task-def"));
  Rng erng = root.fork("eval");
  return sample_batch(def, cfg, batch, erng);
}

namespace {

void write_manifest(std::ostream& os, const RunSpec& spec,
                    const std::string& hash, double final_loss,
                    double final_ppl, bool diverged,
                    const std::string& message) {
  const ModelConfig& m = spec.model;
  const TrainConfig& t = spec.train;
  os << "[run]\n";
  os << "name = " << spec.name << '\n';
  os << "task = " << task_name(spec.task) << '\n';
  os << "seed = " << t.seed << '\n';
  os << "[model]\n";
  os << "vocab = " << m.vocab << '\n';
  os << "d_model = " << m.d_model << '\n';
  os << "n_heads = " << m.n_heads << '\n';
  os << "n_layers = " << m.n_layers << '\n';
  os << "mlp_ratio = " << m.mlp_ratio << '\n';
  os << "seq_len = " << m.seq_len << '\n';
  os << "normalizer = " << norm_kind_name(m.normalizer.kind) << '\n';
  os << "gamma = " << fmt(m.normalizer.gamma) << '\n';
  os << "zeta = " << fmt(m.normalizer.zeta) << '\n';
  os << "router_mode = " << router_mode_name(m.router_mode) << '\n';
  os << "gated = " << (m.gated ? "true" : "false") << '\n';
  os << "null_target = " << null_target_name(m.null_target) << '\n';
  os << "positional = " << (m.positional ? "true" : "false") << '\n';
  os << "[train]\n";
  os << "steps = " << t.steps << '\n';
  os << "batch = " << t.batch << '\n';
  os << "lr = " << fmt(t.lr) << '\n';
  os << "beta1 = " << fmt(t.beta1) << '\n';
  os << "beta2 = " << fmt(t.beta2) << '\n';
  os << "eps = " << fmt(t.eps) << '\n';
  os << "grad_clip = " << fmt(t.grad_clip) << '\n';
  os << "trace_every = " << t.trace_every << '\n';
  os << "[result]\n";
  os << "param_hash = " << hash << '\n';
  os << "final_loss = " << fmt(final_loss) << '\n';
  os << "final_perplexity = " << fmt(final_ppl) << '\n';
  os << "diverged = " << (diverged ? "true" : "false") << '\n';
  if (!message.empty()) {
    std::string clean = message;
    for (char& c : clean)
      if (c == '\n' || c == '#') c = ' ';
    os << "message = " << clean << '\n';
  }
  os << "note = toy-scale hyperparameters are artifact decisions, not "
        "transferred settings\n";
}

}  // namespace

void write_run_dir(const std::string& dir, const RunSpec& spec,
                   const TrainResult& result) {
  require(!result.loss_curve.empty(), ErrorKind::Parameter,
          "write_run_dir: empty loss curve");
  const fs::path root(dir);
  fs::create_directories(root / "checkpoints");

  {
    std::ofstream os = open_text(root / "loss.csv");
    os << "step,loss\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
      os << i << ',' << fmt(result.loss_curve[i]) << '\n';
  }
  {
    std::ofstream index = open_text(root / "checkpoints" / "index.txt");
    for (const auto& [name, value] : result.params.entries) {
      index << name;
      for (const std::int64_t d : value.shape()) index << ' ' << d;
      index << '\n';
      std::ofstream os = open_text(root / "checkpoints" / (name + ".txt"));
      value.dump(os);
    }
  }

  const std::string hash = params_content_hash(result.params);
  const TokenBatch batch =
      eval_batch(spec.model, spec.task, spec.train.seed, spec.train.batch);
  const double ppl = perplexity(spec.model, result.params, batch);
  std::ofstream os = open_text(root / "manifest.txt");
  write_manifest(os, spec, hash, result.loss_curve.back(), ppl,
                 result.diverged, result.message);
}

LoadedRun load_run_dir(const std::string& dir) {
  const fs::path root(dir);
  const fs::path mpath = root / "manifest.txt";
  require(fs::exists(mpath), ErrorKind::Input,
          "missing manifest: " + mpath.string());
  ConfigDoc doc;
  try {
    doc = ConfigDoc::parse_file(mpath.string());
  } catch (const Error& e) {
    raise(ErrorKind::Input, e.what());
  }
  ConfigReader r(doc);

  LoadedRun run;
  read_model_keys(r, run.spec.model);
  run.spec.model.normalizer.kind = anchored(r, "model", "normalizer", [&] {
    return norm_kind_from_name(r.str(
        "model", "normalizer", norm_kind_name(run.spec.model.normalizer.kind)));
  });
  run.spec.model.router_mode = anchored(r, "model", "router_mode", [&] {
    return router_mode_from_name(
        r.str("model", "router_mode", router_mode_name(run.spec.model.router_mode)));
  });
  read_train_keys(r, run.spec.train);
  run.spec.train.seed = r.uinteger("run", "seed", 0);
  run.spec.task = anchored(r, "run", "task", [&] {
    return task_from_name(r.str("run", "task", task_name(run.spec.task)));
  });
  run.spec.name = r.str("run", "name", root.filename().string());
  run.spec.model.validate();
  run.spec.train.validate();

  run.param_hash = r.str("result", "param_hash", "");
  require(!run.param_hash.empty(), ErrorKind::Input,
          "manifest missing param_hash: " + mpath.string());
  run.final_loss = r.real("result", "final_loss", 0.0);
  run.final_perplexity = r.real("result", "final_perplexity", 0.0);
  run.diverged = r.boolean("result", "diverged", false);

  const fs::path ipath = root / "checkpoints" / "index.txt";
  std::ifstream index(ipath);
  require(index.good(), ErrorKind::Input,
          "missing checkpoint index: " + ipath.string());
  std::string line;
  int lineno = 0;
  while (std::getline(index, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream ss(line);
    std::string name;
    ss >> name;
    std::vector<std::int64_t> dims;
    std::int64_t d = 0;
    while (ss >> d) dims.push_back(d);
    require(!name.empty() && !dims.empty() && ss.eof(), ErrorKind::Input,
            ipath.string() + ":" + std::to_string(lineno) +
                ": expected '<name> <dims...>'");
    const fs::path ppath = root / "checkpoints" / (name + ".txt");
    std::ifstream ps(ppath);
    require(ps.good(), ErrorKind::Input,
            "missing checkpoint tensor: " + ppath.string());
    Tensor t = Tensor::load(ps);
    require(std::ranges::equal(t.shape(), dims), ErrorKind::Input,
            "checkpoint shape does not match the index for " + name);
    run.params.entries.emplace_back(name, std::move(t));
  }

  const auto shapes = param_shapes(run.spec.model);
  require(run.params.entries.size() == shapes.size(), ErrorKind::Input,
          "checkpoint layout does not match the manifest config: " + dir);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& [name, value] = run.params.entries[i];
    require(name == shapes[i].first &&
                std::ranges::equal(value.shape(), shapes[i].second),
            ErrorKind::Input, "checkpoint mismatch at " + shapes[i].first);
  }
  require(params_content_hash(run.params) == run.param_hash, ErrorKind::Input,
          "parameter hash mismatch: " + dir);
  return run;
}

std::string resolve_out_dir(const CliOptions& opt, const ExperimentConfig& cfg) {
  if (!opt.out_dir.empty()) return opt.out_dir;
  if (const char* env = std::getenv("OASIS_LAB_OUT"); env && *env) return env;
  return cfg.out_dir;
}

int cmd_train(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    require(!opt.config_path.empty(), ErrorKind::Config,
            "train requires --config");
    ExperimentConfig cfg =
        ExperimentConfig::from_doc(ConfigDoc::parse_file(opt.config_path));
    if (opt.has_seed) cfg.seeds = {opt.seed};
    const std::string out_dir = resolve_out_dir(opt, cfg);
    fs::create_directories(out_dir);

    const std::vector<RunSpec> specs = expand_matrix(cfg);
    struct Slot {
      std::string log;
      std::exception_ptr error;
    };
    std::vector<Slot> slots(specs.size());
    std::atomic<std::size_t> cursor{0};
    const auto worker = [&] {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= specs.size()) return;
        try {
          const RunSpec& rs = specs[i];
          const TrainResult res = train(rs.model, rs.train, rs.task);
          const std::string dir = (fs::path(out_dir) / rs.name).string();
          write_run_dir(dir, rs, res);
          std::ostringstream line;
          line << rs.name << ": final_loss=" << fmt(res.loss_curve.back());
          if (res.diverged) line << " DIVERGED (" << res.message << ")";
          line << " -> " << dir << '\n';
          slots[i].log = line.str();
        } catch (...) {
          slots[i].error = std::current_exception();
        }
      }
    };
    const std::size_t jobs = std::min<std::size_t>(
        std::max(1, opt.jobs), std::max<std::size_t>(1, specs.size()));
    if (jobs <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
      for (std::thread& t : pool) t.join();
    }
    // merge worker reports sequentially in matrix order
    for (const Slot& s : slots) {
      if (s.error) std::rethrow_exception(s.error);
      out << s.log;
    }
    out << "trained " << specs.size() << " run(s) under " << out_dir << '\n';
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

namespace {

std::vector<fs::path> discover_runs(const fs::path& root) {
  std::vector<fs::path> out;
  if (fs::exists(root / "manifest.txt")) {
    out.push_back(root);
    return out;
  }
  if (!fs::is_directory(root)) return out;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.txt"))
      out.push_back(entry.path());
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

struct RunMetricsRow {
  std::string name;
  double final_loss = 0.0;
  double eval_perplexity = 0.0;
  double avg_kurtosis = 0.0;
  double max_inf_norm = 0.0;
  double mean_sink_total = 0.0;
  double mean_pathology_attn_residual = 0.0;
  double mean_pathology_vanilla = 0.0;
};

RunMetricsRow analyze_run(const fs::path& dir, const LoadedRun& run,
                          const ExperimentConfig& cfg) {
  const ModelConfig& m = run.spec.model;
  for (const std::int64_t k : cfg.sink_set)
    require(k >= 0 && k < m.seq_len, ErrorKind::Input,
            "sink_set position " + std::to_string(k) +
                " outside this run's sequence length");

  const TokenBatch batch =
      eval_batch(m, run.spec.task, run.spec.train.seed, run.spec.train.batch);
  const ForwardResult fr = forward(m, run.params, batch, /*capture=*/true);
  const RunTrace& trace = fr.trace;
  const std::size_t n_examples = trace.examples.size();

  const OutlierStats stats = outlier_stats(trace, cfg.stat_tensors);
  {
    std::ofstream os = open_text(dir / "outliers.csv");
    write_outlier_csv(stats, os);
  }

  SinkReport sink = sink_masses(trace.examples[0], cfg.sink_set);
  for (std::size_t e = 1; e < n_examples; ++e) {
    const SinkReport one = sink_masses(trace.examples[e], cfg.sink_set);
    auto sig = sink.sigma.flat();
    const auto sig_one = one.sigma.flat();
    for (std::size_t i = 0; i < sig.size(); ++i) sig[i] += sig_one[i];
    auto tot = sink.total.flat();
    const auto tot_one = one.total.flat();
    for (std::size_t i = 0; i < tot.size(); ++i) tot[i] += tot_one[i];
  }
  for (double& x : sink.sigma.flat()) x /= static_cast<double>(n_examples);
  for (double& x : sink.total.flat()) x /= static_cast<double>(n_examples);
  {
    std::ofstream os = open_text(dir / "sink_sigma.csv");
    write_sink_sigma_csv(sink, os);
  }
  {
    std::ofstream os = open_text(dir / "sink_total.csv");
    write_sink_total_csv(sink, os);
  }

  const std::int64_t T = m.seq_len;
  const std::array<ScoreVariant, 2> variants{ScoreVariant::AttnResidual,
                                             ScoreVariant::Vanilla};
  std::array<double, 2> mean_score{0.0, 0.0};
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::vector<PathologyScore> avg(static_cast<std::size_t>(T));
    for (std::size_t e = 0; e < n_examples; ++e)
      for (std::int64_t t = 0; t < T; ++t) {
        const PathologyScore s =
            pathology_score(trace.examples[e], t, cfg.sink_set, cfg.lambda1,
                            cfg.lambda2, variants[v]);
        PathologyScore& a = avg[static_cast<std::size_t>(t)];
        a.leakage += s.leakage;
        a.concentration += s.concentration;
        a.entropy_collapse += s.entropy_collapse;
        a.score += s.score;
      }
    for (PathologyScore& a : avg) {
      a.leakage /= static_cast<double>(n_examples);
      a.concentration /= static_cast<double>(n_examples);
      a.entropy_collapse /= static_cast<double>(n_examples);
      a.score /= static_cast<double>(n_examples);
      a.lambda1 = cfg.lambda1;
      a.lambda2 = cfg.lambda2;
      mean_score[v] += a.score;
    }
    mean_score[v] /= static_cast<double>(T);
    std::ofstream os = open_text(
        dir / (std::string("pathology_") + score_variant_name(variants[v]) + ".csv"));
    write_pathology_csv(avg, variants[v], os);
  }

  const ExampleTrace& ex0 = trace.examples[0];
  fs::create_directories(dir / "attn");
  fs::create_directories(dir / "heatmaps");
  for (std::size_t l = 0; l < ex0.attn.size(); ++l) {
    const std::string layer = "layer" + std::to_string(l + 1);
    {
      std::ofstream os = open_text(dir / "attn" / (layer + ".csv"));
      write_attention_csv(ex0.attn[l], os);
    }
    for (std::int64_t h = 0; h < m.n_heads; ++h) {
      std::ofstream os = open_binary(
          dir / "heatmaps" / (layer + "_head" + std::to_string(h) + ".pgm"));
      write_attention_pgm(ex0.attn[l], h, os);
    }
  }

  RunMetricsRow row;
  row.name = run.spec.name;
  row.final_loss = run.final_loss;
  row.eval_perplexity = perplexity(m, run.params, batch);
  row.avg_kurtosis = stats.avg_kurtosis;
  row.max_inf_norm = stats.max_inf_norm;
  double total = 0.0;
  for (const double x : sink.total.flat()) total += x;
  row.mean_sink_total = total / static_cast<double>(T);
  row.mean_pathology_attn_residual = mean_score[0];
  row.mean_pathology_vanilla = mean_score[1];
  return row;
}

void write_comparison_csv(std::span<const RunMetricsRow> rows,
                          std::ostream& os) {
  os << "metric,run,value\n";
  const std::pair<const char*, double RunMetricsRow::*> metrics[] = {
      {"final_loss", &RunMetricsRow::final_loss},
      {"eval_perplexity", &RunMetricsRow::eval_perplexity},
      {"avg_kurtosis", &RunMetricsRow::avg_kurtosis},
      {"max_inf_norm", &RunMetricsRow::max_inf_norm},
      {"mean_sink_total", &RunMetricsRow::mean_sink_total},
      {"mean_pathology_attn_residual",
       &RunMetricsRow::mean_pathology_attn_residual},
      {"mean_pathology_vanilla", &RunMetricsRow::mean_pathology_vanilla},
  };
  for (const auto& [name, member] : metrics)
    for (const RunMetricsRow& row : rows)
      os << name << ',' << row.name << ',' << fmt(row.*member) << '\n';
}

ExperimentConfig config_or_default(const CliOptions& opt) {
  if (opt.config_path.empty()) return ExperimentConfig{};
  return ExperimentConfig::from_doc(ConfigDoc::parse_file(opt.config_path));
}

}  // namespace

int cmd_analyze(const CliOptions& opt, const std::string& target_dir,
                std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = config_or_default(opt);
    const fs::path root =
        target_dir.empty() ? fs::path(resolve_out_dir(opt, cfg))
                           : fs::path(target_dir);
    require(fs::exists(root), ErrorKind::Input,
            "run directory not found: " + root.string());
    const std::vector<fs::path> dirs = discover_runs(root);
    require(!dirs.empty(), ErrorKind::Input,
            "no run manifests under: " + root.string());

    std::vector<RunMetricsRow> table;
    for (const fs::path& dir : dirs) {
      try {
        const LoadedRun run = load_run_dir(dir.string());
        table.push_back(analyze_run(dir, run, cfg));
        out << "analyzed " << table.back().name << '\n';
      } catch (const Error& e) {
        err << "warning: skipping " << dir.string() << ": " << e.what() << '\n';
      }
    }
    require(!table.empty(), ErrorKind::Input,
            "nothing analyzable under: " + root.string());
    {
      std::ofstream os = open_text(root / "comparison.csv");
      write_comparison_csv(table, os);
    }
    out << "comparison table: " << (root / "comparison.csv").string() << '\n';
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

int cmd_theory(const CliOptions& opt, const std::string& suite_name,
               std::int64_t n, std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = config_or_default(opt);
    const fs::path tdir = fs::path(resolve_out_dir(opt, cfg)) / "theory";
    const std::uint64_t seed = opt.has_seed ? opt.seed : 0;

    std::vector<TheorySuite> suites;
    if (suite_name == "all")
      suites = {TheorySuite::Lemma1, TheorySuite::Thm2, TheorySuite::Lemma2,
                TheorySuite::Thm3, TheorySuite::Proposition};
    else
      suites = {theory_suite_from_name(suite_name)};

    fs::create_directories(tdir);
    std::int64_t total_violations = 0;
    std::ostringstream summary;
    summary << "suite,instances,violations,inconclusive,worst_margin\n";
    for (const TheorySuite suite : suites) {
      const SuiteResult res = run_suite(suite, n, seed);
      const char* name = theory_suite_name(suite);
      {
        std::ofstream os = open_text(tdir / (std::string(name) + ".csv"));
        write_theory_csv(res.rows, os);
      }
      summary << name << ',' << res.report.instances_tested << ','
              << res.report.violations << ',' << res.report.inconclusive << ','
              << fmt(res.report.worst_margin) << '\n';
      out << name << ": n=" << res.report.instances_tested
          << " violations=" << res.report.violations
          << " inconclusive=" << res.report.inconclusive
          << " worst_margin=" << fmt(res.report.worst_margin) << " ("
          << res.report.runtime_seconds << "s)\n";
      total_violations += res.report.violations;
    }
    {
      std::ofstream os = open_text(tdir / "summary.csv");
      os << summary.str();
    }
    out << "reports under " << tdir.string() << '\n';
    if (total_violations > 0) {
      err << "error: " << total_violations << " bound violation(s)\n";
      return kExitViolation;
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

int cmd_quant(const CliOptions& opt, const std::string& target_dir,
              std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = config_or_default(opt);
    const fs::path root =
        target_dir.empty() ? fs::path(resolve_out_dir(opt, cfg))
                           : fs::path(target_dir);
    require(fs::exists(root), ErrorKind::Input,
            "run directory not found: " + root.string());
    const std::vector<fs::path> dirs = discover_runs(root);
    require(!dirs.empty(), ErrorKind::Input,
            "no run manifests under: " + root.string());

    std::vector<QuantRow> rows;
    std::size_t evaluated = 0;
    for (const fs::path& dir : dirs) {
      try {
        const LoadedRun run = load_run_dir(dir.string());
        const ModelConfig& m = run.spec.model;
        const TokenBatch batch = eval_batch(m, run.spec.task,
                                            run.spec.train.seed,
                                            run.spec.train.batch);
        for (const QuantSpec& spec : cfg.quant) {
          const QuantEval ev = eval_quantized(m, run.params, spec, batch);
          rows.push_back({norm_kind_name(m.normalizer.kind),
                          router_mode_name(m.router_mode), run.spec.train.seed,
                          spec.weight_bits, spec.act_bits, ev.ppl_fp,
                          ev.ppl_quant, ev.degradation_ratio});
        }
        ++evaluated;
        out << "evaluated " << run.spec.name << " under " << cfg.quant.size()
            << " spec(s)\n";
      } catch (const Error& e) {
        err << "warning: skipping " << dir.string() << ": " << e.what() << '\n';
      }
    }
    require(evaluated > 0, ErrorKind::Input,
            "nothing to evaluate under: " + root.string());
    {
      std::ofstream os = open_text(root / "quant.csv");
      write_quant_csv(rows, os);
    }
    out << "quant table: " << (root / "quant.csv").string() << '\n';
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace oasis
