#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "oasislab/metrics.hpp"
#include "oasislab/model.hpp"
#include "oasislab/quantizer.hpp"

namespace oasis {

// Flat-sectioned config text: `key = value` lines under `[section]` headers,
// `#` starts a comment. Errors carry "<origin>:<line>:" so a bad file points
// at the offending line.
struct ConfigEntry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

struct ConfigDoc {
  std::string origin;
  std::vector<ConfigEntry> entries;

  static ConfigDoc parse(std::istream& is, std::string origin);
  static ConfigDoc parse_file(const std::string& path);
  const ConfigEntry* find(std::string_view section, std::string_view key) const;
};

// Typed view over a ConfigDoc. Reads mark entries as consumed so finish()
// can reject unknown keys, again with their line numbers.
class ConfigReader {
 public:
  explicit ConfigReader(const ConfigDoc& doc);

  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  std::int64_t integer(const std::string& section, const std::string& key,
                       std::int64_t fallback) const;
  std::uint64_t uinteger(const std::string& section, const std::string& key,
                         std::uint64_t fallback) const;
  double real(const std::string& section, const std::string& key,
              double fallback) const;
  bool boolean(const std::string& section, const std::string& key,
               bool fallback) const;
  // comma-separated list; absent key yields the fallback
  std::vector<std::string> items(const std::string& section,
                                 const std::string& key,
                                 std::vector<std::string> fallback) const;

  [[noreturn]] void fail(const std::string& section, const std::string& key,
                         const std::string& msg) const;
  void finish() const;

 private:
  const ConfigEntry* take(const std::string& section,
                          const std::string& key) const;

  const ConfigDoc* doc_;
  mutable std::vector<char> used_;
};

// One experiment = a {normalizer} x {router_mode} x {seed} run matrix plus
// shared model/train settings and the analysis options.
struct ExperimentConfig {
  ModelConfig model;  // normalizer kind and router mode overridden per entry
  std::vector<NormKind> normalizers{NormKind::Softmax};
  std::vector<RouterMode> router_modes{RouterMode::Vanilla};
  TrainConfig train;  // seed overridden per entry
  TaskKind task = TaskKind::NoisyCopy;
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "runs";
  std::vector<std::int64_t> sink_set{0};
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  StatTensors stat_tensors = StatTensors::ResidualStream;
  std::vector<QuantSpec> quant{{8, 8, WeightGranularity::PerTensor, true},
                               {4, 4, WeightGranularity::PerTensor, true}};

  static ExperimentConfig from_doc(const ConfigDoc& doc);
  void validate() const;
};

// One matrix entry, fully resolved.
struct RunSpec {
  ModelConfig model;
  TrainConfig train;
  TaskKind task = TaskKind::NoisyCopy;
  std::string name;
};

std::string run_dir_name(NormKind norm, RouterMode mode, std::uint64_t seed);
std::vector<RunSpec> expand_matrix(const ExperimentConfig& cfg);

std::string sha1_hex(std::string_view bytes);
// sha1 over "blob <size>\0<content>", i.e. what `git hash-object` prints
std::string git_blob_hash(std::string_view content);
std::string params_content_hash(const Params& params);

// Held-out batch drawn from the same task definition the run trained on
// (the task-def stream matches train(), the batch stream does not).
TokenBatch eval_batch(const ModelConfig& cfg, TaskKind task,
                      std::uint64_t seed, std::int64_t batch);

// manifest.txt + loss.csv + checkpoints/{index.txt, <param>.txt}
void write_run_dir(const std::string& dir, const RunSpec& spec,
                   const TrainResult& result);

struct LoadedRun {
  RunSpec spec;
  Params params;
  std::string param_hash;
  double final_loss = 0.0;
  double final_perplexity = 0.0;
  bool diverged = false;
};

// Rebuilds the run from its manifest and checkpoints; verifies shapes
// against the config layout and the stored parameter hash.
LoadedRun load_run_dir(const std::string& dir);

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;     // config or usage error
inline constexpr int kExitMissing = 2;    // artifacts absent or unreadable
inline constexpr int kExitViolation = 3;  // theorem suite violations

struct CliOptions {
  std::string config_path;  // empty = no --config given
  std::string out_dir;      // --out-dir override, empty = unset
  bool has_seed = false;
  std::uint64_t seed = 0;
  int jobs = 1;
};

// --out-dir beats OASIS_LAB_OUT beats the config's out_dir.
std::string resolve_out_dir(const CliOptions& opt, const ExperimentConfig& cfg);

int cmd_train(const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_analyze(const CliOptions& opt, const std::string& target_dir,
                std::ostream& out, std::ostream& err);
int cmd_theory(const CliOptions& opt, const std::string& suite_name,
               std::int64_t n, std::ostream& out, std::ostream& err);
int cmd_quant(const CliOptions& opt, const std::string& target_dir,
              std::ostream& out, std::ostream& err);

}  // namespace oasis
