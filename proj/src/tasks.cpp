#include "oasislab/model.hpp"

namespace oasis {

namespace {
constexpr std::int64_t kBos = 0;
constexpr std::int64_t kContentBase = 2;  // ids 0/1 reserved (BOS, unused)
constexpr std::int64_t kCopyPeriod = 8;
constexpr std::int64_t kNoisyPeriod = 5;
constexpr int kMarkovFanout = 4;
constexpr double kMarkovCdf[kMarkovFanout] = {0.4, 0.7, 0.9, 1.0};

std::int64_t draw_content(const ModelConfig& cfg, Rng& rng) {
  return kContentBase + rng.next_below(cfg.vocab - kContentBase);
}
}  // namespace

const char* task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::NoisyCopy: return "noisy_copy";
    case TaskKind::CharLm: return "char_lm";
  }
  raise(ErrorKind::Parameter, "unknown task kind");
}

TaskKind task_from_name(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "noisy_copy") return TaskKind::NoisyCopy;
  if (name == "char_lm") return TaskKind::CharLm;
  raise(ErrorKind::Config, "unknown task name: " + name);
}

TaskDef make_task(TaskKind kind, const ModelConfig& cfg, Rng rng) {
  cfg.validate();
  require(cfg.vocab > kContentBase, ErrorKind::Config,
          "tasks: vocab too small for content tokens");
  TaskDef def;
  def.kind = kind;
  if (kind == TaskKind::CharLm) {
    def.markov_next.resize(
        static_cast<std::size_t>(cfg.vocab * kMarkovFanout));
    for (std::int64_t s = 0; s < cfg.vocab; ++s)
      for (int j = 0; j < kMarkovFanout; ++j)
        def.markov_next[static_cast<std::size_t>(s * kMarkovFanout + j)] =
            rng.next_below(cfg.vocab);
  }
  return def;
}

TokenBatch sample_batch(const TaskDef& task, const ModelConfig& cfg,
                        std::int64_t batch, Rng& rng) {
  require(batch > 0, ErrorKind::Parameter, "sample_batch: batch must be > 0");
  TokenBatch out;
  out.batch = batch;
  out.t_len = cfg.seq_len;
  out.ids.resize(static_cast<std::size_t>(batch * cfg.seq_len));
  for (std::int64_t b = 0; b < batch; ++b) {
    std::int64_t* row = out.ids.data() + b * cfg.seq_len;
    row[0] = kBos;
    switch (task.kind) {
      case TaskKind::Copy: {
        std::int64_t content[kCopyPeriod];
        for (auto& c : content) c = draw_content(cfg, rng);
        for (std::int64_t t = 1; t < cfg.seq_len; ++t)
          row[t] = content[(t - 1) % kCopyPeriod];
        break;
      }
      case TaskKind::NoisyCopy: {
        std::int64_t content[kNoisyPeriod];
        for (auto& c : content) c = draw_content(cfg, rng);
        std::int64_t k = 0;  // index among odd (content) positions
        for (std::int64_t t = 1; t < cfg.seq_len; ++t) {
          if (t % 2 == 1)
            row[t] = content[k++ % kNoisyPeriod];
          else
            row[t] = draw_content(cfg, rng);
        }
        break;
      }
      case TaskKind::CharLm: {
        require(!task.markov_next.empty(), ErrorKind::Config,
                "sample_batch: char_lm task has no transition table");
        std::int64_t state = kBos;
        for (std::int64_t t = 1; t < cfg.seq_len; ++t) {
          const double u = rng.next_double();
          int j = 0;
          while (j + 1 < kMarkovFanout && u >= kMarkovCdf[j]) ++j;
          state = task.markov_next[static_cast<std::size_t>(
              state * kMarkovFanout + j)];
          row[t] = state;
        }
        break;
      }
    }
  }
  return out;
}

}  // namespace oasis
