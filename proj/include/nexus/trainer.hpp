#pragma once

#include "nexus/checkpoint.hpp"
#include "nexus/objective.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nexus {

struct TrainConfig {
  ModelConfig model;
  ObjectiveConfig objective;
  double learning_rate = 1e-3;
  int batch_size = 128;
  long max_steps = 2000;
  long eval_every = 100;  // 0 disables validation
  int patience = 5;       // evaluations without improvement; 0 disables early stopping
  std::uint64_t seed = 1;
  double gradient_clip_norm = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t vocab_max_size = 20000;
  std::size_t max_utterance_tokens = 30;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  // Unknown keys throw; absent keys keep their defaults.
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
  static TrainConfig load_file(const std::string& path);
};

class Adam {
 public:
  Adam(const ParameterSet& params, double lr, double beta1, double beta2, double epsilon);
  void step(ParameterSet& params);
  long steps() const { return t_; }

 private:
  std::vector<Matrix> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Rescales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_gradients(ParameterSet& params, double max_norm);
double gradient_norm(const ParameterSet& params);

// Fixed per-instance validation noise: column k belongs to instance k.
Matrix validation_noise(const NexusModel& model, std::size_t instances, std::uint64_t seed);

// Instance-weighted mean loss over a set, evaluated in chunks of batch_size.
LossBreakdown evaluate_dataset(const NexusModel& model, std::span<const ContextSplit> data,
                               const ObjectiveConfig& cfg, const Matrix& noise, int batch_size);

struct StepRecord {
  long step = 0;
  LossBreakdown train;
  std::optional<LossBreakdown> valid;
  double grad_norm = 0.0;
};

void write_log_record(std::ostream& out, const StepRecord& r);

struct TrainHooks {
  std::ostream* log = nullptr;  // one JSON object per line
  // Called whenever validation improves; parameters hold the new best.
  std::function<void(long step, const LossBreakdown& valid)> on_best;
};

struct TrainResult {
  long steps_run = 0;
  long best_step = 0;
  std::optional<LossBreakdown> best_valid;
  std::vector<StepRecord> history;
  bool diverged = false;
  bool early_stopped = false;
};

// Optimizes model in place. When validation runs, the best-validation
// parameters are restored at the end; on a non-finite loss the last good
// parameters are restored and training stops.
TrainResult train_model(NexusModel& model, const TrainConfig& config,
                        std::span<const ContextSplit> train, std::span<const ContextSplit> valid,
                        const TrainHooks& hooks = {});

// End-to-end run over a corpus file: split, vocabulary, training, best
// checkpoint under out_dir/checkpoint, log at out_dir/train.jsonl and the
// held-out splits as corpus files.
struct CorpusRun {
  TrainResult result;
  std::string checkpoint_dir;
};
CorpusRun train_on_corpus(const TrainConfig& config, const std::string& corpus_path,
                          const std::string& out_dir);

struct SweepRow {
  double ratio = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double ce = 0.0;  // mean per-instance decoder cross entropy
  double kl = 0.0;  // mean per-instance posterior/prior KL
  double ce_plus_kl = 0.0;
};

// One model per lambda1/lambda2 ratio with lambda2 taken from the base config.
// CE and KL are measured on eval (fixed noise) after training.
std::vector<SweepRow> sweep_lambda(const TrainConfig& base, const std::vector<double>& ratios,
                                   std::span<const ContextSplit> train,
                                   std::span<const ContextSplit> valid,
                                   std::span<const ContextSplit> eval);

std::string sweep_table(const std::vector<SweepRow>& rows);  // tab-separated with header
std::string sweep_json(const std::vector<SweepRow>& rows);   // plot-ready series

}  // namespace nexus
