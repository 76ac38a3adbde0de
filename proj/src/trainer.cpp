#include "nexus/trainer.hpp"

#include "nexus/kv_config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nexus {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  if (!(in >> v) || !in.eof()) throw std::invalid_argument("bad value for " + key + ": " + text);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw std::invalid_argument("bad boolean for " + key + ": " + text);
}

std::string num(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

json breakdown_json(const LossBreakdown& b) {
  return {{"loss_code", b.loss_code},
          {"loss_decoder", b.loss_decoder},
          {"loss_prior_recon", b.loss_prior_recon},
          {"loss_prior_kl", b.loss_prior_kl},
          {"total", b.total},
          {"ce_per_token", b.per_token_ce()},
          {"instances", b.instances}};
}

std::vector<Matrix> snapshot(const ParameterSet& params) {
  std::vector<Matrix> out;
  for (const Parameter* p : params.all()) out.push_back(p->value);
  return out;
}

void restore(ParameterSet& params, const std::vector<Matrix>& snap) {
  const auto all = params.all();
  for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = snap[i];
}

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.total) && std::isfinite(b.loss_code) && std::isfinite(b.loss_decoder) &&
         std::isfinite(b.loss_prior_recon) && std::isfinite(b.loss_prior_kl);
}

void write_corpus(const fs::path& path, const std::vector<RawDialogue>& dialogues) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& d : dialogues) out << serialize_dialogue(d) << '\n';
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  objective.validate();
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
  if (eval_every < 0) throw std::invalid_argument("eval_every must be >= 0");
  if (patience < 0) throw std::invalid_argument("patience must be >= 0");
  if (!(gradient_clip_norm > 0.0)) throw std::invalid_argument("gradient_clip_norm must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("adam_epsilon must be > 0");
  if (vocab_max_size < 1) throw std::invalid_argument("vocab_max_size must be >= 1");
  if (max_utterance_tokens < 1) throw std::invalid_argument("max_utterance_tokens must be >= 1");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  auto kv = model.to_map();
  kv.erase("vocab_size");
  kv["lambda1"] = num(objective.lambda1);
  kv["lambda2"] = num(objective.lambda2);
  kv["route_gradients"] = objective.route_gradients ? "true" : "false";
  kv["learning_rate"] = num(learning_rate);
  kv["batch_size"] = std::to_string(batch_size);
  kv["max_steps"] = std::to_string(max_steps);
  kv["eval_every"] = std::to_string(eval_every);
  kv["patience"] = std::to_string(patience);
  kv["seed"] = std::to_string(seed);
  kv["gradient_clip_norm"] = num(gradient_clip_norm);
  kv["adam_beta1"] = num(adam_beta1);
  kv["adam_beta2"] = num(adam_beta2);
  kv["adam_epsilon"] = num(adam_epsilon);
  kv["vocab_max_size"] = std::to_string(vocab_max_size);
  kv["max_utterance_tokens"] = std::to_string(max_utterance_tokens);
  return kv;
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  static const char* model_keys[] = {"vocab_size",     "embed_dim",      "utterance_hidden",
                                     "context_hidden", "code_dim",       "decoder_hidden",
                                     "mlp_hidden",     "code_enabled",   "code_log_var_init"};
  TrainConfig c;
  std::map<std::string, std::string> model_kv;
  for (const auto& [key, value] : kv) {
    if (std::find(std::begin(model_keys), std::end(model_keys), key) != std::end(model_keys)) {
      model_kv[key] = value;
    } else if (key == "model_kind") {
      if (value == "nexus") {
        model_kv["code_enabled"] = "true";
      } else if (value == "seq2seq") {
        model_kv["code_enabled"] = "false";
      } else {
        throw std::invalid_argument("model_kind must be nexus or seq2seq");
      }
    } else if (key == "lambda1") {
      c.objective.lambda1 = parse_number<double>(key, value);
    } else if (key == "lambda2") {
      c.objective.lambda2 = parse_number<double>(key, value);
    } else if (key == "route_gradients") {
      c.objective.route_gradients = parse_bool(key, value);
    } else if (key == "learning_rate") {
      c.learning_rate = parse_number<double>(key, value);
    } else if (key == "batch_size") {
      c.batch_size = parse_number<int>(key, value);
    } else if (key == "max_steps") {
      c.max_steps = parse_number<long>(key, value);
    } else if (key == "eval_every") {
      c.eval_every = parse_number<long>(key, value);
    } else if (key == "patience") {
      c.patience = parse_number<int>(key, value);
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "gradient_clip_norm") {
      c.gradient_clip_norm = parse_number<double>(key, value);
    } else if (key == "adam_beta1") {
      c.adam_beta1 = parse_number<double>(key, value);
    } else if (key == "adam_beta2") {
      c.adam_beta2 = parse_number<double>(key, value);
    } else if (key == "adam_epsilon") {
      c.adam_epsilon = parse_number<double>(key, value);
    } else if (key == "vocab_max_size") {
      c.vocab_max_size = parse_number<std::size_t>(key, value);
    } else if (key == "max_utterance_tokens") {
      c.max_utterance_tokens = parse_number<std::size_t>(key, value);
    } else {
      throw std::invalid_argument("unknown config key: " + key);
    }
  }
  c.model = ModelConfig::from_map(model_kv);
  return c;
}

TrainConfig TrainConfig::load_file(const std::string& path) { return from_map(parse_kv_file(path)); }

Adam::Adam(const ParameterSet& params, double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  for (const Parameter* p : params.all()) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(ParameterSet& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto all = params.all();
  for (std::size_t i = 0; i < all.size(); ++i) {
    Parameter& p = *all[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double gradient_norm(const ParameterSet& params) {
  double sq = 0.0;
  for (const Parameter* p : params.all()) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(ParameterSet& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params.all()) p->grad *= s;
  }
  return norm;
}

Matrix validation_noise(const NexusModel& model, std::size_t instances, std::uint64_t seed) {
  Rng rng(seed ^ 0x5eed5eed5eedULL);
  return standard_normal(model.code_dim(), static_cast<Eigen::Index>(instances), rng);
}

LossBreakdown evaluate_dataset(const NexusModel& model, std::span<const ContextSplit> data,
                               const ObjectiveConfig& cfg, const Matrix& noise, int batch_size) {
  if (data.empty()) throw std::invalid_argument("evaluate_dataset: empty data");
  LossBreakdown sum;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - start);
    const Matrix chunk = noise.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n));
    const LossBreakdown b = evaluate_loss(model, data.subspan(start, n), cfg, chunk);
    const double w = static_cast<double>(n);
    sum.loss_code += w * b.loss_code;
    sum.loss_decoder += w * b.loss_decoder;
    sum.loss_prior_recon += w * b.loss_prior_recon;
    sum.loss_prior_kl += w * b.loss_prior_kl;
    sum.instances += n;
    sum.decoder_tokens += b.decoder_tokens;
  }
  const double n = static_cast<double>(sum.instances);
  sum.loss_code /= n;
  sum.loss_decoder /= n;
  sum.loss_prior_recon /= n;
  sum.loss_prior_kl /= n;
  sum.total = sum.loss_code + sum.loss_decoder + sum.loss_prior_recon + sum.loss_prior_kl;
  return sum;
}

void write_log_record(std::ostream& out, const StepRecord& r) {
  json j = breakdown_json(r.train);
  j["step"] = r.step;
  j["grad_norm"] = r.grad_norm;
  if (r.valid) j["valid"] = breakdown_json(*r.valid);
  out << j.dump() << '\n';
}

TrainResult train_model(NexusModel& model, const TrainConfig& config,
                        std::span<const ContextSplit> train, std::span<const ContextSplit> valid,
                        const TrainHooks& hooks) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train_model: empty training set");
  ParameterSet& params = model.params();
  Adam adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  Rng rng(config.seed);

  const bool validating = config.eval_every > 0 && !valid.empty();
  const Matrix valid_noise = validating ? validation_noise(model, valid.size(), config.seed) : Matrix();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<ContextSplit> batch;

  TrainResult result;
  std::vector<Matrix> best = snapshot(params);
  std::vector<Matrix> last_good;
  int stale = 0;

  for (long step = 1; step <= config.max_steps; ++step) {
    batch.clear();
    const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), train.size());
    while (batch.size() < want) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(train[order[cursor++]]);
    }
    const Matrix noise = model.code_enabled()
                             ? standard_normal(model.code_dim(), static_cast<Eigen::Index>(batch.size()), rng)
                             : Matrix();

    params.zero_grad();
    StepRecord rec;
    rec.step = step;
    rec.train = total_loss(model, batch, config.objective, noise);
    rec.grad_norm = gradient_norm(params);
    if (!finite(rec.train) || !std::isfinite(rec.grad_norm)) {
      if (!last_good.empty()) restore(params, last_good);
      result.diverged = true;
      break;
    }
    last_good = snapshot(params);
    clip_gradients(params, config.gradient_clip_norm);
    adam.step(params);
    result.steps_run = step;

    if (validating && (step % config.eval_every == 0 || step == config.max_steps)) {
      rec.valid = evaluate_dataset(model, valid, config.objective, valid_noise, config.batch_size);
      if (!finite(*rec.valid)) {
        restore(params, last_good);
        result.diverged = true;
      } else if (!result.best_valid || rec.valid->total < result.best_valid->total) {
        result.best_valid = rec.valid;
        result.best_step = step;
        best = snapshot(params);
        stale = 0;
        if (hooks.on_best) hooks.on_best(step, *rec.valid);
      } else {
        ++stale;
      }
    }
    if (hooks.log != nullptr) {
      write_log_record(*hooks.log, rec);
      hooks.log->flush();
    }
    result.history.push_back(std::move(rec));
    if (result.diverged) break;
    if (validating && config.patience > 0 && stale >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (result.best_valid) restore(params, best);
  params.zero_grad();
  return result;
}

CorpusRun train_on_corpus(const TrainConfig& config_in, const std::string& corpus_path,
                          const std::string& out_dir) {
  TrainConfig config = config_in;
  ParseOptions opts;
  opts.max_utterance_tokens = config.max_utterance_tokens;
  const ParsedCorpus parsed = parse_corpus_file(corpus_path, opts);
  const auto split = split_corpus(parsed.dialogues, config.seed);
  const Vocabulary vocab = build_vocab(split.train, config.vocab_max_size);
  config.model.encoder.vocab_size = static_cast<int>(vocab.size());
  config.validate();

  const auto train_flows = encode_dialogues(split.train, vocab);
  const auto valid_flows = encode_dialogues(split.valid, vocab);
  const auto train = make_instances(train_flows);
  const auto valid = make_instances(valid_flows);

  fs::create_directories(out_dir);
  const fs::path root(out_dir);
  write_corpus(root / "train.txt", split.train);
  write_corpus(root / "valid.txt", split.valid);
  write_corpus(root / "test.txt", split.test);
  {
    std::ofstream cfg(root / "train_config.txt");
    for (const auto& [k, v] : config.to_map()) cfg << k << " = " << v << '\n';
  }

  NexusModel model(config.model, config.seed);
  CorpusRun run;
  run.checkpoint_dir = (root / "checkpoint").string();
  std::ofstream log(root / "train.jsonl");
  TrainHooks hooks;
  hooks.log = &log;
  hooks.on_best = [&](long step, const LossBreakdown& v) {
    save_checkpoint(run.checkpoint_dir, model, vocab, step,
                    {{"valid_total", v.total}, {"valid_ce_per_token", v.per_token_ce()}});
  };
  run.result = train_model(model, config, train, valid, hooks);
  if (!run.result.best_valid) save_checkpoint(run.checkpoint_dir, model, vocab, run.result.steps_run);
  return run;
}

std::vector<SweepRow> sweep_lambda(const TrainConfig& base, const std::vector<double>& ratios,
                                   std::span<const ContextSplit> train,
                                   std::span<const ContextSplit> valid,
                                   std::span<const ContextSplit> eval) {
  if (ratios.empty()) throw std::invalid_argument("sweep_lambda: no ratios");
  if (eval.empty()) throw std::invalid_argument("sweep_lambda: empty evaluation set");
  if (!base.model.code_enabled) throw std::invalid_argument("sweep_lambda needs the code path");
  std::vector<SweepRow> rows;
  for (double ratio : ratios) {
    if (!(ratio >= 0.0)) throw std::invalid_argument("sweep_lambda: ratios must be >= 0");
    TrainConfig cfg = base;
    cfg.objective.lambda1 = ratio * base.objective.lambda2;
    NexusModel model(cfg.model, cfg.seed);
    train_model(model, cfg, train, valid);
    const Matrix noise = validation_noise(model, eval.size(), cfg.seed);
    const LossBreakdown b = evaluate_dataset(model, eval, cfg.objective, noise, cfg.batch_size);
    SweepRow row;
    row.ratio = ratio;
    row.lambda1 = cfg.objective.lambda1;
    row.lambda2 = cfg.objective.lambda2;
    row.ce = b.loss_decoder;
    row.kl = b.loss_prior_kl;
    row.ce_plus_kl = row.ce + row.kl;
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "ratio\tlambda1\tlambda2\tce\tkl\tce_plus_kl\n";
  for (const auto& r : rows) {
    out << num(r.ratio) << '\t' << num(r.lambda1) << '\t' << num(r.lambda2) << '\t' << num(r.ce)
        << '\t' << num(r.kl) << '\t' << num(r.ce_plus_kl) << '\n';
  }
  return out.str();
}

std::string sweep_json(const std::vector<SweepRow>& rows) {
  json j;
  j["x_label"] = "lambda1/lambda2";
  for (const auto& r : rows) {
    j["ratio"].push_back(r.ratio);
    j["lambda1"].push_back(r.lambda1);
    j["lambda2"].push_back(r.lambda2);
    j["series"]["ce"].push_back(r.ce);
    j["series"]["kl"].push_back(r.kl);
    j["series"]["ce_plus_kl"].push_back(r.ce_plus_kl);
  }
  return j.dump(2);
}

}  // namespace nexus
