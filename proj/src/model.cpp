#include "nexus/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nexus {

namespace {

int to_int(const std::map<std::string, std::string>& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::size_t used = 0;
  const int v = std::stoi(it->second, &used);
  if (used != it->second.size()) throw std::invalid_argument("bad integer for " + key);
  return v;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

void ModelConfig::validate() const {
  encoder.validate();
  if (decoder_hidden < 0) throw std::invalid_argument("decoder_hidden must be >= 0");
  if (mlp_hidden <= 0) throw std::invalid_argument("mlp_hidden must be positive");
  if (!(code_log_var_init >= kLogVarMin && code_log_var_init <= kLogVarMax)) {
    throw std::invalid_argument("code_log_var_init must lie in the log-variance clamp range");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"vocab_size", std::to_string(encoder.vocab_size)},
      {"embed_dim", std::to_string(encoder.embed_dim)},
      {"utterance_hidden", std::to_string(encoder.utterance_hidden)},
      {"context_hidden", std::to_string(encoder.context_hidden)},
      {"code_dim", std::to_string(encoder.code_dim)},
      {"decoder_hidden", std::to_string(decoder_hidden)},
      {"mlp_hidden", std::to_string(mlp_hidden)},
      {"code_enabled", code_enabled ? "true" : "false"},
      {"code_log_var_init", format_double(code_log_var_init)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.encoder.vocab_size = to_int(kv, "vocab_size", c.encoder.vocab_size);
  c.encoder.embed_dim = to_int(kv, "embed_dim", c.encoder.embed_dim);
  c.encoder.utterance_hidden = to_int(kv, "utterance_hidden", c.encoder.utterance_hidden);
  c.encoder.context_hidden = to_int(kv, "context_hidden", c.encoder.context_hidden);
  c.encoder.code_dim = to_int(kv, "code_dim", c.encoder.code_dim);
  c.decoder_hidden = to_int(kv, "decoder_hidden", c.decoder_hidden);
  c.mlp_hidden = to_int(kv, "mlp_hidden", c.mlp_hidden);
  if (auto it = kv.find("code_log_var_init"); it != kv.end()) {
    std::size_t used = 0;
    c.code_log_var_init = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("bad number for code_log_var_init");
  }
  if (auto it = kv.find("code_enabled"); it != kv.end()) {
    if (it->second == "true" || it->second == "1") {
      c.code_enabled = true;
    } else if (it->second == "false" || it->second == "0") {
      c.code_enabled = false;
    } else {
      throw std::invalid_argument("bad boolean for code_enabled: " + it->second);
    }
  }
  return c;
}

std::string ModelConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : to_map()) out << k << " = " << v << '\n';
  return out.str();
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

NexusModel::NexusModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& ec = config_.encoder;
  const double bound = 1.0 / std::sqrt(static_cast<double>(ec.embed_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix emb(ec.embed_dim, ec.vocab_size);
  for (Eigen::Index j = 0; j < emb.cols(); ++j) {
    for (Eigen::Index i = 0; i < emb.rows(); ++i) emb(i, j) = dist(rng);
  }
  emb.col(special::kPad).setZero();
  embedding_ = &params_.add("embedding", "embedding", std::move(emb));
  encoders_ = std::make_unique<EncoderStack>(params_, *embedding_, ec, rng, config_.code_enabled);
  if (config_.code_enabled) {
    code_ = std::make_unique<CodeSpace>(params_, ec, config_.mlp_hidden, config_.code_log_var_init, rng);
  }
  decoder_ = std::make_unique<Decoder>(params_, *embedding_, config_.condition_dim(),
                                       config_.resolved_decoder_hidden(), rng);
}

const CodeSpace& NexusModel::code_space() const {
  if (!code_) throw std::logic_error("model has no code space");
  return *code_;
}

Vector NexusModel::condition(const Vector& h_tilde, const Vector& code) const {
  if (!config_.code_enabled) return h_tilde;
  return decoder_condition(h_tilde, code);
}

}  // namespace nexus
