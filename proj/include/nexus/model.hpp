#pragma once

#include "nexus/code_space.hpp"
#include "nexus/decoder.hpp"
#include "nexus/encoder_stack.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>

namespace nexus {

struct ModelConfig {
  EncoderConfig encoder;
  int decoder_hidden = 0;  // 0 means context_hidden
  int mlp_hidden = 300;
  // Initial log-variance output of the posterior and prior networks.
  double code_log_var_init = -8.0;
  // false gives the plain hierarchical seq2seq baseline: no code, no E_b.
  bool code_enabled = true;

  void validate() const;
  int resolved_decoder_hidden() const {
    return decoder_hidden > 0 ? decoder_hidden : encoder.context_hidden;
  }
  int condition_dim() const {
    return encoder.context_hidden + (code_enabled ? encoder.code_dim : 0);
  }

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
  std::string serialize() const;
};

std::uint64_t fnv1a(std::string_view data);

class NexusModel {
 public:
  NexusModel(const ModelConfig& config, std::uint64_t seed);
  NexusModel(const NexusModel&) = delete;
  NexusModel& operator=(const NexusModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  Parameter& embedding() const { return *embedding_; }
  const EncoderStack& encoders() const { return *encoders_; }
  // Throws when the code path is disabled.
  const CodeSpace& code_space() const;
  const Decoder& decoder() const { return *decoder_; }
  bool code_enabled() const { return config_.code_enabled; }
  int code_dim() const { return config_.code_enabled ? config_.encoder.code_dim : 0; }

  // Decoder condition for a history vector and code (code ignored when disabled).
  Vector condition(const Vector& h_tilde, const Vector& code) const;

 private:
  ModelConfig config_;
  ParameterSet params_;
  Parameter* embedding_ = nullptr;
  std::unique_ptr<EncoderStack> encoders_;
  std::unique_ptr<CodeSpace> code_;
  std::unique_ptr<Decoder> decoder_;
};

}  // namespace nexus
