#pragma once

#include "wisense/alignment.hpp"
#include "wisense/channel.hpp"
#include "wisense/corpus.hpp"
#include "wisense/decoder.hpp"
#include "wisense/encoder.hpp"
#include "wisense/judge.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace wisense::config {

/// Raised for malformed configs: bad JSON, wrong types, unknown keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TextConfig {
  int dim = 64;
  std::uint64_t seed = 42;
  double pos_scale = 0.5;
  double video_sigma = 0.05;
};

struct DecoderSection {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ff_mult = 2;
  int context = 64;
  int n_prefix = 4;
  int lora_rank = 4;
  double lora_alpha = 8.0;
};

struct EvalConfig {
  std::string strategy = "greedy";  // greedy | beam
  int beam_width = 3;
  int max_len = 56;
};

struct ZeroShotConfig {
  std::vector<int> holdout = {2, 5};
};

struct JudgeSection {
  std::string backend = "mock";
  int max_concurrency = 4;
  double rate_per_second = 2.0;
  int max_attempts = 3;
  double backoff_seconds = 0.5;
  double timeout_seconds = 30.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  synth::ChannelConfig channel;
  corpus::CorpusConfig corpus;
  enc::EncoderConfig encoder;
  align::AdapterConfig adapter;
  TextConfig text;
  align::Stage1Config stage1;
  gen::Stage2Config stage2;
  DecoderSection decoder;
  EvalConfig eval;
  ZeroShotConfig zeroshot;
  JudgeSection judge;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
  /// Derived sizes: token count, feature width, latent dimension.
  enc::EncoderConfig encoder_config() const;
  gen::DecoderConfig decoder_config(int vocab_size) const;
};

/// Defaults overlaid with the JSON object in `text`. Every key must be known.
ExperimentConfig parse(const std::string& text);
ExperimentConfig load(const std::filesystem::path& path);
/// Fully resolved config as pretty JSON.
std::string to_json(const ExperimentConfig& cfg);

/// "2,5" -> {2, 5}.
std::vector<int> parse_holdout(const std::string& list);

}  // namespace wisense::config
