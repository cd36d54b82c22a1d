#pragma once

#include "wisense/layers.hpp"

#include <random>
#include <vector>

/// Trainable CSI path: token projection + STE, then the WiFi encoder.
namespace wisense::enc {

struct EncoderConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ff_mult = 2;
  int n_tokens = 180;
  int raw_features = 60;

  void validate() const;
};

/// raw [B * n_tokens, raw_features] -> raw W^T + b + STE (STE tiled per sample).
class CsiFrontEnd {
 public:
  CsiFrontEnd() = default;
  CsiFrontEnd(const EncoderConfig& config, std::mt19937_64& rng);

  Matrix forward(const Matrix& raw) const;
  void backward(const Matrix& raw, const Matrix& dy);
  void collect(nn::ParamList& out);

  nn::Linear proj;
  nn::Param ste;  // [n_tokens, d_model]
};

/// Transformer stack over each sample's tokens, then mean pooling.
class WifiEncoder {
 public:
  struct Cache {
    std::vector<nn::TransformerBlock::Cache> blocks;
  };

  WifiEncoder() = default;
  WifiEncoder(const EncoderConfig& config, std::mt19937_64& rng);

  /// tokens [B * n_tokens, d_model] -> f_enc [B, d_model].
  Matrix forward(const Matrix& tokens, Cache* cache) const;
  /// Returns the gradient with respect to the input tokens.
  Matrix backward(const Cache& cache, const Matrix& df);
  void collect(nn::ParamList& out);

  const EncoderConfig& config() const { return config_; }

  std::vector<nn::TransformerBlock> blocks;

 private:
  EncoderConfig config_;
};

}  // namespace wisense::enc
