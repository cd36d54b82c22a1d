#pragma once

#include "wisense/encoder.hpp"
#include "wisense/optim.hpp"
#include "wisense/tokens.hpp"

#include <functional>
#include <span>
#include <vector>

/// CSI-to-language alignment: adapter, symmetric contrastive loss, training,
/// retrieval and zero-shot classification.
namespace wisense::align {

struct AdapterConfig {
  int d_in = 64;
  int d_hidden = 128;
  int d_out = 64;
};

/// Two-layer GeLU MLP followed by L2 normalization.
class Adapter {
 public:
  struct Cache {
    Matrix x, pre, act, out;
  };

  Adapter() = default;
  Adapter(const AdapterConfig& config, std::mt19937_64& rng);

  Matrix forward(const Matrix& f_enc, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& d_align);
  void collect(nn::ParamList& out);

  nn::Linear fc1, fc2;
};

struct ContrastiveResult {
  double loss = 0.0;
  double loss_c2t = 0.0;
  double loss_t2c = 0.0;
  Matrix d_align;
  Matrix d_text;
};

/// S = A T^T / tau; L = mean_i -log softmax(S)[i,i] + mean_i -log softmax(S^T)[i,i].
ContrastiveResult contrastive_loss(const Matrix& f_align, const Matrix& f_text, double tau);

/// Front end, WiFi encoder and adapter as one model.
class CsiAligner {
 public:
  struct Cache {
    Matrix raw, tokens, f_enc;
    enc::WifiEncoder::Cache enc;
    Adapter::Cache adapter;
  };

  CsiAligner() = default;
  CsiAligner(const enc::EncoderConfig& encoder, const AdapterConfig& adapter, std::uint64_t seed);

  /// raw [B * n_tokens, raw_features] -> f_enc [B, d_model].
  Matrix encode(const Matrix& raw, Cache* cache) const;
  /// raw -> f_align [B, d_l], unit rows.
  Matrix forward(const Matrix& raw, Cache* cache) const;
  void backward(const Cache& cache, const Matrix& d_align);
  /// Gradient arriving at f_enc (used by the proxy classifier).
  void backward_encoder(const Cache& cache, const Matrix& d_enc);

  /// f_align of many samples, batched, without caches.
  Matrix embed(std::span<const MatrixF> samples, Index batch = 64) const;

  nn::ParamList encoder_params();
  nn::ParamList adapter_params();
  nn::ParamList all_params();

  const enc::EncoderConfig& encoder_config() const { return encoder_config_; }
  const AdapterConfig& adapter_config() const { return adapter_config_; }

  enc::CsiFrontEnd front;
  enc::WifiEncoder encoder;
  Adapter adapter;
  tok::NormStats stats;

 private:
  enc::EncoderConfig encoder_config_;
  AdapterConfig adapter_config_;
};

/// Stack sample token matrices into one [B * n, f] batch.
Matrix stack(std::span<const MatrixF> samples, std::span<const Index> rows);

struct Stage1Config {
  int steps = 300;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double temperature = 0.07;
  bool freeze_encoder = false;
  int proxy_steps = 200;  // proxy classification pass when freezing
  std::uint64_t seed = 0;
};

struct Stage1Result {
  std::vector<double> loss_curve;  // per step
  std::vector<double> proxy_curve;
  double initial_loss = 0.0;       // full-train contrastive loss before training
  double final_loss = 0.0;         // same, after
  int epochs = 0;
};

/// `targets` row i is the frozen text embedding paired with samples[i];
/// `labels` drive minibatch-independent proxy pretraining when freezing;
/// samples with a negative label (multi-person windows) are skipped there.
/// `on_epoch(epoch)` is called after each completed epoch.
Stage1Result train_stage1(CsiAligner& model, std::span<const MatrixF> samples, const Matrix& targets,
                          std::span<const int> labels, const Stage1Config& config,
                          const std::function<void(int)>& on_epoch = {});

/// Mean contrastive loss over consecutive full batches of the given pairs.
double evaluate_contrastive(const Matrix& f_align, const Matrix& targets, double tau, Index batch);

/// Candidate indices by descending cosine with `query`; ties keep index order.
std::vector<Index> retrieve(const RowVector& query, const Matrix& candidates);

struct ZeroShotResult {
  int label = -1;
  RowVector scores;  // cosine per class description
};

ZeroShotResult zero_shot_classify(const RowVector& f_align, const Matrix& class_embeddings);

/// Mean pairwise cosine between rows of the same label and of different
/// labels (self-pairs excluded).
struct Separation {
  double intra = 0.0;
  double inter = 0.0;
  double margin() const { return intra - inter; }
};
Separation embedding_separation(const Matrix& embeddings, std::span<const int> labels);

}  // namespace wisense::align
