#pragma once

#include "wisense/layers.hpp"
#include "wisense/optim.hpp"
#include "wisense/text.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

/// Caption generation: projector, tiny causal decoder with LoRA, teacher
/// forced training and greedy / beam decoding.
namespace wisense::gen {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kFirstPrompt = 3;

/// "<pad>", "<bos>", "<eos>", then one "<prompt:i>" per instruction template.
std::vector<std::string> reserved_tokens(int n_prompts);
inline int prompt_token(int prompt_index) { return kFirstPrompt + prompt_index; }

/// Caption words -> ids followed by EOS. Unknown words raise OovError.
std::vector<int> encode_caption(const text::Vocabulary& vocab, std::string_view caption);
/// Ids -> text, dropping reserved tokens and stopping at EOS.
std::string detokenize(const text::Vocabulary& vocab, std::span<const int> ids, int n_reserved);

struct DecoderConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ff_mult = 2;
  int context = 64;
  int n_prefix = 4;
  int d_latent = 64;  // dimension of f_align and f_v
  int lora_rank = 4;
  double lora_alpha = 8.0;

  void validate() const;
};

/// Inputs for a batch of equal-length sequences laid out as
/// [prefix (n_prefix rows) | ids]. Targets cover every row; rows that are
/// not caption positions carry nn::kIgnoreIndex.
struct TeacherBatch {
  std::vector<std::vector<int>> ids;  // per sequence: prompt | BOS | target[:-1] | PAD...
  std::vector<int> targets;           // flattened [B * (n_prefix + S)]
  Index seq_len = 0;                  // n_prefix + S
};

TeacherBatch make_teacher_batch(std::span<const std::vector<int>> prompts,
                                std::span<const std::vector<int>> captions, int n_prefix);

class Decoder {
 public:
  struct Cache {
    std::vector<nn::TransformerBlock::Cache> blocks;
    nn::LayerNormCache ln_f;
    Matrix h_final;  // ln_f output
    std::vector<int> token_ids;
    Index batch = 0;
    Index seq_len = 0;
  };

  Decoder() = default;
  Decoder(const DecoderConfig& config, std::uint64_t seed);

  /// prefix [B * n_prefix, d_model]; ids B sequences of one length.
  /// Returns logits [B * (n_prefix + S), V].
  Matrix forward(const Matrix& prefix, const std::vector<std::vector<int>>& ids, Cache* cache) const;
  /// Returns d prefix.
  Matrix backward(const Cache& cache, const Matrix& dlogits);

  void enable_lora(std::uint64_t seed);
  nn::ParamList base_params();
  nn::ParamList lora_params();

  const DecoderConfig& config() const { return config_; }

  nn::Embedding tok, pos;
  std::vector<nn::TransformerBlock> blocks;
  nn::LayerNorm ln_f;
  nn::Linear head;

 private:
  DecoderConfig config_;
};

/// Projector plus decoder plus the learned stand-in for f_v at inference.
class CaptionModel {
 public:
  CaptionModel() = default;
  CaptionModel(const DecoderConfig& config, std::uint64_t seed);

  /// [f_align ; f_v] (each [B, d_latent]) -> prefix [B * n_prefix, d_model].
  Matrix project(const Matrix& f_align, const Matrix& f_v) const;
  /// Returns d[f_align ; f_v] as [B, 2 * d_latent].
  Matrix project_backward(const Matrix& f_align, const Matrix& f_v, const Matrix& d_prefix);

  /// The placeholder tiled to B rows.
  Matrix placeholder_rows(Index batch) const;

  nn::ParamList stage2_params();  // projector + LoRA + placeholder
  nn::ParamList all_params();

  const DecoderConfig& config() const { return decoder.config(); }

  Decoder decoder;
  nn::Linear projector;
  nn::Param placeholder;  // [1, d_latent]
};

struct GenExample {
  std::string id;
  RowVector f_align;
  RowVector f_v;  // empty when no video is available
  std::vector<int> prompt;
  std::vector<int> caption;  // ends with EOS
};

struct TeacherResult {
  double loss = 0.0;  // mean per-token NLL
  double token_accuracy = 0.0;
  Index tokens = 0;
};

/// Teacher-forced loss. When `use_video` is false the placeholder stands in
/// for f_v, as at inference time. `grads` = accumulate parameter gradients.
TeacherResult decode_train(CaptionModel& model, std::span<const GenExample> batch, bool use_video, bool grads);

/// Same quantity evaluated in chunks without gradients.
TeacherResult evaluate_teacher(CaptionModel& model, std::span<const GenExample> examples, bool use_video,
                               Index chunk = 64);

struct Stage2Config {
  int steps = 1500;
  int batch_size = 32;
  double learning_rate = 3e-3;
  double video_dropout = 0.5;
  int pretrain_steps = 600;
  double pretrain_learning_rate = 3e-3;
  std::uint64_t seed = 0;
};

struct Stage2Result {
  std::vector<double> pretrain_curve;
  std::vector<double> loss_curve;
  std::vector<double> accuracy_curve;
};

/// Language-model pass on prompt + caption text alone (zero prefix); then
/// every base tensor is frozen.
std::vector<double> pretrain_decoder(CaptionModel& model, std::span<const GenExample> examples,
                                     const Stage2Config& config);

/// Trains projector, LoRA factors and placeholder. Each example uses its
/// video embedding with probability 1 - video_dropout, else the placeholder.
/// `on_step(step, loss, acc)` is an optional progress hook.
Stage2Result train_stage2(CaptionModel& model, std::span<const GenExample> examples, const Stage2Config& config,
                          const std::function<void(int, double, double)>& on_step = {});

enum class Strategy { greedy, beam };

struct Generation {
  std::vector<int> ids;  // generated tokens, EOS included when reached
  bool truncated = false;
  double score = 0.0;    // length-normalized log-probability
};

/// Decode for one sample; f_v empty selects the placeholder.
Generation generate(const CaptionModel& model, const RowVector& f_align, const RowVector& f_v,
                    std::span<const int> prompt, Strategy strategy, int beam_width, int max_len);

/// Greedy decoding of many samples sharing a prompt length, batched.
std::vector<Generation> generate_greedy_batch(const CaptionModel& model, const Matrix& f_align,
                                              std::span<const std::vector<int>> prompts, int max_len);

}  // namespace wisense::gen
