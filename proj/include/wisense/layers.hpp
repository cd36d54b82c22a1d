#pragma once

#include "wisense/nn.hpp"
#include "wisense/types.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

/// Trainable layers with explicit forward caches and analytic backward.
///
/// Inputs are stacked row-major [rows, features]. Sequence layers take a
/// `seq_len` and treat the input as rows / seq_len consecutive sequences, so
/// a whole minibatch goes through one GEMM. `backward` returns the input
/// gradient and accumulates parameter gradients into Param::grad unless the
/// parameter is frozen.
namespace wisense::nn {

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool frozen = false;

  Param() = default;
  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  void accumulate(const Matrix& g) {
    if (!frozen) grad += g;
  }
};

using ParamList = std::vector<Param*>;

void zero_grads(const ParamList& params);
void set_frozen(const ParamList& params, bool frozen);

/// Normal(0, std) initialization.
Matrix random_normal(Index rows, Index cols, double std, std::mt19937_64& rng);

class Linear {
 public:
  Linear() = default;
  /// Weight [out, in] ~ N(0, init_std^2); init_std < 0 selects 1/sqrt(in).
  Linear(const std::string& name, Index in, Index out, std::mt19937_64& rng, double init_std = -1.0);

  Matrix forward(const Matrix& x) const;
  Matrix backward(const Matrix& x, const Matrix& dy);
  void collect(ParamList& out);

  Index in_features() const { return weight.value.cols(); }
  Index out_features() const { return weight.value.rows(); }

  Param weight;
  Param bias;  // [1, out]
};

/// y = x W^T + (alpha/r) (x A^T) B^T for A [r, in], B [out, r].
Matrix lora_forward(const Matrix& x, const Matrix& w, const Matrix& a, const Matrix& b, double alpha, int rank);
/// W + (alpha/r) B A.
Matrix lora_merge(const Matrix& w, const Matrix& a, const Matrix& b, double alpha, int rank);
/// Rejects rank < 1 and rank >= min(out, in).
void check_lora_rank(int rank, Index out, Index in);

/// Linear layer that can carry a low-rank additive update.
class LoraLinear {
 public:
  LoraLinear() = default;
  LoraLinear(const std::string& name, Index in, Index out, std::mt19937_64& rng, double init_std = -1.0)
      : base(name, in, out, rng, init_std) {}

  /// A ~ N(0, 1/in), B = 0, so the layer initially equals the base.
  void enable_lora(const std::string& name, int rank, double alpha, std::mt19937_64& rng);
  bool has_lora() const { return rank_ > 0; }
  int rank() const { return rank_; }
  double alpha() const { return alpha_; }
  double scale() const { return rank_ > 0 ? alpha_ / rank_ : 0.0; }

  Matrix forward(const Matrix& x) const;
  Matrix backward(const Matrix& x, const Matrix& dy);
  Matrix merged_weight() const;
  void collect(ParamList& out);
  void collect_lora(ParamList& out);

  Linear base;
  Param lora_a;  // [r, in]
  Param lora_b;  // [out, r]

 private:
  int rank_ = 0;
  double alpha_ = 0.0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, Index dim, double eps = 1e-5);

  Matrix forward(const Matrix& x, LayerNormCache* cache) const;
  Matrix backward(const LayerNormCache& cache, const Matrix& dy);
  void collect(ParamList& out);

  Param gamma;  // [1, d]
  Param beta;   // [1, d]
  double eps = 1e-5;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, Index vocab, Index dim, std::mt19937_64& rng, double init_std);

  Matrix forward(std::span<const int> ids) const;
  void backward(std::span<const int> ids, const Matrix& dy);
  void collect(ParamList& out);

  Param table;  // [V, d]
};

class MultiHeadAttention {
 public:
  struct Cache {
    Matrix x, q, k, v, concat;
    std::vector<Matrix> probs;  // one [n, n] per (sequence, head)
    Index seq_len = 0;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Index d_model, int n_heads, bool causal, std::mt19937_64& rng);

  Matrix forward(const Matrix& x, Index seq_len, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void enable_lora(const std::string& name, int rank, double alpha, std::mt19937_64& rng);
  void collect(ParamList& out);
  void collect_lora(ParamList& out);

  int n_heads() const { return n_heads_; }
  bool causal() const { return causal_; }

  LoraLinear wq, wk, wv, wo;

 private:
  int n_heads_ = 1;
  bool causal_ = false;
};

class FeedForward {
 public:
  struct Cache {
    Matrix x, pre, act;
  };

  FeedForward() = default;
  FeedForward(const std::string& name, Index d_model, Index hidden, std::mt19937_64& rng);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

  Linear fc1, fc2;
};

/// Pre-LN block: x + attn(ln1(x)), then + ff(ln2(.)).
class TransformerBlock {
 public:
  struct Cache {
    LayerNormCache ln1, ln2;
    MultiHeadAttention::Cache attn;
    FeedForward::Cache ff;
  };

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, Index d_model, int n_heads, Index ff_hidden, bool causal,
                   std::mt19937_64& rng);

  Matrix forward(const Matrix& x, Index seq_len, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void enable_lora(const std::string& name, int rank, double alpha, std::mt19937_64& rng);
  void collect(ParamList& out);
  void collect_lora(ParamList& out);

  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ff;
};

/// Mean of every consecutive block of `seq_len` rows.
Matrix mean_pool(const Matrix& x, Index seq_len);
Matrix mean_pool_backward(const Matrix& dy, Index seq_len);

}  // namespace wisense::nn
