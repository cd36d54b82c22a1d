#include "wisense/layers.hpp"

#include <cmath>
#include <limits>

namespace wisense::nn {

void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

void set_frozen(const ParamList& params, bool frozen) {
  for (auto* p : params) p->frozen = frozen;
}

Matrix random_normal(Index rows, Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, std);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
  return m;
}

CrossEntropyResult cross_entropy(const Matrix& logits, std::span<const int> targets, int ignore_index) {
  require_shape(static_cast<Index>(targets.size()) == logits.rows(),
                "cross_entropy: " + std::to_string(targets.size()) + " targets for " + dims(logits) + " logits");
  CrossEntropyResult r;
  r.grad = Matrix::Zero(logits.rows(), logits.cols());
  for (Index t = 0; t < logits.rows(); ++t) {
    const int y = targets[t];
    if (y == ignore_index) continue;
    if (y < 0 || y >= logits.cols())
      throw std::out_of_range("cross_entropy: target " + std::to_string(y) + " outside [0, " +
                              std::to_string(logits.cols()) + ")");
    ++r.counted;
  }
  if (r.counted == 0) return r;
  const double inv = 1.0 / static_cast<double>(r.counted);
  for (Index t = 0; t < logits.rows(); ++t) {
    const int y = targets[t];
    if (y == ignore_index) continue;
    const auto row = logits.row(t);
    const double m = row.maxCoeff();
    const RowVector e = exp_shifted(row.array() - m).matrix();
    const double z = e.sum();
    r.loss += (std::log(z) + m - row(y)) * inv;
    r.grad.row(t) = e * (inv / z);
    r.grad(t, y) -= inv;
    if (argmax(row) == y) ++r.correct;
  }
  return r;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, Index in, Index out, std::mt19937_64& rng, double init_std) {
  if (in < 1 || out < 1) throw ShapeError("Linear " + name + ": dimensions must be positive");
  const double s = init_std < 0.0 ? 1.0 / std::sqrt(static_cast<double>(in)) : init_std;
  weight = Param(name + "/weight", random_normal(out, in, s, rng));
  bias = Param(name + "/bias", Matrix::Zero(1, out));
}

Matrix Linear::forward(const Matrix& x) const {
  require_shape(x.cols() == in_features(), weight.name + ": input " + dims(x) + " vs weight " + dims(weight.value));
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  require_shape(dy.rows() == x.rows() && dy.cols() == out_features(), weight.name + ": bad upstream gradient");
  if (!weight.frozen) weight.grad.noalias() += dy.transpose() * x;
  if (!bias.frozen) bias.grad += dy.colwise().sum();
  return dy * weight.value;
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------- LoRA

void check_lora_rank(int rank, Index out, Index in) {
  if (rank < 1 || rank >= std::min(out, in))
    throw std::invalid_argument("LoRA rank " + std::to_string(rank) + " must lie in [1, min(d) = " +
                                std::to_string(std::min(out, in)) + ")");
}

Matrix lora_forward(const Matrix& x, const Matrix& w, const Matrix& a, const Matrix& b, double alpha, int rank) {
  check_lora_rank(rank, w.rows(), w.cols());
  require_shape(a.rows() == rank && a.cols() == w.cols() && b.rows() == w.rows() && b.cols() == rank,
                "lora_forward: A " + dims(a) + ", B " + dims(b) + " do not fit W " + dims(w));
  require_shape(x.cols() == w.cols(), "lora_forward: input " + dims(x) + " vs W " + dims(w));
  const Matrix u = x * a.transpose();
  return x * w.transpose() + (alpha / rank) * (u * b.transpose());
}

Matrix lora_merge(const Matrix& w, const Matrix& a, const Matrix& b, double alpha, int rank) {
  check_lora_rank(rank, w.rows(), w.cols());
  require_shape(a.rows() == rank && a.cols() == w.cols() && b.rows() == w.rows() && b.cols() == rank,
                "lora_merge: A " + dims(a) + ", B " + dims(b) + " do not fit W " + dims(w));
  return w + (alpha / rank) * (b * a);
}

void LoraLinear::enable_lora(const std::string& name, int rank, double alpha, std::mt19937_64& rng) {
  check_lora_rank(rank, base.out_features(), base.in_features());
  rank_ = rank;
  alpha_ = alpha;
  lora_a = Param(name + "/A", random_normal(rank, base.in_features(), 1.0 / std::sqrt(static_cast<double>(base.in_features())), rng));
  lora_b = Param(name + "/B", Matrix::Zero(base.out_features(), rank));
}

Matrix LoraLinear::forward(const Matrix& x) const {
  Matrix y = base.forward(x);
  if (rank_ > 0) y.noalias() += scale() * ((x * lora_a.value.transpose()) * lora_b.value.transpose());
  return y;
}

Matrix LoraLinear::backward(const Matrix& x, const Matrix& dy) {
  Matrix dx = base.backward(x, dy);
  if (rank_ > 0) {
    const double s = scale();
    const Matrix u = x * lora_a.value.transpose();      // [N, r]
    const Matrix du = s * (dy * lora_b.value);           // [N, r]
    if (!lora_b.frozen) lora_b.grad.noalias() += s * (dy.transpose() * u);
    if (!lora_a.frozen) lora_a.grad.noalias() += du.transpose() * x;
    dx.noalias() += du * lora_a.value;
  }
  return dx;
}

Matrix LoraLinear::merged_weight() const {
  if (rank_ == 0) return base.weight.value;
  return lora_merge(base.weight.value, lora_a.value, lora_b.value, alpha_, rank_);
}

void LoraLinear::collect(ParamList& out) {
  base.collect(out);
  collect_lora(out);
}

void LoraLinear::collect_lora(ParamList& out) {
  if (rank_ == 0) return;
  out.push_back(&lora_a);
  out.push_back(&lora_b);
}

// ---------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(const std::string& name, Index dim, double eps_) : eps(eps_) {
  gamma = Param(name + "/gamma", Matrix::Ones(1, dim));
  beta = Param(name + "/beta", Matrix::Zero(1, dim));
}

Matrix LayerNorm::forward(const Matrix& x, LayerNormCache* cache) const {
  require_shape(x.cols() == gamma.value.cols(), gamma.name + ": input " + dims(x));
  Matrix y = layer_norm_core(x, eps, cache);
  y = y.cwiseProduct(gamma.value.replicate(y.rows(), 1));
  y.rowwise() += beta.value.row(0);
  return y;
}

Matrix LayerNorm::backward(const LayerNormCache& c, const Matrix& dy) {
  if (!gamma.frozen) gamma.grad += dy.cwiseProduct(c.xhat).colwise().sum();
  if (!beta.frozen) beta.grad += dy.colwise().sum();
  return layer_norm_core_backward(c, dy.cwiseProduct(gamma.value.replicate(dy.rows(), 1)));
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ---------------------------------------------------------------- Embedding

Embedding::Embedding(const std::string& name, Index vocab, Index dim, std::mt19937_64& rng, double init_std) {
  table = Param(name + "/table", random_normal(vocab, dim, init_std, rng));
}

Matrix Embedding::forward(std::span<const int> ids) const {
  Matrix out(static_cast<Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.value.rows())
      throw std::out_of_range(table.name + ": token id " + std::to_string(ids[i]) + " out of range");
    out.row(static_cast<Index>(i)) = table.value.row(ids[i]);
  }
  return out;
}

void Embedding::backward(std::span<const int> ids, const Matrix& dy) {
  if (table.frozen) return;
  for (std::size_t i = 0; i < ids.size(); ++i) table.grad.row(ids[i]) += dy.row(static_cast<Index>(i));
}

void Embedding::collect(ParamList& out) { out.push_back(&table); }

// ---------------------------------------------------------------- Attention

MultiHeadAttention::MultiHeadAttention(const std::string& name, Index d_model, int n_heads, bool causal,
                                       std::mt19937_64& rng)
    : n_heads_(n_heads), causal_(causal) {
  if (n_heads < 1 || d_model % n_heads != 0)
    throw ShapeError(name + ": d_model " + std::to_string(d_model) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  wq = LoraLinear(name + "/q", d_model, d_model, rng);
  wk = LoraLinear(name + "/k", d_model, d_model, rng);
  wv = LoraLinear(name + "/v", d_model, d_model, rng);
  wo = LoraLinear(name + "/o", d_model, d_model, rng);
}

Matrix MultiHeadAttention::forward(const Matrix& x, Index seq_len, Cache* cache) const {
  require_shape(seq_len > 0 && x.rows() % seq_len == 0,
                "attention: " + std::to_string(x.rows()) + " rows do not split into sequences of " +
                    std::to_string(seq_len));
  if (!x.allFinite()) throw std::domain_error("attention: non-finite input");
  const Index d = x.cols();
  const Index dk = d / n_heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Matrix q = wq.forward(x), k = wk.forward(x), v = wv.forward(x);
  Matrix concat(x.rows(), d);
  const Index n_seq = x.rows() / seq_len;
  if (cache) {
    cache->probs.clear();
    cache->probs.reserve(static_cast<std::size_t>(n_seq * n_heads_));
  }
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  for (Index s = 0; s < n_seq; ++s) {
    const Index r0 = s * seq_len;
    for (int h = 0; h < n_heads_; ++h) {
      const auto qh = q.block(r0, h * dk, seq_len, dk);
      const auto kh = k.block(r0, h * dk, seq_len, dk);
      const auto vh = v.block(r0, h * dk, seq_len, dk);
      Matrix scores = (qh * kh.transpose()) * scale;
      if (causal_)
        for (Index i = 0; i < seq_len; ++i)
          for (Index j = i + 1; j < seq_len; ++j) scores(i, j) = neg_inf;
      Matrix p = softmax_rows(scores);
      concat.block(r0, h * dk, seq_len, dk).noalias() = p * vh;
      if (cache) cache->probs.push_back(std::move(p));
    }
  }
  Matrix out = wo.forward(concat);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->seq_len = seq_len;
  }
  return out;
}

Matrix MultiHeadAttention::backward(const Cache& c, const Matrix& dy) {
  const Index d = c.x.cols();
  const Index dk = d / n_heads_;
  const Index seq_len = c.seq_len;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const Matrix dconcat = wo.backward(c.concat, dy);
  Matrix dq(c.q.rows(), d), dk_m(c.k.rows(), d), dv(c.v.rows(), d);
  const Index n_seq = c.x.rows() / seq_len;
  std::size_t pi = 0;
  for (Index s = 0; s < n_seq; ++s) {
    const Index r0 = s * seq_len;
    for (int h = 0; h < n_heads_; ++h, ++pi) {
      const Matrix& p = c.probs[pi];
      const auto qh = c.q.block(r0, h * dk, seq_len, dk);
      const auto kh = c.k.block(r0, h * dk, seq_len, dk);
      const auto vh = c.v.block(r0, h * dk, seq_len, dk);
      const auto doh = dconcat.block(r0, h * dk, seq_len, dk);
      const Matrix dp = doh * vh.transpose();
      dv.block(r0, h * dk, seq_len, dk).noalias() = p.transpose() * doh;
      const Matrix ds = softmax_rows_backward(p, dp) * scale;
      dq.block(r0, h * dk, seq_len, dk).noalias() = ds * kh;
      dk_m.block(r0, h * dk, seq_len, dk).noalias() = ds.transpose() * qh;
    }
  }
  Matrix dx = wq.backward(c.x, dq);
  dx += wk.backward(c.x, dk_m);
  dx += wv.backward(c.x, dv);
  return dx;
}

void MultiHeadAttention::enable_lora(const std::string& name, int rank, double alpha, std::mt19937_64& rng) {
  wq.enable_lora(name + "/q", rank, alpha, rng);
  wk.enable_lora(name + "/k", rank, alpha, rng);
  wv.enable_lora(name + "/v", rank, alpha, rng);
  wo.enable_lora(name + "/o", rank, alpha, rng);
}

void MultiHeadAttention::collect(ParamList& out) {
  for (auto* l : {&wq, &wk, &wv, &wo}) l->base.collect(out);
  collect_lora(out);
}

void MultiHeadAttention::collect_lora(ParamList& out) {
  for (auto* l : {&wq, &wk, &wv, &wo}) l->collect_lora(out);
}

// ---------------------------------------------------------------- FeedForward

FeedForward::FeedForward(const std::string& name, Index d_model, Index hidden, std::mt19937_64& rng)
    : fc1(name + "/fc1", d_model, hidden, rng), fc2(name + "/fc2", hidden, d_model, rng) {}

Matrix FeedForward::forward(const Matrix& x, Cache* cache) const {
  Matrix pre = fc1.forward(x);
  Matrix act = gelu(pre);
  Matrix y = fc2.forward(act);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

Matrix FeedForward::backward(const Cache& c, const Matrix& dy) {
  const Matrix dact = fc2.backward(c.act, dy);
  return fc1.backward(c.x, gelu_backward(c.pre, dact));
}

void FeedForward::collect(ParamList& out) {
  fc1.collect(out);
  fc2.collect(out);
}

// ---------------------------------------------------------------- Block

TransformerBlock::TransformerBlock(const std::string& name, Index d_model, int n_heads, Index ff_hidden,
                                   bool causal, std::mt19937_64& rng)
    : ln1(name + "/ln1", d_model),
      ln2(name + "/ln2", d_model),
      attn(name + "/attn", d_model, n_heads, causal, rng),
      ff(name + "/ff", d_model, ff_hidden, rng) {}

Matrix TransformerBlock::forward(const Matrix& x, Index seq_len, Cache* cache) const {
  Matrix h = x + attn.forward(ln1.forward(x, cache ? &cache->ln1 : nullptr), seq_len, cache ? &cache->attn : nullptr);
  Matrix y = h + ff.forward(ln2.forward(h, cache ? &cache->ln2 : nullptr), cache ? &cache->ff : nullptr);
  return y;
}

Matrix TransformerBlock::backward(const Cache& c, const Matrix& dy) {
  Matrix dh = dy + ln2.backward(c.ln2, ff.backward(c.ff, dy));
  return dh + ln1.backward(c.ln1, attn.backward(c.attn, dh));
}

void TransformerBlock::enable_lora(const std::string& name, int rank, double alpha, std::mt19937_64& rng) {
  attn.enable_lora(name + "/attn", rank, alpha, rng);
}

void TransformerBlock::collect(ParamList& out) {
  ln1.collect(out);
  attn.collect(out);
  ln2.collect(out);
  ff.collect(out);
}

void TransformerBlock::collect_lora(ParamList& out) { attn.collect_lora(out); }

// ---------------------------------------------------------------- pooling

Matrix mean_pool(const Matrix& x, Index seq_len) {
  require_shape(seq_len > 0 && x.rows() % seq_len == 0, "mean_pool: rows not a multiple of seq_len");
  const Index n = x.rows() / seq_len;
  Matrix out(n, x.cols());
  for (Index s = 0; s < n; ++s) out.row(s) = x.middleRows(s * seq_len, seq_len).colwise().mean();
  return out;
}

Matrix mean_pool_backward(const Matrix& dy, Index seq_len) {
  Matrix dx(dy.rows() * seq_len, dy.cols());
  const double inv = 1.0 / static_cast<double>(seq_len);
  for (Index s = 0; s < dy.rows(); ++s) dx.middleRows(s * seq_len, seq_len) = (dy.row(s) * inv).replicate(seq_len, 1);
  return dx;
}

}  // namespace wisense::nn
