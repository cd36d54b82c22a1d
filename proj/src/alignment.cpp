#include "wisense/alignment.hpp"

#include "wisense/nn.hpp"
#include "wisense/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wisense::align {

namespace {
constexpr std::uint64_t kInitTag = 0x414c49474e494eull;
constexpr std::uint64_t kBatchTag = 0x4241544348ull;
constexpr std::uint64_t kProxyTag = 0x50524f5859ull;
constexpr std::uint64_t kEvalTag = 0x4556414cull;
}  // namespace

Adapter::Adapter(const AdapterConfig& config, std::mt19937_64& rng)
    : fc1("align/fc1", config.d_in, config.d_hidden, rng), fc2("align/fc2", config.d_hidden, config.d_out, rng) {}

Matrix Adapter::forward(const Matrix& f_enc, Cache* cache) const {
  Matrix pre = fc1.forward(f_enc);
  Matrix act = nn::gelu(pre);
  Matrix out = fc2.forward(act);
  Matrix y = nn::l2_normalize_rows(out);
  if (cache) {
    cache->x = f_enc;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->out = std::move(out);
  }
  return y;
}

Matrix Adapter::backward(const Cache& c, const Matrix& d_align) {
  const Matrix dout = nn::l2_normalize_rows_backward(c.out, d_align);
  const Matrix dact = fc2.backward(c.act, dout);
  return fc1.backward(c.x, nn::gelu_backward(c.pre, dact));
}

void Adapter::collect(nn::ParamList& out) {
  fc1.collect(out);
  fc2.collect(out);
}

ContrastiveResult contrastive_loss(const Matrix& f_align, const Matrix& f_text, double tau) {
  const Index B = f_align.rows();
  if (B < 2) throw std::invalid_argument("contrastive loss needs a batch of at least 2 pairs");
  require_shape(f_text.rows() == B && f_text.cols() == f_align.cols(),
                "contrastive loss: " + dims(f_align) + " vs " + dims(f_text));
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be > 0");
  const Matrix s = (f_align * f_text.transpose()) / tau;
  const Matrix p_rows = nn::softmax_rows(s);
  const Matrix p_cols = nn::softmax_rows(s.transpose());
  ContrastiveResult r;
  for (Index i = 0; i < B; ++i) {
    r.loss_c2t -= std::log(p_rows(i, i));
    r.loss_t2c -= std::log(p_cols(i, i));
  }
  r.loss_c2t /= static_cast<double>(B);
  r.loss_t2c /= static_cast<double>(B);
  r.loss = r.loss_c2t + r.loss_t2c;
  const Matrix eye = Matrix::Identity(B, B);
  const Matrix ds = (p_rows - eye) / static_cast<double>(B) + ((p_cols - eye) / static_cast<double>(B)).transpose();
  r.d_align = ds * f_text / tau;
  r.d_text = ds.transpose() * f_align / tau;
  return r;
}

CsiAligner::CsiAligner(const enc::EncoderConfig& encoder_cfg, const AdapterConfig& adapter_cfg, std::uint64_t seed)
    : encoder_config_(encoder_cfg), adapter_config_(adapter_cfg) {
  if (adapter_cfg.d_in != encoder_cfg.d_model)
    throw ShapeError("adapter input " + std::to_string(adapter_cfg.d_in) + " does not match encoder d_model " +
                     std::to_string(encoder_cfg.d_model));
  auto rng = make_rng({seed, kInitTag});
  front = enc::CsiFrontEnd(encoder_cfg, rng);
  encoder = enc::WifiEncoder(encoder_cfg, rng);
  adapter = Adapter(adapter_cfg, rng);
}

Matrix CsiAligner::encode(const Matrix& raw, Cache* cache) const {
  Matrix tokens = front.forward(raw);
  Matrix f_enc = encoder.forward(tokens, cache ? &cache->enc : nullptr);
  if (cache) {
    cache->raw = raw;
    cache->tokens = std::move(tokens);
    cache->f_enc = f_enc;
  }
  return f_enc;
}

Matrix CsiAligner::forward(const Matrix& raw, Cache* cache) const {
  const Matrix f_enc = encode(raw, cache);
  return adapter.forward(f_enc, cache ? &cache->adapter : nullptr);
}

void CsiAligner::backward(const Cache& cache, const Matrix& d_align) {
  const Matrix d_enc = adapter.backward(cache.adapter, d_align);
  if (front.proj.weight.frozen) return;  // frozen encoder: nothing upstream to update
  backward_encoder(cache, d_enc);
}

void CsiAligner::backward_encoder(const Cache& cache, const Matrix& d_enc) {
  const Matrix d_tokens = encoder.backward(cache.enc, d_enc);
  front.backward(cache.raw, d_tokens);
}

Matrix stack(std::span<const MatrixF> samples, std::span<const Index> rows) {
  if (rows.empty()) throw std::invalid_argument("stack: empty batch");
  const Index n = samples[static_cast<std::size_t>(rows[0])].rows();
  const Index f = samples[static_cast<std::size_t>(rows[0])].cols();
  Matrix out(n * static_cast<Index>(rows.size()), f);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& s = samples[static_cast<std::size_t>(rows[i])];
    require_shape(s.rows() == n && s.cols() == f, "stack: samples differ in shape");
    out.middleRows(static_cast<Index>(i) * n, n) = s.cast<double>();
  }
  return out;
}

Matrix CsiAligner::embed(std::span<const MatrixF> samples, Index batch) const {
  Matrix out(static_cast<Index>(samples.size()), adapter_config_.d_out);
  for (Index b0 = 0; b0 < out.rows(); b0 += batch) {
    const Index nb = std::min(batch, out.rows() - b0);
    std::vector<Index> rows(static_cast<std::size_t>(nb));
    std::iota(rows.begin(), rows.end(), b0);
    out.middleRows(b0, nb) = forward(stack(samples, rows), nullptr);
  }
  return out;
}

nn::ParamList CsiAligner::encoder_params() {
  nn::ParamList out;
  front.collect(out);
  encoder.collect(out);
  return out;
}

nn::ParamList CsiAligner::adapter_params() {
  nn::ParamList out;
  adapter.collect(out);
  return out;
}

nn::ParamList CsiAligner::all_params() {
  nn::ParamList out = encoder_params();
  adapter.collect(out);
  return out;
}

double evaluate_contrastive(const Matrix& f_align, const Matrix& targets, double tau, Index batch) {
  const Index n = f_align.rows();
  batch = std::min(batch, n);
  if (batch < 2) throw std::invalid_argument("evaluate_contrastive: fewer than 2 pairs");
  double total = 0.0;
  int count = 0;
  for (Index b0 = 0; b0 + batch <= n; b0 += batch) {
    total += contrastive_loss(f_align.middleRows(b0, batch), targets.middleRows(b0, batch), tau).loss;
    ++count;
  }
  return total / count;
}

namespace {

// Linear probe on f_enc; gives a frozen encoder discriminative features
// before only the adapter is trained.
void proxy_pretrain(CsiAligner& model, std::span<const MatrixF> samples, std::span<const int> labels,
                    const Stage1Config& config, Stage1Result& result) {
  if (labels.size() != samples.size()) throw std::invalid_argument("proxy pretraining: one label per sample needed");
  std::vector<Index> labelled;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) labelled.push_back(static_cast<Index>(i));
  if (labelled.empty()) throw std::invalid_argument("proxy pretraining: no labelled samples");
  const int n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  auto rng = make_rng({config.seed, kProxyTag});
  nn::Linear head("proxy/head", model.encoder_config().d_model, n_classes, rng);
  nn::ParamList params = model.encoder_params();
  head.collect(params);
  nn::Adam adam({config.learning_rate});
  const Index n = static_cast<Index>(labelled.size());
  const Index B = std::min<Index>(config.batch_size, n);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  for (int step = 0; step < config.proxy_steps; ++step) {
    std::vector<Index> rows(static_cast<std::size_t>(B));
    for (auto& r : rows) r = labelled[static_cast<std::size_t>(pick(rng))];
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[static_cast<std::size_t>(rows[i])];
    CsiAligner::Cache cache;
    const Matrix f_enc = model.encode(stack(samples, rows), &cache);
    const auto ce = nn::cross_entropy(head.forward(f_enc), y);
    if (!std::isfinite(ce.loss)) throw std::runtime_error("proxy pretraining: non-finite loss at step " + std::to_string(step));
    nn::zero_grads(params);
    model.backward_encoder(cache, head.backward(f_enc, ce.grad));
    adam.set_learning_rate(nn::cosine_lr(config.learning_rate, step, config.proxy_steps));
    adam.step(params);
    result.proxy_curve.push_back(ce.loss);
  }
}

}  // namespace

Stage1Result train_stage1(CsiAligner& model, std::span<const MatrixF> samples, const Matrix& targets,
                          std::span<const int> labels, const Stage1Config& config,
                          const std::function<void(int)>& on_epoch) {
  const Index n = static_cast<Index>(samples.size());
  if (n == 0) throw std::invalid_argument("stage 1: empty training corpus");
  if (n < 2) throw std::invalid_argument("stage 1: need at least 2 training pairs");
  require_shape(targets.rows() == n, "stage 1: one text target per sample required");
  if (config.steps < 0 || config.batch_size < 2) throw std::invalid_argument("stage 1: bad step count or batch size");

  Stage1Result result;
  const Index B = std::min<Index>(config.batch_size, n);
  // Fixed shuffled order for loss reporting: the corpus is usually grouped
  // by class, and consecutive batches of one caption carry no signal.
  std::vector<Index> eval_order(static_cast<std::size_t>(n));
  std::iota(eval_order.begin(), eval_order.end(), Index{0});
  {
    auto eval_rng = make_rng({config.seed, kEvalTag});
    std::shuffle(eval_order.begin(), eval_order.end(), eval_rng);
  }
  auto training_loss = [&] {
    const Matrix fa = model.embed(samples);
    return evaluate_contrastive(fa(eval_order, Eigen::all), targets(eval_order, Eigen::all),
                                config.temperature, B);
  };
  result.initial_loss = training_loss();

  if (config.freeze_encoder) {
    if (config.proxy_steps > 0) proxy_pretrain(model, samples, labels, config, result);
    nn::set_frozen(model.encoder_params(), true);
  }
  nn::ParamList params = config.freeze_encoder ? model.adapter_params() : model.all_params();
  nn::Adam adam({config.learning_rate});
  auto rng = make_rng({config.seed, kBatchTag});

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::size_t cursor = order.size();
  int epoch = 0;
  for (int step = 0; step < config.steps; ++step) {
    if (cursor + static_cast<std::size_t>(B) > order.size()) {
      if (cursor != order.size() || step > 0) {
        ++epoch;
        if (on_epoch) on_epoch(epoch);
      }
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::span<const Index> rows(order.data() + cursor, static_cast<std::size_t>(B));
    cursor += static_cast<std::size_t>(B);

    CsiAligner::Cache cache;
    const Matrix fa = model.forward(stack(samples, rows), &cache);
    Matrix ft(B, targets.cols());
    for (Index i = 0; i < B; ++i) ft.row(i) = targets.row(rows[static_cast<std::size_t>(i)]);
    const auto res = contrastive_loss(fa, ft, config.temperature);
    if (!std::isfinite(res.loss))
      throw std::runtime_error("stage 1: non-finite contrastive loss at step " + std::to_string(step));
    nn::zero_grads(params);
    model.backward(cache, res.d_align);
    adam.set_learning_rate(nn::cosine_lr(config.learning_rate, step, config.steps));
    adam.step(params);
    result.loss_curve.push_back(res.loss);
  }
  ++epoch;
  if (on_epoch) on_epoch(epoch);
  result.epochs = epoch;
  result.final_loss = training_loss();
  return result;
}

std::vector<Index> retrieve(const RowVector& query, const Matrix& candidates) {
  if (candidates.rows() < 1) throw std::invalid_argument("retrieve: no candidates");
  require_shape(candidates.cols() == query.size(), "retrieve: dimension mismatch");
  const double qn = query.norm();
  Vector cos(candidates.rows());
  for (Index i = 0; i < candidates.rows(); ++i) {
    const double d = qn * candidates.row(i).norm();
    cos(i) = d > 0.0 ? candidates.row(i).dot(query) / d : 0.0;
  }
  std::vector<Index> order(static_cast<std::size_t>(candidates.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return cos(a) > cos(b); });
  return order;
}

ZeroShotResult zero_shot_classify(const RowVector& f_align, const Matrix& class_embeddings) {
  if (class_embeddings.rows() < 1) throw std::invalid_argument("zero-shot: empty class description set");
  require_shape(class_embeddings.cols() == f_align.size(), "zero-shot: dimension mismatch");
  ZeroShotResult r;
  r.scores.resize(class_embeddings.rows());
  const double qn = f_align.norm();
  for (Index i = 0; i < class_embeddings.rows(); ++i) {
    const double d = qn * class_embeddings.row(i).norm();
    r.scores(i) = d > 0.0 ? class_embeddings.row(i).dot(f_align) / d : 0.0;
  }
  r.label = static_cast<int>(nn::argmax(r.scores));
  return r;
}

Separation embedding_separation(const Matrix& embeddings, std::span<const int> labels) {
  require_shape(static_cast<Index>(labels.size()) == embeddings.rows(), "separation: one label per row");
  const Matrix u = nn::l2_normalize_rows(embeddings);
  const Matrix c = u * u.transpose();
  double si = 0, se = 0;
  long ni = 0, ne = 0;
  for (Index i = 0; i < c.rows(); ++i)
    for (Index j = 0; j < c.cols(); ++j) {
      if (i == j) continue;
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        si += c(i, j);
        ++ni;
      } else {
        se += c(i, j);
        ++ne;
      }
    }
  Separation s;
  s.intra = ni ? si / ni : 0.0;
  s.inter = ne ? se / ne : 0.0;
  return s;
}

}  // namespace wisense::align
