#include "wisense/decoder.hpp"

#include "wisense/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wisense::gen {

namespace {
constexpr std::uint64_t kDecoderTag = 0x4445434f444552ull;
constexpr std::uint64_t kLoraTag = 0x4c4f5241ull;
constexpr std::uint64_t kProjTag = 0x50524f4aull;
constexpr std::uint64_t kStage2Tag = 0x535441474532ull;
constexpr std::uint64_t kPretrainTag = 0x505245ull;

RowVector log_softmax(const RowVector& row) {
  const double m = row.maxCoeff();
  const double lse = m + std::log((row.array() - m).exp().sum());
  return (row.array() - lse).matrix();
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

std::vector<std::string> reserved_tokens(int n_prompts) {
  std::vector<std::string> out = {"<pad>", "<bos>", "<eos>"};
  for (int i = 0; i < n_prompts; ++i) out.push_back("<prompt:" + std::to_string(i) + ">");
  return out;
}

std::vector<int> encode_caption(const text::Vocabulary& vocab, std::string_view caption) {
  std::vector<int> ids;
  for (const auto& w : text::tokenize(caption)) ids.push_back(vocab.at(w));
  ids.push_back(kEos);
  return ids;
}

std::string detokenize(const text::Vocabulary& vocab, std::span<const int> ids, int n_reserved) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kEos) break;
    if (id < n_reserved || id >= vocab.size()) continue;
    words.push_back(vocab.token(id));
  }
  return text::join(words);
}

void DecoderConfig::validate() const {
  if (vocab_size < 4) throw std::invalid_argument("decoder: vocabulary too small");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw std::invalid_argument("decoder: d_model must be a positive multiple of n_heads");
  if (n_layers < 0 || ff_mult < 1 || context < 2 || n_prefix < 0 || d_latent < 1)
    throw std::invalid_argument("decoder: invalid layer sizes");
  if (n_prefix >= context) throw std::invalid_argument("decoder: prefix does not fit in the context");
}

TeacherBatch make_teacher_batch(std::span<const std::vector<int>> prompts, std::span<const std::vector<int>> captions,
                                int n_prefix) {
  require_shape(prompts.size() == captions.size() && !prompts.empty(), "teacher batch: prompt/caption count mismatch");
  std::size_t S = 0;
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    if (captions[b].empty() || captions[b].back() != kEos)
      throw std::invalid_argument("teacher batch: target caption must end with EOS");
    S = std::max(S, prompts[b].size() + captions[b].size());
  }
  TeacherBatch tb;
  tb.seq_len = n_prefix + static_cast<Index>(S);
  tb.targets.assign(prompts.size() * static_cast<std::size_t>(tb.seq_len), nn::kIgnoreIndex);
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    std::vector<int> ids = prompts[b];
    ids.push_back(kBos);
    ids.insert(ids.end(), captions[b].begin(), captions[b].end() - 1);
    const std::size_t first = b * static_cast<std::size_t>(tb.seq_len) + static_cast<std::size_t>(n_prefix) +
                              prompts[b].size();  // BOS row
    for (std::size_t k = 0; k < captions[b].size(); ++k) tb.targets[first + k] = captions[b][k];
    ids.resize(S, kPad);
    tb.ids.push_back(std::move(ids));
  }
  return tb;
}

// ---------------------------------------------------------------- Decoder

Decoder::Decoder(const DecoderConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  auto rng = make_rng({seed, kDecoderTag});
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  tok = nn::Embedding("base/dec/tok", config.vocab_size, config.d_model, rng, emb_std);
  pos = nn::Embedding("base/dec/pos", config.context, config.d_model, rng, 0.1 * emb_std);
  for (int l = 0; l < config.n_layers; ++l)
    blocks.emplace_back("base/dec/block" + std::to_string(l), config.d_model, config.n_heads,
                        static_cast<Index>(config.ff_mult) * config.d_model, true, rng);
  ln_f = nn::LayerNorm("base/dec/ln_f", config.d_model);
  head = nn::Linear("base/dec/head", config.d_model, config.vocab_size, rng, 0.02);
}

void Decoder::enable_lora(std::uint64_t seed) {
  auto rng = make_rng({seed, kLoraTag});
  for (std::size_t l = 0; l < blocks.size(); ++l)
    blocks[l].enable_lora("lora/dec/block" + std::to_string(l), config_.lora_rank, config_.lora_alpha, rng);
}

Matrix Decoder::forward(const Matrix& prefix, const std::vector<std::vector<int>>& ids, Cache* cache) const {
  const Index B = static_cast<Index>(ids.size());
  const Index P = config_.n_prefix;
  if (B == 0) throw std::invalid_argument("decoder: empty batch");
  const Index S = static_cast<Index>(ids.front().size());
  for (const auto& s : ids) require_shape(static_cast<Index>(s.size()) == S, "decoder: sequences differ in length");
  require_shape(prefix.rows() == B * P && (P == 0 || prefix.cols() == config_.d_model),
                "decoder: prefix " + dims(prefix) + " for batch " + std::to_string(B));
  const Index L = P + S;
  if (L > config_.context)
    throw std::length_error("decoder: sequence of " + std::to_string(L) + " exceeds context " +
                            std::to_string(config_.context));

  std::vector<int> flat;
  flat.reserve(static_cast<std::size_t>(B * S));
  for (const auto& s : ids) flat.insert(flat.end(), s.begin(), s.end());
  const Matrix emb = tok.forward(flat);
  const Matrix& pos_table = pos.table.value;

  Matrix x(B * L, config_.d_model);
  for (Index b = 0; b < B; ++b) {
    if (P > 0) x.middleRows(b * L, P) = prefix.middleRows(b * P, P);
    x.middleRows(b * L + P, S) = emb.middleRows(b * S, S);
    x.middleRows(b * L, L) += pos_table.topRows(L);
  }
  if (cache) cache->blocks.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) x = blocks[i].forward(x, L, cache ? &cache->blocks[i] : nullptr);
  Matrix h = ln_f.forward(x, cache ? &cache->ln_f : nullptr);
  Matrix logits = head.forward(h);
  if (cache) {
    cache->h_final = std::move(h);
    cache->token_ids = std::move(flat);
    cache->batch = B;
    cache->seq_len = L;
  }
  return logits;
}

Matrix Decoder::backward(const Cache& c, const Matrix& dlogits) {
  const Index P = config_.n_prefix;
  const Index L = c.seq_len;
  const Index S = L - P;
  Matrix dx = ln_f.backward(c.ln_f, head.backward(c.h_final, dlogits));
  for (std::size_t i = blocks.size(); i-- > 0;) dx = blocks[i].backward(c.blocks[i], dx);
  if (!pos.table.frozen)
    for (Index b = 0; b < c.batch; ++b) pos.table.grad.topRows(L) += dx.middleRows(b * L, L);
  Matrix demb(c.batch * S, config_.d_model);
  Matrix dprefix(c.batch * P, config_.d_model);
  for (Index b = 0; b < c.batch; ++b) {
    if (P > 0) dprefix.middleRows(b * P, P) = dx.middleRows(b * L, P);
    demb.middleRows(b * S, S) = dx.middleRows(b * L + P, S);
  }
  tok.backward(c.token_ids, demb);
  return dprefix;
}

nn::ParamList Decoder::base_params() {
  nn::ParamList out;
  tok.collect(out);
  pos.collect(out);
  for (auto& b : blocks) b.collect(out);
  ln_f.collect(out);
  head.collect(out);
  // collect() of a block also returns its LoRA factors; keep base only.
  std::erase_if(out, [](const nn::Param* p) { return p->name.rfind("base/", 0) != 0; });
  return out;
}

nn::ParamList Decoder::lora_params() {
  nn::ParamList out;
  for (auto& b : blocks) b.collect_lora(out);
  return out;
}

// ---------------------------------------------------------------- CaptionModel

CaptionModel::CaptionModel(const DecoderConfig& config, std::uint64_t seed) {
  decoder = Decoder(config, seed);
  decoder.enable_lora(seed);
  auto rng = make_rng({seed, kProjTag});
  projector = nn::Linear("gen/proj", 2 * config.d_latent, static_cast<Index>(config.n_prefix) * config.d_model, rng);
  placeholder = nn::Param("gen/placeholder", Matrix::Zero(1, config.d_latent));
}

Matrix CaptionModel::project(const Matrix& f_align, const Matrix& f_v) const {
  const Index dl = config().d_latent;
  require_shape(f_align.cols() == dl && f_v.cols() == dl && f_align.rows() == f_v.rows(),
                "project: f_align " + dims(f_align) + ", f_v " + dims(f_v) + ", expected width " + std::to_string(dl));
  Matrix cat(f_align.rows(), 2 * dl);
  cat << f_align, f_v;
  Matrix y = projector.forward(cat);
  return Eigen::Map<const Matrix>(y.data(), f_align.rows() * config().n_prefix, config().d_model);
}

Matrix CaptionModel::project_backward(const Matrix& f_align, const Matrix& f_v, const Matrix& d_prefix) {
  const Index dl = config().d_latent;
  Matrix cat(f_align.rows(), 2 * dl);
  cat << f_align, f_v;
  const Matrix dy =
      Eigen::Map<const Matrix>(d_prefix.data(), f_align.rows(), static_cast<Index>(config().n_prefix) * config().d_model);
  return projector.backward(cat, dy);
}

Matrix CaptionModel::placeholder_rows(Index batch) const { return placeholder.value.replicate(batch, 1); }

nn::ParamList CaptionModel::stage2_params() {
  nn::ParamList out;
  projector.collect(out);
  for (auto* p : decoder.lora_params()) out.push_back(p);
  out.push_back(&placeholder);
  return out;
}

nn::ParamList CaptionModel::all_params() {
  nn::ParamList out = decoder.base_params();
  for (auto* p : stage2_params()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------- training

TeacherResult decode_train(CaptionModel& model, std::span<const GenExample> batch, bool use_video, bool grads) {
  const Index B = static_cast<Index>(batch.size());
  const Index dl = model.config().d_latent;
  Matrix fa(B, dl), fv(B, dl);
  std::vector<bool> placeholder(batch.size());
  std::vector<std::vector<int>> prompts, captions;
  for (Index b = 0; b < B; ++b) {
    const auto& e = batch[static_cast<std::size_t>(b)];
    require_shape(e.f_align.size() == dl, "decode_train: f_align of " + e.id + " has wrong width");
    fa.row(b) = e.f_align;
    placeholder[static_cast<std::size_t>(b)] = !use_video || e.f_v.size() == 0;
    fv.row(b) = placeholder[static_cast<std::size_t>(b)] ? RowVector(model.placeholder.value.row(0)) : e.f_v;
    prompts.push_back(e.prompt);
    captions.push_back(e.caption);
  }
  const TeacherBatch tb = make_teacher_batch(prompts, captions, model.config().n_prefix);
  const Matrix prefix = model.project(fa, fv);
  Decoder::Cache cache;
  const Matrix logits = model.decoder.forward(prefix, tb.ids, grads ? &cache : nullptr);
  const auto ce = nn::cross_entropy(logits, tb.targets);
  if (grads) {
    const Matrix dprefix = model.decoder.backward(cache, ce.grad);
    const Matrix dcat = model.project_backward(fa, fv, dprefix);
    if (!model.placeholder.frozen)
      for (Index b = 0; b < B; ++b)
        if (placeholder[static_cast<std::size_t>(b)]) model.placeholder.grad += dcat.row(b).tail(dl);
  }
  TeacherResult r;
  r.loss = ce.loss;
  r.tokens = ce.counted;
  r.token_accuracy = ce.counted ? static_cast<double>(ce.correct) / static_cast<double>(ce.counted) : 0.0;
  return r;
}

TeacherResult evaluate_teacher(CaptionModel& model, std::span<const GenExample> examples, bool use_video, Index chunk) {
  TeacherResult total;
  double nll = 0.0, hits = 0.0;
  for (std::size_t b0 = 0; b0 < examples.size(); b0 += static_cast<std::size_t>(chunk)) {
    const std::size_t n = std::min(static_cast<std::size_t>(chunk), examples.size() - b0);
    const auto r = decode_train(model, examples.subspan(b0, n), use_video, false);
    nll += r.loss * static_cast<double>(r.tokens);
    hits += r.token_accuracy * static_cast<double>(r.tokens);
    total.tokens += r.tokens;
  }
  if (total.tokens > 0) {
    total.loss = nll / static_cast<double>(total.tokens);
    total.token_accuracy = hits / static_cast<double>(total.tokens);
  }
  return total;
}

std::vector<double> pretrain_decoder(CaptionModel& model, std::span<const GenExample> examples,
                                     const Stage2Config& config) {
  if (examples.empty()) throw std::invalid_argument("decoder pretraining: no captions");
  auto& dec = model.decoder;
  nn::ParamList params = dec.base_params();
  nn::set_frozen(params, false);
  nn::ParamList everything = model.all_params();
  nn::Adam adam({config.pretrain_learning_rate});
  auto rng = make_rng({config.seed, kPretrainTag});
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), examples.size());
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::vector<double> curve;
  const int P = model.config().n_prefix;
  for (int step = 0; step < config.pretrain_steps; ++step) {
    if (cursor + B > order.size()) {
      order = shuffled(examples.size(), rng);
      cursor = 0;
    }
    std::vector<std::vector<int>> prompts, captions;
    for (std::size_t i = 0; i < B; ++i) {
      const auto& e = examples[order[cursor + i]];
      prompts.push_back(e.prompt);
      captions.push_back(e.caption);
    }
    cursor += B;
    const TeacherBatch tb = make_teacher_batch(prompts, captions, P);
    Decoder::Cache cache;
    const Matrix logits = dec.forward(Matrix::Zero(static_cast<Index>(B) * P, model.config().d_model), tb.ids, &cache);
    const auto ce = nn::cross_entropy(logits, tb.targets);
    if (!std::isfinite(ce.loss)) throw std::runtime_error("decoder pretraining: non-finite loss");
    nn::zero_grads(everything);
    dec.backward(cache, ce.grad);
    adam.set_learning_rate(nn::cosine_lr(config.pretrain_learning_rate, step, config.pretrain_steps));
    adam.step(params);
    curve.push_back(ce.loss);
  }
  nn::set_frozen(params, true);
  nn::zero_grads(everything);
  return curve;
}

Stage2Result train_stage2(CaptionModel& model, std::span<const GenExample> examples, const Stage2Config& config,
                          const std::function<void(int, double, double)>& on_step) {
  if (examples.empty()) throw std::invalid_argument("stage 2: empty training corpus");
  nn::set_frozen(model.decoder.base_params(), true);
  nn::ParamList params = model.stage2_params();
  nn::set_frozen(params, false);
  nn::ParamList everything = model.all_params();
  nn::Adam adam({config.learning_rate});
  auto rng = make_rng({config.seed, kStage2Tag});
  std::bernoulli_distribution drop(config.video_dropout);
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), examples.size());
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  Stage2Result result;
  for (int step = 0; step < config.steps; ++step) {
    if (cursor + B > order.size()) {
      order = shuffled(examples.size(), rng);
      cursor = 0;
    }
    std::vector<GenExample> batch;
    batch.reserve(B);
    for (std::size_t i = 0; i < B; ++i) {
      GenExample e = examples[order[cursor + i]];
      if (drop(rng)) e.f_v = RowVector();
      batch.push_back(std::move(e));
    }
    cursor += B;
    nn::zero_grads(everything);
    const auto r = decode_train(model, batch, true, true);
    if (!std::isfinite(r.loss)) throw std::runtime_error("stage 2: non-finite loss at step " + std::to_string(step));
    adam.set_learning_rate(nn::cosine_lr(config.learning_rate, step, config.steps));
    adam.step(params);
    result.loss_curve.push_back(r.loss);
    result.accuracy_curve.push_back(r.token_accuracy);
    if (on_step) on_step(step, r.loss, r.token_accuracy);
  }
  nn::zero_grads(everything);
  return result;
}

// ---------------------------------------------------------------- decoding

Generation generate(const CaptionModel& model, const RowVector& f_align, const RowVector& f_v,
                    std::span<const int> prompt, Strategy strategy, int beam_width, int max_len) {
  const auto& cfg = model.config();
  const Matrix fv = f_v.size() == 0 ? model.placeholder_rows(1) : Matrix(f_v);
  const Matrix prefix = model.project(Matrix(f_align), fv);
  const int width = strategy == Strategy::greedy ? 1 : std::max(1, beam_width);
  const std::size_t room = static_cast<std::size_t>(cfg.context - cfg.n_prefix);

  struct Beam {
    std::vector<int> gen;
    double logp = 0.0;
    bool done = false;
    double norm() const { return gen.empty() ? 0.0 : logp / static_cast<double>(gen.size()); }
  };
  std::vector<Beam> beams(1);
  std::vector<int> base(prompt.begin(), prompt.end());
  base.push_back(kBos);
  bool truncated = false;

  for (int step = 0; step < max_len; ++step) {
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < beams.size(); ++i)
      if (!beams[i].done) alive.push_back(i);
    if (alive.empty()) break;
    if (base.size() + beams[alive[0]].gen.size() > room) {
      truncated = true;
      break;
    }
    std::vector<std::vector<int>> ids;
    for (auto i : alive) {
      ids.push_back(base);
      ids.back().insert(ids.back().end(), beams[i].gen.begin(), beams[i].gen.end());
    }
    const Index L = cfg.n_prefix + static_cast<Index>(ids.front().size());
    const Matrix logits = model.decoder.forward(prefix.replicate(static_cast<Index>(alive.size()), 1), ids, nullptr);

    std::vector<Beam> candidates;
    std::size_t a = 0;
    for (std::size_t i = 0; i < beams.size(); ++i) {
      if (beams[i].done) {
        candidates.push_back(beams[i]);
        continue;
      }
      const RowVector lp = log_softmax(logits.row(static_cast<Index>(a) * L + L - 1));
      ++a;
      if (strategy == Strategy::greedy) {
        const int v = static_cast<int>(nn::argmax(lp));
        Beam nb = beams[i];
        nb.gen.push_back(v);
        nb.logp += lp(v);
        nb.done = v == kEos;
        candidates.push_back(std::move(nb));
        continue;
      }
      for (int v = 0; v < lp.size(); ++v) {
        Beam nb = beams[i];
        nb.gen.push_back(v);
        nb.logp += lp(v);
        nb.done = v == kEos;
        candidates.push_back(std::move(nb));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& x, const Beam& y) { return x.norm() > y.norm(); });
    if (candidates.size() > static_cast<std::size_t>(width)) candidates.resize(static_cast<std::size_t>(width));
    beams = std::move(candidates);
  }
  // Best finished hypothesis; fall back to the best unfinished one.
  const Beam* best = nullptr;
  for (const auto& b : beams)
    if (b.done && (!best || b.norm() > best->norm())) best = &b;
  if (!best) {
    best = &beams.front();
    truncated = true;
  }
  Generation g;
  g.ids = best->gen;
  g.truncated = truncated;
  g.score = best->norm();
  return g;
}

std::vector<Generation> generate_greedy_batch(const CaptionModel& model, const Matrix& f_align,
                                              std::span<const std::vector<int>> prompts, int max_len) {
  const auto& cfg = model.config();
  const Index B = f_align.rows();
  require_shape(static_cast<Index>(prompts.size()) == B, "generate: one prompt per sample");
  std::vector<Generation> out(static_cast<std::size_t>(B));
  if (B == 0) return out;
  const Matrix prefix = model.project(f_align, model.placeholder_rows(B));
  std::vector<std::vector<int>> ids;
  for (const auto& p : prompts) {
    ids.push_back(p);
    ids.back().push_back(kBos);
    require_shape(ids.back().size() == ids.front().size(), "generate: batched prompts must share a length");
  }
  std::vector<bool> done(static_cast<std::size_t>(B), false);
  std::vector<double> logp(static_cast<std::size_t>(B), 0.0);
  for (int step = 0; step < max_len; ++step) {
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
    if (cfg.n_prefix + static_cast<Index>(ids.front().size()) > cfg.context) break;
    const Index L = cfg.n_prefix + static_cast<Index>(ids.front().size());
    const Matrix logits = model.decoder.forward(prefix, ids, nullptr);
    for (Index b = 0; b < B; ++b) {
      const auto ub = static_cast<std::size_t>(b);
      if (done[ub]) {
        ids[ub].push_back(kPad);
        continue;
      }
      const RowVector lp = log_softmax(logits.row(b * L + L - 1));
      const int v = static_cast<int>(nn::argmax(lp));
      out[ub].ids.push_back(v);
      logp[ub] += lp(v);
      ids[ub].push_back(v);
      if (v == kEos) done[ub] = true;
    }
  }
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].truncated = !done[b];
    out[b].score = out[b].ids.empty() ? 0.0 : logp[b] / static_cast<double>(out[b].ids.size());
  }
  return out;
}

}  // namespace wisense::gen
