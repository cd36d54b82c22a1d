#include "gradcases.hpp"

#include "wisense/alignment.hpp"
#include "wisense/decoder.hpp"
#include "wisense/encoder.hpp"
#include "wisense/layers.hpp"
#include "wisense/nn.hpp"
#include "wisense/rng.hpp"

namespace wisense::testing {

namespace {

using nn::GradCheckReport;
using nn::GradTarget;

// Weighted sum of the outputs: a scalar loss whose upstream gradient is the
// weight matrix itself.
double probe(const Matrix& y, const Matrix& w) { return (y.array() * w.array()).sum(); }

std::vector<GradTarget> param_targets(const nn::ParamList& params) {
  std::vector<GradTarget> out;
  for (auto* p : params) out.push_back({p->name, &p->value, p->grad});
  return out;
}

GradCheckReport run_check(const std::function<double()>& loss, std::vector<GradTarget> targets) {
  return nn::gradient_check(loss, targets);
}

// LoRA B starts at zero, which hides the A gradient; give it random values.
void randomize_lora(const nn::ParamList& params, std::mt19937_64& rng) {
  for (auto* p : params)
    if (p->name.size() >= 2 && p->name.compare(p->name.size() - 2, 2, "/B") == 0)
      p->value = nn::random_normal(p->value.rows(), p->value.cols(), 0.3, rng);
}

GradCheckReport linear_case() {
  auto rng = make_rng({1});
  nn::Linear lin("lin", 5, 4, rng);
  lin.bias.value = nn::random_normal(1, 4, 0.5, rng);
  Matrix x = nn::random_normal(3, 5, 1.0, rng);
  const Matrix w = nn::random_normal(3, 4, 1.0, rng);
  nn::ParamList params;
  lin.collect(params);
  nn::zero_grads(params);
  const Matrix dx = lin.backward(x, w);
  auto targets = param_targets(params);
  targets.push_back({"x", &x, dx});
  return run_check([&] { return probe(lin.forward(x), w); }, targets);
}

GradCheckReport lora_case() {
  auto rng = make_rng({2});
  nn::LoraLinear lin("lora", 6, 5, rng);
  lin.enable_lora("lora/ad", 2, 4.0, rng);
  nn::ParamList params;
  lin.collect(params);
  randomize_lora(params, rng);
  Matrix x = nn::random_normal(4, 6, 1.0, rng);
  const Matrix w = nn::random_normal(4, 5, 1.0, rng);
  nn::zero_grads(params);
  const Matrix dx = lin.backward(x, w);
  auto targets = param_targets(params);
  targets.push_back({"x", &x, dx});
  return run_check([&] { return probe(lin.forward(x), w); }, targets);
}

GradCheckReport layer_norm_case() {
  auto rng = make_rng({3});
  nn::LayerNorm ln("ln", 6);
  ln.gamma.value = nn::random_normal(1, 6, 1.0, rng);
  ln.beta.value = nn::random_normal(1, 6, 1.0, rng);
  Matrix x = nn::random_normal(4, 6, 2.0, rng);
  const Matrix w = nn::random_normal(4, 6, 1.0, rng);
  nn::ParamList params;
  ln.collect(params);
  nn::zero_grads(params);
  nn::LayerNormCache cache;
  ln.forward(x, &cache);
  const Matrix dx = ln.backward(cache, w);
  auto targets = param_targets(params);
  targets.push_back({"x", &x, dx});
  return run_check([&] { return probe(ln.forward(x, nullptr), w); }, targets);
}

GradCheckReport gelu_case() {
  auto rng = make_rng({4});
  Matrix x = nn::random_normal(4, 7, 2.0, rng);
  const Matrix w = nn::random_normal(4, 7, 1.0, rng);
  std::vector<GradTarget> targets = {{"x", &x, nn::gelu_backward(x, w)}};
  return run_check([&] { return probe(nn::gelu(x), w); }, targets);
}

GradCheckReport softmax_case() {
  auto rng = make_rng({5});
  Matrix x = nn::random_normal(3, 6, 2.0, rng);
  const Matrix w = nn::random_normal(3, 6, 1.0, rng);
  std::vector<GradTarget> targets = {{"x", &x, nn::softmax_rows_backward(nn::softmax_rows(x), w)}};
  return run_check([&] { return probe(nn::softmax_rows(x), w); }, targets);
}

GradCheckReport l2_normalize_case() {
  auto rng = make_rng({6});
  Matrix x = nn::random_normal(3, 5, 1.0, rng);
  const Matrix w = nn::random_normal(3, 5, 1.0, rng);
  std::vector<GradTarget> targets = {{"x", &x, nn::l2_normalize_rows_backward(x, w)}};
  return run_check([&] { return probe(nn::l2_normalize_rows(x), w); }, targets);
}

GradCheckReport embedding_case() {
  auto rng = make_rng({7});
  nn::Embedding emb("emb", 6, 4, rng, 1.0);
  const std::vector<int> ids = {0, 3, 3, 5, 1};
  const Matrix w = nn::random_normal(5, 4, 1.0, rng);
  nn::ParamList params;
  emb.collect(params);
  nn::zero_grads(params);
  emb.backward(ids, w);
  return run_check([&] { return probe(emb.forward(ids), w); }, param_targets(params));
}

GradCheckReport attention_case(bool causal) {
  auto rng = make_rng({8, causal ? 1u : 0u});
  nn::MultiHeadAttention mha("mha", 8, 2, causal, rng);
  mha.enable_lora("lora/mha", 2, 4.0, rng);
  nn::ParamList params;
  mha.collect(params);
  randomize_lora(params, rng);
  const Index seq = 4;
  Matrix x = nn::random_normal(2 * seq, 8, 1.0, rng);
  const Matrix w = nn::random_normal(2 * seq, 8, 1.0, rng);
  nn::zero_grads(params);
  nn::MultiHeadAttention::Cache cache;
  mha.forward(x, seq, &cache);
  const Matrix dx = mha.backward(cache, w);
  auto targets = param_targets(params);
  targets.push_back({"x", &x, dx});
  return run_check([&] { return probe(mha.forward(x, seq, nullptr), w); }, targets);
}

GradCheckReport feed_forward_case() {
  auto rng = make_rng({9});
  nn::FeedForward ff("ff", 6, 12, rng);
  Matrix x = nn::random_normal(5, 6, 1.0, rng);
  const Matrix w = nn::random_normal(5, 6, 1.0, rng);
  nn::ParamList params;
  ff.collect(params);
  nn::zero_grads(params);
  nn::FeedForward::Cache cache;
  ff.forward(x, &cache);
  const Matrix dx = ff.backward(cache, w);
  auto targets = param_targets(params);
  targets.push_back({"x", &x, dx});
  return run_check([&] { return probe(ff.forward(x, nullptr), w); }, targets);
}

GradCheckReport block_case() {
  auto rng = make_rng({10});
  nn::TransformerBlock block("blk", 8, 2, 16, true, rng);
  const Index seq = 3;
  Matrix x = nn::random_normal(2 * seq, 8, 1.0, rng);
  const Matrix w = nn::random_normal(2 * seq, 8, 1.0, rng);
  nn::ParamList params;
  block.collect(params);
  nn::zero_grads(params);
  nn::TransformerBlock::Cache cache;
  block.forward(x, seq, &cache);
  const Matrix dx = block.backward(cache, w);
  auto targets = param_targets(params);
  targets.push_back({"x", &x, dx});
  return run_check([&] { return probe(block.forward(x, seq, nullptr), w); }, targets);
}

GradCheckReport mean_pool_case() {
  auto rng = make_rng({11});
  Matrix x = nn::random_normal(6, 4, 1.0, rng);
  const Matrix w = nn::random_normal(2, 4, 1.0, rng);
  std::vector<GradTarget> targets = {{"x", &x, nn::mean_pool_backward(w, 3)}};
  return run_check([&] { return probe(nn::mean_pool(x, 3), w); }, targets);
}

GradCheckReport cross_entropy_case() {
  auto rng = make_rng({12});
  Matrix logits = nn::random_normal(5, 6, 1.5, rng);
  const std::vector<int> targets_ids = {2, nn::kIgnoreIndex, 0, 5, 5};
  std::vector<GradTarget> targets = {{"logits", &logits, nn::cross_entropy(logits, targets_ids).grad}};
  return run_check([&] { return nn::cross_entropy(logits, targets_ids).loss; }, targets);
}

GradCheckReport contrastive_case() {
  auto rng = make_rng({13});
  Matrix a = nn::l2_normalize_rows(nn::random_normal(4, 5, 1.0, rng));
  Matrix t = nn::l2_normalize_rows(nn::random_normal(4, 5, 1.0, rng));
  const double tau = 0.1;
  const auto r = align::contrastive_loss(a, t, tau);
  std::vector<GradTarget> targets = {{"f_align", &a, r.d_align}, {"f_text", &t, r.d_text}};
  return run_check([&] { return align::contrastive_loss(a, t, tau).loss; }, targets);
}

GradCheckReport adapter_case() {
  auto rng = make_rng({14});
  align::Adapter adapter({6, 10, 5}, rng);
  Matrix x = nn::random_normal(3, 6, 1.0, rng);
  const Matrix w = nn::random_normal(3, 5, 1.0, rng);
  nn::ParamList params;
  adapter.collect(params);
  nn::zero_grads(params);
  align::Adapter::Cache cache;
  adapter.forward(x, &cache);
  const Matrix dx = adapter.backward(cache, w);
  auto targets = param_targets(params);
  targets.push_back({"f_enc", &x, dx});
  return run_check([&] { return probe(adapter.forward(x, nullptr), w); }, targets);
}

GradCheckReport wifi_encoder_case() {
  auto rng = make_rng({15});
  enc::EncoderConfig cfg{8, 2, 2, 2, 5, 4};
  enc::WifiEncoder encoder(cfg, rng);
  Matrix tokens = nn::random_normal(2 * cfg.n_tokens, cfg.d_model, 1.0, rng);
  const Matrix w = nn::random_normal(2, cfg.d_model, 1.0, rng);
  nn::ParamList params;
  encoder.collect(params);
  nn::zero_grads(params);
  enc::WifiEncoder::Cache cache;
  encoder.forward(tokens, &cache);
  const Matrix dt = encoder.backward(cache, w);
  auto targets = param_targets(params);
  targets.push_back({"tokens", &tokens, dt});
  return run_check([&] { return probe(encoder.forward(tokens, nullptr), w); }, targets);
}

// Front end, encoder and adapter under the contrastive objective.
GradCheckReport aligner_case() {
  enc::EncoderConfig ecfg{8, 1, 2, 2, 6, 4};
  align::CsiAligner model(ecfg, {8, 12, 6}, 16);
  auto rng = make_rng({16});
  const Index B = 3;
  Matrix raw = nn::random_normal(B * ecfg.n_tokens, ecfg.raw_features, 1.0, rng);
  const Matrix text = nn::l2_normalize_rows(nn::random_normal(B, 6, 1.0, rng));
  const double tau = 0.1;
  auto params = model.all_params();
  nn::zero_grads(params);
  align::CsiAligner::Cache cache;
  const Matrix fa = model.forward(raw, &cache);
  model.backward(cache, align::contrastive_loss(fa, text, tau).d_align);
  return run_check([&] { return align::contrastive_loss(model.forward(raw, nullptr), text, tau).loss; },
                   param_targets(params));
}

// Projector, decoder, LoRA factors and placeholder under the teacher-forced
// caption loss, with captions of unequal length so padding is exercised.
GradCheckReport caption_case(bool use_video) {
  gen::DecoderConfig cfg;
  cfg.vocab_size = 10;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.context = 16;
  cfg.n_prefix = 2;
  cfg.d_latent = 5;
  cfg.lora_rank = 2;
  cfg.lora_alpha = 4.0;
  gen::CaptionModel model(cfg, 17);
  auto rng = make_rng({17});
  auto params = model.all_params();
  randomize_lora(params, rng);
  model.placeholder.value = nn::random_normal(1, cfg.d_latent, 0.5, rng);
  std::vector<gen::GenExample> batch(2);
  batch[0].caption = {4, 5, 6, gen::kEos};
  batch[1].caption = {7, gen::kEos};
  for (auto& e : batch) {
    e.id = "g";
    e.f_align = nn::random_normal(1, cfg.d_latent, 1.0, rng);
    e.f_v = nn::random_normal(1, cfg.d_latent, 1.0, rng);
    e.prompt = {gen::prompt_token(0)};
  }
  nn::zero_grads(params);
  gen::decode_train(model, batch, use_video, true);
  auto targets = param_targets(params);
  if (use_video) std::erase_if(targets, [](const GradTarget& t) { return t.name == "gen/placeholder"; });
  return run_check([&] { return gen::decode_train(model, batch, use_video, false).loss; }, targets);
}

}  // namespace

std::vector<GradCase> gradient_cases() {
  return {
      {"linear", linear_case},
      {"lora_linear", lora_case},
      {"layer_norm", layer_norm_case},
      {"gelu", gelu_case},
      {"softmax", softmax_case},
      {"l2_normalize", l2_normalize_case},
      {"embedding", embedding_case},
      {"attention", [] { return attention_case(false); }},
      {"causal_attention", [] { return attention_case(true); }},
      {"feed_forward", feed_forward_case},
      {"transformer_block", block_case},
      {"mean_pool", mean_pool_case},
      {"cross_entropy", cross_entropy_case},
      {"contrastive_loss", contrastive_case},
      {"adapter", adapter_case},
      {"wifi_encoder", wifi_encoder_case},
      {"csi_aligner", aligner_case},
      {"caption_model_placeholder", [] { return caption_case(false); }},
      {"caption_model_video", [] { return caption_case(true); }},
  };
}

}  // namespace wisense::testing
