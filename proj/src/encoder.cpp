#include "wisense/encoder.hpp"

namespace wisense::enc {

void EncoderConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw std::invalid_argument("encoder: d_model must be a positive multiple of n_heads");
  if (n_layers < 0) throw std::invalid_argument("encoder: n_layers must be >= 0");
  if (ff_mult < 1) throw std::invalid_argument("encoder: ff_mult must be >= 1");
  if (n_tokens < 1 || raw_features < 1) throw std::invalid_argument("encoder: token shape must be positive");
}

CsiFrontEnd::CsiFrontEnd(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  proj = nn::Linear("enc/proj", config.raw_features, config.d_model, rng);
  ste = nn::Param("enc/ste", nn::random_normal(config.n_tokens, config.d_model, 0.02, rng));
}

Matrix CsiFrontEnd::forward(const Matrix& raw) const {
  const Index n = ste.value.rows();
  require_shape(raw.rows() % n == 0, "front end: " + std::to_string(raw.rows()) + " rows is not a multiple of " +
                                         std::to_string(n) + " tokens");
  Matrix y = proj.forward(raw);
  for (Index s = 0; s < raw.rows() / n; ++s) y.middleRows(s * n, n) += ste.value;
  return y;
}

void CsiFrontEnd::backward(const Matrix& raw, const Matrix& dy) {
  const Index n = ste.value.rows();
  proj.backward(raw, dy);
  if (ste.frozen) return;
  for (Index s = 0; s < dy.rows() / n; ++s) ste.grad += dy.middleRows(s * n, n);
}

void CsiFrontEnd::collect(nn::ParamList& out) {
  proj.collect(out);
  out.push_back(&ste);
}

WifiEncoder::WifiEncoder(const EncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  config.validate();
  for (int l = 0; l < config.n_layers; ++l)
    blocks.emplace_back("enc/block" + std::to_string(l), config.d_model, config.n_heads,
                        static_cast<Index>(config.ff_mult) * config.d_model, false, rng);
}

Matrix WifiEncoder::forward(const Matrix& tokens, Cache* cache) const {
  require_shape(tokens.cols() == config_.d_model,
                "encoder: tokens " + dims(tokens) + " but d_model " + std::to_string(config_.d_model));
  if (cache) cache->blocks.resize(blocks.size());
  Matrix h = tokens;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    h = blocks[i].forward(h, config_.n_tokens, cache ? &cache->blocks[i] : nullptr);
  return nn::mean_pool(h, config_.n_tokens);
}

Matrix WifiEncoder::backward(const Cache& cache, const Matrix& df) {
  Matrix dh = nn::mean_pool_backward(df, config_.n_tokens);
  for (std::size_t i = blocks.size(); i-- > 0;) dh = blocks[i].backward(cache.blocks[i], dh);
  return dh;
}

void WifiEncoder::collect(nn::ParamList& out) {
  for (auto& b : blocks) b.collect(out);
}

}  // namespace wisense::enc
