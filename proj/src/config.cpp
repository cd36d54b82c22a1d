#include "wisense/config.hpp"

#include "wisense/stream_io.hpp"

#include <json.hpp>

#include <set>
#include <sstream>

namespace wisense::config {

using nlohmann::json;

namespace {

// Reads optional keys of one JSON object and rejects anything left over.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  Section sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    static const json empty = json::object();
    return Section(it == j_.end() ? empty : *it, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + where(it.key().c_str()) + "'");
  }

 private:
  std::string where(const char* key = nullptr) const {
    if (!key) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig parse(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section top(root, "");
  top.get("seed", c.seed);
  {
    auto s = top.sub("channel");
    s.get("n_links", c.channel.n_links);
    s.get("n_subcarriers", c.channel.n_subcarriers);
    s.get("packet_rate", c.channel.packet_rate);
    s.get("carrier_wavelength", c.channel.carrier_wavelength);
    s.get("noise_sigma", c.channel.noise_sigma);
    s.get("n_static_paths", c.channel.n_static_paths);
    s.get("static_seed", c.channel.static_seed);
    s.get("subcarrier_spacing", c.channel.subcarrier_spacing);
    s.get("antennas_per_receiver", c.channel.antennas_per_receiver);
    s.finish();
  }
  {
    auto s = top.sub("corpus");
    s.get("windows_per_class", c.corpus.windows_per_class);
    s.get("window_packets", c.corpus.window_packets);
    s.get("multi_windows", c.corpus.multi_windows);
    s.get("multi_subjects", c.corpus.multi_subjects);
    s.get("test_fraction", c.corpus.test_fraction);
    s.get("velocity_jitter", c.corpus.velocity_jitter);
    s.finish();
  }
  {
    auto s = top.sub("encoder");
    s.get("d_model", c.encoder.d_model);
    s.get("n_layers", c.encoder.n_layers);
    s.get("n_heads", c.encoder.n_heads);
    s.get("ff_mult", c.encoder.ff_mult);
    s.finish();
  }
  {
    auto s = top.sub("adapter");
    s.get("d_hidden", c.adapter.d_hidden);
    s.finish();
  }
  {
    auto s = top.sub("text");
    s.get("dim", c.text.dim);
    s.get("seed", c.text.seed);
    s.get("pos_scale", c.text.pos_scale);
    s.get("video_sigma", c.text.video_sigma);
    s.finish();
  }
  {
    auto s = top.sub("stage1");
    s.get("steps", c.stage1.steps);
    s.get("batch_size", c.stage1.batch_size);
    s.get("learning_rate", c.stage1.learning_rate);
    s.get("temperature", c.stage1.temperature);
    s.get("freeze_encoder", c.stage1.freeze_encoder);
    s.get("proxy_steps", c.stage1.proxy_steps);
    s.finish();
  }
  {
    auto s = top.sub("stage2");
    s.get("steps", c.stage2.steps);
    s.get("batch_size", c.stage2.batch_size);
    s.get("learning_rate", c.stage2.learning_rate);
    s.get("video_dropout", c.stage2.video_dropout);
    s.get("pretrain_steps", c.stage2.pretrain_steps);
    s.get("pretrain_learning_rate", c.stage2.pretrain_learning_rate);
    s.finish();
  }
  {
    auto s = top.sub("decoder");
    s.get("d_model", c.decoder.d_model);
    s.get("n_layers", c.decoder.n_layers);
    s.get("n_heads", c.decoder.n_heads);
    s.get("ff_mult", c.decoder.ff_mult);
    s.get("context", c.decoder.context);
    s.get("n_prefix", c.decoder.n_prefix);
    s.get("lora_rank", c.decoder.lora_rank);
    s.get("lora_alpha", c.decoder.lora_alpha);
    s.finish();
  }
  {
    auto s = top.sub("eval");
    s.get("strategy", c.eval.strategy);
    s.get("beam_width", c.eval.beam_width);
    s.get("max_len", c.eval.max_len);
    s.finish();
  }
  {
    auto s = top.sub("zeroshot");
    s.get("holdout", c.zeroshot.holdout);
    s.finish();
  }
  {
    auto s = top.sub("judge");
    s.get("backend", c.judge.backend);
    s.get("max_concurrency", c.judge.max_concurrency);
    s.get("rate_per_second", c.judge.rate_per_second);
    s.get("max_attempts", c.judge.max_attempts);
    s.get("backoff_seconds", c.judge.backoff_seconds);
    s.get("timeout_seconds", c.judge.timeout_seconds);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    return parse(io::read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  try {
    channel.validate();
    corpus.validate();
    encoder_config().validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (text.dim < 2) fail("text.dim must be >= 2");
  if (adapter.d_hidden < 1) fail("adapter.d_hidden must be >= 1");
  if (stage1.steps < 0 || stage1.batch_size < 2) fail("stage1 needs steps >= 0 and batch_size >= 2");
  if (!(stage1.learning_rate > 0.0) || !(stage1.temperature > 0.0))
    fail("stage1.learning_rate and stage1.temperature must be > 0");
  if (stage1.proxy_steps < 0) fail("stage1.proxy_steps must be >= 0");
  if (stage2.steps < 0 || stage2.pretrain_steps < 0 || stage2.batch_size < 1)
    fail("stage2 needs steps >= 0, pretrain_steps >= 0 and batch_size >= 1");
  if (!(stage2.learning_rate > 0.0) || !(stage2.pretrain_learning_rate > 0.0))
    fail("stage2 learning rates must be > 0");
  if (!(stage2.video_dropout >= 0.0 && stage2.video_dropout <= 1.0)) fail("stage2.video_dropout must lie in [0, 1]");
  if (text.video_sigma < 0.0) fail("text.video_sigma must be >= 0");
  try {
    decoder_config(8).validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (eval.strategy != "greedy" && eval.strategy != "beam") fail("eval.strategy must be greedy or beam");
  if (eval.beam_width < 1) fail("eval.beam_width must be >= 1");
  if (eval.max_len < 1) fail("eval.max_len must be >= 1");
  const int n_classes = 8;
  std::set<int> seen;
  for (int h : zeroshot.holdout) {
    if (h < 0 || h >= n_classes) fail("zeroshot.holdout labels must lie in [0, 7]");
    if (!seen.insert(h).second) fail("zeroshot.holdout has duplicates");
  }
  if (static_cast<int>(zeroshot.holdout.size()) >= n_classes - 1)
    fail("zeroshot.holdout must leave at least two seen classes");
  if (judge.backend != "mock" && judge.backend != "remote") fail("judge.backend must be mock or remote");
  if (judge.max_concurrency < 1 || judge.max_attempts < 1) fail("judge.max_concurrency and max_attempts must be >= 1");
  if (!(judge.rate_per_second > 0.0)) fail("judge.rate_per_second must be > 0");
}

enc::EncoderConfig ExperimentConfig::encoder_config() const {
  enc::EncoderConfig e = encoder;
  e.n_tokens = channel.n_links * corpus.window_packets;
  e.raw_features = 2 * channel.n_subcarriers;
  return e;
}

gen::DecoderConfig ExperimentConfig::decoder_config(int vocab_size) const {
  gen::DecoderConfig d;
  d.vocab_size = vocab_size;
  d.d_model = decoder.d_model;
  d.n_layers = decoder.n_layers;
  d.n_heads = decoder.n_heads;
  d.ff_mult = decoder.ff_mult;
  d.context = decoder.context;
  d.n_prefix = decoder.n_prefix;
  d.d_latent = text.dim;
  d.lora_rank = decoder.lora_rank;
  d.lora_alpha = decoder.lora_alpha;
  return d;
}

std::string to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["channel"] = {{"n_links", c.channel.n_links},
                  {"n_subcarriers", c.channel.n_subcarriers},
                  {"packet_rate", c.channel.packet_rate},
                  {"carrier_wavelength", c.channel.carrier_wavelength},
                  {"noise_sigma", c.channel.noise_sigma},
                  {"n_static_paths", c.channel.n_static_paths},
                  {"static_seed", c.channel.static_seed},
                  {"subcarrier_spacing", c.channel.subcarrier_spacing},
                  {"antennas_per_receiver", c.channel.antennas_per_receiver}};
  j["corpus"] = {{"windows_per_class", c.corpus.windows_per_class},
                 {"window_packets", c.corpus.window_packets},
                 {"multi_windows", c.corpus.multi_windows},
                 {"multi_subjects", c.corpus.multi_subjects},
                 {"test_fraction", c.corpus.test_fraction},
                 {"velocity_jitter", c.corpus.velocity_jitter}};
  j["encoder"] = {{"d_model", c.encoder.d_model},
                  {"n_layers", c.encoder.n_layers},
                  {"n_heads", c.encoder.n_heads},
                  {"ff_mult", c.encoder.ff_mult}};
  j["adapter"] = {{"d_hidden", c.adapter.d_hidden}};
  j["text"] = {{"dim", c.text.dim},
               {"seed", c.text.seed},
               {"pos_scale", c.text.pos_scale},
               {"video_sigma", c.text.video_sigma}};
  j["stage1"] = {{"steps", c.stage1.steps},
                 {"batch_size", c.stage1.batch_size},
                 {"learning_rate", c.stage1.learning_rate},
                 {"temperature", c.stage1.temperature},
                 {"freeze_encoder", c.stage1.freeze_encoder},
                 {"proxy_steps", c.stage1.proxy_steps}};
  j["stage2"] = {{"steps", c.stage2.steps},
                 {"batch_size", c.stage2.batch_size},
                 {"learning_rate", c.stage2.learning_rate},
                 {"video_dropout", c.stage2.video_dropout},
                 {"pretrain_steps", c.stage2.pretrain_steps},
                 {"pretrain_learning_rate", c.stage2.pretrain_learning_rate}};
  j["decoder"] = {{"d_model", c.decoder.d_model},   {"n_layers", c.decoder.n_layers},
                  {"n_heads", c.decoder.n_heads},   {"ff_mult", c.decoder.ff_mult},
                  {"context", c.decoder.context},   {"n_prefix", c.decoder.n_prefix},
                  {"lora_rank", c.decoder.lora_rank}, {"lora_alpha", c.decoder.lora_alpha}};
  j["eval"] = {{"strategy", c.eval.strategy}, {"beam_width", c.eval.beam_width}, {"max_len", c.eval.max_len}};
  j["zeroshot"] = {{"holdout", c.zeroshot.holdout}};
  j["judge"] = {{"backend", c.judge.backend},
                {"max_concurrency", c.judge.max_concurrency},
                {"rate_per_second", c.judge.rate_per_second},
                {"max_attempts", c.judge.max_attempts},
                {"backoff_seconds", c.judge.backoff_seconds},
                {"timeout_seconds", c.judge.timeout_seconds}};
  return j.dump(2) + "\n";
}

std::vector<int> parse_holdout(const std::string& list) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ConfigError("empty entry in holdout list '" + list + "'");
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("holdout entry '" + item + "' is not an integer");
    }
    if (used != item.size()) throw ConfigError("holdout entry '" + item + "' is not an integer");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("holdout list is empty");
  return out;
}

}  // namespace wisense::config
