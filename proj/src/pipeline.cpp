#include "wisense/pipeline.hpp"

#include "wisense/checkpoint.hpp"
#include "wisense/metrics.hpp"
#include "wisense/report.hpp"
#include "wisense/rng.hpp"
#include "wisense/stream_io.hpp"
#include "wisense/tokens.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace wisense::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void say(const Options& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

std::uint64_t derive_seed(std::uint64_t seed, const char* tag) {
  auto rng = make_rng({seed, fnv1a(tag)});
  return rng();
}

// Refuses to clobber earlier results unless asked to.
void prepare_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!overwrite) throw PipelineError(dir.string() + " already holds outputs; pass --overwrite to replace them");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void require_input(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw PipelineError("missing " + p.string() + " (" + hint + ")");
}

void require_outputs(const std::vector<fs::path>& paths) {
  for (const auto& p : paths)
    if (!fs::exists(p) || fs::file_size(p) == 0) throw PipelineError("output was not written: " + p.string());
}

void write_json(const fs::path& p, const json& j) { io::write_file_atomic(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  try {
    return json::parse(io::read_file(p));
  } catch (const json::exception& e) {
    throw PipelineError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

std::string subjects_label(int n) { return std::to_string(n) + "P"; }

}  // namespace

config::ExperimentConfig resolve_config(const Options& o) {
  config::ExperimentConfig cfg = o.config_path.empty() ? config::parse("{}") : config::load(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.freeze_encoder) cfg.stage1.freeze_encoder = true;
  if (o.holdout) cfg.zeroshot.holdout = *o.holdout;
  if (o.backend) cfg.judge.backend = *o.backend;
  cfg.stage1.seed = derive_seed(cfg.seed, "stage1");
  cfg.stage2.seed = derive_seed(cfg.seed, "stage2");
  cfg.validate();
  return cfg;
}

std::vector<std::size_t> Dataset::select(const std::function<bool(const corpus::ManifestEntry&)>& pred) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    if (pred(manifest.entries[i])) out.push_back(i);
  return out;
}

Dataset load_dataset(const fs::path& data_dir, const config::ExperimentConfig& cfg) {
  require_input(data_dir / "manifest.json", "run `wisense synth` first");
  Dataset d;
  d.manifest = corpus::Manifest::load(data_dir / "manifest.json");
  d.manifest.validate(data_dir);
  d.classes = corpus::default_classes();
  for (const auto& [label, desc] : corpus::read_class_file(data_dir / "classes.tsv")) d.class_descriptions.push_back(desc);
  if (d.class_descriptions.size() != d.classes.size())
    throw PipelineError("classes.tsv lists " + std::to_string(d.class_descriptions.size()) + " classes, expected " +
                        std::to_string(d.classes.size()));
  d.text_vocab = text::Vocabulary::load(data_dir / "text_vocab.txt");
  d.caption_vocab = text::Vocabulary::load(data_dir / "caption_vocab.txt");

  std::map<std::string, synth::CsiStream> streams;
  d.raw.reserve(d.manifest.entries.size());
  for (const auto& e : d.manifest.entries) {
    auto it = streams.find(e.csi_file);
    if (it == streams.end()) it = streams.emplace(e.csi_file, io::read_csi_stream(data_dir / e.csi_file)).first;
    const auto& s = it->second;
    if (s.n_links != cfg.channel.n_links || s.n_subcarriers != cfg.channel.n_subcarriers)
      throw PipelineError(e.csi_file + " does not match the configured link/subcarrier layout");
    d.raw.push_back(corpus::window_tokens(s, e.window_start, e.window_packets));
  }
  return d;
}

std::vector<MatrixF> normalized_windows(const Dataset& data, std::span<const std::size_t> rows,
                                        const tok::NormStats& stats) {
  std::vector<MatrixF> out;
  out.reserve(rows.size());
  const int S = static_cast<int>(data.raw.front().cols() / 2);
  for (auto r : rows) {
    Matrix m = data.raw[r];
    tok::normalize_tokens(m, stats, S);
    out.push_back(m.cast<float>());
  }
  return out;
}

text::TextEncoder make_text_encoder(const Dataset& data, const config::ExperimentConfig& cfg) {
  return text::TextEncoder(data.text_vocab, cfg.text.dim, cfg.text.seed, cfg.text.pos_scale);
}

align::CsiAligner make_aligner(const config::ExperimentConfig& cfg) {
  align::AdapterConfig a = cfg.adapter;
  a.d_in = cfg.encoder.d_model;
  a.d_out = cfg.text.dim;
  return align::CsiAligner(cfg.encoder_config(), a, derive_seed(cfg.seed, "aligner"));
}

void save_aligner(const fs::path& path, align::CsiAligner& model) {
  auto t = ckpt::gather(model.all_params());
  Matrix norm(1, 4);
  norm << model.stats.amp_mean, model.stats.amp_std, model.stats.phase_mean, model.stats.phase_std;
  t["meta/norm"] = norm;
  ckpt::save(path, t);
}

align::CsiAligner load_aligner(const fs::path& path, const config::ExperimentConfig& cfg) {
  require_input(path, "run `wisense train-align` first");
  auto model = make_aligner(cfg);
  const auto t = ckpt::load(path);
  ckpt::scatter(t, model.all_params());
  auto it = t.find("meta/norm");
  if (it == t.end() || it->second.size() != 4) throw PipelineError(path.string() + " lacks meta/norm");
  const auto& n = it->second;
  model.stats = {n(0, 0), n(0, 1), n(0, 2), n(0, 3)};
  return model;
}

gen::CaptionModel load_caption_model(const fs::path& path, const config::ExperimentConfig& cfg, int vocab_size) {
  require_input(path, "run `wisense train-gen` first");
  gen::CaptionModel model(cfg.decoder_config(vocab_size), derive_seed(cfg.seed, "caption"));
  ckpt::scatter(ckpt::load(path), model.all_params());
  return model;
}

namespace {

bool is_single(const corpus::ManifestEntry& e) { return e.n_subjects == 1; }

Matrix embed_rows(const align::CsiAligner& model, const Dataset& data, std::span<const std::size_t> rows) {
  const auto windows = normalized_windows(data, rows, model.stats);
  return model.embed(windows);
}

struct Stage1Run {
  align::Stage1Result result;
  double seconds = 0.0;
};

// Shared by train-align and zeroshot: fit normalization on the training
// windows and train against the class-description embeddings.
Stage1Run train_aligner(align::CsiAligner& model, const Dataset& data, std::span<const std::size_t> rows,
                        const text::TextEncoder& text, const config::ExperimentConfig& cfg,
                        const std::function<void(int)>& on_epoch) {
  std::vector<Matrix> raw;
  for (auto r : rows) raw.push_back(data.raw[r]);
  model.stats = tok::fit_norm_stats(raw, cfg.channel.n_subcarriers);
  const auto windows = normalized_windows(data, rows, model.stats);
  Matrix targets(static_cast<Index>(rows.size()), text.dim());
  std::vector<int> labels;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& e = data.manifest.entries[rows[i]];
    // Single-person windows pair with their class description, overlapping
    // scenes with their composed caption.
    targets.row(static_cast<Index>(i)) =
        is_single(e) ? text.encode(data.class_descriptions.at(static_cast<std::size_t>(e.class_label)))
                     : text.encode(e.caption);
    labels.push_back(e.class_label);
  }
  const auto t0 = Clock::now();
  Stage1Run run;
  run.result = align::train_stage1(model, windows, targets, labels, cfg.stage1, on_epoch);
  run.seconds = seconds_since(t0);
  return run;
}

json retrieval_metrics(const align::CsiAligner& model, const Dataset& data, std::span<const std::size_t> rows,
                       const Matrix& class_emb) {
  const Matrix fa = embed_rows(model, data, rows);
  std::size_t hits = 0;
  std::vector<int> labels;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int label = data.manifest.entries[rows[i]].class_label;
    labels.push_back(label);
    const auto order = align::retrieve(fa.row(static_cast<Index>(i)), class_emb);
    if (order.front() == label) ++hits;
  }
  const auto sep = align::embedding_separation(fa, labels);
  return {{"n", rows.size()},
          {"top1", rows.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(rows.size())},
          {"intra", sep.intra},
          {"inter", sep.inter},
          {"margin", sep.margin()}};
}

json curve_json(const std::vector<double>& v) { return json(v); }

}  // namespace

void cmd_synth(const Options& o) {
  const auto cfg = resolve_config(o);
  const Layout L{o.out};
  prepare_dir(L.data(), o.overwrite);
  const auto t0 = Clock::now();
  say(o, "synth: generating corpus into " + L.data().string());
  const auto m = corpus::synthesize(cfg.corpus, cfg.channel, cfg.seed, L.data());
  io::write_file_atomic(L.data() / "config.json", config::to_json(cfg));
  require_outputs({L.data() / "manifest.json", L.data() / "classes.tsv", L.data() / "text_vocab.txt",
                   L.data() / "caption_vocab.txt"});
  say(o, "synth: " + std::to_string(m.wireless_text.total()) + " windows (" + std::to_string(m.wireless_text.train) +
             " train / " + std::to_string(m.wireless_text.test) + " test) in " +
             std::to_string(seconds_since(t0)) + " s");
}

void cmd_train_align(const Options& o) {
  const auto cfg = resolve_config(o);
  const Layout L{o.out};
  const auto data = load_dataset(L.data(), cfg);
  prepare_dir(L.stage1(), o.overwrite);
  const auto text = make_text_encoder(data, cfg);
  const Matrix class_emb = text.encode_all(data.class_descriptions);

  const auto train = data.select([](const auto& e) { return e.split == "train"; });
  const auto test = data.select([](const auto& e) { return is_single(e) && e.split == "test"; });
  if (train.size() < 2) throw PipelineError("stage 1 needs at least two training windows");

  auto model = make_aligner(cfg);
  say(o, "train-align: " + std::to_string(train.size()) + " pairs, " + std::to_string(cfg.stage1.steps) + " steps" +
             (cfg.stage1.freeze_encoder ? " (frozen encoder)" : ""));
  std::vector<std::string> epoch_files;
  const auto run = train_aligner(model, data, train, text, cfg, [&](int epoch) {
    const std::string name = "epoch_" + std::to_string(epoch) + ".wslm";
    save_aligner(L.stage1() / name, model);
    epoch_files.push_back(name);
  });
  save_aligner(L.stage1() / "stage1.wslm", model);

  // Evaluate through a reloaded copy so reported numbers match the file.
  const auto reloaded = load_aligner(L.stage1() / "stage1.wslm", cfg);
  json m;
  m["pairs"] = train.size();
  m["steps"] = cfg.stage1.steps;
  m["freeze_encoder"] = cfg.stage1.freeze_encoder;
  m["seconds"] = run.seconds;
  m["initial_loss"] = run.result.initial_loss;
  m["final_loss"] = run.result.final_loss;
  m["epochs"] = run.result.epochs;
  m["epoch_checkpoints"] = epoch_files;
  m["loss_curve"] = curve_json(run.result.loss_curve);
  m["proxy_curve"] = curve_json(run.result.proxy_curve);
  m["test_retrieval"] = retrieval_metrics(reloaded, data, test, class_emb);
  write_json(L.stage1() / "metrics.json", m);
  require_outputs({L.stage1() / "stage1.wslm", L.stage1() / "metrics.json"});
  say(o, "train-align: loss " + std::to_string(run.result.initial_loss) + " -> " +
             std::to_string(run.result.final_loss) + ", test top-1 " +
             std::to_string(m["test_retrieval"]["top1"].get<double>()) + ", margin " +
             std::to_string(m["test_retrieval"]["margin"].get<double>()) + " (" + std::to_string(run.seconds) + " s)");
}

namespace {

std::vector<gen::GenExample> make_examples(const Dataset& data, std::span<const std::size_t> rows, const Matrix& fa,
                                           const text::VideoEmbedder* video) {
  std::vector<gen::GenExample> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& e = data.manifest.entries[rows[i]];
    const RowVector f_v = video ? video->embed(e.sample_id, e.caption) : RowVector();
    for (int p = 0; p < corpus::kNumPrompts; ++p) {
      gen::GenExample g;
      g.id = e.sample_id;
      g.f_align = fa.row(static_cast<Index>(i));
      g.f_v = f_v;
      g.prompt = {gen::prompt_token(p)};
      g.caption = gen::encode_caption(data.caption_vocab, e.references[static_cast<std::size_t>(p)]);
      out.push_back(std::move(g));
    }
  }
  return out;
}

}  // namespace

void cmd_train_gen(const Options& o) {
  const auto cfg = resolve_config(o);
  const Layout L{o.out};
  const auto data = load_dataset(L.data(), cfg);
  const auto aligner = load_aligner(L.stage1() / "stage1.wslm", cfg);
  prepare_dir(L.stage2(), o.overwrite);

  const auto text = make_text_encoder(data, cfg);
  text::VideoEmbedder video(text, cfg.text.video_sigma, derive_seed(cfg.seed, "video"));
  const auto train = data.select([](const auto& e) { return e.split == "train"; });
  const Matrix fa = embed_rows(aligner, data, train);
  const auto examples = make_examples(data, train, fa, &video);
  video.seal();

  gen::CaptionModel model(cfg.decoder_config(data.caption_vocab.size()), derive_seed(cfg.seed, "caption"));
  const auto t0 = Clock::now();
  say(o, "train-gen: pretraining decoder on " + std::to_string(examples.size()) + " captions");
  const auto pre = gen::pretrain_decoder(model, examples, cfg.stage2);
  const auto base_before = ckpt::gather(model.decoder.base_params());
  say(o, "train-gen: stage 2, " + std::to_string(cfg.stage2.steps) + " steps");
  const auto res = gen::train_stage2(model, examples, cfg.stage2, [&](int step, double loss, double acc) {
    if ((step + 1) % 250 == 0)
      say(o, "  step " + std::to_string(step + 1) + " loss " + std::to_string(loss) + " acc " + std::to_string(acc));
  });
  const double secs = seconds_since(t0);
  const auto base_after = ckpt::gather(model.decoder.base_params());
  bool base_unchanged = base_before.size() == base_after.size();
  for (const auto& [name, m] : base_before) {
    const auto& a = base_after.at(name);
    base_unchanged = base_unchanged && m.size() == a.size() &&
                     std::equal(m.data(), m.data() + m.size(), a.data());
  }
  if (!base_unchanged) throw PipelineError("stage 2 modified frozen base weights");

  ckpt::save(L.stage2() / "stage2.wslm", ckpt::gather(model.all_params()));
  const auto reloaded = load_caption_model(L.stage2() / "stage2.wslm", cfg, data.caption_vocab.size());
  auto eval_model = reloaded;
  const auto teacher = gen::evaluate_teacher(eval_model, examples, false);
  json m;
  m["examples"] = examples.size();
  m["seconds"] = secs;
  m["pretrain_curve"] = curve_json(pre);
  m["loss_curve"] = curve_json(res.loss_curve);
  m["accuracy_curve"] = curve_json(res.accuracy_curve);
  m["teacher_forced_placeholder"] = {{"loss", teacher.loss}, {"token_accuracy", teacher.token_accuracy}};
  m["base_unchanged"] = base_unchanged;
  write_json(L.stage2() / "metrics.json", m);
  require_outputs({L.stage2() / "stage2.wslm", L.stage2() / "metrics.json"});
  say(o, "train-gen: teacher-forced token accuracy " + std::to_string(teacher.token_accuracy) + " (" +
             std::to_string(secs) + " s)");
}

namespace {

struct GenRecord {
  std::size_t row = 0;
  int prompt = 0;
  std::string generated;
  bool truncated = false;
};

std::vector<GenRecord> generate_all(const gen::CaptionModel& model, const Dataset& data,
                                    std::span<const std::size_t> rows, const Matrix& fa,
                                    const std::vector<int>& prompts, const config::ExperimentConfig& cfg) {
  const int n_reserved = gen::kFirstPrompt + corpus::kNumPrompts;
  std::vector<GenRecord> out;
  const bool beam = cfg.eval.strategy == "beam";
  for (int p : prompts) {
    const Index chunk = 128;
    for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(chunk)) {
      const std::size_t end = std::min(rows.size(), start + static_cast<std::size_t>(chunk));
      std::vector<gen::Generation> gens;
      if (beam) {
        for (std::size_t i = start; i < end; ++i)
          gens.push_back(gen::generate(model, fa.row(static_cast<Index>(i)), RowVector(),
                                       std::vector<int>{gen::prompt_token(p)}, gen::Strategy::beam,
                                       cfg.eval.beam_width, cfg.eval.max_len));
      } else {
        const Matrix block = fa.middleRows(static_cast<Index>(start), static_cast<Index>(end - start));
        std::vector<std::vector<int>> ps(end - start, std::vector<int>{gen::prompt_token(p)});
        gens = gen::generate_greedy_batch(model, block, ps, cfg.eval.max_len);
      }
      for (std::size_t i = start; i < end; ++i) {
        const auto& g = gens[i - start];
        out.push_back({rows[i], p, gen::detokenize(data.caption_vocab, g.ids, n_reserved), g.truncated});
      }
    }
  }
  return out;
}

}  // namespace

void cmd_eval(const Options& o) {
  const auto cfg = resolve_config(o);
  const Layout L{o.out};
  const auto data = load_dataset(L.data(), cfg);
  const auto aligner = load_aligner(L.stage1() / "stage1.wslm", cfg);
  const auto model = load_caption_model(L.stage2() / "stage2.wslm", cfg, data.caption_vocab.size());
  prepare_dir(L.eval(), o.overwrite);
  const auto t0 = Clock::now();
  const auto text = make_text_encoder(data, cfg);
  const Matrix class_emb = text.encode_all(data.class_descriptions);

  const auto test = data.select([](const auto& e) { return e.split == "test"; });
  const auto single_test = data.select([](const auto& e) { return is_single(e) && e.split == "test"; });
  const auto single_train = data.select([](const auto& e) { return is_single(e) && e.split == "train"; });

  std::vector<int> all_prompts(corpus::kNumPrompts);
  for (int p = 0; p < corpus::kNumPrompts; ++p) all_prompts[static_cast<std::size_t>(p)] = p;
  say(o, "eval: generating for " + std::to_string(test.size()) + " test windows x " +
             std::to_string(corpus::kNumPrompts) + " prompts");
  const auto test_gen = generate_all(model, data, test, embed_rows(aligner, data, test), all_prompts, cfg);
  say(o, "eval: generating Overall captions for " + std::to_string(single_train.size()) + " training windows");
  const auto train_gen = generate_all(model, data, single_train, embed_rows(aligner, data, single_train),
                                      {static_cast<int>(corpus::Prompt::Overall)}, cfg);

  // Aggregates keyed by (n_subjects, prompt).
  std::map<std::pair<int, int>, std::pair<metrics::Scores, std::size_t>> agg;
  metrics::Scores gt;
  std::size_t gt_n = 0;
  std::string jsonl;
  std::size_t exact_test_overall = 0, n_test_overall = 0;
  for (const auto& g : test_gen) {
    const auto& e = data.manifest.entries[g.row];
    const auto& ref = e.references[static_cast<std::size_t>(g.prompt)];
    const auto s = metrics::score_pair(g.generated, ref, text);
    auto& slot = agg[{e.n_subjects, g.prompt}];
    slot.first += s;
    slot.second += 1;
    gt += metrics::score_pair(ref, ref, text);
    ++gt_n;
    if (g.prompt == static_cast<int>(corpus::Prompt::Overall) && e.n_subjects == 1) {
      ++n_test_overall;
      exact_test_overall += g.generated == ref ? 1 : 0;
    }
    json line = {{"sample_id", e.sample_id},
                 {"n_subjects", e.n_subjects},
                 {"split", e.split},
                 {"prompt", corpus::prompt_names()[static_cast<std::size_t>(g.prompt)]},
                 {"reference", ref},
                 {"generated", g.generated},
                 {"truncated", g.truncated},
                 {"scores", report::scores_to_json(s)}};
    jsonl += line.dump() + "\n";
  }
  io::write_file_atomic(L.eval() / "generations.jsonl", jsonl);

  metrics::Scores train_scores;
  std::size_t train_exact = 0;
  for (const auto& g : train_gen) {
    const auto& ref = data.manifest.entries[g.row].references[0];
    train_scores += metrics::score_pair(g.generated, ref, text);
    train_exact += g.generated == ref ? 1 : 0;
  }
  if (!train_gen.empty()) train_scores = train_scores / static_cast<double>(train_gen.size());

  std::string csv = report::csv_line({"group", "category", "n", "ROUGE-1", "ROUGE-L", "BLEU-4", "METEOR", "BERTScore"});
  json categories = json::object(), subjects = json::object();
  for (auto& [key, slot] : agg) {
    const auto mean = slot.first / static_cast<double>(slot.second);
    const auto& pname = corpus::prompt_names()[static_cast<std::size_t>(key.second)];
    std::vector<std::string> f = {subjects_label(key.first), pname, std::to_string(slot.second)};
    for (double v : report::as_vector(mean)) f.push_back(report::fmt4(v));
    csv += report::csv_line(f);
    if (key.first == 1) categories[pname] = report::scores_to_json(mean);
    if (key.second == static_cast<int>(corpus::Prompt::Overall)) {
      auto j = report::scores_to_json(mean);
      j["mean"] = mean.mean();
      j["n"] = slot.second;
      subjects[std::to_string(key.first)] = j;
    }
  }
  if (gt_n) {
    const auto mean = gt / static_cast<double>(gt_n);
    std::vector<std::string> f = {"GT", "All", std::to_string(gt_n)};
    for (double v : report::as_vector(mean)) f.push_back(report::fmt4(v));
    csv += report::csv_line(f);
    gt = mean;
  }
  io::write_file_atomic(L.eval() / "scores.csv", csv);

  json s;
  s["strategy"] = cfg.eval.strategy;
  s["test_windows"] = test.size();
  s["retrieval"] = retrieval_metrics(aligner, data, single_test, class_emb);
  s["categories"] = categories;
  s["subjects"] = subjects;
  s["gt"] = report::scores_to_json(gt);
  auto tr = report::scores_to_json(train_scores);
  tr["n"] = train_gen.size();
  tr["exact_match"] = train_gen.empty() ? 0.0 : static_cast<double>(train_exact) / static_cast<double>(train_gen.size());
  s["train_overall"] = tr;
  s["test_overall_exact_match"] =
      n_test_overall ? static_cast<double>(exact_test_overall) / static_cast<double>(n_test_overall) : 0.0;
  s["seconds"] = seconds_since(t0);
  write_json(L.eval() / "eval_summary.json", s);
  require_outputs({L.eval() / "generations.jsonl", L.eval() / "scores.csv", L.eval() / "eval_summary.json"});
  say(o, "eval: train Overall ROUGE-L " + report::fmt4(train_scores.rouge_l) + " BLEU-4 " +
             report::fmt4(train_scores.bleu4) + ", retrieval top-1 " +
             report::fmt4(s["retrieval"]["top1"].get<double>()));
}

void cmd_zeroshot(const Options& o) {
  const auto cfg = resolve_config(o);
  const Layout L{o.out};
  const auto data = load_dataset(L.data(), cfg);
  prepare_dir(L.zeroshot(), o.overwrite);
  const std::set<int> held(cfg.zeroshot.holdout.begin(), cfg.zeroshot.holdout.end());
  const auto text = make_text_encoder(data, cfg);
  const Matrix class_emb = text.encode_all(data.class_descriptions);

  auto involves_held = [&](const corpus::ManifestEntry& e) {
    if (is_single(e)) return held.count(e.class_label) > 0;
    return std::any_of(e.subject_classes.begin(), e.subject_classes.end(), [&](int c) { return held.count(c) > 0; });
  };
  const auto train = data.select([&](const auto& e) { return e.split == "train" && !involves_held(e); });
  const auto unseen = data.select([&](const auto& e) { return is_single(e) && held.count(e.class_label); });
  const auto seen_test = data.select(
      [&](const auto& e) { return is_single(e) && e.split == "test" && !held.count(e.class_label); });
  if (unseen.empty()) throw PipelineError("no windows of the held-out classes in the corpus");

  auto model = make_aligner(cfg);
  say(o, "zeroshot: training without classes " + json(cfg.zeroshot.holdout).dump() + " on " +
             std::to_string(train.size()) + " pairs");
  const auto run = train_aligner(model, data, train, text, cfg, {});
  save_aligner(L.zeroshot() / "stage1_zeroshot.wslm", model);
  const auto reloaded = load_aligner(L.zeroshot() / "stage1_zeroshot.wslm", cfg);

  const Matrix fa = embed_rows(reloaded, data, unseen);
  std::vector<int> preds, labels;
  for (std::size_t i = 0; i < unseen.size(); ++i) {
    preds.push_back(align::zero_shot_classify(fa.row(static_cast<Index>(i)), class_emb).label);
    labels.push_back(data.manifest.entries[unseen[i]].class_label);
  }
  const auto zs = metrics::accuracy_f1(preds, labels, cfg.zeroshot.holdout);

  // Classical baseline: nearest centroid on raw amplitudes, fitted on the
  // seen classes it was trained on.
  const Index S = cfg.channel.n_subcarriers;
  auto amp_feature = [&](std::size_t row) {
    const Matrix& r = data.raw[row];
    Matrix a = r.leftCols(S);
    return Eigen::Map<const RowVector>(a.data(), a.size()).eval();
  };
  std::map<int, std::pair<RowVector, int>> centroids;
  for (auto r : train) {
    if (!is_single(data.manifest.entries[r])) continue;
    const int label = data.manifest.entries[r].class_label;
    auto& c = centroids[label];
    const RowVector f = amp_feature(r);
    if (c.second == 0) c.first = RowVector::Zero(f.size());
    c.first += f;
    c.second += 1;
  }
  for (auto& [label, c] : centroids) c.first /= c.second;
  auto nearest = [&](std::size_t row) {
    const RowVector f = amp_feature(row);
    int best = -1;
    double best_d = 0.0;
    for (const auto& [label, c] : centroids) {
      const double d = (f - c.first).squaredNorm();
      if (best < 0 || d < best_d) {
        best = label;
        best_d = d;
      }
    }
    return best;
  };
  std::vector<int> base_preds, seen_preds, seen_labels, zs_seen_preds;
  for (auto r : unseen) base_preds.push_back(nearest(r));
  const auto base = metrics::accuracy_f1(base_preds, labels, cfg.zeroshot.holdout);
  const Matrix fs_seen = embed_rows(reloaded, data, seen_test);
  for (std::size_t i = 0; i < seen_test.size(); ++i) {
    seen_preds.push_back(nearest(seen_test[i]));
    seen_labels.push_back(data.manifest.entries[seen_test[i]].class_label);
    zs_seen_preds.push_back(align::zero_shot_classify(fs_seen.row(static_cast<Index>(i)), class_emb).label);
  }
  std::vector<int> seen_classes;
  for (const auto& [label, c] : centroids) seen_classes.push_back(label);
  const auto base_seen = metrics::accuracy_f1(seen_preds, seen_labels, seen_classes);
  const auto model_seen = metrics::accuracy_f1(zs_seen_preds, seen_labels, seen_classes);

  json confusion = json::object();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& row = confusion[std::to_string(labels[i])];
    const std::string k = std::to_string(preds[i]);
    row[k] = row.contains(k) ? row[k].get<int>() + 1 : 1;
  }
  json m;
  m["holdout"] = cfg.zeroshot.holdout;
  m["holdout_names"] = json::array();
  for (int h : cfg.zeroshot.holdout) m["holdout_names"].push_back(data.classes[static_cast<std::size_t>(h)].name);
  m["n_eval"] = unseen.size();
  m["n_train"] = train.size();
  m["chance"] = 1.0 / static_cast<double>(data.classes.size());
  m["accuracy"] = zs.accuracy;
  m["macro_f1"] = zs.macro_f1;
  m["baseline_accuracy"] = base.accuracy;
  m["baseline_macro_f1"] = base.macro_f1;
  m["seen_test"] = {{"model_accuracy", model_seen.accuracy},
                    {"baseline_accuracy", base_seen.accuracy},
                    {"n", seen_test.size()}};
  m["confusion"] = confusion;
  m["seconds"] = run.seconds;
  m["final_loss"] = run.result.final_loss;
  write_json(L.zeroshot() / "metrics.json", m);
  require_outputs({L.zeroshot() / "stage1_zeroshot.wslm", L.zeroshot() / "metrics.json"});
  say(o, "zeroshot: accuracy " + report::fmt4(zs.accuracy) + " macro-F1 " + report::fmt4(zs.macro_f1) +
             ", baseline accuracy " + report::fmt4(base.accuracy));
}

namespace {

judge::BackendConfig backend_config(const Options& o, const config::ExperimentConfig& cfg, const fs::path& audit) {
  const auto backend = judge::backend_from_string(cfg.judge.backend);
  judge::BackendConfig b;
  if (backend == judge::Backend::remote && o.judge_transport) {
    b.backend = backend;
  } else {
    b = judge::BackendConfig::from_env(backend);
  }
  b.max_concurrency = cfg.judge.max_concurrency;
  b.rate_per_second = cfg.judge.rate_per_second;
  b.max_attempts = cfg.judge.max_attempts;
  b.backoff_seconds = cfg.judge.backoff_seconds;
  b.timeout_seconds = cfg.judge.timeout_seconds;
  b.audit_log = audit;
  if (o.judge_transport) b.transport_factory = o.judge_transport;
  return b;
}

json table_json(const judge::JudgeTable& t) {
  auto row_json = [](const judge::CategoryRow& r) {
    return json{{"name", r.name}, {"accuracy", r.accuracy}, {"score", r.score}, {"count", r.count},
                {"invalid", r.invalid}};
  };
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back(row_json(r));
  return {{"rows", rows}, {"all", row_json(t.all)}, {"warnings", t.warnings}, {"invalid", t.invalid}};
}

judge::JudgeTable table_from_json(const json& j) {
  auto row = [](const json& r) {
    judge::CategoryRow c;
    c.name = r.at("name").get<std::string>();
    c.accuracy = r.at("accuracy").get<double>();
    c.score = r.at("score").get<double>();
    c.count = r.at("count").get<std::size_t>();
    c.invalid = r.at("invalid").get<std::size_t>();
    return c;
  };
  judge::JudgeTable t;
  for (const auto& r : j.at("rows")) t.rows.push_back(row(r));
  t.all = row(j.at("all"));
  t.warnings = j.at("warnings").get<std::vector<std::string>>();
  t.invalid = j.at("invalid").get<std::size_t>();
  return t;
}

}  // namespace

void cmd_judge(const Options& o) {
  const auto cfg = resolve_config(o);
  const Layout L{o.out};
  require_input(L.eval() / "generations.jsonl", "run `wisense eval` first");
  std::istringstream in(io::read_file(L.eval() / "generations.jsonl"));
  prepare_dir(L.judge(), o.overwrite);
  const auto backend = backend_config(o, cfg, L.judge() / "audit.jsonl");

  // Requests grouped by subject count; GT pairs judge the reference
  // against itself.
  std::map<int, std::vector<judge::JudgeRequest>> ours, gt;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const auto prompt = corpus::prompt_from_string(j.at("prompt").get<std::string>());
    const auto cat = corpus::judge_category(prompt);
    if (!cat) continue;
    const int n = j.at("n_subjects").get<int>();
    judge::JudgeRequest r;
    r.category = *cat;
    r.reference = j.at("reference").get<std::string>();
    r.generated = j.at("generated").get<std::string>();
    if (r.generated.empty()) r.generated = "(empty)";
    ours[n].push_back(r);
    r.generated = r.reference;
    gt[n].push_back(r);
  }
  if (ours.empty()) throw PipelineError("generations.jsonl holds no judgeable items");

  say(o, std::string("judge: backend ") + cfg.judge.backend);
  json summary;
  summary["backend"] = cfg.judge.backend;
  summary["rubric_version"] = "v1";
  summary["groups"] = json::object();
  std::size_t invalid = 0;
  std::vector<report::JudgeRow> rows;
  for (const auto& [n, reqs] : ours) {
    // Audit logs are truncated per corpus; keep one per group.
    auto b = backend;
    b.audit_log = L.judge() / ("audit_" + subjects_label(n) + ".jsonl");
    const auto t_gt = judge::judge_corpus(gt[n], [&] {
      auto g = b;
      g.audit_log = L.judge() / ("audit_gt_" + subjects_label(n) + ".jsonl");
      return g;
    }());
    const auto t_ours = judge::judge_corpus(reqs, b);
    invalid += t_ours.invalid + t_gt.invalid;
    summary["groups"][subjects_label(n)] = {{"gt", table_json(t_gt)}, {"ours", table_json(t_ours)}};
    rows.push_back({"GT (" + subjects_label(n) + ")", t_gt});
    rows.push_back({"Ours (" + subjects_label(n) + ")", t_ours});
  }
  summary["invalid"] = invalid;
  write_json(L.judge() / "judge_summary.json", summary);
  io::write_file_atomic(L.judge() / "judge_table.csv", report::table4_csv(rows));
  require_outputs({L.judge() / "judge_summary.json", L.judge() / "judge_table.csv"});
  for (const auto& r : rows)
    say(o, "judge: " + r.method + " All " + judge::format_accuracy(r.table.all.accuracy) + " / " +
               judge::format_score(r.table.all.score));
}

void cmd_report(const Options& o) {
  const auto cfg = resolve_config(o);
  const Layout L{o.out};
  require_input(L.eval() / "eval_summary.json", "run `wisense eval` first");
  const json ev = read_json(L.eval() / "eval_summary.json");
  prepare_dir(L.report(), o.overwrite);
  std::vector<fs::path> outputs;
  std::string md = "# Experiment report\n\n";
  md += "Output directory: `" + L.root.string() + "`, seed " + std::to_string(cfg.seed) + ", decoding " +
        ev.at("strategy").get<std::string>() + ".\n\n";

  // Zero-shot table.
  md += "## Zero-shot classification on held-out classes\n\n";
  if (fs::exists(L.zeroshot() / "metrics.json")) {
    const json zs = read_json(L.zeroshot() / "metrics.json");
    std::vector<report::ZeroShotRow> rows = {
        {"Nearest centroid (raw amplitude)", zs.at("baseline_accuracy").get<double>(),
         zs.at("baseline_macro_f1").get<double>()},
        {"Aligned CSI encoder (zero-shot)", zs.at("accuracy").get<double>(), zs.at("macro_f1").get<double>()},
    };
    io::write_file_atomic(L.report() / "table2_zeroshot.csv", report::table2_csv(rows));
    outputs.push_back(L.report() / "table2_zeroshot.csv");
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) cells.push_back({r.method, report::fmt4(r.accuracy), report::fmt4(r.macro_f1)});
    md += "Held-out classes: " + zs.at("holdout_names").dump() + "; chance " + report::fmt4(zs.at("chance")) +
          ".\n\n" + report::markdown_table({"Method", "Accuracy", "F1"}, cells) + "\n";
  } else {
    md += "Not run (`wisense zeroshot`).\n\n";
  }

  // Per-category automated scores, single person.
  md += "## Automated metrics per prompt category (single person, test split)\n\n";
  {
    std::vector<std::pair<std::string, metrics::Scores>> rows;
    const auto& cats = ev.at("categories");
    for (const auto& name : corpus::prompt_names())
      if (cats.contains(name)) rows.emplace_back(name, report::scores_from_json(cats.at(name)));
    rows.emplace_back("GT", report::scores_from_json(ev.at("gt")));
    io::write_file_atomic(L.report() / "table3_categories.csv", report::table3_csv(rows));
    outputs.push_back(L.report() / "table3_categories.csv");
    std::vector<std::string> header = {"Category"};
    for (const auto& m : metrics::metric_names()) header.push_back(m);
    std::vector<std::vector<std::string>> cells;
    for (const auto& [name, s] : rows) {
      std::vector<std::string> r = {name};
      for (double v : report::as_vector(s)) r.push_back(report::fmt4(v));
      cells.push_back(r);
    }
    md += report::markdown_table(header, cells) + "\n";
  }

  // Judge tables.
  md += "## LLM-as-judge scores (accuracy % / score 0-5)\n\n";
  if (fs::exists(L.judge() / "judge_summary.json")) {
    const json js = read_json(L.judge() / "judge_summary.json");
    std::vector<report::JudgeRow> rows;
    for (const auto& [group, g] : js.at("groups").items()) {
      rows.push_back({"GT (" + group + ")", table_from_json(g.at("gt"))});
      rows.push_back({"Ours (" + group + ")", table_from_json(g.at("ours"))});
    }
    io::write_file_atomic(L.report() / "table4_judge.csv", report::table4_csv(rows));
    outputs.push_back(L.report() / "table4_judge.csv");
    std::vector<std::string> header = {"Method"};
    for (auto c : judge::kCategories) header.push_back(judge::display_name(c));
    header.push_back("All");
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
      std::vector<std::string> cr = {r.method};
      for (auto c : judge::kCategories) {
        std::string cell = "-";
        for (const auto& row : r.table.rows)
          if (row.name == judge::display_name(c))
            cell = judge::format_accuracy(row.accuracy) + " / " + judge::format_score(row.score);
        cr.push_back(cell);
      }
      cr.push_back(judge::format_accuracy(r.table.all.accuracy) + " / " + judge::format_score(r.table.all.score));
      cells.push_back(cr);
    }
    md += "Backend: " + js.at("backend").get<std::string>() + ", invalid verdicts: " +
          std::to_string(js.at("invalid").get<std::size_t>()) + ".\n\n" + report::markdown_table(header, cells) + "\n";
  } else {
    md += "Not run (`wisense judge`).\n\n";
  }

  // Multi-person degradation.
  md += "## Overall-prompt metrics by number of people (metric index 0-4)\n\n";
  {
    std::vector<metrics::Scores> rows;
    std::vector<std::vector<std::string>> cells;
    const auto& subj = ev.at("subjects");
    for (int n = 1; n <= 9; ++n) {
      const auto key = std::to_string(n);
      if (!subj.contains(key)) continue;
      const auto s = report::scores_from_json(subj.at(key));
      rows.push_back(s);
      std::vector<std::string> r = {subjects_label(n)};
      for (double v : report::as_vector(s)) r.push_back(report::fmt4(v));
      r.push_back(report::fmt4(s.mean()));
      cells.push_back(r);
    }
    io::write_file_atomic(L.report() / "fig7_multiperson.csv", report::fig7_csv(rows));
    outputs.push_back(L.report() / "fig7_multiperson.csv");
    std::vector<std::string> header = {"People"};
    for (std::size_t i = 0; i < metrics::metric_names().size(); ++i)
      header.push_back(std::to_string(i) + ": " + metrics::metric_names()[i]);
    header.push_back("Mean");
    md += "Rows of `fig7_multiperson.csv` follow the order below.\n\n" + report::markdown_table(header, cells) + "\n";
  }

  const auto& tr = ev.at("train_overall");
  md += "## Caption fit on the training split\n\nOverall prompt, single person: ROUGE-L " +
        report::fmt4(tr.at("ROUGE-L")) + ", BLEU-4 " + report::fmt4(tr.at("BLEU-4")) + ", exact match " +
        report::fmt4(tr.at("exact_match")) + " over " + std::to_string(tr.at("n").get<std::size_t>()) +
        " windows.\n\n";
  const auto& rt = ev.at("retrieval");
  md += "## CSI to text retrieval (single person, test split)\n\nTop-1 " + report::fmt4(rt.at("top1")) +
        ", separation margin " + report::fmt4(rt.at("margin")) + " (intra " + report::fmt4(rt.at("intra")) +
        ", inter " + report::fmt4(rt.at("inter")) + ").\n";

  io::write_file_atomic(L.report() / "report.md", md);
  outputs.push_back(L.report() / "report.md");
  require_outputs(outputs);
  say(o, "report: wrote " + std::to_string(outputs.size()) + " files to " + L.report().string());
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"synth", "train-align", "train-gen", "eval",
                                                 "zeroshot", "judge", "report"};
  return names;
}

void run(const std::string& command, const Options& options) {
  if (command == "synth") return cmd_synth(options);
  if (command == "train-align") return cmd_train_align(options);
  if (command == "train-gen") return cmd_train_gen(options);
  if (command == "eval") return cmd_eval(options);
  if (command == "zeroshot") return cmd_zeroshot(options);
  if (command == "judge") return cmd_judge(options);
  if (command == "report") return cmd_report(options);
  throw PipelineError("unknown command '" + command + "'");
}

}  // namespace wisense::pipeline
