#pragma once

#include "wisense/alignment.hpp"
#include "wisense/config.hpp"
#include "wisense/corpus.hpp"
#include "wisense/decoder.hpp"
#include "wisense/judge.hpp"
#include "wisense/text.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

/// Experiment orchestration: synth -> stage 1 -> stage 2 -> eval -> report,
/// plus zero-shot and judge runs. Every command reads and writes under one
/// output directory.
namespace wisense::pipeline {

/// Missing upstream artifacts, refused overwrites, failed output checks.
class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::filesystem::path config_path;  // empty: built-in defaults
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "runs/default";
  bool freeze_encoder = false;
  std::optional<std::vector<int>> holdout;
  std::optional<std::string> backend;
  bool overwrite = false;
  std::function<void(const std::string&)> log;  // progress lines; empty = silent
  /// Replaces the HTTP client of the remote judge (tests).
  std::function<std::unique_ptr<judge::Transport>()> judge_transport;
};

config::ExperimentConfig resolve_config(const Options& options);

struct Layout {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path stage1() const { return root / "stage1"; }
  std::filesystem::path stage2() const { return root / "stage2"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path zeroshot() const { return root / "zeroshot"; }
  std::filesystem::path judge() const { return root / "judge"; }
  std::filesystem::path report() const { return root / "report"; }
};

/// Windows of the manifest with their raw (identity-normalized) tokens.
struct Dataset {
  corpus::Manifest manifest;
  std::vector<corpus::ActionClass> classes;
  std::vector<std::string> class_descriptions;
  text::Vocabulary text_vocab;
  text::Vocabulary caption_vocab;
  std::vector<Matrix> raw;  // one per manifest entry

  std::vector<std::size_t> select(const std::function<bool(const corpus::ManifestEntry&)>& pred) const;
};

Dataset load_dataset(const std::filesystem::path& data_dir, const config::ExperimentConfig& cfg);

/// Normalized f32 token windows for the selected entries.
std::vector<MatrixF> normalized_windows(const Dataset& data, std::span<const std::size_t> rows,
                                        const tok::NormStats& stats);

text::TextEncoder make_text_encoder(const Dataset& data, const config::ExperimentConfig& cfg);

align::CsiAligner make_aligner(const config::ExperimentConfig& cfg);
void save_aligner(const std::filesystem::path& path, align::CsiAligner& model);
align::CsiAligner load_aligner(const std::filesystem::path& path, const config::ExperimentConfig& cfg);

gen::CaptionModel load_caption_model(const std::filesystem::path& path, const config::ExperimentConfig& cfg,
                                     int vocab_size);

void cmd_synth(const Options& options);
void cmd_train_align(const Options& options);
void cmd_train_gen(const Options& options);
void cmd_eval(const Options& options);
void cmd_zeroshot(const Options& options);
void cmd_judge(const Options& options);
void cmd_report(const Options& options);

/// Dispatch by CLI name ("synth", "train-align", ...).
void run(const std::string& command, const Options& options);
const std::vector<std::string>& command_names();

}  // namespace wisense::pipeline
