#pragma once

#include "wisense/channel.hpp"
#include "wisense/judge.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

/// Synthetic motion corpus: compound action classes built from body-part
/// primitives, session scripts, template captions and the dataset manifest.
namespace wisense::corpus {

/// Instruction prompts the decoder is conditioned on, in prompt-token order.
enum class Prompt { Overall, Factuality, TemporalFlow, SpatialRel, BodyPart, Interaction, ActionId };
inline constexpr int kNumPrompts = 7;

const std::vector<std::string>& prompt_names();
std::string prompt_name(Prompt p);
Prompt prompt_from_string(std::string_view s);
/// The judge category a prompt is scored under, if any.
std::optional<judge::Category> judge_category(Prompt p);
Prompt prompt_for(judge::Category c);

/// One body-part movement together with its wording in every template.
struct Component {
  synth::MotionPrimitive primitive;
  std::string phrase;     // "raises the hand"
  std::string direction;  // "the hand moves up"
  std::string part_word;  // "hand"
  std::string action;     // "raise hand"
};

/// Upper-body component paired with a lower-body or torso component.
struct ActionClass {
  int label = 0;
  std::string name;  // "raise-hand+lift-leg"
  Component upper;
  Component lower;

  std::string description() const;  // the single-person caption
};

/// 2 upper x 4 lower components = 8 classes.
std::vector<ActionClass> default_classes();

/// What one subject does inside a window.
struct SubjectAction {
  int subject = 0;
  int class_label = 0;
  double upper_onset = 0.0;  // seconds from the window start
  double lower_onset = 0.0;
};

struct Scene {
  std::vector<SubjectAction> actions;
};

/// "the person <upper> and <lower>", subjects joined with " while ".
std::string caption(const std::vector<ActionClass>& classes, const Scene& scene);
/// Reference text for one prompt category.
std::string reference(const std::vector<ActionClass>& classes, const Scene& scene, Prompt prompt);
std::string count_word(int n);

struct CorpusConfig {
  int windows_per_class = 200;
  int window_packets = 20;
  int multi_windows = 100;
  std::vector<int> multi_subjects = {2, 3, 4};
  double test_fraction = 0.2;
  double velocity_jitter = 0.1;  // uniform relative jitter of peak velocity

  void validate() const;
};

/// One continuous recording cut into back-to-back windows.
struct Session {
  std::string name;  // file stem
  int n_subjects = 1;
  int class_label = -1;  // -1 for mixed multi-person sessions
  synth::MotionScript script;
  std::vector<Scene> scenes;  // one per window
};

Session class_session(const CorpusConfig& cfg, const synth::ChannelConfig& channel,
                      const std::vector<ActionClass>& classes, int label, std::uint64_t seed);
Session multi_session(const CorpusConfig& cfg, const synth::ChannelConfig& channel,
                      const std::vector<ActionClass>& classes, int n_subjects, std::uint64_t seed);

/// Channel seed of one session's noise.
std::uint64_t session_noise_seed(std::uint64_t seed, const std::string& name);

struct ManifestEntry {
  std::string sample_id;
  std::string csi_file;  // relative to the data directory
  std::int64_t window_start = 0;
  int window_packets = 0;
  std::string caption;
  int class_label = -1;
  int n_subjects = 1;
  std::string split;  // "train" | "test"
  std::vector<int> subject_classes;
  std::vector<std::string> references;  // kNumPrompts texts
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t total() const { return train + test; }
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  SplitCounts wireless_text;
  SplitCounts text_only;  // class descriptions and their per-prompt references
  std::uint64_t seed = 0;

  /// Unique ids, both splits known, referenced files present under `root`.
  void validate(const std::filesystem::path& root) const;
  std::string to_json() const;
  static Manifest from_json(const std::string& text);
  static Manifest load(const std::filesystem::path& path);
};

/// Test windows of a session: round(test_fraction * n) of them, chosen by a
/// seeded permutation.
std::vector<bool> test_mask(std::size_t n_windows, double test_fraction, std::uint64_t seed, const std::string& name);

/// Writes streams/, manifest.json, classes.tsv, text_vocab.txt and
/// caption_vocab.txt under `data_dir`.
Manifest synthesize(const CorpusConfig& cfg, const synth::ChannelConfig& channel, std::uint64_t seed,
                    const std::filesystem::path& data_dir);

/// Every text the corpus can produce, for building vocabularies.
std::vector<std::string> all_texts(const std::vector<ActionClass>& classes, const Manifest& manifest);

void write_class_file(const std::filesystem::path& path, const std::vector<ActionClass>& classes);
/// "label<TAB>description" per line; index = line number.
std::vector<std::pair<std::string, std::string>> read_class_file(const std::filesystem::path& path);

/// Raw (identity-normalized) tokens of one window. Amplitude and phase are
/// computed over the window alone so the window does not depend on history.
Matrix window_tokens(const synth::CsiStream& stream, Index start, int n_packets);

}  // namespace wisense::corpus
