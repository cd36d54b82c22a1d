#include "wisense/corpus.hpp"

#include "wisense/decoder.hpp"
#include "wisense/rng.hpp"
#include "wisense/stream_io.hpp"
#include "wisense/text.hpp"
#include "wisense/tokens.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

namespace wisense::corpus {

using nlohmann::json;

const std::vector<std::string>& prompt_names() {
  static const std::vector<std::string> names = {"Overall",   "Factuality",  "Temporal Flow",
                                                 "Spatial Rel.", "Body Part", "Interaction",
                                                 "Action Identification"};
  return names;
}

std::string prompt_name(Prompt p) { return prompt_names().at(static_cast<std::size_t>(p)); }

Prompt prompt_from_string(std::string_view s) {
  const auto& names = prompt_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<Prompt>(i);
  throw std::invalid_argument("unknown prompt category: " + std::string(s));
}

std::optional<judge::Category> judge_category(Prompt p) {
  switch (p) {
    case Prompt::Factuality: return judge::Category::Factuality;
    case Prompt::TemporalFlow: return judge::Category::TemporalFlow;
    case Prompt::SpatialRel: return judge::Category::SpatialRel;
    case Prompt::BodyPart: return judge::Category::BodyPart;
    case Prompt::Interaction: return judge::Category::Interaction;
    default: return std::nullopt;
  }
}

Prompt prompt_for(judge::Category c) {
  switch (c) {
    case judge::Category::Factuality: return Prompt::Factuality;
    case judge::Category::TemporalFlow: return Prompt::TemporalFlow;
    case judge::Category::SpatialRel: return Prompt::SpatialRel;
    case judge::Category::BodyPart: return Prompt::BodyPart;
    case judge::Category::Interaction: return Prompt::Interaction;
  }
  throw std::invalid_argument("unknown judge category");
}

std::string ActionClass::description() const { return "the person " + upper.phrase + " and " + lower.phrase; }

namespace {

Component make_component(int id, const std::string& name, synth::BodyPart part, double velocity, double reflectivity,
                         std::string phrase, std::string direction, std::string part_word, std::string action) {
  Component c;
  c.primitive.id = id;
  c.primitive.name = name;
  c.primitive.body_part = part;
  c.primitive.peak_radial_velocity = velocity;
  c.primitive.duration = 0.05;
  c.primitive.reflectivity = reflectivity;
  c.phrase = std::move(phrase);
  c.direction = std::move(direction);
  c.part_word = std::move(part_word);
  c.action = std::move(action);
  return c;
}

}  // namespace

std::vector<ActionClass> default_classes() {
  using synth::BodyPart;
  const std::vector<Component> upper = {
      make_component(0, "raise-hand", BodyPart::upper, 1.5, 0.25, "raises the hand", "the hand moves up", "hand",
                     "raise hand"),
      make_component(1, "lower-hand", BodyPart::upper, -1.5, 0.25, "lowers the hand", "the hand moves down", "hand",
                     "lower hand"),
  };
  const std::vector<Component> lower = {
      make_component(2, "lift-leg", BodyPart::lower, 1.5, 0.3, "lifts the leg", "the leg moves up", "leg",
                     "lift leg"),
      make_component(3, "lower-leg", BodyPart::lower, -1.5, 0.3, "lowers the leg", "the leg moves down", "leg",
                     "lower leg"),
      make_component(4, "step-forward", BodyPart::torso, 0.6, 0.3, "steps forward", "the body moves forward",
                     "body", "step forward"),
      make_component(5, "step-back", BodyPart::torso, -0.6, 0.3, "steps back", "the body moves backward", "body",
                     "step back"),
  };
  std::vector<ActionClass> out;
  for (const auto& u : upper) {
    for (const auto& l : lower) {
      ActionClass c;
      c.label = static_cast<int>(out.size());
      c.name = u.primitive.name + "+" + l.primitive.name;
      c.upper = u;
      c.lower = l;
      out.push_back(c);
    }
  }
  return out;
}

std::string count_word(int n) {
  static const char* words[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
  if (n < 0 || n > 9) throw std::out_of_range("count_word: " + std::to_string(n));
  return words[n];
}

namespace {

std::string join_subjects(const Scene& scene, const std::function<std::string(const SubjectAction&)>& one) {
  if (scene.actions.empty()) throw std::invalid_argument("scene without subjects");
  std::string out;
  for (std::size_t i = 0; i < scene.actions.size(); ++i) {
    if (i) out += " while ";
    out += one(scene.actions[i]);
  }
  return out;
}

// "the person" for a lone subject, "the first person", "the second person",
// ... in overlapping scenes so that captions of different crowd sizes differ.
std::string person(const Scene& scene, std::size_t index) {
  static const char* ordinals[] = {"first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth"};
  if (scene.actions.size() == 1) return "the person";
  if (index >= std::size(ordinals)) throw std::out_of_range("too many subjects for ordinal captions");
  return std::string("the ") + ordinals[index] + " person";
}

std::size_t index_in(const Scene& scene, const SubjectAction& a) {
  return static_cast<std::size_t>(&a - scene.actions.data());
}

const ActionClass& class_of(const std::vector<ActionClass>& classes, const SubjectAction& a) {
  if (a.class_label < 0 || a.class_label >= static_cast<int>(classes.size()))
    throw std::out_of_range("class label " + std::to_string(a.class_label) + " out of range");
  return classes[static_cast<std::size_t>(a.class_label)];
}

}  // namespace

std::string caption(const std::vector<ActionClass>& classes, const Scene& scene) {
  return join_subjects(scene, [&](const SubjectAction& a) {
    const auto& c = class_of(classes, a);
    return person(scene, index_in(scene, a)) + " " + c.upper.phrase + " and " + c.lower.phrase;
  });
}

std::string reference(const std::vector<ActionClass>& classes, const Scene& scene, Prompt prompt) {
  const int n = static_cast<int>(scene.actions.size());
  switch (prompt) {
    case Prompt::Overall: return caption(classes, scene);
    case Prompt::Factuality:
      return count_word(n) + (n == 1 ? " person is moving" : " people are moving");
    case Prompt::TemporalFlow:
      return join_subjects(scene, [&](const SubjectAction& a) {
        const auto& c = class_of(classes, a);
        const bool upper_first = a.upper_onset <= a.lower_onset;
        const auto& first = upper_first ? c.upper : c.lower;
        const auto& second = upper_first ? c.lower : c.upper;
        return person(scene, index_in(scene, a)) + " " + first.phrase + " then " + second.phrase;
      });
    case Prompt::SpatialRel:
      return join_subjects(scene, [&](const SubjectAction& a) {
        const auto& c = class_of(classes, a);
        return c.upper.direction + " and " + c.lower.direction;
      });
    case Prompt::BodyPart:
      return join_subjects(scene, [&](const SubjectAction& a) {
        const auto& c = class_of(classes, a);
        return c.upper.part_word + " and " + c.lower.part_word;
      });
    case Prompt::Interaction:
      return n == 1 ? std::string("no interaction") : count_word(n) + " people move at the same time";
    case Prompt::ActionId:
      return join_subjects(scene, [&](const SubjectAction& a) {
        const auto& c = class_of(classes, a);
        return c.upper.action + " and " + c.lower.action;
      });
  }
  throw std::invalid_argument("unknown prompt");
}

void CorpusConfig::validate() const {
  if (windows_per_class < 2) throw std::invalid_argument("corpus.windows_per_class must be >= 2");
  if (window_packets < 2) throw std::invalid_argument("corpus.window_packets must be >= 2");
  if (multi_windows < 0) throw std::invalid_argument("corpus.multi_windows must be >= 0");
  for (int k : multi_subjects)
    if (k < 2 || k > 9) throw std::invalid_argument("corpus.multi_subjects entries must lie in [2, 9]");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("corpus.test_fraction must lie in (0, 1)");
  if (!(velocity_jitter >= 0.0 && velocity_jitter < 1.0))
    throw std::invalid_argument("corpus.velocity_jitter must lie in [0, 1)");
}

std::uint64_t session_noise_seed(std::uint64_t seed, const std::string& name) {
  auto rng = make_rng({seed, fnv1a("noise"), fnv1a(name)});
  return rng();
}

namespace {

constexpr double kOnsetSlackPackets = 1.0;

// Onsets keep the whole movement inside the window's packets so nothing
// spills into the next window.
double onset_range(const CorpusConfig& cfg, const synth::ChannelConfig& channel, double duration) {
  const double last_packet = (cfg.window_packets - kOnsetSlackPackets) / channel.packet_rate;
  const double range = last_packet - duration;
  if (range <= 0.0)
    throw std::invalid_argument("window of " + std::to_string(cfg.window_packets) +
                                " packets is too short for a primitive of " + std::to_string(duration) + " s");
  return range;
}

void add_subject(Session& s, Scene& scene, const CorpusConfig& cfg, const synth::ChannelConfig& channel,
                 const ActionClass& c, int subject, double window_t0, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SubjectAction action;
  action.subject = subject;
  action.class_label = c.label;
  for (const Component* comp : {&c.upper, &c.lower}) {
    synth::ScriptEntry e;
    e.primitive = comp->primitive;
    const double onset = unit(rng) * onset_range(cfg, channel, e.primitive.duration);
    const double scale = 1.0 + cfg.velocity_jitter * (2.0 * unit(rng) - 1.0);
    e.primitive.peak_radial_velocity *= scale;
    e.start_time = window_t0 + onset;
    e.subject_id = subject;
    s.script.entries.push_back(e);
    (comp == &c.upper ? action.upper_onset : action.lower_onset) = onset;
  }
  scene.actions.push_back(action);
}

double window_seconds(const CorpusConfig& cfg, const synth::ChannelConfig& channel) {
  return cfg.window_packets / channel.packet_rate;
}

}  // namespace

Session class_session(const CorpusConfig& cfg, const synth::ChannelConfig& channel,
                      const std::vector<ActionClass>& classes, int label, std::uint64_t seed) {
  Session s;
  s.name = "class_" + std::to_string(label);
  s.class_label = label;
  s.n_subjects = 1;
  const double wd = window_seconds(cfg, channel);
  s.script.total_duration = cfg.windows_per_class * wd;
  auto rng = make_rng({seed, fnv1a("script"), fnv1a(s.name)});
  const auto& c = classes.at(static_cast<std::size_t>(label));
  for (int w = 0; w < cfg.windows_per_class; ++w) {
    Scene scene;
    add_subject(s, scene, cfg, channel, c, 0, w * wd, rng);
    s.scenes.push_back(scene);
  }
  return s;
}

Session multi_session(const CorpusConfig& cfg, const synth::ChannelConfig& channel,
                      const std::vector<ActionClass>& classes, int n_subjects, std::uint64_t seed) {
  Session s;
  s.name = "multi_" + std::to_string(n_subjects) + "p";
  s.n_subjects = n_subjects;
  const double wd = window_seconds(cfg, channel);
  s.script.total_duration = std::max(1, cfg.multi_windows) * wd;
  auto rng = make_rng({seed, fnv1a("script"), fnv1a(s.name)});
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes.size()) - 1);
  for (int w = 0; w < cfg.multi_windows; ++w) {
    Scene scene;
    for (int subject = 0; subject < n_subjects; ++subject) {
      const int label = pick(rng);
      add_subject(s, scene, cfg, channel, classes[static_cast<std::size_t>(label)], subject, w * wd, rng);
    }
    s.scenes.push_back(scene);
  }
  return s;
}

std::vector<bool> test_mask(std::size_t n_windows, double test_fraction, std::uint64_t seed, const std::string& name) {
  std::vector<std::size_t> order(n_windows);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng({seed, fnv1a("split"), fnv1a(name)});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n_windows)));
  std::vector<bool> mask(n_windows, false);
  for (std::size_t i = 0; i < n_test && i < n_windows; ++i) mask[order[i]] = true;
  return mask;
}

void Manifest::validate(const std::filesystem::path& root) const {
  std::set<std::string> ids;
  std::set<std::string> files;
  for (const auto& e : entries) {
    if (!ids.insert(e.sample_id).second) throw std::runtime_error("manifest: duplicate sample id " + e.sample_id);
    if (e.split != "train" && e.split != "test")
      throw std::runtime_error("manifest: sample " + e.sample_id + " has unknown split '" + e.split + "'");
    if (e.references.size() != static_cast<std::size_t>(kNumPrompts))
      throw std::runtime_error("manifest: sample " + e.sample_id + " lacks per-prompt references");
    if (static_cast<int>(e.subject_classes.size()) != e.n_subjects)
      throw std::runtime_error("manifest: sample " + e.sample_id + " subject list does not match n_subjects");
    files.insert(e.csi_file);
  }
  for (const auto& f : files)
    if (!std::filesystem::exists(root / f)) throw std::runtime_error("manifest: missing stream file " + (root / f).string());
}

std::string Manifest::to_json() const {
  json j;
  j["seed"] = seed;
  j["counts"] = {{"wireless_text", {{"train", wireless_text.train}, {"test", wireless_text.test},
                                    {"total", wireless_text.total()}}},
                 {"text_only", {{"train", text_only.train}, {"test", text_only.test}, {"total", text_only.total()}}}};
  json arr = json::array();
  for (const auto& e : entries) {
    json refs = json::object();
    for (int p = 0; p < kNumPrompts; ++p) refs[prompt_names()[static_cast<std::size_t>(p)]] = e.references[static_cast<std::size_t>(p)];
    arr.push_back({{"sample_id", e.sample_id},
                   {"csi_file", e.csi_file},
                   {"window_start", e.window_start},
                   {"window_packets", e.window_packets},
                   {"caption", e.caption},
                   {"class_label", e.class_label},
                   {"n_subjects", e.n_subjects},
                   {"split", e.split},
                   {"subject_classes", e.subject_classes},
                   {"references", refs}});
  }
  j["entries"] = arr;
  return j.dump(1) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& c = j.at("counts");
    m.wireless_text.train = c.at("wireless_text").at("train").get<std::size_t>();
    m.wireless_text.test = c.at("wireless_text").at("test").get<std::size_t>();
    m.text_only.train = c.at("text_only").at("train").get<std::size_t>();
    m.text_only.test = c.at("text_only").at("test").get<std::size_t>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.sample_id = je.at("sample_id").get<std::string>();
      e.csi_file = je.at("csi_file").get<std::string>();
      e.window_start = je.at("window_start").get<std::int64_t>();
      e.window_packets = je.at("window_packets").get<int>();
      e.caption = je.at("caption").get<std::string>();
      e.class_label = je.at("class_label").get<int>();
      e.n_subjects = je.at("n_subjects").get<int>();
      e.split = je.at("split").get<std::string>();
      e.subject_classes = je.at("subject_classes").get<std::vector<int>>();
      const auto& refs = je.at("references");
      for (const auto& name : prompt_names()) e.references.push_back(refs.at(name).get<std::string>());
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw std::runtime_error(std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

Manifest Manifest::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("manifest not found: " + path.string());
  return from_json(io::read_file(path));
}

std::vector<std::string> all_texts(const std::vector<ActionClass>& classes, const Manifest& manifest) {
  std::vector<std::string> texts;
  for (const auto& c : classes) {
    Scene scene{{SubjectAction{0, c.label, 0.0, 1.0}}};
    for (int p = 0; p < kNumPrompts; ++p) texts.push_back(reference(classes, scene, static_cast<Prompt>(p)));
    scene.actions[0].upper_onset = 1.0;
    scene.actions[0].lower_onset = 0.0;
    texts.push_back(reference(classes, scene, Prompt::TemporalFlow));
  }
  for (const auto& e : manifest.entries) texts.insert(texts.end(), e.references.begin(), e.references.end());
  return texts;
}

void write_class_file(const std::filesystem::path& path, const std::vector<ActionClass>& classes) {
  std::string out;
  for (const auto& c : classes) out += c.name + "\t" + c.description() + "\n";
  io::write_file_atomic(path, out);
}

std::vector<std::pair<std::string, std::string>> read_class_file(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": expected label<TAB>description");
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

Manifest synthesize(const CorpusConfig& cfg, const synth::ChannelConfig& channel, std::uint64_t seed,
                    const std::filesystem::path& data_dir) {
  cfg.validate();
  channel.validate();
  const auto classes = default_classes();
  std::filesystem::create_directories(data_dir / "streams");

  std::vector<Session> sessions;
  for (const auto& c : classes) sessions.push_back(class_session(cfg, channel, classes, c.label, seed));
  if (cfg.multi_windows > 0)
    for (int k : cfg.multi_subjects) sessions.push_back(multi_session(cfg, channel, classes, k, seed));

  Manifest m;
  m.seed = seed;
  for (const auto& s : sessions) {
    synth::ChannelConfig ch = channel;
    ch.seed = session_noise_seed(seed, s.name);
    const auto stream = synth::simulate_channel(ch, s.script);
    const std::string rel = "streams/" + s.name + ".csis";
    io::write_csi_stream(data_dir / rel, stream);

    const auto mask = test_mask(s.scenes.size(), cfg.test_fraction, seed, s.name);
    for (std::size_t w = 0; w < s.scenes.size(); ++w) {
      const auto& scene = s.scenes[w];
      ManifestEntry e;
      char id[64];
      std::snprintf(id, sizeof id, "%s_w%03zu", s.name.c_str(), w);
      e.sample_id = id;
      e.csi_file = rel;
      e.window_start = static_cast<std::int64_t>(w) * cfg.window_packets;
      e.window_packets = cfg.window_packets;
      e.caption = caption(classes, scene);
      e.class_label = s.class_label;
      e.n_subjects = s.n_subjects;
      e.split = mask[w] ? "test" : "train";
      for (const auto& a : scene.actions) e.subject_classes.push_back(a.class_label);
      for (int p = 0; p < kNumPrompts; ++p) e.references.push_back(reference(classes, scene, static_cast<Prompt>(p)));
      (mask[w] ? m.wireless_text.test : m.wireless_text.train) += 1;
      m.entries.push_back(std::move(e));
    }
  }
  m.text_only.train = classes.size() * static_cast<std::size_t>(kNumPrompts);

  write_class_file(data_dir / "classes.tsv", classes);
  const auto texts = all_texts(classes, m);
  text::Vocabulary::from_corpus(texts).save(data_dir / "text_vocab.txt");
  const auto reserved = gen::reserved_tokens(kNumPrompts);
  text::Vocabulary::from_corpus(texts, reserved).save(data_dir / "caption_vocab.txt");
  io::write_file_atomic(data_dir / "manifest.json", m.to_json());
  m.validate(data_dir);
  return m;
}

Matrix window_tokens(const synth::CsiStream& stream, Index start, int n_packets) {
  if (start < 0 || n_packets < 1 || start + n_packets > stream.n_packets())
    throw std::out_of_range("window [" + std::to_string(start) + ", +" + std::to_string(n_packets) +
                            ") outside stream of " + std::to_string(stream.n_packets()) + " packets");
  synth::CsiStream window;
  window.n_links = stream.n_links;
  window.n_subcarriers = stream.n_subcarriers;
  window.packet_rate = stream.packet_rate;
  window.samples = stream.samples.middleRows(start, n_packets);
  const auto ap = synth::csi_to_amp_phase(window);
  return tok::build_tokens(ap, 0, tok::NormStats::identity(), n_packets).tokens;
}

}  // namespace wisense::corpus
