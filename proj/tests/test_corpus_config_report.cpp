#include "wisense/config.hpp"
#include "wisense/corpus.hpp"
#include "wisense/report.hpp"
#include "wisense/stream_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <map>

using namespace wisense;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  return out;
}

corpus::CorpusConfig tiny_corpus() {
  corpus::CorpusConfig c;
  c.windows_per_class = 5;
  c.multi_windows = 5;
  c.multi_subjects = {2, 3};
  return c;
}

}  // namespace

TEST_CASE("class catalogue") {
  const auto classes = corpus::default_classes();
  REQUIRE(classes.size() == 8);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    CHECK(classes[i].label == static_cast<int>(i));
    CHECK(classes[i].description() ==
          "the person " + classes[i].upper.phrase + " and " + classes[i].lower.phrase);
  }
}

TEST_CASE("multi-person captions join the single-person templates") {
  const auto classes = corpus::default_classes();
  corpus::Scene one{{{0, 3, 0.1, 0.2}}};
  CHECK(corpus::caption(classes, one) == classes[3].description());
  corpus::Scene two{{{0, 1, 0.1, 0.2}, {1, 6, 0.0, 0.3}}};
  const auto expect = [&](const char* ordinal, int c) {
    return std::string("the ") + ordinal + " person " + classes[c].upper.phrase + " and " + classes[c].lower.phrase;
  };
  CHECK(corpus::caption(classes, two) == expect("first", 1) + " while " + expect("second", 6));
  CHECK(corpus::reference(classes, two, corpus::Prompt::Factuality) == "two people are moving");
  CHECK(corpus::reference(classes, one, corpus::Prompt::Interaction) == "no interaction");
  CHECK(corpus::reference(classes, two, corpus::Prompt::Overall) == corpus::caption(classes, two));
}

TEST_CASE("synthesis matches the requested sizes and is byte-reproducible") {
  const auto a = fresh_dir("wisense_corpus_a"), b = fresh_dir("wisense_corpus_b");
  synth::ChannelConfig ch;
  const auto cfg = tiny_corpus();
  const auto m = corpus::synthesize(cfg, ch, 9, a);
  corpus::synthesize(cfg, ch, 9, b);
  CHECK(snapshot(a) == snapshot(b));
  CHECK_NOTHROW(m.validate(a));

  std::size_t single = 0, multi = 0;
  for (const auto& e : m.entries) (e.n_subjects == 1 ? single : multi) += 1;
  CHECK(single == 8 * 5);
  CHECK(multi == 2 * 5);
  CHECK(m.wireless_text.total() == m.entries.size());
  for (const auto& e : m.entries) {
    CHECK(e.references.size() == corpus::kNumPrompts);
    CHECK(e.window_packets == cfg.window_packets);
    CHECK((e.split == "train" || e.split == "test"));
    CHECK(static_cast<int>(e.subject_classes.size()) == e.n_subjects);
  }
  const auto back = corpus::Manifest::load(a / "manifest.json");
  CHECK(back.to_json() == m.to_json());

  const auto rows = corpus::read_class_file(a / "classes.tsv");
  REQUIRE(rows.size() == 8);
  CHECK(rows[0].second == corpus::default_classes()[0].description());
  const auto raw = io::read_file(a / "classes.tsv");
  CHECK(raw.find('\t') != std::string::npos);

  const auto s = io::read_csi_stream(a / m.entries.front().csi_file);
  CHECK(s.n_links == ch.n_links);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("test split mask has the requested size") {
  const auto mask = corpus::test_mask(200, 0.2, 1, "x");
  CHECK(std::count(mask.begin(), mask.end(), true) == 40);
  CHECK(mask == corpus::test_mask(200, 0.2, 1, "x"));
}

TEST_CASE("configs reject unknown keys and wrong types") {
  CHECK_NOTHROW(config::parse("{}"));
  CHECK_THROWS_AS(config::parse(R"({"bogus": 1})"), config::ConfigError);
  CHECK_THROWS_AS(config::parse(R"({"stage1": {"stepz": 10}})"), config::ConfigError);
  CHECK_THROWS_AS(config::parse(R"({"stage1": {"steps": "many"}})"), config::ConfigError);
  CHECK_THROWS_AS(config::parse("{not json"), config::ConfigError);
  const auto c = config::parse(R"({"seed": 5, "stage1": {"steps": 10}, "zeroshot": {"holdout": [1, 3]}})");
  CHECK(c.seed == 5);
  CHECK(c.stage1.steps == 10);
  CHECK(c.zeroshot.holdout == std::vector<int>{1, 3});
  const auto again = config::parse(config::to_json(c));
  CHECK(config::to_json(again) == config::to_json(c));
  CHECK(config::parse_holdout("2,5") == std::vector<int>{2, 5});
  CHECK_THROWS(config::parse_holdout("2,x"));
  CHECK_THROWS(config::parse_holdout(""));
}

TEST_CASE("report CSV headers") {
  const auto first_line = [](const std::string& csv) { return csv.substr(0, csv.find('\n')); };
  metrics::Scores s{0.1, 0.2, 0.3, 0.4, 0.5};
  CHECK(first_line(report::fig7_csv({s, s})) == "ROUGE-1,ROUGE-L,BLEU-4,METEOR,BERTScore");
  CHECK(report::fig7_csv({s}) == "ROUGE-1,ROUGE-L,BLEU-4,METEOR,BERTScore\n0.1000,0.2000,0.3000,0.4000,0.5000\n");
  CHECK(first_line(report::table2_csv({{"m", 0.5, 0.25}})) == "Method,Accuracy,F1");
  CHECK(first_line(report::table3_csv({{"Overall", s}})) == "Category,ROUGE-1,ROUGE-L,BLEU-4,METEOR,BERTScore");
  judge::JudgeTable t;
  t.rows.push_back({"Factuality", 100.0, 5.0, 3, 0});
  t.all = {"All", 100.0, 5.0, 3, 0};
  const auto csv = report::table4_csv({{"GT (1P)", t}});
  CHECK(first_line(csv).rfind("Method,Factuality Acc,Factuality Score,", 0) == 0);
  CHECK(csv.find("GT (1P),100.0,5.00,") != std::string::npos);
}

TEST_CASE("CSV quoting round trip") {
  const std::vector<std::string> fields = {"plain", "with,comma", "with \"quote\"", ""};
  CHECK(report::parse_csv_line(report::csv_line(fields)) == fields);
}
