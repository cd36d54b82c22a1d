#include "support/oracles.hpp"

#include "wisense/judge.hpp"
#include "wisense/metrics.hpp"
#include "wisense/rng.hpp"
#include "wisense/stream_io.hpp"

#include <doctest.h>

#include <json.hpp>

#include <atomic>
#include <deque>
#include <filesystem>
#include <mutex>

using namespace wisense;
using json = nlohmann::json;

namespace {

// Replays scripted replies; "!" raises a network error.
class FakeTransport : public judge::Transport {
 public:
  explicit FakeTransport(std::deque<std::string> replies) : replies_(std::move(replies)) {}
  std::string post(const std::string& path, const std::string& body) override {
    std::lock_guard lock(mutex_);
    paths.push_back(path);
    bodies.push_back(json::parse(body));
    if (replies_.empty()) throw judge::NetworkError("no scripted reply");
    std::string r = replies_.front();
    replies_.pop_front();
    if (r == "!") throw judge::NetworkError("scripted failure");
    return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", r}}}}}}}.dump();
  }
  std::vector<std::string> paths;
  std::vector<json> bodies;

 private:
  std::deque<std::string> replies_;
  std::mutex mutex_;
};

judge::BackendConfig remote_with(std::shared_ptr<FakeTransport> fake) {
  judge::BackendConfig c;
  c.backend = judge::Backend::remote;
  c.base_url = "http://judge.invalid/v1";
  c.api_key = "k";
  c.model = "m";
  c.max_attempts = 3;
  c.sleep = [](double) {};
  c.transport_factory = [fake] {
    struct Proxy : judge::Transport {
      std::shared_ptr<FakeTransport> f;
      std::string post(const std::string& p, const std::string& b) override { return f->post(p, b); }
    };
    auto p = std::make_unique<Proxy>();
    p->f = fake;
    return p;
  };
  return c;
}

judge::JudgeRequest request(const std::string& gen, const std::string& ref,
                            judge::Category c = judge::Category::Factuality) {
  judge::JudgeRequest r;
  r.generated = gen;
  r.reference = ref;
  r.category = c;
  return r;
}

}  // namespace

TEST_CASE("verdict parser is strict") {
  auto v = judge::parse_verdict("SCORE: 4 / CORRECT: yes");
  REQUIRE(v);
  CHECK(v->score == 4.0);
  CHECK(v->correct);
  v = judge::parse_verdict("  score: 2.5 / correct: NO \n");
  REQUIRE(v);
  CHECK(v->score == 2.5);
  CHECK_FALSE(v->correct);
  CHECK_FALSE(judge::parse_verdict("SCORE: 6 / CORRECT: yes"));
  CHECK_FALSE(judge::parse_verdict("I think SCORE: 4 / CORRECT: yes"));
  CHECK_FALSE(judge::parse_verdict("SCORE: 4"));
  CHECK_FALSE(judge::parse_verdict("SCORE: -1 / CORRECT: no"));
}

TEST_CASE("prompt rendering fills every placeholder") {
  const auto p = judge::render_prompt(request("gen text", "ref text", judge::Category::BodyPart));
  CHECK(p.find("{{") == std::string::npos);
  CHECK(p.find("gen text") != std::string::npos);
  CHECK(p.find("ref text") != std::string::npos);
  CHECK(p.find(judge::display_name(judge::Category::BodyPart)) != std::string::npos);
}

TEST_CASE("mock judge: bounds, extremes, monotonicity, determinism") {
  const auto same = judge::judge_mock(request("the person raises the hand", "the person raises the hand"));
  CHECK(same.score == 5.0);
  CHECK(same.correct);
  const auto none = judge::judge_mock(request("a b c", "d e f"));
  CHECK(none.score == 0.0);
  CHECK_FALSE(none.correct);

  auto rng = make_rng({51});
  std::vector<std::pair<double, double>> points;
  for (int i = 0; i < 500; ++i) {
    const auto h = testing::random_words(rng, 8, 4, 1), g = testing::random_words(rng, 8, 4, 1);
    const auto req = request(text::join(h), text::join(g));
    const auto a = judge::judge_mock(req), b = judge::judge_mock(req);
    CHECK(a.score == b.score);
    CHECK(a.score >= 0.0);
    CHECK(a.score <= 5.0);
    points.emplace_back(metrics::rouge_l(h, g).f1, a.score);
  }
  for (const auto& [r1, s1] : points)
    for (const auto& [r2, s2] : points)
      if (r1 > r2) REQUIRE(s1 >= s2);
}

TEST_CASE("remote judge retries network errors and re-asks once on garbage") {
  auto fake = std::make_shared<FakeTransport>(std::deque<std::string>{"!", "SCORE: 3 / CORRECT: yes"});
  auto cfg = remote_with(fake);
  auto r = judge::judge(request("x", "y"), cfg);
  CHECK(r.valid);
  CHECK(r.score == 3.0);
  CHECK(r.attempts == 2);
  CHECK(fake->paths.front() == "/chat/completions");
  CHECK(fake->bodies.front()["model"] == "m");
  CHECK(fake->bodies.front()["temperature"] == 0);

  fake = std::make_shared<FakeTransport>(std::deque<std::string>{"looks fine", "SCORE: 1 / CORRECT: no"});
  r = judge::judge(request("x", "y"), remote_with(fake));
  CHECK(r.valid);
  CHECK(r.score == 1.0);
  CHECK(fake->bodies.size() == 2);
  CHECK(fake->bodies[1]["messages"].size() == 3);

  fake = std::make_shared<FakeTransport>(std::deque<std::string>{"nope", "still nope"});
  r = judge::judge(request("x", "y"), remote_with(fake));
  CHECK_FALSE(r.valid);

  fake = std::make_shared<FakeTransport>(std::deque<std::string>{"!", "!", "!"});
  CHECK_THROWS_AS(judge::judge(request("x", "y"), remote_with(fake)), judge::NetworkError);
}

TEST_CASE("judge corpus aggregates per category and audits every item") {
  std::deque<std::string> replies;
  for (int i = 0; i < 4; ++i) replies.push_back(i % 2 ? "SCORE: 5 / CORRECT: yes" : "SCORE: 2 / CORRECT: no");
  replies.push_back("!");
  replies.push_back("!");
  replies.push_back("!");
  auto fake = std::make_shared<FakeTransport>(replies);
  auto cfg = remote_with(fake);
  cfg.max_concurrency = 1;
  cfg.rate_per_second = 1000.0;
  cfg.audit_log = std::filesystem::temp_directory_path() / "wisense_audit_test.jsonl";
  std::vector<judge::JudgeRequest> reqs = {request("a", "a", judge::Category::Factuality),
                                           request("a", "a", judge::Category::Factuality),
                                           request("a", "a", judge::Category::BodyPart),
                                           request("a", "a", judge::Category::BodyPart),
                                           request("a", "a", judge::Category::Interaction)};
  std::vector<judge::JudgeResult> results;
  const auto t = judge::judge_corpus(reqs, cfg, &results);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].name == "Factuality");
  CHECK(t.rows[0].accuracy == 50.0);
  CHECK(t.rows[0].score == 3.5);
  CHECK(t.invalid == 1);
  CHECK_FALSE(results[4].valid);
  CHECK(t.all.accuracy == doctest::Approx((t.rows[0].accuracy + t.rows[1].accuracy) / 2));
  CHECK(t.all.score == doctest::Approx((t.rows[0].score + t.rows[1].score) / 2));
  CHECK(t.warnings.size() == 3);  // two empty categories, one all-invalid

  const auto log = io::read_file(cfg.audit_log);
  std::size_t lines = 0;
  for (std::size_t pos = 0; (pos = log.find('\n', pos)) != std::string::npos; ++pos) ++lines;
  CHECK(lines == reqs.size());
  std::filesystem::remove(cfg.audit_log);
}

TEST_CASE("mock corpus of identical pairs prints as a perfect row") {
  std::vector<judge::JudgeRequest> reqs;
  for (auto c : judge::kCategories)
    for (int i = 0; i < 3; ++i) reqs.push_back(request("the person bends", "the person bends", c));
  judge::BackendConfig cfg;
  const auto t = judge::judge_corpus(reqs, cfg);
  CHECK(t.rows.size() == 5);
  CHECK(judge::format_accuracy(t.all.accuracy) + " / " + judge::format_score(t.all.score) == "100.0 / 5.00");
}

TEST_CASE("number formatting") {
  CHECK(judge::format_accuracy(100.0) == "100.0");
  CHECK(judge::format_accuracy(45.654) == "45.65");
  CHECK(judge::format_accuracy(0.0) == "0.00");
  CHECK(judge::format_score(5.0) == "5.00");
}

TEST_CASE("remote backend requires the judge environment") {
  const char* saved = std::getenv("JUDGE_API_KEY");
  const std::string keep = saved ? saved : "";
  unsetenv("JUDGE_API_KEY");
  CHECK_THROWS(judge::BackendConfig::from_env(judge::Backend::remote));
  CHECK_NOTHROW(judge::BackendConfig::from_env(judge::Backend::mock));
  if (saved) setenv("JUDGE_API_KEY", keep.c_str(), 1);
}
