#include "wisense/judge.hpp"

#include "wisense/metrics.hpp"
#include "wisense/rubric.hpp"
#include "wisense/types.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <stdexcept>
#include <thread>

namespace wisense::judge {

using nlohmann::json;

std::string display_name(Category c) {
  switch (c) {
    case Category::Factuality: return "Factuality";
    case Category::TemporalFlow: return "Temporal Flow";
    case Category::SpatialRel: return "Spatial Rel.";
    case Category::BodyPart: return "Body Part";
    case Category::Interaction: return "Interaction";
  }
  throw ContractViolation("unknown judge category");
}

std::string id_name(Category c) {
  switch (c) {
    case Category::Factuality: return "Factuality";
    case Category::TemporalFlow: return "TemporalFlow";
    case Category::SpatialRel: return "SpatialRel";
    case Category::BodyPart: return "BodyPart";
    case Category::Interaction: return "Interaction";
  }
  throw ContractViolation("unknown judge category");
}

Category category_from_string(std::string_view s) {
  for (Category c : kCategories)
    if (s == id_name(c) || s == display_name(c)) return c;
  throw std::invalid_argument("unknown judge category: " + std::string(s));
}

std::string to_string(Backend b) { return b == Backend::remote ? "remote" : "mock"; }

Backend backend_from_string(std::string_view s) {
  if (s == "remote") return Backend::remote;
  if (s == "mock") return Backend::mock;
  throw std::invalid_argument("backend must be remote or mock, got: " + std::string(s));
}

void JudgeRequest::validate() const {
  if (generated.empty()) throw ContractViolation("judge request: generated text is empty");
  if (reference.empty()) throw ContractViolation("judge request: reference text is empty");
}

namespace {

std::string focus_of(Category c) {
  switch (c) {
    case Category::Factuality: return "are the stated facts (how many people, what they do) correct";
    case Category::TemporalFlow: return "is the order of the movements over time correct";
    case Category::SpatialRel: return "are the directions of movement (up, down, forward, backward) correct";
    case Category::BodyPart: return "are the moving body parts named correctly";
    case Category::Interaction: return "is the interaction between people (or its absence) described correctly";
  }
  return {};
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

void default_sleep(double seconds) {
  if (seconds > 0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

}  // namespace

std::optional<Verdict> parse_verdict(std::string_view response) {
  static const std::regex re(R"(^\s*SCORE:\s*([0-9]+(?:\.[0-9]+)?)\s*/\s*CORRECT:\s*(yes|no)\s*$)",
                             std::regex::icase);
  const std::string s(response);
  std::smatch m;
  if (!std::regex_match(s, m, re)) return std::nullopt;
  const double score = std::stod(m[1].str());
  if (!(score >= 0.0 && score <= 5.0)) return std::nullopt;
  std::string flag = m[2].str();
  for (char& ch : flag) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return Verdict{score, flag == "yes"};
}

std::string render_prompt(const JudgeRequest& request) {
  std::string out = request.rubric_prompt.empty() ? std::string(kRubricV1) : request.rubric_prompt;
  replace_all(out, "{{category}}", display_name(request.category));
  replace_all(out, "{{focus}}", focus_of(request.category));
  replace_all(out, "{{reference}}", request.reference);
  replace_all(out, "{{generated}}", request.generated);
  return out;
}

BackendConfig BackendConfig::from_env(Backend backend) {
  BackendConfig cfg;
  cfg.backend = backend;
  auto env = [](const char* key) {
    const char* v = std::getenv(key);
    return v ? std::string(v) : std::string();
  };
  cfg.base_url = env("JUDGE_BASE_URL");
  cfg.api_key = env("JUDGE_API_KEY");
  cfg.model = env("JUDGE_MODEL");
  if (backend == Backend::remote) {
    std::string missing;
    if (cfg.base_url.empty()) missing += " JUDGE_BASE_URL";
    if (cfg.api_key.empty()) missing += " JUDGE_API_KEY";
    if (cfg.model.empty()) missing += " JUDGE_MODEL";
    if (!missing.empty()) throw std::runtime_error("remote judge backend needs environment variables:" + missing);
  }
  return cfg;
}

namespace {

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const BackendConfig& config) : api_key_(config.api_key) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config.base_url, m, url_re))
      throw std::invalid_argument("JUDGE_BASE_URL must look like http(s)://host[:port][/path]: " + config.base_url);
    origin_ = m[1].str();
    prefix_ = m[2].matched ? m[2].str() : "";
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (origin_.rfind("https://", 0) == 0)
      throw std::invalid_argument("this build has no TLS support; rebuild with WISENSE_HTTPS=ON");
#endif
    timeout_ = config.timeout_seconds;
  }

  std::string post(const std::string& path, const std::string& body) override {
    httplib::Client client(origin_);
    const auto secs = static_cast<time_t>(timeout_);
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
    auto res = client.Post(prefix_ + path, headers, body, "application/json");
    if (!res) throw NetworkError("judge request failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
      throw NetworkError("judge endpoint returned HTTP " + std::to_string(res->status));
    return res->body;
  }

 private:
  std::string origin_, prefix_, api_key_;
  double timeout_ = 30.0;
};

std::string extract_content(const std::string& body) {
  try {
    const json j = json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    return body;
  }
}

}  // namespace

std::unique_ptr<Transport> make_http_transport(const BackendConfig& config) {
  return std::make_unique<HttpTransport>(config);
}

JudgeResult judge_mock(const JudgeRequest& request) {
  request.validate();
  constexpr double category_weight = 1.0;
  const double f1 = metrics::rouge_l(request.generated, request.reference).f1;
  JudgeResult r;
  r.backend = Backend::mock;
  r.score = std::round(5.0 * f1 * category_weight);
  r.correct = r.score >= 3.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "SCORE: %g / CORRECT: %s", r.score, r.correct ? "yes" : "no");
  r.raw_response = buf;
  r.attempts = 1;
  return r;
}

AuditLog::AuditLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream(path_, std::ios::trunc);
}

void AuditLog::write(const std::string& json_line) {
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  out << json_line << '\n';
  if (!out) throw std::runtime_error("cannot append to audit log " + path_.string());
}

namespace {

JudgeResult judge_remote(const JudgeRequest& request, const BackendConfig& config, Transport& transport,
                         json& audit) {
  const auto sleep = config.sleep ? config.sleep : default_sleep;
  json messages = json::array();
  messages.push_back({{"role", "user"}, {"content", render_prompt(request)}});

  JudgeResult r;
  r.backend = Backend::remote;
  json exchanges = json::array();
  // First ask plus one re-ask when the reply does not parse.
  for (int ask = 0; ask < 2; ++ask) {
    const json body = {{"model", config.model}, {"messages", messages}, {"temperature", 0}};
    std::string reply;
    for (int attempt = 1;; ++attempt) {
      ++r.attempts;
      try {
        reply = transport.post("/chat/completions", body.dump());
        break;
      } catch (const NetworkError&) {
        if (attempt >= config.max_attempts) throw;
        sleep(config.backoff_seconds * std::pow(2.0, attempt - 1));
      }
    }
    const std::string content = extract_content(reply);
    exchanges.push_back({{"request", body}, {"response", content}});
    r.raw_response = content;
    if (auto v = parse_verdict(content)) {
      r.score = v->score;
      r.correct = v->correct;
      r.valid = true;
      audit["exchanges"] = exchanges;
      return r;
    }
    messages.push_back({{"role", "assistant"}, {"content", content}});
    messages.push_back({{"role", "user"},
                        {"content", "Reply with exactly one line: SCORE: <number from 0 to 5> / CORRECT: <yes|no>"}});
  }
  r.valid = false;
  r.score = 0.0;
  r.correct = false;
  audit["exchanges"] = exchanges;
  return r;
}

JudgeResult judge_with(const JudgeRequest& request, const BackendConfig& config, Transport* transport,
                       AuditLog* audit, std::size_t index) {
  request.validate();
  json entry = {{"index", index},
                {"category", id_name(request.category)},
                {"backend", to_string(config.backend)},
                {"rubric_version", kRubricVersion},
                {"generated", request.generated},
                {"reference", request.reference}};
  JudgeResult r;
  if (config.backend == Backend::mock) {
    r = judge_mock(request);
  } else {
    entry["model"] = config.model;
    r = judge_remote(request, config, *transport, entry);
  }
  if (audit) {
    entry["raw_response"] = r.raw_response;
    entry["score"] = r.score;
    entry["correct"] = r.correct;
    entry["valid"] = r.valid;
    entry["attempts"] = r.attempts;
    audit->write(entry.dump());
  }
  return r;
}

std::unique_ptr<Transport> open_transport(const BackendConfig& config) {
  return config.transport_factory ? config.transport_factory() : make_http_transport(config);
}

}  // namespace

JudgeResult judge(const JudgeRequest& request, const BackendConfig& config, AuditLog* audit, std::size_t index) {
  std::unique_ptr<Transport> transport;
  if (config.backend == Backend::remote) transport = open_transport(config);
  return judge_with(request, config, transport.get(), audit, index);
}

TokenBucket::TokenBucket(double rate, double capacity)
    : rate_(rate), capacity_(std::max(1.0, capacity)), tokens_(std::max(1.0, capacity)),
      last_(std::chrono::steady_clock::now()) {
  if (!(rate > 0.0)) throw std::invalid_argument("token bucket rate must be positive");
}

void TokenBucket::acquire() {
  for (;;) {
    double wait = 0.0;
    {
      std::lock_guard lock(mutex_);
      const auto now = std::chrono::steady_clock::now();
      tokens_ = std::min(capacity_, tokens_ + rate_ * std::chrono::duration<double>(now - last_).count());
      last_ = now;
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = (1.0 - tokens_) / rate_;
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
  }
}

JudgeTable aggregate(std::span<const JudgeRequest> requests, std::span<const JudgeResult> results) {
  if (requests.size() != results.size()) throw ShapeError("aggregate: requests and results differ in length");
  JudgeTable table;
  double acc_sum = 0.0, score_sum = 0.0;
  for (Category c : kCategories) {
    CategoryRow row;
    row.name = display_name(c);
    std::size_t total = 0, correct = 0;
    double score = 0.0;
    for (std::size_t i = 0; i < requests.size(); ++i) {
      if (requests[i].category != c) continue;
      ++total;
      if (!results[i].valid) {
        ++row.invalid;
        continue;
      }
      ++row.count;
      correct += results[i].correct ? 1 : 0;
      score += results[i].score;
    }
    table.invalid += row.invalid;
    if (total == 0) {
      table.warnings.push_back("category " + row.name + " has no items; omitted");
      continue;
    }
    if (row.count == 0) {
      table.warnings.push_back("category " + row.name + " has only invalid results; omitted");
      continue;
    }
    row.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(row.count);
    row.score = score / static_cast<double>(row.count);
    acc_sum += row.accuracy;
    score_sum += row.score;
    table.all.count += row.count;
    table.all.invalid += row.invalid;
    table.rows.push_back(row);
  }
  table.all.name = "All";
  if (!table.rows.empty()) {
    table.all.accuracy = acc_sum / static_cast<double>(table.rows.size());
    table.all.score = score_sum / static_cast<double>(table.rows.size());
  }
  return table;
}

JudgeTable judge_corpus(std::span<const JudgeRequest> requests, const BackendConfig& config,
                        std::vector<JudgeResult>* results) {
  if (requests.empty()) throw ContractViolation("judge_corpus: empty corpus");
  for (const auto& r : requests) r.validate();

  std::unique_ptr<AuditLog> audit;
  if (!config.audit_log.empty()) audit = std::make_unique<AuditLog>(config.audit_log);

  std::vector<JudgeResult> out(requests.size());
  if (config.backend == Backend::mock) {
    for (std::size_t i = 0; i < requests.size(); ++i) out[i] = judge_with(requests[i], config, nullptr, audit.get(), i);
  } else {
    const int workers = std::max(1, std::min<int>(config.max_concurrency, static_cast<int>(requests.size())));
    TokenBucket bucket(config.rate_per_second, static_cast<double>(workers));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        auto transport = open_transport(config);
        for (std::size_t i = next++; i < requests.size(); i = next++) {
          bucket.acquire();
          try {
            out[i] = judge_with(requests[i], config, transport.get(), audit.get(), i);
          } catch (const NetworkError& e) {
            JudgeResult bad;
            bad.backend = Backend::remote;
            bad.valid = false;
            bad.raw_response = std::string("network error: ") + e.what();
            bad.attempts = config.max_attempts;
            out[i] = bad;
            if (audit) {
              json entry = {{"index", i},
                            {"category", id_name(requests[i].category)},
                            {"backend", "remote"},
                            {"error", e.what()},
                            {"valid", false}};
              audit->write(entry.dump());
            }
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  JudgeTable table = aggregate(requests, out);
  if (results) *results = std::move(out);
  return table;
}

std::string format_accuracy(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof buf, percent >= 100.0 ? "%.1f" : "%.2f", percent);
  return buf;
}

std::string format_score(double score) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", score);
  return buf;
}

}  // namespace wisense::judge
