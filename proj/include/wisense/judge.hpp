#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

/// LLM-as-judge scoring of generated descriptions in five categories on a
/// 0..5 scale, through a chat-completion endpoint or an offline mock.
namespace wisense::judge {

enum class Category { Factuality, TemporalFlow, SpatialRel, BodyPart, Interaction };
inline constexpr std::array<Category, 5> kCategories = {Category::Factuality, Category::TemporalFlow,
                                                        Category::SpatialRel, Category::BodyPart,
                                                        Category::Interaction};

/// Display name used in tables ("Temporal Flow", "Spatial Rel.", ...).
std::string display_name(Category c);
/// Identifier form ("TemporalFlow").
std::string id_name(Category c);
Category category_from_string(std::string_view s);

enum class Backend { remote, mock };
std::string to_string(Backend b);
Backend backend_from_string(std::string_view s);

struct JudgeRequest {
  std::string generated;
  std::string reference;
  Category category = Category::Factuality;
  std::string rubric_prompt;  // template; empty selects the built-in rubric

  void validate() const;
};

struct JudgeResult {
  bool correct = false;
  double score = 0.0;
  std::string raw_response;
  Backend backend = Backend::mock;
  bool valid = true;  // false: unparseable after the re-ask, or transport gave up
  int attempts = 0;
};

struct Verdict {
  double score = 0.0;
  bool correct = false;
};

/// Strict "SCORE: x / CORRECT: yes|no" parser; x must lie in [0, 5].
std::optional<Verdict> parse_verdict(std::string_view response);

std::string render_prompt(const JudgeRequest& request);

class NetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// POSTs a JSON body to `path`, returns the response body. Throws
/// NetworkError for transport failures and non-2xx statuses.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string post(const std::string& path, const std::string& body) = 0;
};

struct BackendConfig {
  Backend backend = Backend::mock;
  std::string base_url;  // JUDGE_BASE_URL
  std::string api_key;   // JUDGE_API_KEY
  std::string model;     // JUDGE_MODEL
  int max_concurrency = 4;
  double rate_per_second = 2.0;
  int max_attempts = 3;
  double backoff_seconds = 0.5;  // doubled after every failed attempt
  double timeout_seconds = 30.0;
  std::filesystem::path audit_log;  // JSONL; empty disables auditing
  /// Overrides the HTTP client (tests use an in-process fake).
  std::function<std::unique_ptr<Transport>()> transport_factory;
  /// Overrides sleeping between retries (tests).
  std::function<void(double)> sleep;

  /// Fills base_url, api_key and model from the environment; remote mode
  /// requires all three.
  static BackendConfig from_env(Backend backend);
};

std::unique_ptr<Transport> make_http_transport(const BackendConfig& config);

/// round(5 * ROUGE-L F1 * weight), correct when score >= 3. weight = 1.
JudgeResult judge_mock(const JudgeRequest& request);

/// Serializes JSONL writes from concurrent workers.
class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path path);
  void write(const std::string& json_line);

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

JudgeResult judge(const JudgeRequest& request, const BackendConfig& config, AuditLog* audit = nullptr,
                  std::size_t index = 0);

struct CategoryRow {
  std::string name;
  double accuracy = 0.0;  // percent
  double score = 0.0;
  std::size_t count = 0;
  std::size_t invalid = 0;
};

struct JudgeTable {
  std::vector<CategoryRow> rows;  // present categories in canonical order
  CategoryRow all;                // mean of the category means
  std::vector<std::string> warnings;
  std::size_t invalid = 0;
};

/// Judges every request (concurrently for the remote backend, at most
/// max_concurrency in flight, token-bucket rate limited) and aggregates per
/// category. `results`, when given, receives per-request results in request
/// order.
JudgeTable judge_corpus(std::span<const JudgeRequest> requests, const BackendConfig& config,
                        std::vector<JudgeResult>* results = nullptr);

/// Aggregation alone, for precomputed results.
JudgeTable aggregate(std::span<const JudgeRequest> requests, std::span<const JudgeResult> results);

/// 100 -> "100.0", 45.654 -> "45.65", 0 -> "0.00".
std::string format_accuracy(double percent);
/// Two decimals: "5.00".
std::string format_score(double score);

/// Token bucket: `rate` tokens per second, burst `capacity`.
class TokenBucket {
 public:
  TokenBucket(double rate, double capacity);
  void acquire();

 private:
  std::mutex mutex_;
  double rate_, capacity_, tokens_;
  std::chrono::steady_clock::time_point last_;
};

}  // namespace wisense::judge
