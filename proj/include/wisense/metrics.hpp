#pragma once

#include "wisense/text.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

/// Caption scoring. All functions take raw strings and share text::tokenize.
namespace wisense::metrics {

using Tokens = std::vector<std::string>;

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool empty = false;  // an input had no tokens (or no known tokens)
};

double harmonic(double p, double r);

PRF rouge1(const Tokens& hyp, const Tokens& ref);
PRF rouge1(std::string_view hyp, std::string_view ref);

/// Longest common subsequence length by dynamic programming.
std::size_t lcs_length(const Tokens& a, const Tokens& b);
PRF rouge_l(const Tokens& hyp, const Tokens& ref);
PRF rouge_l(std::string_view hyp, std::string_view ref);

inline constexpr double kBleuEpsilon = 1e-9;

/// Sentence BLEU: clipped n-gram precisions (a zero count becomes epsilon,
/// an empty n-gram set counts as precision epsilon), geometric mean,
/// brevity penalty exp(1 - |ref|/|hyp|) when |hyp| < |ref|. Empty hyp -> 0.
double bleu(const Tokens& hyp, const Tokens& ref, int max_n = 4);
double bleu(std::string_view hyp, std::string_view ref, int max_n = 4);

struct MeteorDetail {
  double score = 0.0;
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  bool exact = true;  // false when the chunk search fell back to greedy tiling
};

/// Exact-match METEOR. The alignment has the maximum number of unigram
/// matches and, among those, the fewest chunks. F = 10PR / (R + 9P),
/// penalty = 0.5 (chunks / matches)^3.
MeteorDetail meteor_detail(const Tokens& hyp, const Tokens& ref, std::size_t state_budget = 200000);
double meteor_lite(const Tokens& hyp, const Tokens& ref);
double meteor_lite(std::string_view hyp, std::string_view ref);

/// Greedy cosine matching on the frozen word table. Per-token best matches
/// are clamped at 0 so every value lies in [0, 1]. Words missing from the
/// table are ignored; if either side has none left the result is flagged.
PRF bertscore_lite(const Tokens& hyp, const Tokens& ref, const text::TextEncoder& table);
PRF bertscore_lite(std::string_view hyp, std::string_view ref, const text::TextEncoder& table);

struct Scores {
  double rouge1 = 0.0;
  double rouge_l = 0.0;
  double bleu4 = 0.0;
  double meteor = 0.0;
  double bertscore = 0.0;

  double mean() const { return (rouge1 + rouge_l + bleu4 + meteor + bertscore) / 5.0; }
  Scores& operator+=(const Scores& o);
  Scores operator/(double d) const;
};

/// F1 variants of every metric for one pair.
Scores score_pair(std::string_view hyp, std::string_view ref, const text::TextEncoder& table);

/// Column names in report order.
const std::vector<std::string>& metric_names();

struct Classification {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<int> classes_used;  // classes entering the macro average
};

/// Macro-F1 over `classes`, skipping those absent from both preds and labels.
Classification accuracy_f1(std::span<const int> preds, std::span<const int> labels, std::span<const int> classes);

}  // namespace wisense::metrics
