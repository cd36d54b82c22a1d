#pragma once

#include "wisense/judge.hpp"
#include "wisense/metrics.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

/// Report tables in CSV and markdown form.
namespace wisense::report {

std::string csv_escape(const std::string& field);
std::string csv_line(const std::vector<std::string>& fields);
/// Fixed four-decimal rendering of metric values.
std::string fmt4(double v);

metrics::Scores scores_from_json(const nlohmann::json& j);
nlohmann::json scores_to_json(const metrics::Scores& s);
std::vector<double> as_vector(const metrics::Scores& s);

struct ZeroShotRow {
  std::string method;
  double accuracy = 0.0;  // fraction
  double macro_f1 = 0.0;
};

/// Method,Accuracy,F1
std::string table2_csv(const std::vector<ZeroShotRow>& rows);

/// Category,ROUGE-1,ROUGE-L,BLEU-4,METEOR,BERTScore
std::string table3_csv(const std::vector<std::pair<std::string, metrics::Scores>>& rows);

struct JudgeRow {
  std::string method;  // "GT (2P)", "Ours (2P)"
  judge::JudgeTable table;
};

/// Method, then "<category> Acc" and "<category> Score" per judge category
/// and for "All". Missing categories are left blank.
std::string table4_csv(const std::vector<JudgeRow>& rows);

/// Header exactly ROUGE-1,ROUGE-L,BLEU-4,METEOR,BERTScore; one row per
/// subject count, in order.
std::string fig7_csv(const std::vector<metrics::Scores>& rows);

/// Markdown table from a header and string rows.
std::string markdown_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

/// Parse one CSV line (RFC 4180 quoting).
std::vector<std::string> parse_csv_line(const std::string& line);

}  // namespace wisense::report
