#include "wisense/report.hpp"

#include <cstdio>
#include <stdexcept>

namespace wisense::report {

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  return out + "\n";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r' && c != '\n') {
      out.back() += c;
    }
  }
  if (quoted) throw std::runtime_error("unterminated quote in CSV line");
  return out;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

metrics::Scores scores_from_json(const nlohmann::json& j) {
  metrics::Scores s;
  s.rouge1 = j.at("ROUGE-1").get<double>();
  s.rouge_l = j.at("ROUGE-L").get<double>();
  s.bleu4 = j.at("BLEU-4").get<double>();
  s.meteor = j.at("METEOR").get<double>();
  s.bertscore = j.at("BERTScore").get<double>();
  return s;
}

nlohmann::json scores_to_json(const metrics::Scores& s) {
  return {{"ROUGE-1", s.rouge1}, {"ROUGE-L", s.rouge_l}, {"BLEU-4", s.bleu4}, {"METEOR", s.meteor},
          {"BERTScore", s.bertscore}};
}

std::vector<double> as_vector(const metrics::Scores& s) { return {s.rouge1, s.rouge_l, s.bleu4, s.meteor, s.bertscore}; }

std::string table2_csv(const std::vector<ZeroShotRow>& rows) {
  std::string out = csv_line({"Method", "Accuracy", "F1"});
  for (const auto& r : rows) out += csv_line({r.method, fmt4(r.accuracy), fmt4(r.macro_f1)});
  return out;
}

std::string table3_csv(const std::vector<std::pair<std::string, metrics::Scores>>& rows) {
  std::vector<std::string> header = {"Category"};
  for (const auto& m : metrics::metric_names()) header.push_back(m);
  std::string out = csv_line(header);
  for (const auto& [name, s] : rows) {
    std::vector<std::string> f = {name};
    for (double v : as_vector(s)) f.push_back(fmt4(v));
    out += csv_line(f);
  }
  return out;
}

std::string table4_csv(const std::vector<JudgeRow>& rows) {
  std::vector<std::string> header = {"Method"};
  for (auto c : judge::kCategories) {
    header.push_back(judge::display_name(c) + " Acc");
    header.push_back(judge::display_name(c) + " Score");
  }
  header.push_back("All Acc");
  header.push_back("All Score");
  std::string out = csv_line(header);
  for (const auto& r : rows) {
    std::vector<std::string> f = {r.method};
    for (auto c : judge::kCategories) {
      const judge::CategoryRow* found = nullptr;
      for (const auto& row : r.table.rows)
        if (row.name == judge::display_name(c)) found = &row;
      f.push_back(found ? judge::format_accuracy(found->accuracy) : "");
      f.push_back(found ? judge::format_score(found->score) : "");
    }
    f.push_back(judge::format_accuracy(r.table.all.accuracy));
    f.push_back(judge::format_score(r.table.all.score));
    out += csv_line(f);
  }
  return out;
}

std::string fig7_csv(const std::vector<metrics::Scores>& rows) {
  std::string out = csv_line(metrics::metric_names());
  for (const auto& s : rows) {
    std::vector<std::string> f;
    for (double v : as_vector(s)) f.push_back(fmt4(v));
    out += csv_line(f);
  }
  return out;
}

std::string markdown_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s = "|";
    for (const auto& c : cells) s += " " + c + " |";
    return s + "\n";
  };
  std::string out = line(header);
  out += "|";
  for (std::size_t i = 0; i < header.size(); ++i) out += i == 0 ? " --- |" : " ---: |";
  out += "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

}  // namespace wisense::report
