#include "wisense/text.hpp"

#include "wisense/nn.hpp"
#include "wisense/rng.hpp"
#include "wisense/stream_io.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

namespace wisense::text {

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join(std::span<const std::string> words, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw std::invalid_argument("vocabulary: empty token at line " + std::to_string(i + 1));
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::from_corpus(std::span<const std::string> texts, std::span<const std::string> reserved) {
  std::set<std::string> words;
  for (const auto& t : texts)
    for (auto& w : tokenize(t)) words.insert(std::move(w));
  std::vector<std::string> tokens(reserved.begin(), reserved.end());
  for (const auto& w : words)
    if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) tokens.push_back(w);
  return Vocabulary(std::move(tokens));
}

int Vocabulary::find(std::string_view t) const {
  auto it = index_.find(std::string(t));
  return it == index_.end() ? -1 : it->second;
}

int Vocabulary::at(std::string_view t) const {
  const int id = find(t);
  if (id < 0) throw OovError("out-of-vocabulary token '" + std::string(t) + "'");
  return id;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& t : tokens_) out += t + "\n";
  io::write_file_atomic(path, out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

RowVector sinusoid(int pos, Index dim) {
  RowVector out(dim);
  for (Index i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
    out(i) = std::sin(pos * freq);
    if (i + 1 < dim) out(i + 1) = std::cos(pos * freq);
  }
  return out;
}

TextEncoder::TextEncoder(Vocabulary vocab, Index dim, std::uint64_t seed, double pos_scale)
    : vocab_(std::move(vocab)), seed_(seed), pos_scale_(pos_scale) {
  if (dim < 1) throw std::invalid_argument("text encoder dimension must be positive");
  // Each row is drawn from its own stream keyed by the word, so adding
  // words to the vocabulary never changes existing embeddings.
  table_.resize(vocab_.size(), dim);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < vocab_.size(); ++i) {
    auto rng = make_rng({seed_, fnv1a(vocab_.token(i))});
    for (Index j = 0; j < dim; ++j) table_(i, j) = gauss(rng);
  }
}

RowVector TextEncoder::encode(std::string_view caption) const {
  const auto words = tokenize(caption);
  RowVector acc = RowVector::Zero(dim());
  int n = 0;
  for (std::size_t p = 0; p < words.size(); ++p) {
    const int id = vocab_.find(words[p]);
    if (id < 0) continue;
    acc += table_.row(id) + pos_scale_ * sinusoid(static_cast<int>(p), dim());
    ++n;
  }
  if (n == 0) throw OovError("caption has no in-vocabulary token: '" + std::string(caption) + "'");
  acc /= static_cast<double>(n);
  return acc / acc.norm();
}

Matrix TextEncoder::encode_all(std::span<const std::string> captions) const {
  Matrix out(static_cast<Index>(captions.size()), dim());
  for (std::size_t i = 0; i < captions.size(); ++i) out.row(static_cast<Index>(i)) = encode(captions[i]);
  return out;
}

RowVector TextEncoder::word_vector(std::string_view word) const {
  const int id = vocab_.find(word);
  if (id < 0) return {};
  return table_.row(id) / table_.row(id).norm();
}

RowVector VideoEmbedder::embed(std::string_view sample_id, std::string_view caption) const {
  if (sealed_) throw ContractViolation("video embeddings are training-time supervision only");
  RowVector f = text_->encode(caption);
  if (sigma_ > 0.0) {
    auto rng = make_rng({seed_, fnv1a(sample_id)});
    std::normal_distribution<double> gauss(0.0, sigma_);
    for (Index j = 0; j < f.size(); ++j) f(j) += gauss(rng);
    f /= f.norm();
  }
  return f;
}

}  // namespace wisense::text
