#pragma once

#include "wisense/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace wisense::text {

/// Lowercase, split on anything that is not an ASCII letter or digit.
std::vector<std::string> tokenize(std::string_view s);
std::string join(std::span<const std::string> words, std::string_view sep = " ");

class OovError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Closed word list; index = position in the list.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Sorted unique words of all `texts`, after any `reserved` entries.
  static Vocabulary from_corpus(std::span<const std::string> texts, std::span<const std::string> reserved = {});

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view t) const { return index_.count(std::string(t)) != 0; }
  /// Index of `t`, or -1.
  int find(std::string_view t) const;
  /// Index of `t`; OovError when absent.
  int at(std::string_view t) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Sinusoidal position code of length `dim` for position `pos`.
RowVector sinusoid(int pos, Index dim);

/// Frozen text encoder: seeded N(0, 1) word table, plus `pos_scale` times
/// sinusoidal positions, mean-pooled and L2-normalized.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(Vocabulary vocab, Index dim, std::uint64_t seed, double pos_scale = 0.1);

  Index dim() const { return table_.cols(); }
  const Vocabulary& vocab() const { return vocab_; }
  const Matrix& table() const { return table_; }
  std::uint64_t seed() const { return seed_; }

  /// Out-of-vocabulary words are skipped; a caption with no known word
  /// raises OovError.
  RowVector encode(std::string_view caption) const;
  Matrix encode_all(std::span<const std::string> captions) const;

  /// Unit-normalized table row of a word, or an empty vector when unknown.
  RowVector word_vector(std::string_view word) const;

 private:
  Vocabulary vocab_;
  Matrix table_;
  std::uint64_t seed_ = 0;
  double pos_scale_ = 0.1;
};

/// Stand-in for a frozen video model whose outputs already live in the text
/// space: normalize(f_txt(caption) + eta), eta ~ N(0, sigma^2) seeded by
/// (seed, sample id). Only legal while training; sealing it turns every
/// further call into a ContractViolation.
class VideoEmbedder {
 public:
  VideoEmbedder(const TextEncoder& text, double sigma, std::uint64_t seed)
      : text_(&text), sigma_(sigma), seed_(seed) {}

  RowVector embed(std::string_view sample_id, std::string_view caption) const;
  void seal() { sealed_ = true; }
  bool sealed() const { return sealed_; }
  double sigma() const { return sigma_; }

 private:
  const TextEncoder* text_;
  double sigma_;
  std::uint64_t seed_;
  bool sealed_ = false;
};

}  // namespace wisense::text
