#include "wisense/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

namespace wisense::metrics {

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

namespace {

PRF from_counts(double overlap, std::size_t n_hyp, std::size_t n_ref) {
  PRF r;
  if (n_hyp == 0 || n_ref == 0) {
    r.empty = true;
    return r;
  }
  r.precision = overlap / static_cast<double>(n_hyp);
  r.recall = overlap / static_cast<double>(n_ref);
  r.f1 = harmonic(r.precision, r.recall);
  return r;
}

std::map<std::string, int> ngram_counts(const Tokens& t, int n) {
  std::map<std::string, int> out;
  if (static_cast<int>(t.size()) < n) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key += '\x1f';
      key += t[i + static_cast<std::size_t>(k)];
    }
    ++out[key];
  }
  return out;
}

}  // namespace

PRF rouge1(const Tokens& hyp, const Tokens& ref) {
  const auto h = ngram_counts(hyp, 1), r = ngram_counts(ref, 1);
  double overlap = 0;
  for (const auto& [w, c] : h) {
    auto it = r.find(w);
    if (it != r.end()) overlap += std::min(c, it->second);
  }
  return from_counts(overlap, hyp.size(), ref.size());
}

PRF rouge1(std::string_view hyp, std::string_view ref) { return rouge1(text::tokenize(hyp), text::tokenize(ref)); }

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

PRF rouge_l(const Tokens& hyp, const Tokens& ref) {
  return from_counts(static_cast<double>(lcs_length(hyp, ref)), hyp.size(), ref.size());
}

PRF rouge_l(std::string_view hyp, std::string_view ref) { return rouge_l(text::tokenize(hyp), text::tokenize(ref)); }

double bleu(const Tokens& hyp, const Tokens& ref, int max_n) {
  if (hyp.empty() || ref.empty() || max_n < 1) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto h = ngram_counts(hyp, n), r = ngram_counts(ref, n);
    double matched = 0, total = 0;
    for (const auto& [g, c] : h) {
      total += c;
      auto it = r.find(g);
      if (it != r.end()) matched += std::min(c, it->second);
    }
    const double p = total == 0 ? kBleuEpsilon : (matched == 0 ? kBleuEpsilon : matched) / total;
    log_sum += std::log(p);
  }
  const double hl = static_cast<double>(hyp.size()), rl = static_cast<double>(ref.size());
  const double bp = hl < rl ? std::exp(1.0 - rl / hl) : 1.0;
  return bp * std::exp(log_sum / max_n);
}

double bleu(std::string_view hyp, std::string_view ref, int max_n) {
  return bleu(text::tokenize(hyp), text::tokenize(ref), max_n);
}

// ---------------------------------------------------------------- METEOR

namespace {

struct Mask {
  std::uint64_t lo = 0, hi = 0;
  bool test(std::size_t j) const { return j < 64 ? (lo >> j) & 1u : (hi >> (j - 64)) & 1u; }
  Mask with(std::size_t j) const {
    Mask m = *this;
    if (j < 64)
      m.lo |= std::uint64_t{1} << j;
    else
      m.hi |= std::uint64_t{1} << (j - 64);
    return m;
  }
  int count_in(const Mask& o) const { return std::popcount(lo & o.lo) + std::popcount(hi & o.hi); }
};

struct StateKey {
  std::size_t i;
  long prev;
  Mask mask;
  bool operator==(const StateKey& o) const {
    return i == o.i && prev == o.prev && mask.lo == o.mask.lo && mask.hi == o.mask.hi;
  }
};

struct StateHash {
  std::size_t operator()(const StateKey& k) const {
    std::size_t h = k.i * 1000003u ^ static_cast<std::size_t>(k.prev + 7) * 998244353u;
    h ^= std::hash<std::uint64_t>()(k.mask.lo) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= std::hash<std::uint64_t>()(k.mask.hi) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
  }
};

struct BudgetExceeded {};

class ChunkSearch {
 public:
  ChunkSearch(const Tokens& hyp, const Tokens& ref, std::size_t budget) : hyp_(hyp), ref_(ref), budget_(budget) {
    std::map<std::string, int> ids;
    auto id_of = [&](const std::string& w) { return ids.emplace(w, static_cast<int>(ids.size())).first->second; };
    for (const auto& w : ref) ref_word_.push_back(id_of(w));
    for (const auto& w : hyp) hyp_word_.push_back(id_of(w));
    const std::size_t nw = ids.size();
    word_mask_.assign(nw, Mask{});
    std::vector<int> ch(nw, 0), cr(nw, 0);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      word_mask_[static_cast<std::size_t>(ref_word_[j])] = word_mask_[static_cast<std::size_t>(ref_word_[j])].with(j);
      ++cr[static_cast<std::size_t>(ref_word_[j])];
    }
    for (int w : hyp_word_) ++ch[static_cast<std::size_t>(w)];
    target_.resize(nw);
    for (std::size_t w = 0; w < nw; ++w) target_[w] = std::min(ch[w], cr[w]);
    // remaining_[i] = occurrences of hyp[i]'s word at positions >= i.
    remaining_.assign(hyp.size(), 0);
    std::vector<int> seen(nw, 0);
    for (std::size_t i = hyp.size(); i-- > 0;) remaining_[i] = ++seen[static_cast<std::size_t>(hyp_word_[i])];
  }

  std::size_t min_chunks() { return static_cast<std::size_t>(solve(0, -1, Mask{})); }

 private:
  static constexpr int kInf = std::numeric_limits<int>::max() / 4;

  int solve(std::size_t i, long prev, Mask mask) {
    if (i == hyp_.size()) return 0;
    const StateKey key{i, prev, mask};
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    if (memo_.size() >= budget_) throw BudgetExceeded{};
    const auto w = static_cast<std::size_t>(hyp_word_[i]);
    const int done = mask.count_in(word_mask_[w]);
    int best = kInf;
    if (done < target_[w]) {
      for (std::size_t j = 0; j < ref_.size(); ++j) {
        if (ref_word_[j] != hyp_word_[i] || mask.test(j)) continue;
        const int step = (prev >= 0 && static_cast<long>(j) == prev + 1) ? 0 : 1;
        const int rest = solve(i + 1, static_cast<long>(j), mask.with(j));
        if (rest < kInf) best = std::min(best, step + rest);
      }
    }
    // Leaving hyp[i] unaligned must still allow the word's full match count.
    if (done + (remaining_[i] - 1) >= target_[w]) {
      const int rest = solve(i + 1, -1, mask);
      best = std::min(best, rest);
    }
    memo_.emplace(key, best);
    return best;
  }

  const Tokens& hyp_;
  const Tokens& ref_;
  std::size_t budget_;
  std::vector<int> hyp_word_, ref_word_, target_, remaining_;
  std::vector<Mask> word_mask_;
  std::unordered_map<StateKey, int, StateHash> memo_;
};

// Longest-common-substring-first tiling; always reaches the maximum match
// count because it ends by pairing single tokens.
std::size_t tiled_chunks(const Tokens& hyp, const Tokens& ref) {
  std::vector<long> align(hyp.size(), -1);
  std::vector<bool> used(ref.size(), false);
  while (true) {
    std::size_t best_len = 0, bi = 0, bj = 0;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      if (align[i] >= 0) continue;
      for (std::size_t j = 0; j < ref.size(); ++j) {
        std::size_t l = 0;
        while (i + l < hyp.size() && j + l < ref.size() && align[i + l] < 0 && !used[j + l] && hyp[i + l] == ref[j + l])
          ++l;
        if (l > best_len) {
          best_len = l;
          bi = i;
          bj = j;
        }
      }
    }
    if (best_len == 0) break;
    for (std::size_t k = 0; k < best_len; ++k) {
      align[bi + k] = static_cast<long>(bj + k);
      used[bj + k] = true;
    }
  }
  std::size_t chunks = 0;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (align[i] < 0) continue;
    if (i == 0 || align[i - 1] < 0 || align[i - 1] + 1 != align[i]) ++chunks;
  }
  return chunks;
}

}  // namespace

MeteorDetail meteor_detail(const Tokens& hyp, const Tokens& ref, std::size_t state_budget) {
  MeteorDetail d;
  if (hyp.empty() || ref.empty()) return d;
  std::map<std::string, int> ch, cr;
  for (const auto& w : hyp) ++ch[w];
  for (const auto& w : ref) ++cr[w];
  for (const auto& [w, c] : ch)
    if (auto it = cr.find(w); it != cr.end()) d.matches += static_cast<std::size_t>(std::min(c, it->second));
  if (d.matches == 0) return d;
  if (hyp == ref) {
    d.chunks = 1;
  } else if (ref.size() <= 128) {
    try {
      ChunkSearch search(hyp, ref, state_budget);
      d.chunks = search.min_chunks();
    } catch (const BudgetExceeded&) {
      d.chunks = tiled_chunks(hyp, ref);
      d.exact = false;
    }
  } else {
    d.chunks = tiled_chunks(hyp, ref);
    d.exact = false;
  }
  const double m = static_cast<double>(d.matches);
  d.precision = m / static_cast<double>(hyp.size());
  d.recall = m / static_cast<double>(ref.size());
  const double fmean = 10.0 * d.precision * d.recall / (d.recall + 9.0 * d.precision);
  const double frag = static_cast<double>(d.chunks) / m;
  d.score = fmean * (1.0 - 0.5 * frag * frag * frag);
  return d;
}

double meteor_lite(const Tokens& hyp, const Tokens& ref) { return meteor_detail(hyp, ref).score; }

double meteor_lite(std::string_view hyp, std::string_view ref) {
  return meteor_lite(text::tokenize(hyp), text::tokenize(ref));
}

// ---------------------------------------------------------------- BERTScore

PRF bertscore_lite(const Tokens& hyp, const Tokens& ref, const text::TextEncoder& table) {
  auto embed = [&](const Tokens& t) {
    std::vector<RowVector> rows;
    for (const auto& w : t) {
      RowVector v = table.word_vector(w);
      if (v.size() > 0) rows.push_back(std::move(v));
    }
    Matrix m(static_cast<Index>(rows.size()), table.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = rows[i];
    return m;
  };
  const Matrix h = embed(hyp), r = embed(ref);
  PRF out;
  if (h.rows() == 0 || r.rows() == 0) {
    out.empty = true;
    return out;
  }
  const Matrix sim = h * r.transpose();
  out.precision = sim.rowwise().maxCoeff().cwiseMax(0.0).mean();
  out.recall = sim.colwise().maxCoeff().cwiseMax(0.0).mean();
  out.f1 = harmonic(out.precision, out.recall);
  return out;
}

PRF bertscore_lite(std::string_view hyp, std::string_view ref, const text::TextEncoder& table) {
  return bertscore_lite(text::tokenize(hyp), text::tokenize(ref), table);
}

Scores& Scores::operator+=(const Scores& o) {
  rouge1 += o.rouge1;
  rouge_l += o.rouge_l;
  bleu4 += o.bleu4;
  meteor += o.meteor;
  bertscore += o.bertscore;
  return *this;
}

Scores Scores::operator/(double d) const { return {rouge1 / d, rouge_l / d, bleu4 / d, meteor / d, bertscore / d}; }

Scores score_pair(std::string_view hyp, std::string_view ref, const text::TextEncoder& table) {
  const auto h = text::tokenize(hyp), r = text::tokenize(ref);
  Scores s;
  s.rouge1 = rouge1(h, r).f1;
  s.rouge_l = rouge_l(h, r).f1;
  s.bleu4 = bleu(h, r, 4);
  s.meteor = meteor_lite(h, r);
  s.bertscore = bertscore_lite(h, r, table).f1;
  return s;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"ROUGE-1", "ROUGE-L", "BLEU-4", "METEOR", "BERTScore"};
  return names;
}

Classification accuracy_f1(std::span<const int> preds, std::span<const int> labels, std::span<const int> classes) {
  if (preds.size() != labels.size())
    throw std::invalid_argument("accuracy_f1: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  Classification c;
  if (preds.empty()) return c;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  c.accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
  double f1_sum = 0.0;
  for (int k : classes) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == k && labels[i] == k) ++tp;
      else if (preds[i] == k) ++fp;
      else if (labels[i] == k) ++fn;
    }
    if (tp + fp + fn == 0) continue;
    c.classes_used.push_back(k);
    f1_sum += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
  if (!c.classes_used.empty()) c.macro_f1 = f1_sum / static_cast<double>(c.classes_used.size());
  return c;
}

}  // namespace wisense::metrics
