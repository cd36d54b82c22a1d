#include "support/oracles.hpp"

#include "wisense/metrics.hpp"
#include "wisense/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace wisense;
using namespace wisense::testing;

namespace {

const char* kRef = "the cat sat on the mat";
const char* kHyp = "the cat on the mat";

text::TextEncoder word_table() {
  const std::vector<std::string> texts = {"the person raises the hand", "the person lifts the leg and sits down",
                                          "right raising"};
  return text::TextEncoder(text::Vocabulary::from_corpus(texts), 32, 42, 0.5);
}

}  // namespace

TEST_CASE("ROUGE-1 on the cat/mat pair") {
  const auto r = metrics::rouge1(kHyp, kRef);
  CHECK(r.recall == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(r.precision == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(r.f1 - 10.0 / 11.0) <= 1e-12);
  const auto same = metrics::rouge1(kRef, kRef);
  CHECK(same.f1 == 1.0);
  const auto none = metrics::rouge1("a b", "c d");
  CHECK(none.f1 == 0.0);
  CHECK(none.precision == 0.0);
}

TEST_CASE("ROUGE-L on the cat/mat pair and against exhaustive LCS") {
  CHECK(metrics::lcs_length(text::tokenize(kHyp), text::tokenize(kRef)) == 5);
  CHECK(std::abs(metrics::rouge_l(kHyp, kRef).f1 - 10.0 / 11.0) <= 1e-12);
  CHECK(metrics::rouge_l(kRef, kRef).f1 == 1.0);
  auto rng = make_rng({41});
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_words(rng, 8, 3), b = random_words(rng, 8, 3);
    REQUIRE(metrics::lcs_length(a, b) == lcs_exhaustive(a, b));
  }
}

TEST_CASE("BLEU") {
  CHECK(metrics::bleu("a b c d e", "a b c d e") == doctest::Approx(1.0).epsilon(1e-12));
  // Half-length hypothesis with perfect precisions: only the brevity penalty remains.
  CHECK(metrics::bleu("a b c d", "a b c d e f g h") == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(metrics::bleu("", "a b") == 0.0);
  CHECK(metrics::bleu(kHyp, kRef) == doctest::Approx(bleu_oracle(text::tokenize(kHyp), text::tokenize(kRef))));
}

TEST_CASE("METEOR chunks") {
  const auto d = metrics::meteor_detail(text::tokenize("a b c"), text::tokenize("a b c"));
  CHECK(d.chunks == 1);
  CHECK(d.score == doctest::Approx(1.0 - 0.5 / 27.0).epsilon(1e-12));
  CHECK(metrics::meteor_lite("a b c", "d e f") == 0.0);
  const auto fwd = metrics::meteor_detail(text::tokenize("a b c d e"), text::tokenize("a b c d e"));
  const auto rev = metrics::meteor_detail(text::tokenize("e d c b a"), text::tokenize("a b c d e"));
  CHECK(rev.precision == fwd.precision);
  CHECK(rev.recall == fwd.recall);
  CHECK(rev.chunks > fwd.chunks);
  CHECK(rev.score < fwd.score);
}

TEST_CASE("BERTScore") {
  const auto t = word_table();
  CHECK(metrics::bertscore_lite("the person raises the hand", "the person raises the hand", t).f1 ==
        doctest::Approx(1.0).epsilon(1e-12));
  const auto ab = metrics::bertscore_lite("the person raises the hand", "the person sits down", t);
  const auto ba = metrics::bertscore_lite("the person sits down", "the person raises the hand", t);
  CHECK(ab.precision == doctest::Approx(ba.recall).epsilon(1e-12));
  CHECK(ab.recall == doctest::Approx(ba.precision).epsilon(1e-12));
  CHECK(metrics::bertscore_lite("zzz", "the hand", t).empty);
}

TEST_CASE("shared content words raise the text-table similarity") {
  const auto t = word_table();
  const double close = t.encode("person raises right hand").dot(t.encode("person raising the right hand"));
  const double far = t.encode("person raises right hand").dot(t.encode("person sits down"));
  CHECK(close > far);
}

TEST_CASE("every metric agrees with its oracle on random short pairs") {
  const auto r = compare_with_oracles(1000, 42);
  CHECK(r.lcs_mismatches == 0);
  CHECK(r.rouge1_max_dev <= 1e-12);
  CHECK(r.rouge_l_max_dev <= 1e-12);
  CHECK(r.bleu_max_dev <= 1e-12);
  CHECK(r.meteor_max_dev <= 1e-12);
  CHECK(r.bertscore_max_dev <= 1e-12);
}

TEST_CASE("score_pair on identical strings") {
  const auto t = word_table();
  const auto s = metrics::score_pair("the person raises the hand", "the person raises the hand", t);
  CHECK(s.rouge1 == 1.0);
  CHECK(s.rouge_l == 1.0);
  CHECK(s.bleu4 == doctest::Approx(1.0));
  CHECK(s.bertscore == doctest::Approx(1.0));
  CHECK(metrics::metric_names() == std::vector<std::string>{"ROUGE-1", "ROUGE-L", "BLEU-4", "METEOR", "BERTScore"});
}

TEST_CASE("accuracy and macro-F1") {
  const std::vector<int> classes = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> labels, all_zero;
  for (int c = 0; c < 8; ++c)
    for (int k = 0; k < 5; ++k) {
      labels.push_back(c);
      all_zero.push_back(0);
    }
  const auto perfect = metrics::accuracy_f1(labels, labels, classes);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  CHECK(metrics::accuracy_f1(all_zero, labels, classes).accuracy == doctest::Approx(1.0 / 8.0));

  // preds vs labels over 3 classes; per-class F1 by hand:
  // class 0: tp 2 fp 1 fn 0 -> 0.8; class 1: tp 1 fp 1 fn 1 -> 0.5; class 2: tp 1 fp 0 fn 1 -> 2/3
  const std::vector<int> y = {0, 0, 1, 1, 2, 2}, p = {0, 0, 0, 1, 2, 1};
  const std::vector<int> cls = {0, 1, 2};
  const auto r = metrics::accuracy_f1(p, y, cls);
  CHECK(r.accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(r.macro_f1 == doctest::Approx((0.8 + 2.0 / 3.0 + 0.5) / 3.0).epsilon(1e-12));
}
