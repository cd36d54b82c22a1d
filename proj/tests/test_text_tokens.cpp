#include "wisense/channel.hpp"
#include "wisense/corpus.hpp"
#include "wisense/text.hpp"
#include "wisense/tokens.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace wisense;

namespace {

text::TextEncoder small_encoder(double pos_scale = 0.5) {
  const std::vector<std::string> texts = {"the person raises the hand", "the person lifts the leg",
                                          "the person lowers the hand and bends"};
  return text::TextEncoder(text::Vocabulary::from_corpus(texts), 16, 42, pos_scale);
}

}  // namespace

TEST_CASE("tokenizer lowercases and splits on non-alphanumerics") {
  const auto t = text::tokenize("The person, RAISES the-hand!  x2");
  const std::vector<std::string> want = {"the", "person", "raises", "the", "hand", "x2"};
  CHECK(t == want);
  CHECK(text::tokenize("  ,; ").empty());
}

TEST_CASE("vocabulary file is one token per line") {
  const std::vector<std::string> texts = {"b a", "c a"};
  const std::vector<std::string> reserved = {"<pad>"};
  const auto v = text::Vocabulary::from_corpus(texts, reserved);
  CHECK(v.tokens() == std::vector<std::string>{"<pad>", "a", "b", "c"});
  CHECK(v.find("zzz") == -1);
  CHECK_THROWS_AS(v.at("zzz"), text::OovError);
  const auto path = std::filesystem::temp_directory_path() / "wisense_vocab.txt";
  v.save(path);
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  CHECK(lines == v.tokens());
  CHECK(text::Vocabulary::load(path) == v);
  std::filesystem::remove(path);
}

TEST_CASE("text encoder is deterministic and unit norm") {
  const auto enc = small_encoder();
  const auto a = enc.encode("the person raises the hand");
  CHECK(a.norm() == doctest::Approx(1.0));
  CHECK((a - small_encoder().encode("the person raises the hand")).cwiseAbs().maxCoeff() == 0.0);
  // Mean pooling makes the position term depend on length only, so a
  // permutation of the same words encodes identically.
  CHECK((a - enc.encode("the hand raises the person")).cwiseAbs().maxCoeff() < 1e-12);
  // Positions separate a repeated word from its single occurrence.
  const auto bag = small_encoder(0.0);
  CHECK(bag.encode("hand").dot(bag.encode("hand hand")) == doctest::Approx(1.0));
  CHECK(enc.encode("hand").dot(enc.encode("hand hand")) < 1.0 - 1e-6);
  // Unknown words are skipped; no known word at all is an error.
  CHECK((enc.encode("the person raises the hand qqq") - a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(enc.encode("qqq rrr"), text::OovError);
  CHECK(enc.word_vector("qqq").size() == 0);
  CHECK(enc.word_vector("hand").norm() == doctest::Approx(1.0));
}

TEST_CASE("class descriptions encode to distinct directions") {
  const auto classes = corpus::default_classes();
  std::vector<std::string> texts;
  for (const auto& c : classes) texts.push_back(c.description());
  const text::TextEncoder enc(text::Vocabulary::from_corpus(texts), 64, 42, 0.5);
  const Matrix e = enc.encode_all(texts);
  for (Index i = 0; i < e.rows(); ++i)
    for (Index j = i + 1; j < e.rows(); ++j) CHECK(e.row(i).dot(e.row(j)) < 0.999);
}

TEST_CASE("video embedder is seeded per sample and refuses use after sealing") {
  const auto enc = small_encoder();
  text::VideoEmbedder v(enc, 0.05, 3);
  const auto a = v.embed("s1", "the person lifts the leg");
  CHECK(a.norm() == doctest::Approx(1.0));
  CHECK((a - v.embed("s1", "the person lifts the leg")).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - v.embed("s2", "the person lifts the leg")).cwiseAbs().maxCoeff() > 0.0);
  CHECK(a.dot(enc.encode("the person lifts the leg")) > 0.9);
  text::VideoEmbedder exact(enc, 0.0, 3);
  CHECK((exact.embed("s9", "the person raises the hand") - enc.encode("the person raises the hand"))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  v.seal();
  CHECK_THROWS_AS(v.embed("s1", "the person lifts the leg"), ContractViolation);
}

TEST_CASE("video embeddings stay closest to their own class caption") {
  const auto classes = corpus::default_classes();
  std::vector<std::string> texts;
  for (const auto& c : classes) texts.push_back(c.description());
  const text::TextEncoder enc(text::Vocabulary::from_corpus(texts), 64, 42, 0.5);
  const Matrix e = enc.encode_all(texts);
  text::VideoEmbedder v(enc, 0.05, 1);
  int wins = 0, total = 0;
  for (std::size_t c = 0; c < texts.size(); ++c)
    for (int k = 0; k < 100; ++k) {
      const RowVector f = v.embed("w" + std::to_string(c) + "_" + std::to_string(k), texts[c]);
      const double own = f.dot(e.row(static_cast<Index>(c)));
      bool best = true;
      for (Index o = 0; o < e.rows(); ++o)
        if (o != static_cast<Index>(c) && f.dot(e.row(o)) >= own) best = false;
      wins += best;
      ++total;
    }
  CHECK(wins >= 0.95 * total);
}

TEST_CASE("tokens follow the link-major layout") {
  synth::AmpPhase ap;
  ap.n_links = 2;
  ap.n_subcarriers = 3;
  ap.amp = Matrix(5, 6);
  ap.phase = Matrix(5, 6);
  for (Index t = 0; t < 5; ++t)
    for (Index c = 0; c < 6; ++c) {
      ap.amp(t, c) = 100.0 * t + c;
      ap.phase(t, c) = -(100.0 * t + c);
    }
  const auto tt = tok::build_tokens(ap, 1, tok::NormStats::identity(), 3);
  REQUIRE(tt.tokens.rows() == 6);
  REQUIRE(tt.tokens.cols() == 6);
  // token k = link * n_packets + offset
  CHECK(tt.tokens(0, 0) == 100.0);
  CHECK(tt.tokens(2, 2) == 302.0);
  CHECK(tt.tokens(3, 0) == 103.0);
  CHECK(tt.tokens(5, 5) == -305.0);
  CHECK_THROWS(tok::build_tokens(ap, 3, tok::NormStats::identity(), 3));
}

TEST_CASE("normalization statistics standardize each half") {
  std::vector<Matrix> w = {Matrix::Random(10, 8) * 3.0 + Matrix::Constant(10, 8, 2.0), Matrix::Random(6, 8)};
  const auto s = tok::fit_norm_stats(w, 4);
  Matrix all(16, 8);
  all << w[0], w[1];
  tok::normalize_tokens(all, s, 4);
  CHECK(all.leftCols(4).mean() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(all.rightCols(4).array().square().mean() == doctest::Approx(1.0));
  CHECK(tok::fit_norm_stats(w, 4) == s);
}

TEST_CASE("window tokens depend only on the window") {
  synth::ChannelConfig c;
  c.n_links = 2;
  c.n_subcarriers = 4;
  synth::MotionScript script;
  script.total_duration = 0.5;
  script.entries = {{{1, "p", synth::BodyPart::upper, 0.8, 0.3, 0.3}, 0.1, 0}};
  const auto s = synth::simulate_channel(c, script);
  const Matrix w = corpus::window_tokens(s, 40, 20);
  CHECK(w.rows() == 2 * 20);
  CHECK(w.cols() == 8);
  synth::CsiStream cut = s;
  cut.samples = s.samples.middleRows(40, 20);
  CHECK((corpus::window_tokens(cut, 0, 20) - w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constant amplitude and zero phase give identical tokens") {
  synth::AmpPhase ap;
  ap.n_links = 3;
  ap.n_subcarriers = 4;
  ap.amp = Matrix::Constant(6, 12, 2.5);
  ap.phase = Matrix::Zero(6, 12);
  const auto t = tok::build_tokens(ap, 0, tok::NormStats::identity(), 6).tokens;
  for (Index r = 1; r < t.rows(); ++r) CHECK(t.row(r) == t.row(0));
}

TEST_CASE("permuting packets permutes rows inside each link block") {
  synth::AmpPhase ap;
  ap.n_links = 2;
  ap.n_subcarriers = 3;
  ap.amp = Matrix::Random(4, 6);
  ap.phase = Matrix::Random(4, 6);
  const std::vector<Index> perm = {2, 0, 3, 1};
  synth::AmpPhase q = ap;
  for (Index t = 0; t < 4; ++t) {
    q.amp.row(t) = ap.amp.row(perm[t]);
    q.phase.row(t) = ap.phase.row(perm[t]);
  }
  const auto a = tok::build_tokens(ap, 0, tok::NormStats::identity(), 4).tokens;
  const auto b = tok::build_tokens(q, 0, tok::NormStats::identity(), 4).tokens;
  for (int l = 0; l < 2; ++l)
    for (Index t = 0; t < 4; ++t) CHECK(b.row(l * 4 + t) == a.row(l * 4 + perm[t]));
}

TEST_CASE("token projection and STE") {
  const Matrix raw = Matrix::Random(5, 60);
  Matrix eye = Matrix::Zero(64, 60);
  eye.topRows(60).setIdentity();
  const Matrix id = tok::project_tokens(raw, eye, RowVector::Zero(64));
  CHECK(id.leftCols(60) == raw);

  const Matrix w = Matrix::Random(7, 60);
  const RowVector b = RowVector::Random(7);
  const Matrix y = tok::project_tokens(raw, w, b);
  double worst = 0.0;
  for (Index i = 0; i < 5; ++i)
    for (Index o = 0; o < 7; ++o) {
      double acc = b(o);
      for (Index k = 0; k < 60; ++k) acc += raw(i, k) * w(o, k);
      worst = std::max(worst, std::abs(acc - y(i, o)));
    }
  CHECK(worst < 1e-6);

  const Matrix ste = Matrix::Random(5, 7);
  CHECK(tok::add_ste(y, Matrix::Zero(5, 7)) == y);
  CHECK(tok::add_ste(Matrix::Zero(5, 7), ste) == ste);
  // The STE enters additively, so its gradient equals the projected-token gradient.
  const Matrix g = Matrix::Random(5, 7);
  auto loss = [&](const Matrix& p, const Matrix& s) { return (tok::add_ste(p, s).array() * g.array()).sum(); };
  const double h = 1e-5;
  Matrix sp = ste, pp = y;
  sp(2, 3) += h;
  pp(2, 3) += h;
  const double d_ste = (loss(y, sp) - loss(y, ste)) / h, d_proj = (loss(pp, ste) - loss(y, ste)) / h;
  CHECK(d_ste == doctest::Approx(d_proj).epsilon(1e-6));
  CHECK(d_ste == doctest::Approx(g(2, 3)).epsilon(1e-6));
}
