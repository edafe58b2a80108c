#include <doctest.h>

#include <algorithm>
#include <set>

#include "elnkit/eln.hpp"
#include "elnkit/errors.hpp"
#include "elnkit/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace elnkit;
using namespace elnkit::eln;

namespace {

embed::TokenEmbeddingSequence seq(std::vector<std::vector<double>> vectors) {
  embed::TokenEmbeddingSequence s;
  for (std::size_t k = 0; k < vectors.size(); ++k) s.tokens.push_back("t" + std::to_string(k));
  s.vectors = std::move(vectors);
  return s;
}

std::vector<double> random_vec(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

std::vector<std::string> random_texts(Rng& rng, std::size_t n) {
  static const std::vector<std::string> vocab = {"من", "تو", "او", "ما", "شما", "آنها", "خانه", "کتاب", "رفت",
                                                 "آمد", "دیروز", "امروز", "فردا", "خوب", "بد", "است", "بود",
                                                 "را", "به", "از", "در", "با", "که", "این", "آن"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    const auto words = 2 + rng.below(5);
    for (std::uint64_t w = 0; w < words; ++w) t += (w ? " " : "") + vocab[rng.below(vocab.size())];
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST_CASE("eln: worked examples") {
  std::vector<embed::SentenceEmbedding> s = {{{1.0, 0.0}, "a", ""}, {{0.0, 1.0}, "b", ""}};
  CHECK(sentence_eln(s) == std::vector<double>{1.0, 1.0});
  CHECK(token_eln({seq({{2.0}}), seq({})}) == std::vector<double>{4.0});
  // Three hypotheses, pair differences 1, 2, 3 on one coordinate: (1 + 4 + 9) / 3.
  s = {{{0.0}, "", ""}, {{1.0}, "", ""}, {{3.0}, "", ""}};
  CHECK(sentence_eln(s)[0] == doctest::Approx(14.0 / 3.0));
  // Padding counts: lengths 2 and 1, second position differs by the full vector.
  CHECK(token_eln({seq({{1.0}, {1.0}}), seq({{1.0}})}) == std::vector<double>{0.5});
}

TEST_CASE("eln: agrees with the loop oracle on random instances") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    const std::size_t d = 1 + rng.below(16);
    const std::size_t dp = 1 + rng.below(16);
    std::vector<std::vector<double>> sent(n);
    std::vector<embed::SentenceEmbedding> sent_in;
    for (auto& v : sent) {
      v = random_vec(rng, d);
      sent_in.push_back({v, "", ""});
    }
    std::vector<std::vector<std::vector<double>>> toks(n);
    std::vector<embed::TokenEmbeddingSequence> tok_in;
    for (auto& t : toks) {
      const auto len = rng.below(7);
      for (std::uint64_t k = 0; k < len; ++k) t.push_back(random_vec(rng, dp));
      tok_in.push_back(seq(t));
    }
    if (std::all_of(toks.begin(), toks.end(), [](const auto& t) { return t.empty(); })) {
      toks[0].push_back(random_vec(rng, dp));
      tok_in[0] = seq(toks[0]);
    }
    const auto s = sentence_eln(sent_in);
    const auto t = token_eln(tok_in);
    const auto so = oracle::sentence_eln(sent);
    const auto to = oracle::token_eln(toks, dp);
    REQUIRE(s.size() == d);
    REQUIRE(t.size() == dp);
    for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(s[c] - so[c]) < 1e-12);
    for (std::size_t c = 0; c < dp; ++c) CHECK(std::abs(t[c] - to[c]) < 1e-12);
    CHECK(std::abs(l2_norm(s, t) - oracle::norm2(so, to)) < 1e-12);
  }
}

TEST_CASE("eln: identical hypotheses give zero") {
  embed::TestEmbedder e(16);
  const std::vector<std::string> same(5, "یک جمله کوتاه");
  const auto v = compute_eln(same, e, e);
  CHECK(v.magnitude == 0.0);
  CHECK(v.l_max == 3);
  CHECK(v.n_hypotheses == 5);
  for (double x : v.concatenated()) CHECK(x == 0.0);
}

TEST_CASE("eln: every component is non-negative and the magnitude is the norm") {
  Rng rng(12);
  embed::TestEmbedder se(24), te(12);
  for (int k = 0; k < 50; ++k) {
    const auto v = compute_eln(random_texts(rng, 5), se, te);
    for (double x : v.concatenated()) CHECK(x >= 0.0);
    CHECK(v.concatenated().size() == 36);
    CHECK(v.magnitude == doctest::Approx(std::hypot(v.sentence_l2(), v.token_l2())).epsilon(1e-14));
  }
}

TEST_CASE("eln: permutation invariance is exact") {
  Rng rng(13);
  embed::TestEmbedder se(32), te(20);
  for (int k = 0; k < 40; ++k) {
    auto texts = random_texts(rng, 5);
    const auto base = compute_eln(texts, se, te);
    for (int p = 0; p < 10; ++p) {
      for (std::size_t i = texts.size() - 1; i > 0; --i) std::swap(texts[i], texts[rng.below(i + 1)]);
      CHECK(compute_eln(texts, se, te) == base);
    }
  }
}

TEST_CASE("eln: scaling every embedding by s scales entries by s squared") {
  Rng rng(14);
  for (double s : {2.0, 0.5, 3.0, -1.7}) {
    std::vector<embed::SentenceEmbedding> a, b;
    std::vector<embed::TokenEmbeddingSequence> ta, tb;
    for (int i = 0; i < 5; ++i) {
      auto v = random_vec(rng, 7);
      a.push_back({v, "", ""});
      for (auto& x : v) x *= s;
      b.push_back({v, "", ""});
      std::vector<std::vector<double>> t1, t2;
      for (std::uint64_t k = 0; k < 1 + rng.below(4); ++k) {
        auto w = random_vec(rng, 5);
        t1.push_back(w);
        for (auto& x : w) x *= s;
        t2.push_back(w);
      }
      ta.push_back(seq(t1));
      tb.push_back(seq(t2));
    }
    const auto sa = sentence_eln(a), sb = sentence_eln(b);
    const auto qa = token_eln(ta), qb = token_eln(tb);
    for (std::size_t c = 0; c < sa.size(); ++c) CHECK(sb[c] == doctest::Approx(s * s * sa[c]).epsilon(1e-12));
    for (std::size_t c = 0; c < qa.size(); ++c) CHECK(qb[c] == doctest::Approx(s * s * qa[c]).epsilon(1e-12));
    CHECK(l2_norm(sb, qb) == doctest::Approx(s * s * l2_norm(sa, qa)).epsilon(1e-12));
  }
}

// Duplicates damp the magnitude on average, not instance by instance: the
// duplicated set puts more weight on fewer pairs, which raises the spread of
// each entry, so single draws can go either way.
TEST_CASE("eln: padding by duplication damps the magnitude") {
  embed::TestEmbedder se(384), te(300);
  const auto dup = compute_eln({"a", "b", "c", "a", "b"}, se, te);
  const auto fresh = compute_eln({"a", "b", "c", "d", "b"}, se, te);
  CHECK(dup.magnitude <= fresh.magnitude);

  Rng rng(15);
  double dup_sum = 0.0, fresh_sum = 0.0;
  int below = 0, trials = 0;
  while (trials < 200) {
    const auto t = random_texts(rng, 4);
    if (std::set<std::string>(t.begin(), t.end()).size() < 4) continue;
    ++trials;
    const double m_dup = compute_eln({t[0], t[1], t[2], t[0], t[1]}, se, te).magnitude;
    const double m_fresh = compute_eln({t[0], t[1], t[2], t[3], t[1]}, se, te).magnitude;
    dup_sum += m_dup;
    fresh_sum += m_fresh;
    below += m_dup <= m_fresh;
  }
  CHECK(dup_sum < fresh_sum);
  CHECK(below > trials / 2);
}

TEST_CASE("eln: committed golden via the file provider") {
  const auto dir = testsupport::fixtures_dir();
  const auto golden = nlohmann::json::parse(testsupport::read_file(dir / "golden_eln.json"));
  auto p = embed::FileProvider::open(dir / "sentences.elne", dir / "tokens.elne");
  const auto v = compute_eln(golden["hypotheses"].get<std::vector<std::string>>(), *p, *p);
  const auto s = golden["sentence_part"].get<std::vector<double>>();
  const auto t = golden["token_part"].get<std::vector<double>>();
  REQUIRE(v.sentence_part.size() == s.size());
  REQUIRE(v.token_part.size() == t.size());
  for (std::size_t c = 0; c < s.size(); ++c) CHECK(std::abs(v.sentence_part[c] - s[c]) < 1e-12);
  for (std::size_t c = 0; c < t.size(); ++c) CHECK(std::abs(v.token_part[c] - t[c]) < 1e-12);
  CHECK(std::abs(v.magnitude - golden["magnitude"].get<double>()) < 1e-12);
  CHECK(v.l_max == golden["l_max"].get<std::size_t>());
}

TEST_CASE("eln: invalid inputs") {
  embed::TestEmbedder e(4);
  CHECK_THROWS_AS(compute_eln({"a", "b", "c"}, e, e), DataError);
  CHECK_THROWS_AS(compute_eln({"a"}, e, e, ElnOptions{1}), UsageError);
  CHECK(compute_eln({"a", "b"}, e, e, ElnOptions{2}).n_hypotheses == 2);
  CHECK_THROWS_AS(compute_eln(std::vector<std::string>(5, ""), e, e), DataError);
  CHECK_THROWS_AS(sentence_eln({{{1.0}, "", ""}}), DataError);
  CHECK_THROWS_AS(sentence_eln({{{1.0}, "", ""}, {{1.0, 2.0}, "", ""}}), DataError);
  CHECK_THROWS_AS(sentence_eln({{{1.0}, "", ""}, {{std::nan("")}, "", ""}}), DataError);
  CHECK_THROWS_AS(token_eln({seq({{1.0}}), seq({{1.0, 2.0}})}), DataError);
  CHECK_THROWS_AS(token_eln({seq({}), seq({})}), DataError);
}
