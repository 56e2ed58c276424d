#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "khub/retrieval.hpp"
#include "support/generators.hpp"

using namespace khub;

namespace {

corpus corpus_of(const std::vector<std::string>& paragraphs) {
  std::string text;
  for (const auto& p : paragraphs) text += p + "\n\n";
  corpus c;
  if (!paragraphs.empty()) c.add(ingest_structured(text, source_format::plain_text));
  return c;
}

// Independent scan: cosine of freshly embedded paragraph texts, full sort.
std::vector<retrieval_hit> brute_force(const corpus& c, const embedder& emb, std::string_view query, std::size_t k) {
  auto q = emb.embed(query);
  std::vector<retrieval_hit> all;
  for (const auto* p : c.paragraphs()) all.push_back({p->para_id, cosine(emb.embed(p->text), q)});
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.para_id < b.para_id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace

TEST(Embed, EmptyIsZero) {
  hashing_embedder e;
  auto v = e.embed("");
  EXPECT_EQ(v.size(), 256u);
  EXPECT_TRUE(std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }));
  auto punct = e.embed(" ... ! ");
  EXPECT_TRUE(std::all_of(punct.begin(), punct.end(), [](double x) { return x == 0.0; }));
}

TEST(Embed, DeterministicAndSelfSimilar) {
  hashing_embedder e;
  EXPECT_EQ(e.embed("lithium cathode"), e.embed("lithium cathode"));
  EXPECT_NEAR(cosine(e.embed("lithium cathode"), e.embed("lithium cathode")), 1.0, 1e-12);
  EXPECT_EQ(e.embed("Lithium  CATHODE"), e.embed("lithium cathode"));
}

TEST(Embed, TwoTokensGiveThreeSignedUnitFeatures) {
  // "a b" -> features a, b, "a b"; with distinct buckets each has magnitude 1/sqrt(3)
  hashing_embedder e(1 << 16);
  auto v = e.embed("a b");
  std::vector<double> nz;
  for (double x : v)
    if (x != 0) nz.push_back(x);
  ASSERT_EQ(nz.size(), 3u);
  for (double x : nz) EXPECT_NEAR(std::abs(x), 1.0 / std::sqrt(3.0), 1e-12);
}

TEST(Index, CountsAndIdempotence) {
  hashing_embedder e;
  EXPECT_TRUE(index_paragraphs(corpus{}, e).empty());
  auto c = corpus_of({"one", "two", "three"});
  auto idx = index_paragraphs(c, e);
  EXPECT_EQ(idx.size(), 3u);
  EXPECT_EQ(index_paragraphs(c, e), idx);
  EXPECT_EQ(idx.embedder_id(), "hashing-tf-v1-d256");
}

TEST(Index, MergeMismatchIsError) {
  auto c = corpus_of({"one"});
  auto a = index_paragraphs(c, hashing_embedder(256));
  auto b = index_paragraphs(c, hashing_embedder(128));
  EXPECT_THROW(a.merge(b), index_error);
  auto other = corpus_of({"something else"});
  auto a2 = index_paragraphs(other, hashing_embedder(256));
  a.merge(a2);
  EXPECT_EQ(a.size(), 2u);
  EXPECT_THROW(a.put("x", embedding(3)), index_error);
}

TEST(TopK, HandOrdering) {
  hashing_embedder e(1 << 16);
  auto c = corpus_of({"sodium electrolyte", "lithium anode", "lithium cathode"});
  auto idx = index_paragraphs(c, e);
  auto hits = top_k(idx, e, "lithium cathode", 3);
  ASSERT_EQ(hits.size(), 3u);
  const auto& paras = c.documents()[0].paragraphs;
  EXPECT_EQ(hits[0].para_id, paras[2].para_id);
  EXPECT_NEAR(hits[0].score, 1.0, 1e-12);
  EXPECT_EQ(hits[1].para_id, paras[1].para_id);
  EXPECT_NEAR(std::abs(hits[1].score), 1.0 / 3.0, 1e-12);  // one shared feature out of three
  EXPECT_EQ(hits[2].para_id, paras[0].para_id);
  EXPECT_NEAR(hits[2].score, 0.0, 1e-12);
}

TEST(TopK, EdgeCases) {
  hashing_embedder e;
  auto c = corpus_of({"alpha", "beta"});
  auto idx = index_paragraphs(c, e);
  EXPECT_EQ(top_k(idx, e, "alpha", 10).size(), 2u);
  EXPECT_TRUE(top_k(vector_index(e.id(), e.dimension()), e, "alpha", 3).empty());
  EXPECT_THROW(top_k(idx, e, "alpha", 0), index_error);
  EXPECT_THROW(top_k(idx, hashing_embedder(64), "alpha", 1), index_error);
}

TEST(TopK, TiesBreakByParaId) {
  vector_index idx("x", 2);
  idx.put("b", {1, 0});
  idx.put("a", {1, 0});
  idx.put("c", {0, 1});
  auto hits = top_k(idx, embedding{1, 0}, 3);
  EXPECT_EQ(hits[0].para_id, "a");
  EXPECT_EQ(hits[1].para_id, "b");
  EXPECT_EQ(hits[2].para_id, "c");
}

TEST(TopK, MatchesExhaustiveScanProperty) {
  std::mt19937 rng(41);
  hashing_embedder e;
  std::vector<std::string> texts;
  for (int i = 0; i < 200; ++i) texts.push_back(fixtures::random_paragraph(rng, 2, 20));
  auto c = corpus_of(texts);
  auto idx = index_paragraphs(c, e);
  for (int q = 0; q < 30; ++q) {
    auto query = fixtures::random_paragraph(rng, 1, 6);
    std::size_t k = 1 + rng() % 10;
    auto got = top_k(idx, e, query, k);
    auto want = brute_force(c, e, query, k);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i].score, want[i].score, 1e-12);
      EXPECT_GE(got[i].score, -1.0);
      EXPECT_LE(got[i].score, 1.0);
    }
    auto longer = top_k(idx, e, query, k + 1);  // prefix monotonicity
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(longer[i], got[i]);
  }
}

TEST(IndexFile, RoundTripAndErrors) {
  hashing_embedder e(32);
  auto idx = index_paragraphs(corpus_of({"lithium cathode", "sodium", "x"}), e);
  auto text = serialize_index(idx);
  EXPECT_TRUE(starts_with(text, "khub-index 1 32 hashing-tf-v1-d32 3\n"));
  EXPECT_EQ(parse_index(text), idx);
  EXPECT_THROW(parse_index(text.substr(0, text.rfind('\n', text.size() - 2) + 1)), index_error);
  EXPECT_THROW(parse_index("khub-index 1 32 x 0 extra\n"), index_error);
  EXPECT_THROW(parse_index(""), index_error);
  auto path = std::filesystem::temp_directory_path() / "khub_index_test.txt";
  persist_index(idx, path);
  EXPECT_EQ(load_index(path), idx);
  std::filesystem::remove(path);
}
