#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "biorag/error.hpp"
#include "biorag/vector_index.hpp"
#include "test_support.hpp"

namespace biorag {
namespace {

using testing::TempDir;

template <typename F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected biorag::Error";
  return ErrorCode::IoFailure;
}

EmbeddingVector random_unit(std::mt19937& rng, std::size_t d) {
  std::normal_distribution<double> g;
  std::vector<double> v(d);
  for (auto& x : v) x = g(rng);
  return EmbeddingVector::normalized(v);
}

EmbeddingVector basis(std::size_t d, std::size_t i) {
  std::vector<double> v(d, 0.0);
  v[i] = 1.0;
  return EmbeddingVector::normalized(v);
}

Chunk make_chunk(const std::string& id, const std::string& text = "t") {
  Chunk c;
  c.chunk_id = id;
  c.doc_id = id.substr(0, id.find(':'));
  c.text = text;
  c.char_end = text.size();
  return c;
}

VectorIndex random_index(std::mt19937& rng, std::size_t n, std::size_t d) {
  VectorIndex ix(d, "deterministic|hash-trigram-v1|" + std::to_string(d), "rand");
  for (std::size_t i = 0; i < n; ++i) ix.add(make_chunk("doc" + std::to_string(i % 7) + "::" + std::to_string(i)),
                                             random_unit(rng, d));
  return ix;
}

// Full-sort reference ranking.
std::vector<SearchHit> oracle_search(const VectorIndex& ix, const EmbeddingVector& q, std::size_t k) {
  std::vector<std::pair<double, std::string>> all;
  for (std::size_t i = 0; i < ix.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < ix.dimension(); ++j) s += double(q.values()[j]) * double(ix.vector(i)[j]);
    all.emplace_back(std::clamp(s, -1.0, 1.0), ix.chunk_id(i));
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<SearchHit> hits;
  for (std::size_t r = 0; r < std::min(k, all.size()); ++r) hits.push_back({all[r].second, all[r].first, r + 1});
  return hits;
}

TEST(Cosine, IdentityOrthogonalitySymmetry) {
  std::mt19937 rng(3);
  const auto v = random_unit(rng, 16);
  EXPECT_NEAR(cosine(v, v), 1.0, 1e-6);
  EXPECT_EQ(cosine(basis(8, 0), basis(8, 1)), 0.0);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_unit(rng, 32);
    const auto b = random_unit(rng, 32);
    EXPECT_EQ(cosine(a, b), cosine(b, a));
    EXPECT_LE(std::abs(cosine(a, b)), 1.0);
  }
  EXPECT_EQ(error_code_of([&] { cosine(basis(8, 0), basis(9, 0)); }), ErrorCode::DimensionMismatch);
}

TEST(BuildIndex, OneEntryPerChunkInOrder) {
  const std::vector<Chunk> chunks = {make_chunk("d::0", "breast cancer"), make_chunk("d::1", "insulin"),
                                     make_chunk("d::2", "asthma inhaler")};
  EmbeddingProviderConfig provider;
  const auto ix = build_index(chunks, provider, "c");
  ASSERT_EQ(ix.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ix.chunk(i), chunks[i]);
    const auto expected = embed_deterministic(chunks[i].text, provider.dimension);
    EXPECT_TRUE(std::equal(expected.values().begin(), expected.values().end(), ix.vector(i).begin()));
  }
  EXPECT_EQ(ix.embedder_fingerprint(), provider.fingerprint());
  EXPECT_EQ(ix.corpus_name(), "c");
}

TEST(BuildIndex, DuplicateChunkIdRejected) {
  const std::vector<Chunk> chunks = {make_chunk("d::0", "a b"), make_chunk("d::0", "c d")};
  EXPECT_EQ(error_code_of([&] { build_index(chunks, {}); }), ErrorCode::DuplicateChunkId);
}

TEST(BuildIndex, RebuildIsByteIdentical) {
  TempDir dir;
  const std::vector<Chunk> chunks = {make_chunk("d::0", "tamoxifen"), make_chunk("d::1", "letrozole therapy")};
  save_index(build_index(chunks, {}), dir / "a.ragidx");
  save_index(build_index(chunks, {}), dir / "b.ragidx");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "a.ragidx"), slurp(dir / "b.ragidx"));
}

TEST(Search, SingletonAlwaysRankOne) {
  std::mt19937 rng(5);
  VectorIndex ix(8, "fp");
  ix.add(make_chunk("only::0"), random_unit(rng, 8));
  for (int i = 0; i < 10; ++i) {
    const auto hits = ix.search(random_unit(rng, 8), {5, -1.0});
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0].chunk_id, "only::0");
    EXPECT_EQ(hits[0].rank, 1u);
  }
}

TEST(Search, TiesBreakByAscendingId) {
  VectorIndex ix(4, "fp");
  ix.add(make_chunk("b::0"), basis(4, 0));
  ix.add(make_chunk("a::0"), basis(4, 0));
  ix.add(make_chunk("c::0"), basis(4, 1));
  const auto hits = ix.search(basis(4, 0), {3, -1.0});
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].chunk_id, "a::0");
  EXPECT_EQ(hits[1].chunk_id, "b::0");
  EXPECT_EQ(hits[2].chunk_id, "c::0");
  EXPECT_EQ(hits[2].rank, 3u);
}

TEST(Search, MinScoreFiltersAndTopKClamps) {
  VectorIndex ix(4, "fp");
  ix.add(make_chunk("x::0"), basis(4, 0));
  ix.add(make_chunk("x::1"), basis(4, 1));
  EXPECT_EQ(ix.search(basis(4, 0), {10, -1.0}).size(), 2u);
  EXPECT_EQ(ix.search(basis(4, 0), {10, 0.5}).size(), 1u);
}

TEST(Search, Errors) {
  VectorIndex empty(4, "fp");
  EXPECT_EQ(error_code_of([&] { empty.search(basis(4, 0), {}); }), ErrorCode::EmptyIndex);
  VectorIndex ix(4, "fp");
  ix.add(make_chunk("x::0"), basis(4, 0));
  EXPECT_EQ(error_code_of([&] { ix.search(basis(5, 0), {}); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(error_code_of([&] { ix.search(basis(4, 0), {0, -1.0}); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(error_code_of([&] { ix.add(make_chunk("x::0"), basis(4, 1)); }), ErrorCode::DuplicateChunkId);
  EXPECT_EQ(error_code_of([&] { ix.add(make_chunk("x::1"), basis(3, 1)); }), ErrorCode::DimensionMismatch);
}

TEST(Search, MatchesFullSortOracle) {
  std::mt19937 rng(11);
  const auto ix = random_index(rng, 1000, 64);
  for (int q = 0; q < 50; ++q) {
    const auto query = random_unit(rng, 64);
    for (std::size_t k : {1u, 5u, 17u}) {
      const auto hits = ix.search(query, {k, -1.0});
      ASSERT_EQ(hits, oracle_search(ix, query, k));
      for (std::size_t r = 1; r < hits.size(); ++r) ASSERT_GE(hits[r - 1].score, hits[r].score);
    }
  }
}

TEST(Search, PositiveScalingOfQueryKeepsHits) {
  std::mt19937 rng(17);
  const auto ix = random_index(rng, 200, 32);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  std::normal_distribution<double> g;
  for (int q = 0; q < 30; ++q) {
    std::vector<double> raw(32);
    for (auto& x : raw) x = g(rng);
    auto scaled = raw;
    const double s = scale(rng);
    for (auto& x : scaled) x *= s;
    EXPECT_EQ(ix.search(EmbeddingVector::normalized(raw), {5, -1.0}),
              ix.search(EmbeddingVector::normalized(scaled), {5, -1.0}));
  }
}

TEST(Persistence, RoundTripIsBitExact) {
  TempDir dir;
  std::mt19937 rng(23);
  for (int t = 0; t < 10; ++t) {
    const auto ix = random_index(rng, 1 + t * 3, 8 + t);
    save_index(ix, dir / "x.ragidx");
    const auto back = load_index(dir / "x.ragidx");
    EXPECT_EQ(back, ix);
    EXPECT_EQ(serialize_index(back), serialize_index(ix));
  }
}

TEST(Persistence, HeaderLayout) {
  VectorIndex ix(4, "fp", "name");
  ix.add(make_chunk("a::0"), basis(4, 2));
  const auto bytes = serialize_index(ix);
  EXPECT_EQ(bytes.substr(0, 6), "RAGIDX");
  EXPECT_EQ(bytes.substr(6, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(10, 4), std::string("\x04\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(14, 8), std::string("\x01\x00\x00\x00\x00\x00\x00\x00", 8));
  EXPECT_EQ(bytes.substr(22, 6), std::string("\x02\x00\x00\x00" "fp", 6));
}

TEST(Persistence, TruncatedFileIsCorrupt) {
  std::mt19937 rng(29);
  const auto bytes = serialize_index(random_index(rng, 5, 8));
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{30}, std::size_t{3}}) {
    EXPECT_EQ(error_code_of([&] { deserialize_index(std::string_view(bytes).substr(0, cut)); }),
              ErrorCode::CorruptFile)
        << cut;
  }
}

TEST(Persistence, Version99IsMismatch) {
  std::mt19937 rng(31);
  auto bytes = serialize_index(random_index(rng, 2, 8));
  bytes[6] = 99;
  EXPECT_EQ(error_code_of([&] { deserialize_index(bytes); }), ErrorCode::FormatVersionMismatch);
}

TEST(Persistence, FlippedByteIsCorrupt) {
  std::mt19937 rng(37);
  const auto bytes = serialize_index(random_index(rng, 3, 8));
  for (std::size_t pos = 10; pos < bytes.size(); pos += 7) {
    auto mutated = bytes;
    mutated[pos] = static_cast<char>(mutated[pos] ^ 0x20);
    EXPECT_EQ(error_code_of([&] { deserialize_index(mutated); }), ErrorCode::CorruptFile) << pos;
  }
}

TEST(Persistence, MissingFileIsIoFailure) {
  EXPECT_EQ(error_code_of([] { load_index("/nonexistent/x.ragidx"); }), ErrorCode::IoFailure);
}

}  // namespace
}  // namespace biorag
