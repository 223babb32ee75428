#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biorag/chunking.hpp"
#include "biorag/embedding.hpp"

namespace biorag {

struct SearchHit {
  std::string chunk_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based

  bool operator==(const SearchHit&) const = default;
};

struct RetrievalConfig {
  std::size_t top_k = 5;
  double min_score = -1.0;
};

// Dot product of two unit vectors, clamped to [-1, 1]. Throws
// Error(DimensionMismatch).
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

// Exact flat index. Rows are stored contiguously in insertion order together
// with the chunks they embed.
class VectorIndex {
 public:
  VectorIndex(std::size_t dimension, std::string embedder_fingerprint, std::string corpus_name = {});

  // Throws Error(DuplicateChunkId) or Error(DimensionMismatch).
  void add(Chunk chunk, const EmbeddingVector& vector);

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return chunks_.size(); }
  bool empty() const noexcept { return chunks_.empty(); }
  const std::string& embedder_fingerprint() const noexcept { return fingerprint_; }
  const std::string& corpus_name() const noexcept { return corpus_name_; }

  const Chunk& chunk(std::size_t i) const { return chunks_.at(i); }
  const std::string& chunk_id(std::size_t i) const { return chunks_.at(i).chunk_id; }
  std::span<const float> vector(std::size_t i) const;
  const Chunk* find_chunk(std::string_view chunk_id) const;

  // Full scan; hits ordered by descending score, ties by ascending chunk_id.
  // Throws Error(EmptyIndex), Error(DimensionMismatch), Error(InvalidConfig).
  std::vector<SearchHit> search(const EmbeddingVector& query, const RetrievalConfig& cfg) const;

  // Bitwise comparison of vectors; field-wise for everything else.
  bool operator==(const VectorIndex& other) const;

 private:
  std::size_t dimension_;
  std::string fingerprint_;
  std::string corpus_name_;
  std::vector<float> rows_;
  std::vector<Chunk> chunks_;
  std::unordered_map<std::string, std::size_t> positions_;
};

// Embeds chunk texts in order. Throws Error(EmptyInput) for no chunks and
// Error(DuplicateChunkId) before any embedding work is done.
VectorIndex build_index(std::span<const Chunk> chunks, const EmbeddingProviderConfig& provider,
                        std::string corpus_name = {});

inline constexpr std::string_view kIndexMagic = "RAGIDX";
inline constexpr std::uint32_t kIndexFormatVersion = 1;

// Index file layout, all integers little-endian:
//   "RAGIDX" | u32 version | u32 dimension | u64 entry count
//   | u32 len + embedder fingerprint | u32 len + corpus name | u32 CRC-32
//   then per entry: u32 len + chunk_id | dimension x f32 | u32 len + chunk JSON
// The CRC covers every byte of the file except the CRC field itself.
std::string serialize_index(const VectorIndex& index);

// Throws Error(FormatVersionMismatch) or Error(CorruptFile).
VectorIndex deserialize_index(std::string_view bytes);

void save_index(const VectorIndex& index, const std::filesystem::path& path);
VectorIndex load_index(const std::filesystem::path& path);

}  // namespace biorag
