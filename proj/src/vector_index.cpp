#include "biorag/vector_index.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "biorag/error.hpp"

namespace biorag {

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return std::clamp(sum, -1.0, 1.0);
}

}  // namespace

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dimension() != b.dimension()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::to_string(a.dimension()) + " vs " + std::to_string(b.dimension()));
  }
  return dot(a.values(), b.values());
}

VectorIndex::VectorIndex(std::size_t dimension, std::string embedder_fingerprint, std::string corpus_name)
    : dimension_(dimension), fingerprint_(std::move(embedder_fingerprint)), corpus_name_(std::move(corpus_name)) {
  if (dimension_ == 0) throw Error(ErrorCode::InvalidConfig, "index dimension must be positive");
}

void VectorIndex::add(Chunk chunk, const EmbeddingVector& vector) {
  if (vector.dimension() != dimension_) {
    throw Error(ErrorCode::DimensionMismatch, "chunk '" + chunk.chunk_id + "' has dimension " +
                                                  std::to_string(vector.dimension()) + ", index expects " +
                                                  std::to_string(dimension_));
  }
  if (positions_.contains(chunk.chunk_id)) throw Error(ErrorCode::DuplicateChunkId, chunk.chunk_id);
  positions_.emplace(chunk.chunk_id, chunks_.size());
  const auto values = vector.values();
  rows_.insert(rows_.end(), values.begin(), values.end());
  chunks_.push_back(std::move(chunk));
}

std::span<const float> VectorIndex::vector(std::size_t i) const {
  if (i >= chunks_.size()) throw std::out_of_range("vector index");
  return std::span<const float>(rows_).subspan(i * dimension_, dimension_);
}

const Chunk* VectorIndex::find_chunk(std::string_view chunk_id) const {
  const auto it = positions_.find(std::string(chunk_id));
  return it == positions_.end() ? nullptr : &chunks_[it->second];
}

std::vector<SearchHit> VectorIndex::search(const EmbeddingVector& query, const RetrievalConfig& cfg) const {
  if (cfg.top_k == 0) throw Error(ErrorCode::InvalidConfig, "top_k must be at least 1");
  if (empty()) throw Error(ErrorCode::EmptyIndex, "index has no entries");
  if (query.dimension() != dimension_) {
    throw Error(ErrorCode::DimensionMismatch, "query has dimension " + std::to_string(query.dimension()) +
                                                  ", index expects " + std::to_string(dimension_));
  }

  const auto n = size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = dot(query.values(), vector(i));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto k = std::min(cfg.top_k, n);
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return chunks_[a].chunk_id < chunks_[b].chunk_id;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);

  std::vector<SearchHit> hits;
  hits.reserve(k);
  for (std::size_t r = 0; r < k; ++r) {
    const auto i = order[r];
    if (scores[i] < cfg.min_score) break;
    hits.push_back({chunks_[i].chunk_id, scores[i], hits.size() + 1});
  }
  return hits;
}

bool VectorIndex::operator==(const VectorIndex& other) const {
  return dimension_ == other.dimension_ && fingerprint_ == other.fingerprint_ &&
         corpus_name_ == other.corpus_name_ && chunks_ == other.chunks_ && rows_.size() == other.rows_.size() &&
         std::memcmp(rows_.data(), other.rows_.data(), rows_.size() * sizeof(float)) == 0;
}

VectorIndex build_index(std::span<const Chunk> chunks, const EmbeddingProviderConfig& provider,
                        std::string corpus_name) {
  if (chunks.empty()) throw Error(ErrorCode::EmptyInput, "no chunks to index");
  std::unordered_set<std::string_view> seen;
  std::vector<std::string> texts;
  texts.reserve(chunks.size());
  for (const auto& c : chunks) {
    if (!seen.insert(c.chunk_id).second) throw Error(ErrorCode::DuplicateChunkId, c.chunk_id);
    texts.push_back(c.text);
  }
  const auto vectors = embed_batch(texts, provider);
  VectorIndex index(provider.dimension, provider.fingerprint(), std::move(corpus_name));
  for (std::size_t i = 0; i < chunks.size(); ++i) index.add(chunks[i], vectors[i]);
  return index;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_ += static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_ += static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { out_ += s; }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  std::size_t size() const { return out_.size(); }
  std::string& buffer() { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data, std::size_t pos = 0) : data_(data), pos_(pos) {}

  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view str() { return take(u32()); }
  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw Error(ErrorCode::CorruptFile, "unexpected end of index data");
    const auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_;
};

std::uint32_t crc_excluding(std::string_view bytes, std::size_t hole) {
  auto crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  crc = crc32(crc, p, static_cast<uInt>(hole));
  crc = crc32(crc, p + hole + 4, static_cast<uInt>(bytes.size() - hole - 4));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string serialize_index(const VectorIndex& index) {
  ByteWriter w;
  w.raw(kIndexMagic);
  w.u32(kIndexFormatVersion);
  w.u32(static_cast<std::uint32_t>(index.dimension()));
  w.u64(index.size());
  w.str(index.embedder_fingerprint());
  w.str(index.corpus_name());
  const auto checksum_at = w.size();
  w.u32(0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    w.str(index.chunk_id(i));
    for (const auto v : index.vector(i)) w.f32(v);
    w.str(chunk_to_json(index.chunk(i)).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
  }
  auto& bytes = w.buffer();
  const auto crc = crc_excluding(bytes, checksum_at);
  for (std::size_t i = 0; i < 4; ++i) bytes[checksum_at + i] = static_cast<char>((crc >> (8 * i)) & 0xFF);
  return std::move(bytes);
}

VectorIndex deserialize_index(std::string_view bytes) {
  if (bytes.size() < kIndexMagic.size() || bytes.substr(0, kIndexMagic.size()) != kIndexMagic) {
    throw Error(ErrorCode::CorruptFile, "missing RAGIDX magic");
  }
  ByteReader r(bytes, kIndexMagic.size());
  const auto version = r.u32();
  if (version != kIndexFormatVersion) {
    throw Error(ErrorCode::FormatVersionMismatch, "file version " + std::to_string(version) + ", supported " +
                                                      std::to_string(kIndexFormatVersion));
  }
  const auto dimension = r.u32();
  const auto count = r.u64();
  const std::string fingerprint(r.str());
  const std::string corpus_name(r.str());
  const auto checksum_at = r.pos();
  const auto stored_crc = r.u32();
  if (crc_excluding(bytes, checksum_at) != stored_crc) throw Error(ErrorCode::CorruptFile, "checksum mismatch");
  if (dimension == 0) throw Error(ErrorCode::CorruptFile, "zero dimension");
  // Each entry needs at least two length prefixes and its vector.
  const auto min_entry = 8 + 4 * static_cast<std::uint64_t>(dimension);
  if (count > r.remaining() / min_entry) throw Error(ErrorCode::CorruptFile, "entry count exceeds file size");

  VectorIndex index(dimension, fingerprint, corpus_name);
  std::vector<float> values(dimension);
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::string chunk_id(r.str());
    for (auto& v : values) v = r.f32();
    const auto chunk_json = r.str();
    try {
      auto chunk = chunk_from_json(nlohmann::json::parse(chunk_json));
      if (chunk.chunk_id != chunk_id) throw Error(ErrorCode::CorruptFile, "entry id does not match its chunk");
      index.add(std::move(chunk), EmbeddingVector::from_unit(values));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::CorruptFile, "entry " + std::to_string(e) + ": " + ex.what());
    } catch (const Error& ex) {
      throw Error(ErrorCode::CorruptFile, "entry " + std::to_string(e) + ": " + ex.what());
    }
  }
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptFile, "trailing bytes after last entry");
  return index;
}

void save_index(const VectorIndex& index, const std::filesystem::path& path) {
  const auto bytes = serialize_index(index);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

VectorIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed for " + path.string());
  return deserialize_index(buf.str());
}

}  // namespace biorag
