#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace biorag {

// Unit-norm dense vector of finite float32 values.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  // L2-normalizes `values`. Throws Error(EmptyInput) for an all-zero vector
  // and Error(MalformedResponse) for non-finite entries.
  static EmbeddingVector normalized(std::span<const double> values);
  static EmbeddingVector normalized(std::span<const float> values);

  // Adopts values that are already unit-norm (within 1e-5); used when loading
  // persisted vectors so the stored bits are kept exactly.
  static EmbeddingVector from_unit(std::vector<float> values);

  std::size_t dimension() const noexcept { return values_.size(); }
  std::span<const float> values() const noexcept { return values_; }
  double norm() const;

  bool operator==(const EmbeddingVector&) const = default;

 private:
  explicit EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {}
  std::vector<float> values_;
};

enum class ProviderKind { Remote, Deterministic };

ProviderKind parse_provider_kind(std::string_view name);
std::string_view to_string(ProviderKind kind);

inline constexpr std::string_view kDefaultEmbeddingModel = "sentence-transformers/multi-qa-MiniLM-L6-cos-v1";
inline constexpr std::string_view kDeterministicModel = "hash-trigram-v1";
inline constexpr std::size_t kDefaultDimension = 384;

struct EmbeddingProviderConfig {
  ProviderKind kind = ProviderKind::Deterministic;
  std::string endpoint_url;
  std::string model_name = std::string(kDefaultEmbeddingModel);
  std::size_t dimension = kDefaultDimension;
  int timeout_ms = 30000;
  std::size_t max_batch = 64;
  std::size_t max_concurrency = 4;
  int max_attempts = 3;
  int retry_backoff_ms = 200;

  // "<kind>|<model>|<dimension>"; the deterministic provider reports its
  // hashing scheme as the model.
  std::string fingerprint() const;
};

// Rebuilds a provider config from an index fingerprint. Remote providers get
// no endpoint; callers must supply one.
EmbeddingProviderConfig provider_from_fingerprint(std::string_view fingerprint);

// Seed mixed into every feature hash of the deterministic embedder.
inline constexpr std::uint64_t kDeterministicHashSeed = 0x9E3779B97F4A7C15ULL;

// 64-bit FNV-1a starting from (offset basis XOR kDeterministicHashSeed).
std::uint64_t feature_hash(std::string_view feature);

// Offline embedder: lowercased alphanumeric tokens and their character
// trigrams are hashed into `dimension` buckets with unit weight, then the
// accumulator is L2-normalized. Throws Error(EmptyInput) when the text has no
// tokens, Error(InvalidConfig) when dimension < 8.
EmbeddingVector embed_deterministic(std::string_view text, std::size_t dimension);

// The tokens the deterministic embedder sees.
std::vector<std::string> hash_tokens(std::string_view text);

// One POST of `texts` to <endpoint>/v1/embeddings with bounded retries.
std::vector<EmbeddingVector> remote_embed_request(std::span<const std::string> texts,
                                                  const EmbeddingProviderConfig& cfg);

// Order-preserving embedding of a batch; splits into max_batch requests, up to
// max_concurrency in flight for remote providers.
std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts, const EmbeddingProviderConfig& cfg);

EmbeddingVector embed_one(std::string_view text, const EmbeddingProviderConfig& cfg);

}  // namespace biorag
