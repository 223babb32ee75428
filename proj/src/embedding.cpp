#include "biorag/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <future>

#include <nlohmann/json.hpp>
#include <unicode/uchar.h>

#include "biorag/error.hpp"
#include "http_client.hpp"
#include "utf8.hpp"

namespace biorag {

namespace {

template <typename T>
EmbeddingVector normalize_values(std::span<const T> values, std::vector<float>& out) {
  double sum = 0.0;
  for (const auto v : values) {
    if (!std::isfinite(static_cast<double>(v))) throw Error(ErrorCode::MalformedResponse, "non-finite vector entry");
    sum += static_cast<double>(v) * static_cast<double>(v);
  }
  if (sum == 0.0) throw Error(ErrorCode::EmptyInput, "cannot normalize an all-zero vector");
  const double inv = 1.0 / std::sqrt(sum);
  out.resize(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [inv](T v) { return static_cast<float>(static_cast<double>(v) * inv); });
  return EmbeddingVector::from_unit(std::move(out));
}

}  // namespace

EmbeddingVector EmbeddingVector::normalized(std::span<const double> values) {
  std::vector<float> out;
  return normalize_values(values, out);
}

EmbeddingVector EmbeddingVector::normalized(std::span<const float> values) {
  std::vector<float> out;
  return normalize_values(values, out);
}

EmbeddingVector EmbeddingVector::from_unit(std::vector<float> values) {
  EmbeddingVector v(std::move(values));
  for (const auto x : v.values_) {
    if (!std::isfinite(x)) throw Error(ErrorCode::MalformedResponse, "non-finite vector entry");
  }
  if (std::abs(v.norm() - 1.0) > 1e-5) {
    throw Error(ErrorCode::MalformedResponse, "vector is not unit-norm (norm " + std::to_string(v.norm()) + ")");
  }
  return v;
}

double EmbeddingVector::norm() const {
  double sum = 0.0;
  for (const auto x : values_) sum += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(sum);
}

ProviderKind parse_provider_kind(std::string_view name) {
  if (name == "deterministic") return ProviderKind::Deterministic;
  if (name == "remote") return ProviderKind::Remote;
  throw Error(ErrorCode::InvalidConfig, "unknown embedding provider '" + std::string(name) + "'");
}

std::string_view to_string(ProviderKind kind) {
  return kind == ProviderKind::Remote ? "remote" : "deterministic";
}

std::string EmbeddingProviderConfig::fingerprint() const {
  const std::string_view model = kind == ProviderKind::Deterministic ? kDeterministicModel : model_name;
  return std::string(to_string(kind)) + "|" + std::string(model) + "|" + std::to_string(dimension);
}

EmbeddingProviderConfig provider_from_fingerprint(std::string_view fingerprint) {
  const auto first = fingerprint.find('|');
  const auto last = fingerprint.rfind('|');
  if (first == std::string_view::npos || first == last) {
    throw Error(ErrorCode::InvalidConfig, "malformed embedder fingerprint '" + std::string(fingerprint) + "'");
  }
  EmbeddingProviderConfig cfg;
  cfg.kind = parse_provider_kind(fingerprint.substr(0, first));
  cfg.model_name = std::string(fingerprint.substr(first + 1, last - first - 1));
  try {
    cfg.dimension = std::stoul(std::string(fingerprint.substr(last + 1)));
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "malformed embedder fingerprint '" + std::string(fingerprint) + "'");
  }
  return cfg;
}

std::uint64_t feature_hash(std::string_view feature) {
  constexpr std::uint64_t kOffsetBasis = 0xcbf29ce484222325ULL;
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t h = kOffsetBasis ^ kDeterministicHashSeed;
  for (const char c : feature) {
    h ^= static_cast<unsigned char>(c);
    h *= kPrime;
  }
  return h;
}

std::vector<std::string> hash_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto c = static_cast<UChar32>(utf8::next(text, pos));
    if (u_isalnum(c)) {
      utf8::append(current, static_cast<char32_t>(u_tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

EmbeddingVector embed_deterministic(std::string_view text, std::size_t dimension) {
  if (dimension < 8) throw Error(ErrorCode::InvalidConfig, "deterministic embedder needs dimension >= 8");
  const auto tokens = hash_tokens(text);
  if (tokens.empty()) throw Error(ErrorCode::EmptyInput, "text has no alphanumeric tokens");
  std::vector<double> acc(dimension, 0.0);
  for (const auto& token : tokens) {
    acc[feature_hash("w:" + token) % dimension] += 1.0;
    std::vector<std::size_t> starts;  // byte offset of every code point
    for (std::size_t p = 0; p < token.size(); p += utf8::sequence_length(token, p)) starts.push_back(p);
    starts.push_back(token.size());
    for (std::size_t i = 0; i + 3 < starts.size(); ++i) {
      acc[feature_hash("g:" + token.substr(starts[i], starts[i + 3] - starts[i])) % dimension] += 1.0;
    }
  }
  return EmbeddingVector::normalized(std::span<const double>(acc));
}

std::vector<EmbeddingVector> remote_embed_request(std::span<const std::string> texts,
                                                  const EmbeddingProviderConfig& cfg) {
  using json = nlohmann::json;
  const auto endpoint = http::parse_endpoint(cfg.endpoint_url);
  const json request = {{"model", cfg.model_name}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  const auto response = http::post_json(endpoint, "/v1/embeddings", request.dump(),
                                        {cfg.max_attempts, cfg.retry_backoff_ms, cfg.timeout_ms},
                                        ErrorCode::ProviderUnreachable);
  if (response.status < 200 || response.status >= 300) {
    throw Error(ErrorCode::HttpError, "status " + std::to_string(response.status) + ": " + response.body);
  }

  json body;
  try {
    body = json::parse(response.body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedResponse, e.what());
  }
  const auto data = body.find("data");
  if (!body.is_object() || data == body.end() || !data->is_array()) {
    throw Error(ErrorCode::MalformedResponse, "response lacks a 'data' array");
  }
  if (data->size() != texts.size()) {
    throw Error(ErrorCode::MalformedResponse, "expected " + std::to_string(texts.size()) + " embeddings, got " +
                                                  std::to_string(data->size()));
  }

  std::vector<std::vector<double>> raw(texts.size());
  std::vector<bool> filled(texts.size(), false);
  for (std::size_t i = 0; i < data->size(); ++i) {
    const auto& item = (*data)[i];
    try {
      const auto index = item.contains("index") ? item.at("index").get<std::size_t>() : i;
      if (index >= texts.size() || filled[index]) throw Error(ErrorCode::MalformedResponse, "bad embedding index");
      raw[index] = item.at("embedding").get<std::vector<double>>();
      filled[index] = true;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedResponse, std::string("embedding entry ") + std::to_string(i) + ": " + e.what());
    }
  }

  std::vector<EmbeddingVector> out;
  out.reserve(raw.size());
  for (const auto& values : raw) {
    if (values.size() != cfg.dimension) {
      throw Error(ErrorCode::DimensionMismatch, "expected dimension " + std::to_string(cfg.dimension) + ", got " +
                                                    std::to_string(values.size()));
    }
    try {
      out.push_back(EmbeddingVector::normalized(std::span<const double>(values)));
    } catch (const Error& e) {
      throw Error(ErrorCode::MalformedResponse, e.detail());
    }
  }
  return out;
}

std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts, const EmbeddingProviderConfig& cfg) {
  if (texts.empty()) throw Error(ErrorCode::EmptyInput, "no texts to embed");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw Error(ErrorCode::EmptyInput, "text " + std::to_string(i) + " is empty");
  }

  std::vector<EmbeddingVector> out(texts.size());
  if (cfg.kind == ProviderKind::Deterministic) {
    for (std::size_t i = 0; i < texts.size(); ++i) out[i] = embed_deterministic(texts[i], cfg.dimension);
    return out;
  }

  const auto batch = std::max<std::size_t>(1, cfg.max_batch);
  const auto width = std::max<std::size_t>(1, cfg.max_concurrency);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s < texts.size(); s += batch) starts.push_back(s);
  for (std::size_t wave = 0; wave < starts.size(); wave += width) {
    std::vector<std::future<std::vector<EmbeddingVector>>> inflight;
    const auto wave_end = std::min(starts.size(), wave + width);
    for (auto b = wave; b < wave_end; ++b) {
      const auto sub = texts.subspan(starts[b], std::min(batch, texts.size() - starts[b]));
      inflight.push_back(std::async(std::launch::async, [sub, &cfg] { return remote_embed_request(sub, cfg); }));
    }
    for (auto b = wave; b < wave_end; ++b) {
      auto vectors = inflight[b - wave].get();
      std::move(vectors.begin(), vectors.end(), out.begin() + static_cast<std::ptrdiff_t>(starts[b]));
    }
  }
  return out;
}

EmbeddingVector embed_one(std::string_view text, const EmbeddingProviderConfig& cfg) {
  const std::string owned(text);
  return embed_batch(std::span<const std::string>(&owned, 1), cfg).front();
}

}  // namespace biorag
