#include "biorag/rag_engine.hpp"

#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>

#include <nlohmann/json.hpp>

#include "biorag/error.hpp"
#include "http_client.hpp"
#include "utf8.hpp"

namespace biorag {

GenerationMode parse_generation_mode(std::string_view name) {
  if (name == "rag") return GenerationMode::Rag;
  if (name == "vanilla") return GenerationMode::Vanilla;
  throw Error(ErrorCode::InvalidConfig, "unknown generation mode '" + std::string(name) + "'");
}

std::string_view to_string(GenerationMode mode) { return mode == GenerationMode::Rag ? "rag" : "vanilla"; }

namespace {

bool is_blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

std::string source_block(const RetrievedChunk& rc) {
  return "[Source " + std::to_string(rc.hit.rank) + ": " + rc.chunk.doc_id + "]\n" + rc.chunk.text;
}

}  // namespace

PromptBundle build_prompt(std::string_view query, std::span<const RetrievedChunk> hits, const GenerationConfig& cfg) {
  if (is_blank(query)) throw Error(ErrorCode::EmptyQuery, "query is empty");
  PromptBundle p;
  p.system_instruction = std::string(kSystemInstruction);
  p.query = std::string(query);

  if (cfg.mode == GenerationMode::Rag) {
    std::size_t used = 0;
    for (const auto& rc : hits) {
      const auto block = source_block(rc);
      const auto cost = utf8::count(block) + (p.context_block.empty() ? 0 : 2);
      if (used + cost > cfg.context_char_budget) break;
      if (!p.context_block.empty()) p.context_block += "\n\n";
      p.context_block += block;
      used += cost;
      p.included_hits.push_back(rc.hit);
    }
    p.user_message = std::string(kContextInstruction) + "\n\nContext:\n" + p.context_block + "\n\nQuestion: " +
                     p.query + "\nAnswer:";
  } else {
    p.user_message = std::string(kNoContextInstruction) + "\n\nQuestion: " + p.query + "\nAnswer:";
  }
  p.rendered = p.system_instruction + "\n" + p.user_message;
  return p;
}

namespace {

// Caps in-flight requests per generation endpoint.
class EndpointGate {
 public:
  explicit EndpointGate(std::size_t capacity) : capacity_(capacity) {}

  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return in_flight_ < capacity_; });
    ++in_flight_;
  }
  void release() {
    {
      std::lock_guard lock(mutex_);
      --in_flight_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t capacity_;
  std::size_t in_flight_ = 0;
};

constexpr std::size_t kMaxConcurrentGenerations = 4;

EndpointGate& gate_for(const std::string& endpoint) {
  static std::mutex registry_mutex;
  static std::map<std::string, std::unique_ptr<EndpointGate>> registry;
  std::lock_guard lock(registry_mutex);
  auto& slot = registry[endpoint];
  if (!slot) slot = std::make_unique<EndpointGate>(kMaxConcurrentGenerations);
  return *slot;
}

struct GateGuard {
  explicit GateGuard(EndpointGate& g) : gate(g) { gate.acquire(); }
  ~GateGuard() { gate.release(); }
  GateGuard(const GateGuard&) = delete;
  GateGuard& operator=(const GateGuard&) = delete;
  EndpointGate& gate;
};

std::int64_t elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

Completion generate(const PromptBundle& prompt, const GenerationConfig& cfg) {
  using json = nlohmann::json;
  const auto started = std::chrono::steady_clock::now();
  const auto endpoint = http::parse_endpoint(cfg.endpoint_url);
  const json request = {
      {"model", cfg.model_name},
      {"messages",
       json::array({{{"role", "system"}, {"content", prompt.system_instruction}},
                    {{"role", "user"}, {"content", prompt.user_message}}})},
      {"temperature", cfg.temperature},
      {"max_tokens", cfg.max_new_tokens},
  };

  http::Response response;
  {
    GateGuard guard(gate_for(endpoint.origin));
    response = http::post_json(endpoint, "/v1/chat/completions",
                               request.dump(-1, ' ', false, json::error_handler_t::replace),
                               {cfg.max_attempts, cfg.retry_backoff_ms, cfg.timeout_ms},
                               ErrorCode::BackendUnreachable);
  }
  if (response.status < 200 || response.status >= 300) {
    throw Error(ErrorCode::BackendError, "status " + std::to_string(response.status) + ": " + response.body);
  }

  std::string content;
  try {
    const auto body = json::parse(response.body);
    content = body.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendError, std::string("malformed chat response: ") + e.what());
  }
  if (is_blank(content)) throw Error(ErrorCode::EmptyCompletion, "backend returned no text");
  return {std::move(content), response.attempts, elapsed_ms(started)};
}

std::vector<RetrievedChunk> resolve_hits(const VectorIndex& index, const std::vector<SearchHit>& hits) {
  std::vector<RetrievedChunk> out;
  out.reserve(hits.size());
  for (const auto& hit : hits) {
    const auto* chunk = index.find_chunk(hit.chunk_id);
    if (!chunk) throw Error(ErrorCode::CorruptFile, "hit '" + hit.chunk_id + "' has no stored chunk");
    out.push_back({hit, *chunk});
  }
  return out;
}

std::vector<SearchHit> retrieve(std::string_view query, const VectorIndex& index,
                                const EmbeddingProviderConfig& provider, const RetrievalConfig& rcfg) {
  if (is_blank(query)) throw Error(ErrorCode::EmptyQuery, "query is empty", "embed");
  EmbeddingVector query_vec;
  try {
    if (!index.embedder_fingerprint().empty() && index.embedder_fingerprint() != provider.fingerprint()) {
      throw Error(ErrorCode::FingerprintMismatch,
                  "index built with '" + index.embedder_fingerprint() + "', provider is '" + provider.fingerprint() + "'");
    }
    query_vec = embed_one(query, provider);
  } catch (const Error& e) {
    throw e.with_stage("embed");
  }
  try {
    return index.search(query_vec, rcfg);
  } catch (const Error& e) {
    throw e.with_stage("search");
  }
}

Answer ask(std::string_view query, const VectorIndex& index, const EmbeddingProviderConfig& provider,
           const RetrievalConfig& rcfg, const GenerationConfig& gcfg) {
  const auto started = std::chrono::steady_clock::now();
  if (is_blank(query)) throw Error(ErrorCode::EmptyQuery, "query is empty", "prompt");
  Answer answer;
  answer.model_name = gcfg.model_name;

  std::vector<RetrievedChunk> retrieved;
  if (gcfg.mode == GenerationMode::Rag) {
    answer.hits = retrieve(query, index, provider, rcfg);
    retrieved = resolve_hits(index, answer.hits);
  }
  try {
    answer.prompt = build_prompt(query, retrieved, gcfg);
  } catch (const Error& e) {
    throw e.with_stage("prompt");
  }
  try {
    answer.text = generate(answer.prompt, gcfg).text;
  } catch (const Error& e) {
    throw e.with_stage("generate");
  }
  answer.latency_ms = elapsed_ms(started);
  return answer;
}

}  // namespace biorag
