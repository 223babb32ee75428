#include "biorag/service.hpp"

#include <algorithm>
#include <cstdlib>

#include <httplib.h>
#include <toml.hpp>

#include "biorag/chunking.hpp"
#include "biorag/config.hpp"
#include "biorag/corpus.hpp"
#include "biorag/error.hpp"

namespace biorag {

using json = nlohmann::json;

std::pair<std::string, int> parse_listen_addr(std::string_view addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw Error(ErrorCode::InvalidConfig, "listen_addr must be host:port, got '" + std::string(addr) + "'");
  }
  int port = -1;
  try {
    std::size_t used = 0;
    const std::string digits(addr.substr(colon + 1));
    port = std::stoi(digits, &used);
    if (used != digits.size()) port = -1;
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidConfig, "bad port in listen_addr '" + std::string(addr) + "'");
  return {std::string(addr.substr(0, colon)), port};
}

namespace {

const char* env(const char* name) {
  const char* v = std::getenv(name);
  return (v && *v) ? v : nullptr;
}

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json j = json::object();
    for (const auto& [key, value] : *t) j[std::string(key.str())] = toml_to_json(value);
    return j;
  }
  if (const auto* a = node.as_array()) {
    json j = json::array();
    for (const auto& value : *a) j.push_back(toml_to_json(value));
    return j;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) return f->get();
  if (const auto* b = node.as_boolean()) return b->get();
  throw Error(ErrorCode::InvalidConfig, "unsupported TOML value type");
}

}  // namespace

ServiceConfig load_service_config(const std::filesystem::path& path) {
  json root;
  try {
    root = toml_to_json(toml::parse_file(path.string()));
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << path.string() << ": " << e.description() << " (" << e.source().begin << ")";
    throw Error(ErrorCode::InvalidConfig, msg.str());
  }

  if (const char* v = env("BIORAG_LISTEN_ADDR")) root["listen_addr"] = v;
  if (const char* v = env("BIORAG_EMBEDDING_ENDPOINT")) root["embedding"]["endpoint_url"] = v;
  if (const char* v = env("BIORAG_GENERATION_ENDPOINT")) root["generation"]["endpoint_url"] = v;

  ServiceConfig cfg;
  try {
    const auto [host, port] = parse_listen_addr(root.value("listen_addr", std::string("127.0.0.1:8080")));
    cfg.host = host;
    cfg.port = port;
    const auto index_path = root.value("index_path", std::string());
    if (index_path.empty()) throw Error(ErrorCode::InvalidConfig, "index_path is required");
    cfg.index_path = index_path;
    if (cfg.index_path.is_relative()) cfg.index_path = path.parent_path() / cfg.index_path;
    cfg.cors_allowed_origins = root.value("cors_allowed_origins", std::vector<std::string>{});
    cfg.provider = provider_config_from_json(root.value("embedding", json::object()));
    cfg.retrieval = retrieval_config_from_json(root.value("retrieval", json::object()));
    cfg.generation = generation_config_from_json(root.value("generation", json::object()));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  if (cfg.generation.endpoint_url.empty()) {
    throw Error(ErrorCode::InvalidConfig, "generation.endpoint_url is required");
  }
  return cfg;
}

void apply_env_overrides(ServiceConfig& cfg) {
  if (const char* v = env("BIORAG_LISTEN_ADDR")) std::tie(cfg.host, cfg.port) = parse_listen_addr(v);
  if (const char* v = env("BIORAG_EMBEDDING_ENDPOINT")) cfg.provider.endpoint_url = v;
  if (const char* v = env("BIORAG_GENERATION_ENDPOINT")) cfg.generation.endpoint_url = v;
}

// ---------------------------------------------------------------------------

struct QaService::Http {
  httplib::Server server;
};

QaService::QaService(ServiceConfig cfg) : cfg_(std::move(cfg)), http_(std::make_unique<Http>()) {}

QaService::~QaService() { stop(); }

void QaService::load_index() {
  auto loaded = std::make_shared<const VectorIndex>(biorag::load_index(cfg_.index_path));
  if (loaded->embedder_fingerprint() != cfg_.provider.fingerprint()) {
    throw Error(ErrorCode::FingerprintMismatch, "index " + cfg_.index_path.string() + " was built with '" +
                                                    loaded->embedder_fingerprint() + "', service embeds with '" +
                                                    cfg_.provider.fingerprint() + "'");
  }
  set_index(std::move(loaded));
}

void QaService::set_index(std::shared_ptr<const VectorIndex> index) {
  std::lock_guard lock(index_mutex_);
  index_ = std::move(index);
}

std::shared_ptr<const VectorIndex> QaService::index() const {
  std::lock_guard lock(index_mutex_);
  return index_;
}

std::optional<QaService::ReindexLease> QaService::try_begin_reindex() {
  bool expected = false;
  if (!reindexing_.compare_exchange_strong(expected, true)) return std::nullopt;
  return ReindexLease(reindexing_);
}

namespace {

ApiResponse error_response(int status, std::string_view code, std::string_view detail) {
  return {status, {{"error", code}, {"detail", detail}}};
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyQuery:
    case ErrorCode::InvalidConfig:
      return 400;
    case ErrorCode::EmptyIndex:
      return 503;
    case ErrorCode::BackendUnreachable:
    case ErrorCode::BackendError:
    case ErrorCode::EmptyCompletion:
    case ErrorCode::ProviderUnreachable:
    case ErrorCode::HttpError:
    case ErrorCode::MalformedResponse:
    case ErrorCode::DimensionMismatch:
      return 502;
    default:
      return 500;
  }
}

ApiResponse from_error(const Error& e) {
  const auto status = status_for(e.code());
  std::string_view code = to_string(e.code());
  if (e.code() == ErrorCode::EmptyIndex) code = "IndexUnavailable";
  if (e.code() == ErrorCode::EmptyQuery) code = "EmptyQuestion";
  return error_response(status, code, e.what());
}

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

// Optional positive integer field; nullopt when absent.
std::optional<std::size_t> optional_top_k(const json& request) {
  const auto it = request.find("top_k");
  if (it == request.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer() || it->get<long long>() < 1) {
    throw Error(ErrorCode::InvalidConfig, "top_k must be a positive integer");
  }
  return it->get<std::size_t>();
}

json hits_to_json(const VectorIndex& index, const std::vector<SearchHit>& hits) {
  json out = json::array();
  for (const auto& hit : hits) {
    const auto* chunk = index.find_chunk(hit.chunk_id);
    out.push_back({{"chunk_id", hit.chunk_id},
                   {"doc_id", chunk ? chunk->doc_id : std::string()},
                   {"score", hit.score},
                   {"rank", hit.rank},
                   {"text", chunk ? chunk->text : std::string()}});
  }
  return out;
}

}  // namespace

ApiResponse QaService::handle_ask(const json& request) const {
  if (!request.is_object()) return error_response(400, "BadRequest", "body must be a JSON object");
  const auto question_it = request.find("question");
  if (question_it == request.end() || !question_it->is_string()) {
    return error_response(400, "EmptyQuestion", "missing 'question'");
  }
  const auto question = trimmed(question_it->get<std::string>());
  if (question.empty()) return error_response(400, "EmptyQuestion", "question is empty");

  try {
    auto gcfg = cfg_.generation;
    if (const auto mode = request.find("mode"); mode != request.end() && !mode->is_null()) {
      if (!mode->is_string()) return error_response(400, "BadRequest", "mode must be \"rag\" or \"vanilla\"");
      gcfg.mode = parse_generation_mode(mode->get<std::string>());
    }
    auto rcfg = cfg_.retrieval;
    if (const auto k = optional_top_k(request)) rcfg.top_k = *k;

    auto snapshot = index();
    if (gcfg.mode == GenerationMode::Rag && !snapshot) {
      return error_response(503, "IndexUnavailable", "no index loaded");
    }
    static const VectorIndex kNoIndex(1, {});
    const VectorIndex& ix = snapshot ? *snapshot : kNoIndex;
    const auto answer = ask(question, ix, cfg_.provider, rcfg, gcfg);
    return {200,
            {{"answer", answer.text},
             {"sources", hits_to_json(ix, answer.prompt.included_hits)},
             {"latency_ms", answer.latency_ms},
             {"model", answer.model_name}}};
  } catch (const Error& e) {
    return from_error(e);
  }
}

ApiResponse QaService::handle_search(const json& request) const {
  if (!request.is_object()) return error_response(400, "BadRequest", "body must be a JSON object");
  const auto query_it = request.find("query");
  if (query_it == request.end() || !query_it->is_string() || trimmed(query_it->get<std::string>()).empty()) {
    return error_response(400, "EmptyQuery", "query is empty");
  }
  try {
    auto rcfg = cfg_.retrieval;
    if (const auto k = optional_top_k(request)) rcfg.top_k = *k;
    const auto snapshot = index();
    if (!snapshot) return error_response(503, "IndexUnavailable", "no index loaded");
    const auto hits = retrieve(query_it->get<std::string>(), *snapshot, cfg_.provider, rcfg);
    return {200, {{"hits", hits_to_json(*snapshot, hits)}}};
  } catch (const Error& e) {
    return from_error(e);
  }
}

ApiResponse QaService::handle_health() const {
  const auto snapshot = index();
  if (!snapshot) return {503, {{"status", "unavailable"}, {"detail", "index not loaded"}}};
  return {200,
          {{"status", "ok"},
           {"index_entries", snapshot->size()},
           {"dimension", snapshot->dimension()},
           {"embedder_fingerprint", snapshot->embedder_fingerprint()}}};
}

ApiResponse QaService::handle_reindex(const json& request) {
  if (!request.is_object()) return error_response(400, "BadRequest", "body must be a JSON object");
  auto lease = try_begin_reindex();
  if (!lease) return error_response(409, "ReindexInProgress", "another reindex is running");

  const auto path_it = request.find("corpus_path");
  if (path_it == request.end() || !path_it->is_string()) {
    return error_response(400, "BadCorpus", "missing 'corpus_path'");
  }
  ChunkingConfig chunking;
  try {
    chunking = chunking_config_from_json(request.value("chunking", json::object()));
  } catch (const Error& e) {
    return error_response(400, "InvalidConfig", e.what());
  }

  Corpus corpus;
  std::vector<Chunk> chunks;
  try {
    corpus = read_corpus(path_it->get<std::string>());
    chunks = chunk_corpus(corpus, chunking);
  } catch (const Error& e) {
    return error_response(400, "BadCorpus", e.what());
  }
  if (chunks.empty()) return error_response(400, "BadCorpus", "corpus produced no chunks");

  try {
    auto rebuilt = std::make_shared<const VectorIndex>(build_index(chunks, cfg_.provider, corpus.name()));
    const auto entries = rebuilt->size();
    set_index(std::move(rebuilt));
    return {200, {{"entries", entries}}};
  } catch (const Error& e) {
    return from_error(e);
  }
}

// ---------------------------------------------------------------------------
// HTTP wiring

namespace {

void send(httplib::Response& res, const ApiResponse& api) {
  res.status = api.status;
  res.set_content(api.body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
}

// Parses the body, answering 400 itself when it is not JSON.
template <typename Handler>
void with_json_body(const httplib::Request& req, httplib::Response& res, Handler&& handler) {
  json body;
  try {
    body = json::parse(req.body.empty() ? std::string("{}") : req.body);
  } catch (const json::parse_error& e) {
    send(res, error_response(400, "BadRequest", std::string("invalid JSON: ") + e.what()));
    return;
  }
  send(res, handler(body));
}

}  // namespace

int QaService::bind() {
  auto& server = http_->server;
  const auto origins = cfg_.cors_allowed_origins;
  auto allowed = [origins](const std::string& origin) {
    return std::find(origins.begin(), origins.end(), origin) != origins.end() ||
           std::find(origins.begin(), origins.end(), "*") != origins.end();
  };
  server.set_post_routing_handler([allowed](const httplib::Request& req, httplib::Response& res) {
    const auto origin = req.get_header_value("Origin");
    if (!origin.empty() && allowed(origin)) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Vary", "Origin");
    }
  });
  server.Options(R"(/api/.*)", [allowed](const httplib::Request& req, httplib::Response& res) {
    const auto origin = req.get_header_value("Origin");
    if (!origin.empty() && allowed(origin)) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    }
    res.status = 204;
  });

  server.Post("/api/ask", [this](const httplib::Request& req, httplib::Response& res) {
    with_json_body(req, res, [this](const json& body) { return handle_ask(body); });
  });
  server.Post("/api/search", [this](const httplib::Request& req, httplib::Response& res) {
    with_json_body(req, res, [this](const json& body) { return handle_search(body); });
  });
  server.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) { send(res, handle_health()); });
  server.Post("/api/reindex", [this](const httplib::Request& req, httplib::Response& res) {
    with_json_body(req, res, [this](const json& body) { return handle_reindex(body); });
  });

  const int port = cfg_.port == 0 ? server.bind_to_any_port(cfg_.host) : (server.bind_to_port(cfg_.host, cfg_.port)
                                                                              ? cfg_.port
                                                                              : -1);
  if (port < 0) {
    throw Error(ErrorCode::IoFailure, "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  }
  return port;
}

void QaService::run() { http_->server.listen_after_bind(); }

void QaService::stop() {
  if (http_ && http_->server.is_running()) http_->server.stop();
}

}  // namespace biorag
