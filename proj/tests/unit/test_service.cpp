#include <atomic>
#include <thread>

#include <gtest/gtest.h>

#include "biorag/chunking.hpp"
#include "biorag/corpus.hpp"
#include "biorag/error.hpp"
#include "biorag/service.hpp"
#include "test_support.hpp"

namespace biorag {
namespace {

using nlohmann::json;
using testing::StubServer;
using testing::TempDir;

Corpus fixture_corpus() {
  Corpus corpus("fixtures");
  for (const char* dir : {"breast_cancer", "general"}) {
    for (const auto& entry : std::filesystem::directory_iterator(testing::fixture(dir))) {
      for (auto& doc : ingest_file(entry.path(), {}).documents) corpus.add(std::move(doc));
    }
  }
  return corpus;
}

ChunkingConfig small_chunks() {
  ChunkingConfig c;
  c.chunk_size = 300;
  c.overlap = 40;
  return c;
}

std::shared_ptr<const VectorIndex> fixture_index(const EmbeddingProviderConfig& provider) {
  return std::make_shared<const VectorIndex>(
      build_index(chunk_corpus(fixture_corpus(), small_chunks()), provider, "fixtures"));
}

ServiceConfig service_config(const std::string& llm_url) {
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.generation.endpoint_url = llm_url;
  cfg.generation.retry_backoff_ms = 1;
  cfg.generation.max_attempts = 1;
  cfg.retrieval.top_k = 5;
  return cfg;
}

constexpr const char* kLumpQuestion = "Can breast cancer present without a lump? If so, what are the other signs?";

TEST(ServiceAsk, RagAnswerCitesIncludedSources) {
  StubServer llm([](httplib::Server& s) { testing::install_echo_chat(s); });
  QaService svc(service_config(llm.url()));
  svc.set_index(fixture_index(svc.config().provider));

  const auto res = svc.handle_ask({{"question", kLumpQuestion}});
  ASSERT_EQ(res.status, 200) << res.body.dump();
  const auto& sources = res.body.at("sources");
  ASSERT_EQ(sources.size(), 5u);

  const auto expected = retrieve(kLumpQuestion, *svc.index(), svc.config().provider, svc.config().retrieval);
  const auto answer = res.body.at("answer").get<std::string>();
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(sources[i].at("chunk_id"), expected[i].chunk_id);
    EXPECT_EQ(sources[i].at("rank"), i + 1);
    const auto tag = "[Source " + std::to_string(i + 1) + ": " + sources[i].at("doc_id").get<std::string>() + "]";
    EXPECT_NE(answer.find(tag), std::string::npos) << tag;
  }
  EXPECT_EQ(res.body.at("model"), "mistral-7b-v0.3");
  EXPECT_GE(res.body.at("latency_ms").get<std::int64_t>(), 0);
  EXPECT_EQ(sources[0].at("doc_id").get<std::string>().rfind("bc_", 0), 0u);
}

TEST(ServiceAsk, TopKOverrideAndBudgetedSources) {
  StubServer llm([](httplib::Server& s) { testing::install_echo_chat(s); });
  auto cfg = service_config(llm.url());
  cfg.generation.context_char_budget = 700;
  QaService svc(cfg);
  svc.set_index(fixture_index(svc.config().provider));
  const auto res = svc.handle_ask({{"question", kLumpQuestion}, {"top_k", 5}});
  ASSERT_EQ(res.status, 200);
  const auto hits = retrieve(kLumpQuestion, *svc.index(), cfg.provider, cfg.retrieval);
  const auto prompt = build_prompt(kLumpQuestion, resolve_hits(*svc.index(), hits), cfg.generation);
  EXPECT_EQ(res.body.at("sources").size(), prompt.included_hits.size());
  EXPECT_LT(prompt.included_hits.size(), 5u);
  EXPECT_GE(prompt.included_hits.size(), 1u);
  EXPECT_EQ(svc.handle_ask({{"question", kLumpQuestion}, {"top_k", 1}}).body.at("sources").size(), 1u);
}

TEST(ServiceAsk, VanillaWorksWithoutIndex) {
  StubServer llm([](httplib::Server& s) { testing::install_fixed_chat(s, "Yes."); });
  QaService svc(service_config(llm.url()));
  const auto res = svc.handle_ask({{"question", kLumpQuestion}, {"mode", "vanilla"}});
  ASSERT_EQ(res.status, 200) << res.body.dump();
  EXPECT_EQ(res.body.at("answer"), "Yes.");
  EXPECT_TRUE(res.body.at("sources").empty());
}

TEST(ServiceAsk, ErrorStatuses) {
  StubServer llm([](httplib::Server& s) { testing::install_fixed_chat(s, "ok"); });
  QaService svc(service_config(llm.url()));
  EXPECT_EQ(svc.handle_ask({{"question", "why?"}}).status, 503);
  EXPECT_EQ(svc.handle_ask({{"question", "why?"}}).body.at("error"), "IndexUnavailable");
  svc.set_index(fixture_index(svc.config().provider));
  EXPECT_EQ(svc.handle_ask({{"question", "   "}}).status, 400);
  EXPECT_EQ(svc.handle_ask({{"question", ""}}).body.at("error"), "EmptyQuestion");
  EXPECT_EQ(svc.handle_ask(json::object()).status, 400);
  EXPECT_EQ(svc.handle_ask({{"question", "q"}, {"mode", "chatty"}}).status, 400);
  EXPECT_EQ(svc.handle_ask({{"question", "q"}, {"top_k", 0}}).status, 400);
  EXPECT_EQ(svc.handle_ask(json::array()).status, 400);

  QaService down(service_config("http://127.0.0.1:1"));
  down.set_index(svc.index());
  const auto res = down.handle_ask({{"question", "q"}});
  EXPECT_EQ(res.status, 502);
  EXPECT_EQ(res.body.at("error"), "BackendUnreachable");
}

TEST(ServiceSearch, Behaviour) {
  QaService svc(service_config("http://unused:1"));
  EXPECT_EQ(svc.handle_search({{"query", "lump"}}).status, 503);

  auto single = std::make_shared<VectorIndex>(svc.config().provider.dimension, svc.config().provider.fingerprint());
  Chunk c;
  c.chunk_id = make_chunk_id("only", 0);
  c.doc_id = "only";
  c.text = "A single chunk about migraine aura.";
  c.char_end = c.text.size();
  single->add(c, embed_one(c.text, svc.config().provider));
  svc.set_index(single);
  const auto one = svc.handle_search({{"query", "breast lump"}, {"top_k", 1}});
  ASSERT_EQ(one.status, 200);
  ASSERT_EQ(one.body.at("hits").size(), 1u);
  EXPECT_EQ(one.body.at("hits")[0].at("rank"), 1);
  EXPECT_EQ(one.body.at("hits")[0].at("text"), c.text);

  svc.set_index(fixture_index(svc.config().provider));
  const auto big = svc.handle_search({{"query", "insulin"}, {"top_k", 100000}});
  ASSERT_EQ(big.status, 200);
  EXPECT_EQ(big.body.at("hits").size(), svc.index()->size());
  const auto again = svc.handle_search({{"query", "insulin"}, {"top_k", 100000}});
  EXPECT_EQ(big.body, again.body);
  EXPECT_EQ(svc.handle_search({{"query", " "}}).status, 400);
}

TEST(ServiceHealth, ReportsIndexOrUnavailable) {
  QaService svc(service_config("http://unused:1"));
  EXPECT_EQ(svc.handle_health().status, 503);
  svc.set_index(fixture_index(svc.config().provider));
  const auto res = svc.handle_health();
  ASSERT_EQ(res.status, 200);
  EXPECT_EQ(res.body.at("status"), "ok");
  EXPECT_EQ(res.body.at("index_entries"), svc.index()->size());
  EXPECT_EQ(res.body.at("dimension"), 384);
  EXPECT_EQ(res.body.at("embedder_fingerprint"), "deterministic|hash-trigram-v1|384");
}

TEST(ServiceReindex, RebuildsFromCorpus) {
  TempDir dir;
  const auto corpus = fixture_corpus();
  write_corpus(corpus, dir / "corpus.jsonl");
  QaService svc(service_config("http://unused:1"));
  const json req = {{"corpus_path", (dir / "corpus.jsonl").string()},
                    {"chunking", {{"chunk_size", 300}, {"overlap", 40}}}};
  const auto res = svc.handle_reindex(req);
  ASSERT_EQ(res.status, 200) << res.body.dump();
  const auto expected = chunk_corpus(corpus, small_chunks()).size();
  EXPECT_EQ(res.body.at("entries"), expected);
  EXPECT_EQ(svc.index()->size(), expected);
  EXPECT_EQ(svc.index()->corpus_name(), "corpus");
}

TEST(ServiceReindex, ConflictAndBadCorpus) {
  TempDir dir;
  write_corpus(fixture_corpus(), dir / "corpus.jsonl");
  QaService svc(service_config("http://unused:1"));
  svc.set_index(fixture_index(svc.config().provider));
  {
    auto lease = svc.try_begin_reindex();
    ASSERT_TRUE(lease);
    EXPECT_FALSE(svc.try_begin_reindex());
    const auto res = svc.handle_reindex({{"corpus_path", (dir / "corpus.jsonl").string()}});
    EXPECT_EQ(res.status, 409);
    EXPECT_EQ(res.body.at("error"), "ReindexInProgress");
    // Reads keep working while a rebuild is pending.
    EXPECT_EQ(svc.handle_search({{"query", "tamoxifen"}}).status, 200);
  }
  EXPECT_TRUE(svc.try_begin_reindex());
  EXPECT_EQ(svc.handle_reindex({{"corpus_path", (dir / "nope.jsonl").string()}}).body.at("error"), "BadCorpus");
  EXPECT_EQ(svc.handle_reindex(json::object()).status, 400);
  EXPECT_EQ(svc.handle_reindex({{"corpus_path", (dir / "corpus.jsonl").string()},
                                {"chunking", {{"chunk_size", 10}, {"overlap", 20}}}})
                .status,
            400);
}

TEST(ServiceReindex, SearchesSucceedDuringRebuild) {
  TempDir dir;
  write_corpus(fixture_corpus(), dir / "corpus.jsonl");
  QaService svc(service_config("http://unused:1"));
  svc.set_index(fixture_index(svc.config().provider));
  std::atomic<bool> done{false};
  std::thread rebuild([&] {
    for (int i = 0; i < 3; ++i) svc.handle_reindex({{"corpus_path", (dir / "corpus.jsonl").string()}});
    done = true;
  });
  int searches = 0;
  while (!done) {
    ASSERT_EQ(svc.handle_search({{"query", "mammogram screening"}}).status, 200);
    ++searches;
  }
  rebuild.join();
  EXPECT_GT(searches, 0);
}

TEST(ServiceIndex, LoadChecksFingerprint) {
  TempDir dir;
  EmbeddingProviderConfig other;
  other.dimension = 64;
  save_index(*fixture_index(other), dir / "x.ragidx");
  auto cfg = service_config("http://unused:1");
  cfg.index_path = dir / "x.ragidx";
  QaService mismatched(cfg);
  try {
    mismatched.load_index();
    FAIL() << "expected FingerprintMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FingerprintMismatch);
  }
  cfg.provider.dimension = 64;
  QaService matched(cfg);
  matched.load_index();
  EXPECT_EQ(matched.handle_health().status, 200);
}

class RunningService {
 public:
  explicit RunningService(ServiceConfig cfg) : svc_(std::move(cfg)) {
    svc_.set_index(fixture_index(svc_.config().provider));
    port_ = svc_.bind();
    thread_ = std::thread([this] { svc_.run(); });
  }
  ~RunningService() {
    svc_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30, 0);
    return c;
  }

 private:
  QaService svc_;
  int port_ = 0;
  std::thread thread_;
};

httplib::Result wait_get(httplib::Client& c, const std::string& path, const httplib::Headers& headers = {}) {
  for (int i = 0; i < 100; ++i) {
    if (auto res = c.Get(path, headers)) return res;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return c.Get(path, headers);
}

TEST(ServiceHttp, RoutesAndCors) {
  StubServer llm([](httplib::Server& s) { testing::install_echo_chat(s); });
  auto cfg = service_config(llm.url());
  cfg.cors_allowed_origins = {"http://localhost:5173"};
  RunningService running(cfg);
  auto client = running.client();

  auto health = wait_get(client, "/api/health", {{"Origin", "http://localhost:5173"}});
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(health->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  EXPECT_EQ(json::parse(health->body).at("status"), "ok");

  auto ask = client.Post("/api/ask", json{{"question", kLumpQuestion}}.dump(), "application/json");
  ASSERT_TRUE(ask);
  EXPECT_EQ(ask->status, 200);
  EXPECT_EQ(json::parse(ask->body).at("sources").size(), 5u);

  auto bad = client.Post("/api/ask", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  auto search = client.Post("/api/search", json{{"query", "asthma"}, {"top_k", 2}}.dump(), "application/json");
  ASSERT_TRUE(search);
  EXPECT_EQ(json::parse(search->body).at("hits").size(), 2u);

  auto foreign = client.Get("/api/health", {{"Origin", "http://evil.example"}});
  ASSERT_TRUE(foreign);
  EXPECT_FALSE(foreign->has_header("Access-Control-Allow-Origin"));

  httplib::Request preflight;
  preflight.method = "OPTIONS";
  preflight.path = "/api/ask";
  preflight.headers = {{"Origin", "http://localhost:5173"}, {"Access-Control-Request-Method", "POST"}};
  auto pre = client.send(preflight);
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  EXPECT_NE(pre->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

}  // namespace
}  // namespace biorag
