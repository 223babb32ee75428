#include <atomic>
#include <chrono>
#include <thread>

#include <gtest/gtest.h>

#include "biorag/error.hpp"
#include "biorag/rag_engine.hpp"
#include "test_support.hpp"

namespace biorag {
namespace {

using testing::StubServer;

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

RetrievedChunk retrieved(std::size_t rank, const std::string& doc, const std::string& text) {
  Chunk c;
  c.doc_id = doc;
  c.ordinal = rank - 1;
  c.chunk_id = make_chunk_id(doc, c.ordinal);
  c.text = text;
  c.char_end = text.size();
  return {{c.chunk_id, 1.0 - 0.1 * static_cast<double>(rank), rank}, c};
}

GenerationConfig gen(const std::string& url = "http://127.0.0.1:1") {
  GenerationConfig cfg;
  cfg.endpoint_url = url;
  cfg.retry_backoff_ms = 1;
  cfg.timeout_ms = 5000;
  return cfg;
}

TEST(BuildPrompt, TwoHitsInRankOrder) {
  const std::vector<RetrievedChunk> hits = {retrieved(1, "bc_signs", "Skin dimpling can signal a tumour."),
                                            retrieved(2, "bc_screening", "Mammography uses X-rays.")};
  const auto p = build_prompt("Can breast cancer present without a lump?", hits, gen());
  const std::string context =
      "[Source 1: bc_signs]\nSkin dimpling can signal a tumour.\n\n"
      "[Source 2: bc_screening]\nMammography uses X-rays.";
  EXPECT_EQ(p.context_block, context);
  EXPECT_EQ(p.system_instruction, "You are a concise and factual biomedical assistant.");
  EXPECT_EQ(p.rendered,
            "You are a concise and factual biomedical assistant.\n"
            "Use the following context to answer the question in 3\xE2\x80\x93" "4 complete, non-repetitive sentences.\n\n"
            "Context:\n" +
                context +
                "\n\nQuestion: Can breast cancer present without a lump?\nAnswer:");
  ASSERT_EQ(p.included_hits.size(), 2u);
  EXPECT_EQ(p.included_hits[0].rank, 1u);
  EXPECT_LT(p.rendered.find("[Source 1: bc_signs]"), p.rendered.find("[Source 2: bc_screening]"));
  EXPECT_EQ(count_occurrences(p.rendered, p.query), 1u);
  EXPECT_EQ(count_occurrences(p.rendered, p.context_block), 1u);
  EXPECT_EQ(p.rendered, p.system_instruction + "\n" + p.user_message);
}

TEST(BuildPrompt, BudgetBelowFirstHitGivesEmptyContext) {
  auto cfg = gen();
  cfg.context_char_budget = 10;
  const std::vector<RetrievedChunk> hits = {retrieved(1, "d", "This chunk is longer than ten characters.")};
  const auto p = build_prompt("q?", hits, cfg);
  EXPECT_TRUE(p.context_block.empty());
  EXPECT_TRUE(p.included_hits.empty());
}

TEST(BuildPrompt, BudgetKeepsRankPrefixOfWholeChunks) {
  auto cfg = gen();
  const auto a = retrieved(1, "d", std::string(20, 'a'));
  const auto b = retrieved(2, "d", std::string(200, 'b'));
  const auto c = retrieved(3, "d", std::string(5, 'c'));
  // Block 1 is "[Source 1: d]\n" (14) + 20 characters.
  cfg.context_char_budget = 60;
  const std::vector<RetrievedChunk> hits = {a, b, c};
  const auto p = build_prompt("q?", hits, cfg);
  ASSERT_EQ(p.included_hits.size(), 1u);
  EXPECT_EQ(p.context_block, "[Source 1: d]\n" + std::string(20, 'a'));
  EXPECT_LE(p.context_block.size(), cfg.context_char_budget);
}

TEST(BuildPrompt, BudgetCountsCharactersNotBytes) {
  auto cfg = gen();
  std::string text;
  for (int i = 0; i < 10; ++i) text += "\xC3\xA9";  // 10 characters, 20 bytes
  cfg.context_char_budget = 14 + 10;
  const std::vector<RetrievedChunk> hits = {retrieved(1, "d", text)};
  EXPECT_EQ(build_prompt("q", hits, cfg).included_hits.size(), 1u);
}

TEST(BuildPrompt, VanillaHasNoContextSection) {
  auto cfg = gen();
  cfg.mode = GenerationMode::Vanilla;
  const std::vector<RetrievedChunk> hits = {retrieved(1, "d", "ignored")};
  const auto p = build_prompt("What is lupus?", hits, cfg);
  EXPECT_EQ(p.rendered.find("Context:"), std::string::npos);
  EXPECT_TRUE(p.included_hits.empty());
  EXPECT_EQ(p.rendered,
            "You are a concise and factual biomedical assistant.\n"
            "Answer the question in 3\xE2\x80\x93" "4 complete, non-repetitive sentences.\n\n"
            "Question: What is lupus?\nAnswer:");
}

TEST(BuildPrompt, StableAndRejectsBlankQuery) {
  const std::vector<RetrievedChunk> hits = {retrieved(1, "d", "x")};
  EXPECT_EQ(build_prompt("q", hits, gen()).rendered, build_prompt("q", hits, gen()).rendered);
  try {
    build_prompt("  \n", hits, gen());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyQuery);
  }
}

TEST(GenerationMode, Names) {
  EXPECT_EQ(parse_generation_mode("vanilla"), GenerationMode::Vanilla);
  EXPECT_EQ(to_string(GenerationMode::Rag), "rag");
  EXPECT_THROW(parse_generation_mode("qlora"), Error);
}

// ---------------------------------------------------------------------------
// generate() against stub chat backends

TEST(Generate, EchoStubReturnsRenderedPrompt) {
  StubServer stub([](httplib::Server& s) { testing::install_echo_chat(s); });
  const std::vector<RetrievedChunk> hits = {retrieved(1, "d", "context text")};
  const auto prompt = build_prompt("q?", hits, gen(stub.url()));
  const auto c = generate(prompt, gen(stub.url()));
  EXPECT_EQ(c.text, prompt.rendered);
  EXPECT_EQ(c.attempts, 1);
  EXPECT_GE(c.latency_ms, 0);
}

TEST(Generate, SendsChatWireFormat) {
  nlohmann::json seen;
  StubServer stub([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
      seen = nlohmann::json::parse(req.body);
      res.set_content(testing::chat_reply("ok"), "application/json");
    });
  });
  auto cfg = gen(stub.url());
  cfg.model_name = "rag-qlora";
  cfg.max_new_tokens = 77;
  generate(build_prompt("q?", {}, cfg), cfg);
  EXPECT_EQ(seen.at("model"), "rag-qlora");
  EXPECT_EQ(seen.at("max_tokens"), 77);
  EXPECT_DOUBLE_EQ(seen.at("temperature").get<double>(), 0.2);
  ASSERT_EQ(seen.at("messages").size(), 2u);
  EXPECT_EQ(seen["messages"][0]["role"], "system");
  EXPECT_EQ(seen["messages"][1]["role"], "user");
}

TEST(Generate, EmptyReplyIsEmptyCompletion) {
  StubServer stub([](httplib::Server& s) { testing::install_fixed_chat(s, ""); });
  try {
    generate(build_prompt("q?", {}, gen(stub.url())), gen(stub.url()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCompletion);
  }
}

TEST(Generate, TransientFailureRetried) {
  std::atomic<int> calls{0};
  StubServer stub([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      if (calls++ == 0) {
        res.status = 503;
        return;
      }
      res.set_content(testing::chat_reply("fine"), "application/json");
    });
  });
  const auto c = generate(build_prompt("q?", {}, gen(stub.url())), gen(stub.url()));
  EXPECT_EQ(c.text, "fine");
  EXPECT_EQ(c.attempts, 2);
}

TEST(Generate, ClientErrorIsBackendError) {
  StubServer stub([](httplib::Server& s) {
    s.Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
      res.status = 400;
      res.set_content("bad model", "text/plain");
    });
  });
  try {
    generate(build_prompt("q?", {}, gen(stub.url())), gen(stub.url()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendError);
    EXPECT_NE(e.detail().find("400"), std::string::npos);
  }
}

TEST(Generate, NoServerIsUnreachable) {
  int port = 0;
  {
    StubServer closed([](httplib::Server&) {});
    port = closed.port();
  }
  const auto cfg = gen("http://127.0.0.1:" + std::to_string(port));
  try {
    generate(build_prompt("q?", {}, cfg), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnreachable);
  }
}

TEST(Generate, ConcurrencyCappedPerEndpoint) {
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  StubServer stub([&](httplib::Server& s) {
    s.new_task_queue = [] { return new httplib::ThreadPool(12); };
    s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      const int now = ++in_flight;
      int prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(60));
      --in_flight;
      res.set_content(testing::chat_reply("ok"), "application/json");
    });
  });
  const auto cfg = gen(stub.url());
  const auto prompt = build_prompt("q?", {}, cfg);
  std::vector<std::thread> workers;
  for (int i = 0; i < 10; ++i) workers.emplace_back([&] { generate(prompt, cfg); });
  for (auto& w : workers) w.join();
  EXPECT_LE(peak.load(), 4);
  EXPECT_GE(peak.load(), 2);
}

// ---------------------------------------------------------------------------
// ask()

VectorIndex ten_chunk_index(const EmbeddingProviderConfig& provider) {
  const std::vector<std::string> texts = {
      "Breast cancer can present without a lump through skin dimpling.",
      "Nipple discharge and inversion are warning signs of breast cancer.",
      "Inflammatory breast cancer causes redness and swelling of the breast.",
      "Mammography screens for breast cancer in women.",
      "Axillary lymph node swelling may be a sign of breast cancer spread.",
      "Insulin resistance drives type 2 diabetes.",
      "Inhaled corticosteroids control asthma.",
      "Influenza vaccination is recommended every year.",
      "Migraine causes throbbing one-sided headaches.",
      "Hydroxychloroquine treats lupus."};
  std::vector<Chunk> chunks;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Chunk c;
    c.doc_id = "doc" + std::to_string(i);
    c.chunk_id = make_chunk_id(c.doc_id, 0);
    c.text = texts[i];
    c.char_end = texts[i].size();
    chunks.push_back(c);
  }
  return build_index(chunks, provider, "ten");
}

TEST(Ask, RagModeRetrievesFiveAndCitesThem) {
  StubServer stub([](httplib::Server& s) { testing::install_echo_chat(s); });
  EmbeddingProviderConfig provider;
  const auto index = ten_chunk_index(provider);
  const std::string q = "Can breast cancer present without a lump? If so, what are the other signs?";
  const auto answer = ask(q, index, provider, {}, gen(stub.url()));
  ASSERT_EQ(answer.hits.size(), 5u);
  EXPECT_EQ(answer.hits, index.search(embed_deterministic(q, provider.dimension), {5, -1.0}));
  EXPECT_EQ(answer.prompt.included_hits, answer.hits);
  EXPECT_EQ(answer.text, answer.prompt.rendered);
  for (const auto& hit : answer.prompt.included_hits) {
    const auto tag = "[Source " + std::to_string(hit.rank) + ": " + index.find_chunk(hit.chunk_id)->doc_id + "]";
    EXPECT_NE(answer.text.find(tag), std::string::npos) << tag;
  }
  EXPECT_EQ(answer.model_name, "mistral-7b-v0.3");
  EXPECT_EQ(answer.hits, retrieve(q, index, provider, {}));
}

TEST(Ask, VanillaSkipsRetrieval) {
  StubServer stub([](httplib::Server& s) { testing::install_echo_chat(s); });
  auto cfg = gen(stub.url());
  cfg.mode = GenerationMode::Vanilla;
  const VectorIndex empty(8, "");
  const auto answer = ask("What is lupus?", empty, {}, {}, cfg);
  EXPECT_TRUE(answer.hits.empty());
  EXPECT_EQ(answer.text.find("Context:"), std::string::npos);
}

TEST(Ask, EmptyIndexFailsAtSearchStage) {
  EmbeddingProviderConfig provider;
  const VectorIndex empty(provider.dimension, provider.fingerprint());
  try {
    ask("question?", empty, provider, {}, gen());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyIndex);
    EXPECT_EQ(e.stage(), "search");
  }
}

TEST(Ask, FingerprintMismatchFailsAtEmbedStage) {
  EmbeddingProviderConfig provider;
  const auto index = ten_chunk_index(provider);
  auto other = provider;
  other.dimension = 128;
  try {
    ask("question?", index, other, {}, gen());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FingerprintMismatch);
    EXPECT_EQ(e.stage(), "embed");
  }
}

TEST(Ask, BackendFailureLabelledGenerate) {
  EmbeddingProviderConfig provider;
  const auto index = ten_chunk_index(provider);
  StubServer stub([](httplib::Server& s) { testing::install_fixed_chat(s, " "); });
  try {
    ask("breast cancer?", index, provider, {}, gen(stub.url()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCompletion);
    EXPECT_EQ(e.stage(), "generate");
  }
}

}  // namespace
}  // namespace biorag
