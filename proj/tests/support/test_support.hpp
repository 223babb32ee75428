#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace biorag::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(BIORAG_FIXTURE_DIR) / name;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("biorag-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// An HTTP server on an ephemeral loopback port, running on its own thread.
// Routes are installed by `setup` before the listener starts.
class StubServer {
 public:
  explicit StubServer(const std::function<void(httplib::Server&)>& setup) {
    setup(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

inline std::string chat_reply(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

// Chat backend that answers with "<system>\n<user>", i.e. the rendered prompt.
inline void install_echo_chat(httplib::Server& server, std::atomic<int>* calls = nullptr) {
  server.Post("/v1/chat/completions", [calls](const httplib::Request& req, httplib::Response& res) {
    if (calls) ++*calls;
    const auto body = nlohmann::json::parse(req.body);
    std::string system;
    std::string user;
    for (const auto& m : body.at("messages")) {
      if (m.at("role") == "system") system = m.at("content").get<std::string>();
      if (m.at("role") == "user") user = m.at("content").get<std::string>();
    }
    res.set_content(chat_reply(system + "\n" + user), "application/json");
  });
}

// Chat backend that answers every request with a fixed text.
inline void install_fixed_chat(httplib::Server& server, std::string text) {
  server.Post("/v1/chat/completions", [text](const httplib::Request&, httplib::Response& res) {
    res.set_content(chat_reply(text), "application/json");
  });
}

}  // namespace biorag::testing
