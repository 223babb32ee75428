#include "http_client.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>

namespace biorag::http {

std::string Endpoint::resolve(std::string_view path) const {
  if (base_path.size() >= path.size() &&
      base_path.compare(base_path.size() - path.size(), path.size(), path) == 0) {
    return base_path;
  }
  return base_path + std::string(path);
}

Endpoint parse_endpoint(std::string_view url) {
  const auto scheme = url.find("://");
  if (scheme == std::string_view::npos || url.substr(0, scheme) != "http") {
    throw Error(ErrorCode::InvalidConfig, "endpoint must be an http:// URL, got '" + std::string(url) + "'");
  }
  const auto slash = url.find('/', scheme + 3);
  Endpoint ep;
  ep.origin = std::string(url.substr(0, slash));
  if (slash != std::string_view::npos) ep.base_path = std::string(url.substr(slash));
  while (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
  if (ep.origin.size() <= scheme + 3) throw Error(ErrorCode::InvalidConfig, "endpoint has no host: " + std::string(url));
  return ep;
}

namespace {

bool is_transient(int status) { return status == 429 || status >= 500; }

}  // namespace

Response post_json(const Endpoint& endpoint, std::string_view path, const std::string& body,
                   const RetryPolicy& policy, ErrorCode unreachable) {
  httplib::Client client(endpoint.origin);
  const auto timeout = std::chrono::milliseconds(policy.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const auto target = endpoint.resolve(path);

  std::string last_failure;
  auto backoff = std::chrono::milliseconds(policy.backoff_ms);
  const int attempts = std::max(1, policy.max_attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = client.Post(target, body, "application/json");
    if (!res) {
      last_failure = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (is_transient(res->status)) {
      last_failure = "HTTP " + std::to_string(res->status);
      continue;
    }
    return {res->status, res->body, attempt};
  }
  throw Error(unreachable, endpoint.origin + target + " after " + std::to_string(attempts) + " attempts (" +
                               last_failure + ")");
}

}  // namespace biorag::http
