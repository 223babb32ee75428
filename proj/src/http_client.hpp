#pragma once

#include <string>
#include <string_view>

#include "biorag/error.hpp"

namespace biorag::http {

// "http://host:port/base" split into the origin httplib connects to and the
// path prefix requests are sent under.
struct Endpoint {
  std::string origin;
  std::string base_path;

  // Joins base_path and `path`, unless base_path already ends with `path`.
  std::string resolve(std::string_view path) const;
};

Endpoint parse_endpoint(std::string_view url);

struct RetryPolicy {
  int max_attempts = 3;
  int backoff_ms = 200;  // doubled after every failed attempt
  int timeout_ms = 30000;
};

struct Response {
  int status = 0;
  std::string body;
  int attempts = 0;
};

// POSTs a JSON body. Connection failures, 429 and 5xx responses are retried;
// once attempts run out, throws Error(unreachable) naming the last failure.
// Any other response, successful or not, is returned to the caller.
Response post_json(const Endpoint& endpoint, std::string_view path, const std::string& body,
                   const RetryPolicy& policy, ErrorCode unreachable);

}  // namespace biorag::http
