#pragma once

// Network-backed LLM and Wikidata clients. Needs the nrec_http target
// (OpenSSL) for https endpoints.

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "nrec/enrichment.hpp"
#include "nrec/error.hpp"

namespace nrec {

// Spaces requests so that at most `per_minute` start in any minute.
class RateLimiter {
 public:
  explicit RateLimiter(double per_minute) : per_minute_(per_minute) {}

  void acquire() {
    if (per_minute_ <= 0) return;
    std::unique_lock lock(mutex_);
    const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(60.0 / per_minute_));
    const auto now = std::chrono::steady_clock::now();
    if (next_ > now) {
      const auto wait = next_ - now;
      next_ += interval;
      lock.unlock();
      std::this_thread::sleep_for(wait);
    } else {
      next_ = now + interval;
    }
  }

 private:
  double per_minute_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_{};
};

namespace detail {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::string describe(httplib::Error e) { return httplib::to_string(e); }

}  // namespace detail

struct HttpLlmConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";  // any OpenAI-compatible chat endpoint
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "NREC_LLM_API_KEY";
  double requests_per_minute = 60;
  int timeout_seconds = 60;
};

// OpenAI-compatible chat-completions client. The API key is read from the
// environment variable named in the config, never from a file.
class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(HttpLlmConfig config) : config_(std::move(config)), limiter_(config_.requests_per_minute) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0')
      throw ConfigError("environment variable " + config_.api_key_env + " must hold the LLM API key");
    api_key_ = key;
    endpoint_ = detail::split_url(config_.endpoint);
  }

  std::string complete(const std::string& prompt, int max_tokens, double temperature) override {
    limiter_.acquire();
    httplib::Client client(endpoint_.origin);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    client.set_bearer_token_auth(api_key_);
    const nlohmann::json body{{"model", config_.model},
                              {"messages", {{{"role", "user"}, {"content", prompt}}}},
                              {"max_tokens", max_tokens},
                              {"temperature", temperature}};
    auto res = client.Post(endpoint_.path, body.dump(), "application/json");
    if (!res) throw LlmError("request failed: " + detail::describe(res.error()));
    if (res->status != 200) throw LlmError("HTTP " + std::to_string(res->status));
    const auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw LlmError("response is not JSON");
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw LlmError("response has no choices[0].message.content");
    }
  }

 private:
  HttpLlmConfig config_;
  RateLimiter limiter_;
  std::string api_key_;
  detail::Endpoint endpoint_;
};

struct HttpWikidataConfig {
  std::string endpoint = "https://www.wikidata.org/w/api.php";
  double requests_per_minute = 120;
  int timeout_seconds = 30;
  std::string user_agent = "nrec/0.1 (news recommendation research)";
};

// wbsearchentities lookups against a live (or local test) MediaWiki API.
class HttpWikidataClient : public WikidataClient {
 public:
  explicit HttpWikidataClient(HttpWikidataConfig config = {})
      : config_(std::move(config)), limiter_(config_.requests_per_minute), endpoint_(detail::split_url(config_.endpoint)) {}

  std::string search(const std::string& name) override {
    limiter_.acquire();
    httplib::Client client(endpoint_.origin);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    const httplib::Params params{{"action", "wbsearchentities"}, {"format", "json"}, {"language", "en"}, {"search", name}};
    auto res = client.Get(endpoint_.path, params, httplib::Headers{{"User-Agent", config_.user_agent}});
    if (!res) throw WikidataError("request failed: " + detail::describe(res.error()));
    if (res->status != 200) throw WikidataError("HTTP " + std::to_string(res->status));
    return res->body;
  }

 private:
  HttpWikidataConfig config_;
  RateLimiter limiter_;
  detail::Endpoint endpoint_;
};

}  // namespace nrec
