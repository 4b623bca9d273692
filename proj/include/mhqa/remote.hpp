#pragma once

// Chat-completion and embedding backends over an OpenAI-style HTTP JSON API,
// with bounded retries and exponential backoff.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <regex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "mhqa/backend.hpp"

namespace mhqa {

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
  // Injected so tests do not sleep.
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

struct Endpoint {
  std::string scheme_host_port;  // "http://host:port"
  std::string path_prefix;       // "/v1"
};

inline Endpoint parse_endpoint(const std::string& base_url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(base_url, m, re)) throw ConfigError("invalid endpoint URL '" + base_url + "'");
  std::string prefix = m[2].matched ? m[2].str() : "";
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {m[1].str(), prefix};
}

struct RemoteConfig {
  std::string base_url;
  std::string api_key;
  std::string model_id;
  std::chrono::seconds timeout{120};
  RetryPolicy retry;
  std::shared_ptr<InFlightLimiter> limiter;
};

namespace detail {

inline bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

/// POSTs `body` to `path`, retrying transport failures and retryable statuses.
inline json post_with_retry(const RemoteConfig& cfg, const std::string& path, const json& body) {
  const auto ep = parse_endpoint(cfg.base_url);
  const auto payload = body.dump();
  auto delay = cfg.retry.initial_backoff;
  std::string last_error;
  BackendError::Kind last_kind = BackendError::Kind::transport;
  const int attempts = std::max(1, cfg.retry.attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    {
      std::optional<InFlightLimiter::Permit> permit;
      if (cfg.limiter) permit.emplace(*cfg.limiter);
      httplib::Client client(ep.scheme_host_port);
      client.set_connection_timeout(cfg.timeout);
      client.set_read_timeout(cfg.timeout);
      client.set_write_timeout(cfg.timeout);
      httplib::Headers headers;
      if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);
      auto res = client.Post(ep.path_prefix + path, headers, payload, "application/json");
      if (!res) {
        last_kind = BackendError::Kind::transport;
        last_error = "transport error: " + httplib::to_string(res.error());
      } else if (res->status >= 200 && res->status < 300) {
        try {
          return json::parse(res->body);
        } catch (const json::parse_error& e) {
          throw BackendError(BackendError::Kind::protocol, std::string("response is not JSON: ") + e.what());
        }
      } else {
        last_kind = BackendError::Kind::http_status;
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
        if (!retryable_status(res->status)) break;
      }
    }
    if (attempt < attempts) {
      cfg.retry.sleep(delay);
      delay = std::chrono::milliseconds(static_cast<long>(static_cast<double>(delay.count()) * cfg.retry.multiplier));
    }
  }
  throw BackendError(last_kind, cfg.base_url + path + " failed after retries: " + last_error);
}

}  // namespace detail

class RemoteChatBackend final : public ChatBackend {
 public:
  explicit RemoteChatBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {}

  BackendKind kind() const override { return BackendKind::remote_chat; }
  std::string model_id() const override { return cfg_.model_id; }

  static json request_body(const ChatRequest& request, const std::string& default_model) {
    json messages = json::array();
    if (!request.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
    for (const auto& m : request.messages)
      messages.push_back({{"role", m.role == Role::user ? "user" : "assistant"}, {"content", m.content}});
    json body{{"model", request.model_id.empty() ? default_model : request.model_id},
              {"messages", std::move(messages)},
              {"temperature", request.params.temperature},
              {"top_p", request.params.top_p},
              {"max_tokens", request.params.max_tokens}};
    if (!request.params.stop_sequences.empty()) body["stop"] = request.params.stop_sequences;
    return body;
  }

  ChatResponse generate(const ChatRequest& request) const override {
    request.validate();
    const auto start = std::chrono::steady_clock::now();
    auto reply = detail::post_with_retry(cfg_, "/chat/completions", request_body(request, cfg_.model_id));
    ChatResponse out;
    try {
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      out.text = content.is_null() ? "" : content.get<std::string>();
    } catch (const json::exception& e) {
      throw BackendError(BackendError::Kind::protocol, std::string("unexpected chat response shape: ") + e.what());
    }
    if (reply.contains("usage") && reply["usage"].is_object()) {
      const auto& u = reply["usage"];
      if (u.contains("prompt_tokens")) out.usage.prompt = u["prompt_tokens"].get<long>();
      if (u.contains("completion_tokens")) out.usage.completion = u["completion_tokens"].get<long>();
    }
    out.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    return out;
  }

 private:
  RemoteConfig cfg_;
};

class RemoteEmbedBackend final : public EmbedBackend {
 public:
  explicit RemoteEmbedBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {}

  BackendKind kind() const override { return BackendKind::remote_embed; }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const override {
    if (texts.empty()) throw std::invalid_argument("embed needs at least one text");
    auto reply = detail::post_with_retry(cfg_, "/embeddings", json{{"model", cfg_.model_id}, {"input", texts}});
    std::vector<EmbeddingVector> out(texts.size());
    try {
      const auto& data = reply.at("data");
      if (data.size() != texts.size()) throw BackendError(BackendError::Kind::protocol, "embedding count mismatch");
      for (std::size_t i = 0; i < data.size(); ++i) {
        auto idx = data[i].value("index", i);
        if (idx >= out.size()) throw BackendError(BackendError::Kind::protocol, "embedding index out of range");
        out[idx] = {data[i].at("embedding").get<std::vector<double>>(), cfg_.model_id};
      }
    } catch (const json::exception& e) {
      throw BackendError(BackendError::Kind::protocol, std::string("unexpected embedding response shape: ") + e.what());
    }
    return out;
  }

 private:
  RemoteConfig cfg_;
};

inline std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v != nullptr ? std::string(v) : fallback;
}

}  // namespace mhqa
