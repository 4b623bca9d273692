#pragma once

// Text-generation and embedding backends: request/response types, the
// scripted mock, the deterministic mock embedder and the response cache.
// Remote HTTP backends live in remote.hpp, gold-data oracles in oracle.hpp.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mhqa/corpus.hpp"
#include "mhqa/metrics.hpp"
#include "mhqa/util.hpp"

namespace mhqa {

enum class BackendKind { remote_chat, scripted_mock, oracle_selector, oracle_reader, remote_embed, mock_embed };

inline std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::remote_chat: return "remote_chat";
    case BackendKind::scripted_mock: return "scripted_mock";
    case BackendKind::oracle_selector: return "oracle_selector";
    case BackendKind::oracle_reader: return "oracle_reader";
    case BackendKind::remote_embed: return "remote_embed";
    case BackendKind::mock_embed: return "mock_embed";
  }
  return "?";
}

inline BackendKind parse_backend_kind(std::string_view s) {
  for (auto k : {BackendKind::remote_chat, BackendKind::scripted_mock, BackendKind::oracle_selector,
                 BackendKind::oracle_reader, BackendKind::remote_embed, BackendKind::mock_embed})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown backend kind '" + std::string(s) + "'");
}

/// What a prompt asks the model to do. Carried in request metadata so oracle
/// backends know which gold view to emit.
enum class PromptRole {
  reader,
  single_stage_selector,
  paragraph_selector,
  sentence_selector,
  decomposer,
  cot_teacher,
  all_in_one,
};

inline std::string_view to_string(PromptRole r) {
  switch (r) {
    case PromptRole::reader: return "reader";
    case PromptRole::single_stage_selector: return "single_stage_selector";
    case PromptRole::paragraph_selector: return "paragraph_selector";
    case PromptRole::sentence_selector: return "sentence_selector";
    case PromptRole::decomposer: return "decomposer";
    case PromptRole::cot_teacher: return "cot_teacher";
    case PromptRole::all_in_one: return "all_in_one";
  }
  return "?";
}

struct GenerationParams {
  double temperature = 0.01;
  double top_p = 0.8;
  int max_tokens = 512;
  std::vector<std::string> stop_sequences;

  static GenerationParams chain_of_thought() {
    GenerationParams p;
    p.max_tokens = 1024;
    return p;
  }

  void validate() const {
    if (!(temperature >= 0)) throw ConfigError("temperature must be >= 0");
    if (!(top_p > 0 && top_p <= 1)) throw ConfigError("top_p must be in (0, 1]");
    if (max_tokens <= 0) throw ConfigError("max_tokens must be positive");
  }

  bool operator==(const GenerationParams&) const = default;
};

enum class Role { user, assistant };

struct Message {
  Role role = Role::user;
  std::string content;
  bool operator==(const Message&) const = default;
};

struct RequestMeta {
  std::string example_id;
  PromptRole role = PromptRole::reader;
  bool operator==(const RequestMeta&) const = default;
};

struct ChatRequest {
  std::string system_prompt;
  std::vector<Message> messages;
  GenerationParams params;
  std::string model_id;
  RequestMeta meta;

  const std::string& user_text() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
      if (it->role == Role::user) return it->content;
    throw ConfigError("request has no user message");
  }

  void validate() const {
    if (messages.empty()) throw ConfigError("request needs at least one message");
    for (std::size_t i = 0; i < messages.size(); ++i) {
      auto expected = i % 2 == 0 ? Role::user : Role::assistant;
      if (messages[i].role != expected) throw ConfigError("message roles must alternate starting with user");
    }
    params.validate();
  }

  bool operator==(const ChatRequest&) const = default;
};

inline ChatRequest make_request(std::string system_prompt, std::string user, GenerationParams params,
                                RequestMeta meta) {
  ChatRequest r;
  r.system_prompt = std::move(system_prompt);
  r.messages.push_back({Role::user, std::move(user)});
  r.params = std::move(params);
  r.meta = std::move(meta);
  return r;
}

struct TokenUsage {
  std::optional<long> prompt, completion;
};

struct ChatResponse {
  std::string text;
  TokenUsage usage;
  std::chrono::milliseconds latency{0};
  bool cache_hit = false;
};

class BackendError : public std::runtime_error {
 public:
  enum class Kind { transport, http_status, protocol, unscripted, timeout };
  BackendError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual BackendKind kind() const = 0;
  virtual std::string model_id() const = 0;
  /// Whether responses may be served from the response cache. Oracles answer
  /// from request metadata that is not part of the cache key.
  virtual bool cacheable() const { return true; }
  /// Must be safe to call concurrently. Throws BackendError on failure.
  virtual ChatResponse generate(const ChatRequest& request) const = 0;
};

using ChatHandle = std::shared_ptr<const ChatBackend>;

struct EmbeddingVector {
  std::vector<double> values;
  std::string model_id;
};

class EmbedBackend {
 public:
  virtual ~EmbedBackend() = default;
  virtual BackendKind kind() const = 0;
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const = 0;
};

using EmbedHandle = std::shared_ptr<const EmbedBackend>;

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine of vectors with different lengths");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Scripted mock

enum class MatchKind { exact, prefix, regex };

/// Matches against the last user message. First matching rule wins.
class ScriptedBackend final : public ChatBackend {
 public:
  using Responder = std::function<std::optional<std::string>(const ChatRequest&)>;

  explicit ScriptedBackend(std::string model_id = "scripted") : model_id_(std::move(model_id)) {}

  ScriptedBackend& add_rule(MatchKind kind, std::string pattern, std::string response) {
    Rule r;
    r.kind = kind;
    if (kind == MatchKind::regex) r.re = std::regex(pattern);
    r.pattern = std::move(pattern);
    r.response = std::move(response);
    rules_.push_back(std::move(r));
    return *this;
  }

  /// Programmatic rule: returns a response, or nullopt to fall through.
  ScriptedBackend& add_responder(Responder fn) {
    Rule r;
    r.responder = std::move(fn);
    rules_.push_back(std::move(r));
    return *this;
  }

  BackendKind kind() const override { return BackendKind::scripted_mock; }
  std::string model_id() const override { return model_id_; }

  ChatResponse generate(const ChatRequest& request) const override {
    const auto& content = request.user_text();
    for (const auto& rule : rules_) {
      if (rule.responder) {
        if (auto text = rule.responder(request)) return ChatResponse{std::move(*text)};
        continue;
      }
      bool hit = false;
      switch (rule.kind) {
        case MatchKind::exact: hit = content == rule.pattern; break;
        case MatchKind::prefix: hit = content.starts_with(rule.pattern); break;
        case MatchKind::regex: hit = std::regex_search(content, rule.re); break;
      }
      if (hit) return ChatResponse{rule.response};
    }
    throw BackendError(BackendError::Kind::unscripted,
                       "unscripted prompt: no rule matches request for example '" + request.meta.example_id + "'");
  }

  /// Script file: {"model_id": "...", "rules": [{"match": "exact|prefix|regex",
  /// "pattern": "...", "response": "..."}]}
  static std::shared_ptr<ScriptedBackend> from_json(const json& j) {
    auto b = std::make_shared<ScriptedBackend>(j.value("model_id", "scripted"));
    for (const auto& r : j.at("rules")) {
      auto m = r.value("match", "regex");
      MatchKind kind = m == "exact" ? MatchKind::exact : m == "prefix" ? MatchKind::prefix : MatchKind::regex;
      if (m != "exact" && m != "prefix" && m != "regex") throw ConfigError("unknown match kind '" + m + "'");
      b->add_rule(kind, r.at("pattern").get<std::string>(), r.at("response").get<std::string>());
    }
    return b;
  }

 private:
  struct Rule {
    MatchKind kind = MatchKind::exact;
    std::string pattern;
    std::regex re;
    std::string response;
    Responder responder;
  };
  std::string model_id_;
  std::vector<Rule> rules_;
};

// ---------------------------------------------------------------------------
// Mock embedder

/// Hashed bag-of-words projection: every normalized token adds ±1 to one of
/// `dim` buckets chosen by FNV-1a. Deterministic across runs and platforms.
/// Vectors can be planted for exact texts to construct ranking tests.
class MockEmbedder final : public EmbedBackend {
 public:
  static constexpr std::size_t kDefaultDim = 256;

  explicit MockEmbedder(std::size_t dim = kDefaultDim) : dim_(dim) {}

  BackendKind kind() const override { return BackendKind::mock_embed; }
  std::size_t dim() const { return dim_; }

  void plant(std::string text, std::vector<double> vec) {
    if (vec.size() != dim_) throw std::invalid_argument("planted vector has wrong dimension");
    planted_[std::move(text)] = std::move(vec);
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const override {
    if (texts.empty()) throw std::invalid_argument("embed needs at least one text");
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back({embed_one(t), "mock-embed-" + std::to_string(dim_)});
    return out;
  }

 private:
  std::vector<double> embed_one(const std::string& text) const {
    if (auto it = planted_.find(text); it != planted_.end()) return it->second;
    std::vector<double> v(dim_, 0.0);
    for (const auto& tok : answer_tokens(normalize_answer(text))) {
      auto h = util::fnv1a64(tok);
      v[h % dim_] += (h >> 63) != 0 ? -1.0 : 1.0;
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    if (norm > 0) {
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
    return v;
  }

  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> planted_;
};

// ---------------------------------------------------------------------------
// Response cache

inline json cache_key_inputs(BackendKind kind, const ChatRequest& r) {
  json msgs = json::array();
  for (const auto& m : r.messages) msgs.push_back({{"role", m.role == Role::user ? "user" : "assistant"}, {"content", m.content}});
  return json{{"kind", to_string(kind)},
              {"model_id", r.model_id},
              {"params",
               {{"temperature", r.params.temperature},
                {"top_p", r.params.top_p},
                {"max_tokens", r.params.max_tokens},
                {"stop", r.params.stop_sequences}}},
              {"system", r.system_prompt},
              {"messages", std::move(msgs)}};
}

/// Stable digest over (backend kind, model id, params, system prompt,
/// messages). Request metadata is deliberately not part of the key.
inline std::string cache_key(BackendKind kind, const ChatRequest& r) {
  return util::sha256_hex(cache_key_inputs(kind, r).dump());
}

inline std::string cache_key(const ChatBackend& backend, const ChatRequest& r) {
  ChatRequest keyed = r;
  if (keyed.model_id.empty()) keyed.model_id = backend.model_id();
  return cache_key(backend.kind(), keyed);
}

/// Content-addressed response store. In memory always; additionally on disk
/// (`<dir>/<key[0:2]>/<key>.json`) when a directory is given. Reads are
/// concurrent, writes serialized. Disk failures turn the disk layer off.
class ResponseCache {
 public:
  struct Entry {
    std::string text;
    TokenUsage usage;
  };

  explicit ResponseCache(std::optional<std::filesystem::path> dir = std::nullopt) : dir_(std::move(dir)) {
    if (dir_) {
      disk_enabled_ = true;
      std::error_code ec;
      std::filesystem::create_directories(*dir_, ec);
      if (ec) disable_disk("cannot create cache directory " + dir_->string() + ": " + ec.message());
    }
  }

  std::optional<Entry> get(const std::string& key) const {
    {
      std::shared_lock lock(mu_);
      if (auto it = memory_.find(key); it != memory_.end()) return it->second;
      if (!disk_enabled_) return std::nullopt;
    }
    auto path = path_for(key);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
      auto j = json::parse(in);
      Entry e{j.at("response").at("text").get<std::string>(), {}};
      const auto& usage = j.at("response").at("usage");
      if (!usage.at("prompt").is_null()) e.usage.prompt = usage.at("prompt").get<long>();
      if (!usage.at("completion").is_null()) e.usage.completion = usage.at("completion").get<long>();
      std::unique_lock lock(mu_);
      memory_.emplace(key, e);
      return e;
    } catch (const std::exception& ex) {
      util::log_warning("ignoring corrupt cache entry " + path.string() + ": " + ex.what());
      return std::nullopt;
    }
  }

  void put(const std::string& key, const json& inputs, const Entry& e) {
    std::unique_lock lock(mu_);
    memory_[key] = e;
    if (!disk_enabled_) return;
    auto path = path_for(key);
    json record{{"key", key},
                {"inputs", inputs},
                {"response",
                 {{"text", e.text},
                  {"usage",
                   {{"prompt", e.usage.prompt ? json(*e.usage.prompt) : json(nullptr)},
                    {"completion", e.usage.completion ? json(*e.usage.completion) : json(nullptr)}}}}}};
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << record.dump();
      if (!out) {
        disable_disk_locked("cannot write cache file " + tmp.string());
        return;
      }
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) disable_disk_locked("cannot commit cache file " + path.string() + ": " + ec.message());
  }

  bool disk_enabled() const {
    std::shared_lock lock(mu_);
    return disk_enabled_;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return memory_.size();
  }

 private:
  std::filesystem::path path_for(const std::string& key) const { return *dir_ / key.substr(0, 2) / (key + ".json"); }

  void disable_disk(const std::string& why) {
    std::unique_lock lock(mu_);
    disable_disk_locked(why);
  }
  void disable_disk_locked(const std::string& why) {
    if (disk_enabled_) util::log_warning(why + "; response cache continues in memory only");
    disk_enabled_ = false;
  }

  std::optional<std::filesystem::path> dir_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<std::string, Entry> memory_;
  bool disk_enabled_ = false;
};

/// Decorator serving repeated requests from a ResponseCache.
class CachingBackend final : public ChatBackend {
 public:
  CachingBackend(ChatHandle inner, std::shared_ptr<ResponseCache> cache)
      : inner_(std::move(inner)), cache_(std::move(cache)) {}

  BackendKind kind() const override { return inner_->kind(); }
  std::string model_id() const override { return inner_->model_id(); }
  bool cacheable() const override { return inner_->cacheable(); }

  ChatResponse generate(const ChatRequest& request) const override {
    if (!inner_->cacheable()) return inner_->generate(request);
    auto key = cache_key(*inner_, request);
    if (auto hit = cache_->get(key)) {
      ChatResponse r;
      r.text = hit->text;
      r.usage = hit->usage;
      r.cache_hit = true;
      return r;
    }
    auto response = inner_->generate(request);
    ChatRequest keyed = request;
    if (keyed.model_id.empty()) keyed.model_id = inner_->model_id();
    cache_->put(key, cache_key_inputs(inner_->kind(), keyed), {response.text, response.usage});
    response.cache_hit = false;
    return response;
  }

  const ChatHandle& inner() const { return inner_; }

 private:
  ChatHandle inner_;
  std::shared_ptr<ResponseCache> cache_;
};

inline ChatHandle with_cache(ChatHandle inner, std::shared_ptr<ResponseCache> cache) {
  if (!cache) return inner;
  return std::make_shared<CachingBackend>(std::move(inner), std::move(cache));
}

/// Bounds the number of concurrent remote calls across all backends sharing it.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(std::ptrdiff_t limit) : sem_(std::max<std::ptrdiff_t>(1, std::min<std::ptrdiff_t>(limit, kMax))) {}

  class Permit {
   public:
    explicit Permit(InFlightLimiter& l) : l_(&l) { l_->sem_.acquire(); }
    ~Permit() {
      if (l_ != nullptr) l_->sem_.release();
    }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;

   private:
    InFlightLimiter* l_;
  };

  Permit acquire() { return Permit(*this); }

 private:
  static constexpr std::ptrdiff_t kMax = 4096;
  std::counting_semaphore<kMax> sem_;
};

}  // namespace mhqa
