#pragma once

// Experiment configuration files (YAML) and the backend factory.
//
//   corpus: data/hotpot_dev_distractor_v1.json
//   scenario: S3
//   label: my-reader
//   backends:
//     selector: {kind: scripted_mock, script: scripts/selector.json}
//     sentence_selector: {kind: remote_chat, model: sentence-selector}
//     reader: {kind: remote_chat, model: reader-8b}
//     embed: {kind: mock_embed}
//   reader_profile: {shots: 0, cot: false, input_mode: supporting_facts}
//   params: {temperature: 0.01, top_p: 0.8, max_tokens: 512}
//   matrix:
//     - {scenario: S2, label: reader-8b}
//     - {scenario: S4, label: reader-8b, backends: {reader: {kind: oracle_reader}}}

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "mhqa/backend.hpp"
#include "mhqa/oracle.hpp"
#include "mhqa/pipeline.hpp"
#include "mhqa/prompting.hpp"
#include "mhqa/remote.hpp"

namespace mhqa {

struct BackendSpec {
  BackendKind kind = BackendKind::scripted_mock;
  std::string model;
  std::string endpoint;       // defaults from MODEL_API_BASE / EMBED_API_BASE
  std::string api_key_env;    // name of the variable holding the key
  std::filesystem::path script;
  std::size_t dim = MockEmbedder::kDefaultDim;
};

inline BackendSpec backend_spec_from_yaml(const YAML::Node& n, const std::filesystem::path& base_dir) {
  if (!n || !n.IsMap()) throw ConfigError("backend entry must be a mapping");
  BackendSpec s;
  s.kind = parse_backend_kind(n["kind"].as<std::string>());
  if (n["model"]) s.model = n["model"].as<std::string>();
  if (n["endpoint"]) s.endpoint = n["endpoint"].as<std::string>();
  if (n["api_key_env"]) s.api_key_env = n["api_key_env"].as<std::string>();
  if (n["script"]) {
    s.script = n["script"].as<std::string>();
    if (s.script.is_relative()) s.script = base_dir / s.script;
  }
  if (n["dim"]) s.dim = n["dim"].as<std::size_t>();
  return s;
}

/// Builds backends; chat backends are wrapped with the response cache unless
/// caching is off. All remote backends share one in-flight limiter.
class BackendFactory {
 public:
  BackendFactory(CorpusHandle corpus, std::shared_ptr<ResponseCache> cache, std::size_t in_flight_limit = 8,
                 std::chrono::seconds timeout = std::chrono::seconds(120))
      : corpus_(std::move(corpus)),
        cache_(std::move(cache)),
        limiter_(std::make_shared<InFlightLimiter>(static_cast<std::ptrdiff_t>(in_flight_limit))),
        timeout_(timeout) {}

  ChatHandle chat(const BackendSpec& s) const {
    ChatHandle backend;
    switch (s.kind) {
      case BackendKind::remote_chat:
        backend = std::make_shared<RemoteChatBackend>(remote_config(s, "MODEL_API_BASE", "MODEL_API_KEY"));
        break;
      case BackendKind::scripted_mock: {
        std::ifstream in(s.script);
        if (!in) throw ConfigError("cannot open mock script " + s.script.string());
        backend = ScriptedBackend::from_json(json::parse(in));
        break;
      }
      case BackendKind::oracle_selector:
        backend = std::make_shared<OracleSelector>(require_corpus());
        break;
      case BackendKind::oracle_reader:
        backend = std::make_shared<OracleReader>(require_corpus());
        break;
      default:
        throw ConfigError(std::string(to_string(s.kind)) + " is not a chat backend");
    }
    return with_cache(std::move(backend), cache_);
  }

  EmbedHandle embed(const BackendSpec& s) const {
    switch (s.kind) {
      case BackendKind::mock_embed: return std::make_shared<MockEmbedder>(s.dim);
      case BackendKind::remote_embed:
        return std::make_shared<RemoteEmbedBackend>(remote_config(s, "EMBED_API_BASE", "EMBED_API_KEY"));
      default: throw ConfigError(std::string(to_string(s.kind)) + " is not an embedding backend");
    }
  }

 private:
  CorpusHandle require_corpus() const {
    if (!corpus_) throw ConfigError("oracle backends need the gold corpus");
    return corpus_;
  }

  RemoteConfig remote_config(const BackendSpec& s, const char* base_env, const char* key_env) const {
    RemoteConfig c;
    c.base_url = s.endpoint.empty() ? env_or(base_env) : s.endpoint;
    if (c.base_url.empty()) throw ConfigError(std::string("no endpoint configured; set ") + base_env);
    c.api_key = env_or(s.api_key_env.empty() ? key_env : s.api_key_env.c_str());
    c.model_id = s.model;
    c.timeout = timeout_;
    c.limiter = limiter_;
    return c;
  }

  CorpusHandle corpus_;
  std::shared_ptr<ResponseCache> cache_;
  std::shared_ptr<InFlightLimiter> limiter_;
  std::chrono::seconds timeout_;
};

inline GenerationParams params_from_yaml(const YAML::Node& n, GenerationParams p = {}) {
  if (!n) return p;
  if (n["temperature"]) p.temperature = n["temperature"].as<double>();
  if (n["top_p"]) p.top_p = n["top_p"].as<double>();
  if (n["max_tokens"]) p.max_tokens = n["max_tokens"].as<int>();
  if (n["stop"]) p.stop_sequences = n["stop"].as<std::vector<std::string>>();
  p.validate();
  return p;
}

inline PromptProfile profile_from_yaml(const YAML::Node& n, PromptProfile p = {}) {
  if (!n) return p;
  if (n["shots"]) p.shots = n["shots"].as<int>();
  if (n["cot"]) p.cot = n["cot"].as<bool>();
  if (n["input_mode"]) p.reader_input_mode = parse_reader_input_mode(n["input_mode"].as<std::string>());
  p.validate();
  return p;
}

/// A loaded configuration file. Relative paths resolve against its directory.
class ExperimentConfig {
 public:
  static ExperimentConfig load(const std::filesystem::path& path) {
    ExperimentConfig c;
    try {
      c.root_ = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
      throw ConfigError("cannot read config " + path.string() + ": " + e.what());
    }
    c.dir_ = path.parent_path();
    return c;
  }

  static ExperimentConfig from_string(const std::string& text, std::filesystem::path dir = ".") {
    ExperimentConfig c;
    c.root_ = YAML::Load(text);
    c.dir_ = std::move(dir);
    return c;
  }

  const YAML::Node& root() const { return root_; }

  std::optional<std::filesystem::path> path(const char* key) const {
    if (!root_[key]) return std::nullopt;
    std::filesystem::path p = root_[key].as<std::string>();
    return p.is_relative() ? dir_ / p : p;
  }

  template <typename T>
  T value(const char* key, T fallback) const {
    return root_[key] ? root_[key].as<T>() : fallback;
  }

  GenerationParams params() const { return params_from_yaml(root_["params"]); }
  PromptProfile reader_profile() const { return profile_from_yaml(root_["reader_profile"]); }

  std::shared_ptr<const Prompter> prompter() const {
    auto templates = path("templates") ? TemplateSet::from_directory(*path("templates")) : TemplateSet::builtin();
    std::shared_ptr<const ShotPool> pool;
    if (auto p = path("shot_pool")) {
      std::ifstream in(*p);
      if (!in) throw ConfigError("cannot open shot pool " + p->string());
      pool = std::make_shared<const ShotPool>(ShotPool::from_json(json::parse(in)));
    } else {
      pool = std::make_shared<const ShotPool>(ShotPool::builtin());
    }
    return std::make_shared<const Prompter>(std::move(templates), std::move(pool), params());
  }

  std::optional<BackendSpec> backend(const char* role, const YAML::Node& overrides = {}) const {
    if (overrides && overrides[role]) return backend_spec_from_yaml(overrides[role], dir_);
    const auto& b = root_["backends"];
    if (!b || !b[role]) return std::nullopt;
    return backend_spec_from_yaml(b[role], dir_);
  }

  std::chrono::milliseconds timeout() const { return std::chrono::seconds(value<long>("timeout_s", 120)); }

  /// Pipeline for the top-level entry, or for one `matrix` entry whose
  /// fields override the top level.
  PipelineConfig pipeline(const BackendFactory& factory, const YAML::Node& entry = {}) const {
    PipelineConfig cfg;
    auto scenario = entry && entry["scenario"] ? entry["scenario"].as<std::string>() : value<std::string>("scenario", "S3");
    cfg.scenario = parse_scenario(scenario);
    cfg.label = entry && entry["label"] ? entry["label"].as<std::string>() : value<std::string>("label", "");
    const YAML::Node overrides = entry ? entry["backends"] : YAML::Node();
    auto chat = [&](const char* role) -> ChatHandle {
      auto spec = backend(role, overrides);
      return spec ? factory.chat(*spec) : nullptr;
    };
    cfg.selector = chat("selector");
    cfg.sentence_selector = chat("sentence_selector");
    cfg.decomposer = chat("decomposer");
    cfg.reader = chat("reader");
    cfg.reader_profile = profile_from_yaml(entry ? entry["reader_profile"] : YAML::Node(), reader_profile());
    cfg.prompter = prompter();
    cfg.timeout = timeout();
    cfg.validate();
    return cfg;
  }

  std::vector<PipelineConfig> matrix(const BackendFactory& factory) const {
    std::vector<PipelineConfig> out;
    const auto& m = root_["matrix"];
    if (!m) return {pipeline(factory)};
    for (const auto& entry : m) out.push_back(pipeline(factory, entry));
    return out;
  }

 private:
  YAML::Node root_;
  std::filesystem::path dir_;
};

}  // namespace mhqa
