#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "mhqa/backend.hpp"
#include "mhqa/oracle.hpp"
#include "mhqa/remote.hpp"
#include "support/synthetic_corpus.hpp"

using namespace mhqa;
namespace fs = std::filesystem;

namespace {

ChatRequest req(const std::string& user, double temperature = 0.01) {
  GenerationParams p;
  p.temperature = temperature;
  return make_request("system", user, p, {"ex1", PromptRole::reader});
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("mhqa_test_" + name);
  fs::remove_all(d);
  return d;
}

// Local HTTP server on an ephemeral port, stopped on destruction.
class TestServer {
 public:
  TestServer() { port_ = server_.bind_to_any_port("127.0.0.1"); }
  ~TestServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  httplib::Server& server() { return server_; }
  void start() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

RemoteConfig remote(const std::string& url, std::vector<long>* sleeps) {
  RemoteConfig c;
  c.base_url = url;
  c.model_id = "m";
  c.timeout = std::chrono::seconds(5);
  c.retry.sleep = [sleeps](std::chrono::milliseconds d) { sleeps->push_back(d.count()); };
  return c;
}

}  // namespace

TEST(GenerationParams, Defaults) {
  GenerationParams p;
  EXPECT_EQ(p.temperature, 0.01);
  EXPECT_EQ(p.top_p, 0.8);
  EXPECT_EQ(p.max_tokens, 512);
  EXPECT_EQ(GenerationParams::chain_of_thought().max_tokens, 1024);
  p.top_p = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(ChatRequest, RolesMustAlternate) {
  auto r = req("hi");
  EXPECT_NO_THROW(r.validate());
  r.messages.push_back({Role::user, "again"});
  EXPECT_THROW(r.validate(), ConfigError);
  ChatRequest empty;
  EXPECT_THROW(empty.validate(), ConfigError);
}

TEST(ScriptedBackend, MatchKindsFirstRuleWins) {
  ScriptedBackend b;
  b.add_rule(MatchKind::exact, "Q1", "Paris")
      .add_rule(MatchKind::prefix, "Q", "prefix")
      .add_rule(MatchKind::regex, "x+y", "regex");
  EXPECT_EQ(b.generate(req("Q1")).text, "Paris");
  EXPECT_EQ(b.generate(req("Q2")).text, "prefix");
  EXPECT_EQ(b.generate(req("axxy")).text, "regex");
  try {
    b.generate(req("nothing"));
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), BackendError::Kind::unscripted);
    EXPECT_NE(std::string(e.what()).find("unscripted prompt"), std::string::npos);
  }
}

TEST(ScriptedBackend, FromJsonScript) {
  auto b = ScriptedBackend::from_json(json::parse(R"({"model_id": "s", "rules": [
    {"match": "exact", "pattern": "Q1", "response": "Paris"},
    {"match": "regex", "pattern": ".", "response": "other"}]})"));
  EXPECT_EQ(b->model_id(), "s");
  EXPECT_EQ(b->generate(req("Q1")).text, "Paris");
  EXPECT_EQ(b->generate(req("Q9")).text, "other");
  EXPECT_THROW(ScriptedBackend::from_json(json::parse(R"({"rules": [{"match": "glob", "pattern": "", "response": ""}]})")),
               ConfigError);
}

TEST(ScriptedBackend, CacheHitOnRepeat) {
  auto scripted = std::make_shared<ScriptedBackend>();
  scripted->add_rule(MatchKind::exact, "Q1", "Paris");
  auto cached = with_cache(scripted, std::make_shared<ResponseCache>());
  auto first = cached->generate(req("Q1"));
  EXPECT_EQ(first.text, "Paris");
  EXPECT_FALSE(first.cache_hit);
  auto second = cached->generate(req("Q1"));
  EXPECT_EQ(second.text, "Paris");
  EXPECT_TRUE(second.cache_hit);
}

TEST(OracleBackends, AnswerFromGold) {
  auto corpus = make_corpus_index(fixtures::synthetic_corpus(5));
  OracleReader reader(corpus);
  for (const auto& ex : corpus->examples()) {
    auto r = make_request("s", "anything at all", {}, {ex.id, PromptRole::reader});
    EXPECT_EQ(reader.generate(r).text, ex.answer);
  }
  EXPECT_FALSE(reader.cacheable());
  OracleSelector selector(corpus);
  const auto& ex = corpus->examples()[0];
  auto text = selector.generate(make_request("s", "x", {}, {ex.id, PromptRole::paragraph_selector})).text;
  for (const auto& t : gold_titles(ex)) EXPECT_NE(text.find(t), std::string::npos);
  EXPECT_THROW(selector.generate(make_request("s", "x", {}, {ex.id, PromptRole::reader})), BackendError);
}

TEST(CacheKey, StableAndSensitive) {
  EXPECT_EQ(cache_key(BackendKind::scripted_mock, req("Q")), cache_key(BackendKind::scripted_mock, req("Q")));
  EXPECT_NE(cache_key(BackendKind::scripted_mock, req("Q", 0.01)), cache_key(BackendKind::scripted_mock, req("Q", 0.02)));
  EXPECT_NE(cache_key(BackendKind::scripted_mock, req("Q")), cache_key(BackendKind::remote_chat, req("Q")));
  auto a = req("Q"), b = req("Q");
  b.meta.example_id = "other";  // metadata is not part of the key
  EXPECT_EQ(cache_key(BackendKind::scripted_mock, a), cache_key(BackendKind::scripted_mock, b));
  b.system_prompt = "different";
  EXPECT_NE(cache_key(BackendKind::scripted_mock, a), cache_key(BackendKind::scripted_mock, b));
}

TEST(CacheKey, ThousandDistinctRequestsThousandKeys) {
  std::mt19937_64 rng(42);
  std::set<std::string> inputs, keys;
  while (inputs.size() < 1000) {
    auto r = req("question " + std::to_string(rng()), 0.01 * static_cast<double>(rng() % 50));
    r.params.max_tokens = 1 + static_cast<int>(rng() % 2000);
    auto canonical = cache_key_inputs(BackendKind::remote_chat, r).dump();
    if (inputs.insert(canonical).second) keys.insert(cache_key(BackendKind::remote_chat, r));
  }
  EXPECT_EQ(keys.size(), 1000u);
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(util::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ResponseCache, PersistsAcrossInstancesContentAddressed) {
  auto dir = fresh_dir("cache_persist");
  auto calls = std::make_shared<std::atomic<int>>(0);
  auto scripted = std::make_shared<ScriptedBackend>();
  scripted->add_responder([calls](const ChatRequest&) -> std::optional<std::string> {
    ++*calls;
    return "fresh";
  });
  const auto key = cache_key(*scripted, req("Q"));
  {
    auto b = with_cache(scripted, std::make_shared<ResponseCache>(dir));
    EXPECT_FALSE(b->generate(req("Q")).cache_hit);
  }
  EXPECT_TRUE(fs::exists(dir / key.substr(0, 2) / (key + ".json")));
  auto b = with_cache(scripted, std::make_shared<ResponseCache>(dir));  // "restart"
  auto r = b->generate(req("Q"));
  EXPECT_TRUE(r.cache_hit);
  EXPECT_EQ(r.text, "fresh");
  EXPECT_EQ(calls->load(), 1);
}

TEST(ResponseCache, DiskFailureDegradesToMemory) {
  auto blocker = fresh_dir("cache_blocker");
  std::ofstream(blocker) << "not a directory";
  auto cache = std::make_shared<ResponseCache>(blocker / "sub");
  EXPECT_FALSE(cache->disk_enabled());
  cache->put("abcd", json::object(), {"text", {}});
  ASSERT_TRUE(cache->get("abcd"));
  EXPECT_EQ(cache->get("abcd")->text, "text");
}

TEST(ResponseCache, ConcurrentUse) {
  auto scripted = std::make_shared<ScriptedBackend>();
  scripted->add_responder([](const ChatRequest& r) -> std::optional<std::string> { return "echo " + r.user_text(); });
  auto cache = std::make_shared<ResponseCache>(fresh_dir("cache_concurrent"));
  auto b = with_cache(scripted, cache);
  std::vector<std::jthread> threads;
  std::atomic<int> bad{0};
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&, t] {
      for (int i = 0; i < 200; ++i) {
        auto q = "q" + std::to_string((i * 7 + t) % 50);
        if (b->generate(req(q)).text != "echo " + q) ++bad;
      }
    });
  threads.clear();
  EXPECT_EQ(bad.load(), 0);
  EXPECT_EQ(cache->size(), 50u);
}

TEST(MockEmbedder, DeterministicShapeAndSelfSimilarity) {
  MockEmbedder e;
  auto v = e.embed({"the cat sat", "the cat sat", "a", "b"});
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0].values, v[1].values);
  EXPECT_EQ(v[2].values.size(), 256u);
  EXPECT_EQ(v[3].values.size(), 256u);
  EXPECT_NEAR(cosine_similarity(v[0].values, v[1].values), 1.0, 1e-9);
  MockEmbedder other;
  EXPECT_EQ(other.embed({"the cat sat"})[0].values, v[0].values);
  EXPECT_THROW(e.embed({}), std::invalid_argument);
}

TEST(MockEmbedder, PlantedVectors) {
  MockEmbedder e(4);
  e.plant("x", {1, 0, 0, 0});
  EXPECT_EQ(e.embed({"x"})[0].values, (std::vector<double>{1, 0, 0, 0}));
  EXPECT_THROW(e.plant("y", {1, 0}), std::invalid_argument);
}

TEST(Remote, RetriesWithExponentialBackoffThenSucceeds) {
  TestServer srv;
  std::atomic<int> hits{0};
  json seen;
  std::mutex mu;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request& rq, httplib::Response& rs) {
    if (++hits < 3) {
      rs.status = 503;
      return;
    }
    std::lock_guard lock(mu);
    seen = json::parse(rq.body);
    rs.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Answer: Paris"}}],"usage":{"prompt_tokens":7,"completion_tokens":3}})",
                   "application/json");
  });
  srv.start();
  std::vector<long> sleeps;
  RemoteChatBackend b(remote(srv.url(), &sleeps));
  auto r = b.generate(req("Q1"));
  EXPECT_EQ(r.text, "Answer: Paris");
  EXPECT_EQ(r.usage.prompt, 7);
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(sleeps, (std::vector<long>{1000, 2000}));
  EXPECT_EQ(seen["model"], "m");
  EXPECT_EQ(seen["messages"][0]["role"], "system");
  EXPECT_EQ(seen["messages"][1]["content"], "Q1");
  EXPECT_EQ(seen["temperature"], 0.01);
  EXPECT_EQ(seen["top_p"], 0.8);
}

TEST(Remote, EndpointDownFailsAfterBoundedAttempts) {
  std::vector<long> sleeps;
  RemoteChatBackend b(remote("http://127.0.0.1:1", &sleeps));  // nothing listens on port 1
  try {
    b.generate(req("Q"));
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), BackendError::Kind::transport);
  }
  EXPECT_EQ(sleeps.size(), 2u);
}

TEST(Remote, ClientErrorIsNotRetried) {
  TestServer srv;
  std::atomic<int> hits{0};
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& rs) {
    ++hits;
    rs.status = 400;
  });
  srv.start();
  std::vector<long> sleeps;
  RemoteChatBackend b(remote(srv.url(), &sleeps));
  EXPECT_THROW(b.generate(req("Q")), BackendError);
  EXPECT_EQ(hits.load(), 1);
}

TEST(Remote, EmbeddingsKeepOrder) {
  TestServer srv;
  srv.server().Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& rs) {
    rs.set_content(R"({"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]})", "application/json");
  });
  srv.start();
  std::vector<long> sleeps;
  RemoteEmbedBackend b(remote(srv.url(), &sleeps));
  auto v = b.embed({"a", "b"});
  EXPECT_EQ(v[0].values, (std::vector<double>{1, 0}));
  EXPECT_EQ(v[1].values, (std::vector<double>{0, 1}));
}

TEST(InFlightLimiter, BoundsConcurrency) {
  InFlightLimiter limiter(3);
  std::atomic<int> current{0}, peak{0};
  std::vector<std::jthread> threads;
  for (int t = 0; t < 12; ++t)
    threads.emplace_back([&] {
      auto permit = limiter.acquire();
      int now = ++current;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      --current;
    });
  threads.clear();
  EXPECT_LE(peak.load(), 3);
  EXPECT_GE(peak.load(), 1);
}

TEST(Endpoint, Parse) {
  auto e = parse_endpoint("https://api.example.com/v1/");
  EXPECT_EQ(e.scheme_host_port, "https://api.example.com");
  EXPECT_EQ(e.path_prefix, "/v1");
  EXPECT_THROW(parse_endpoint("ftp://x"), ConfigError);
}
