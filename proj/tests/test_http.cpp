#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "guide/error.hpp"
#include "guide/http_backend.hpp"
#include "guide/policy.hpp"

// After Eigen: httplib's system headers leak macros that break Eigen's templates.
#include <httplib.h>

using namespace guide;
using nlohmann::json;

namespace {

// A chat-completions stub on a loopback port. The handler decides the reply;
// every request body and auth header is kept for inspection.
class StubServer {
 public:
  using Handler = std::function<void(const json& body, httplib::Response&)>;

  explicit StubServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      {
        std::lock_guard lock(mutex_);
        bodies_.push_back(body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      handler_(body, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  ChatConfig config() const {
    ChatConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1/";
    c.model = "stub-model";
    c.api_key = "k-123";
    c.timeout = std::chrono::milliseconds(2000);
    return c;
  }
  std::vector<json> bodies() const {
    std::lock_guard lock(mutex_);
    return bodies_;
  }
  std::vector<std::string> auth() const {
    std::lock_guard lock(mutex_);
    return auth_;
  }

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mutex_;
  std::vector<json> bodies_;
  std::vector<std::string> auth_;
};

json content_reply(const std::string& text) {
  return {{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}};
}

json tool_reply(const json& arguments) {
  return {{"choices",
           {{{"message",
              {{"role", "assistant"},
               {"tool_calls",
                {{{"type", "function"},
                  {"function", {{"name", "set_thrust"}, {"arguments", arguments}}}}}}}}}}}};
}

}  // namespace

TEST_CASE("base urls split into host and path prefix") {
  const ChatEndpoint a = parse_base_url("http://127.0.0.1:8080/v1/");
  CHECK(a.scheme_host_port == "http://127.0.0.1:8080");
  CHECK(a.path_prefix == "/v1");
  const ChatEndpoint b = parse_base_url("https://api.example.org");
  CHECK(b.scheme_host_port == "https://api.example.org");
  CHECK(b.path_prefix.empty());
  CHECK_THROWS_AS(parse_base_url("127.0.0.1:8080"), InvalidInput);
  CHECK_THROWS_AS(parse_base_url("ftp://host"), InvalidInput);
  CHECK_THROWS_AS(parse_base_url("http:///v1"), InvalidInput);
}

TEST_CASE("environment configuration names the first missing variable") {
  ::setenv("GUIDE_LLM_BASE_URL", "http://127.0.0.1:1/v1", 1);
  ::unsetenv("GUIDE_LLM_MODEL");
  CHECK_THROWS_WITH_AS(ChatConfig::from_env(), doctest::Contains("GUIDE_LLM_MODEL"), BackendError);
  ::setenv("GUIDE_LLM_MODEL", "m", 1);
  const ChatConfig c = ChatConfig::from_env();
  CHECK(c.model == "m");
  ::unsetenv("GUIDE_LLM_BASE_URL");
  CHECK_THROWS_WITH_AS(ChatConfig::from_env(), doctest::Contains("GUIDE_LLM_BASE_URL"), BackendError);
  ::unsetenv("GUIDE_LLM_MODEL");
}

TEST_CASE("reasoner requests carry system, prompt, budget and key") {
  StubServer stub([](const json&, httplib::Response& res) {
    res.set_content(content_reply("Evade laterally.").dump(), "application/json");
  });
  HttpChatBackend backend(stub.config());
  CHECK(backend.generate({"sys", "observe", 64}) == "Evade laterally.");
  const auto bodies = stub.bodies();
  REQUIRE(bodies.size() == 1);
  CHECK(bodies[0]["model"] == "stub-model");
  CHECK(bodies[0]["max_tokens"] == 64);
  CHECK(bodies[0]["messages"][0]["content"] == "sys");
  CHECK(bodies[0]["messages"][1]["content"] == "observe");
  CHECK(stub.auth()[0] == "Bearer k-123");
}

TEST_CASE("actor requests force the thrust tool and return its arguments") {
  const json args = {{"fx", 0.5}, {"fy", 0.0}, {"fz", -1.0}, {"duration", 1.0}};
  std::atomic<int> mode{0};
  StubServer stub([&](const json&, httplib::Response& res) {
    switch (mode.load()) {
      case 0: res.set_content(tool_reply(args.dump()).dump(), "application/json"); break;
      case 1: res.set_content(tool_reply(args).dump(), "application/json"); break;
      default: res.set_content(content_reply("no tool").dump(), "application/json"); break;
    }
  });
  HttpChatBackend backend(stub.config());
  ActorRequest req;
  req.prompt = "full forward";
  req.tool_schema = thrust_tool_schema();
  CHECK(json::parse(backend.call(req)) == args);
  mode = 1;
  CHECK(json::parse(backend.call(req)) == args);
  mode = 2;
  CHECK(backend.call(req).empty());
  const json body = stub.bodies().front();
  CHECK(body["tool_choice"]["function"]["name"] == "set_thrust");
  CHECK(body["tools"][0] == thrust_tool_schema());
}

TEST_CASE("transport and protocol failures raise backend errors") {
  std::atomic<int> mode{0};
  StubServer stub([&](const json&, httplib::Response& res) {
    switch (mode.load()) {
      case 0: res.status = 500; break;
      case 1: res.set_content("not json", "text/plain"); break;
      case 2: res.set_content(json{{"choices", json::array()}}.dump(), "application/json"); break;
      default:
        std::this_thread::sleep_for(std::chrono::milliseconds(600));
        res.set_content(content_reply("late").dump(), "application/json");
    }
  });
  ChatConfig cfg = stub.config();
  cfg.timeout = std::chrono::milliseconds(200);
  HttpChatBackend backend(cfg);
  CHECK_THROWS_WITH_AS(backend.complete("s", "u", 8), doctest::Contains("HTTP 500"), BackendError);
  mode = 1;
  CHECK_THROWS_AS(backend.complete("s", "u", 8), BackendError);
  mode = 2;
  CHECK_THROWS_AS(backend.complete("s", "u", 8), BackendError);
  mode = 3;
  CHECK_THROWS_AS(backend.complete("s", "u", 8), BackendError);

  ChatConfig dead;
  dead.base_url = "http://127.0.0.1:1";
  dead.model = "m";
  dead.timeout = std::chrono::milliseconds(200);
  HttpChatBackend nowhere(dead);
  CHECK_THROWS_AS(nowhere.complete("s", "u", 8), BackendError);
}
