#include "guide/http_backend.hpp"

#include <cstdlib>

#include <httplib.h>

#include "guide/error.hpp"

namespace guide {

ChatEndpoint parse_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw InvalidInput("base url needs a scheme: " + base_url);
  }
  const std::string scheme = base_url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw InvalidInput("unsupported scheme: " + scheme);
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  ChatEndpoint ep;
  ep.scheme_host_port = base_url.substr(0, path_start);
  if (path_start != std::string::npos) {
    ep.path_prefix = base_url.substr(path_start);
    while (!ep.path_prefix.empty() && ep.path_prefix.back() == '/') {
      ep.path_prefix.pop_back();
    }
  }
  if (ep.scheme_host_port.size() <= scheme_end + 3) {
    throw InvalidInput("base url has no host: " + base_url);
  }
  return ep;
}

ChatConfig ChatConfig::from_env() {
  auto need = [](const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') {
      throw BackendError(std::string("environment variable ") + name + " is not set");
    }
    return std::string(v);
  };
  ChatConfig c;
  c.base_url = need("GUIDE_LLM_BASE_URL");
  c.model = need("GUIDE_LLM_MODEL");
  if (const char* key = std::getenv("GUIDE_LLM_API_KEY")) {
    c.api_key = key;
  }
  return c;
}

HttpChatBackend::HttpChatBackend(ChatConfig config)
    : config_(std::move(config)), endpoint_(parse_base_url(config_.base_url)) {}

nlohmann::json HttpChatBackend::post(const nlohmann::json& body) {
  httplib::Client client(endpoint_.scheme_host_port);
  if (!client.is_valid()) {
    throw BackendError("cannot use endpoint " + endpoint_.scheme_host_port);
  }
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }
  auto res = client.Post(endpoint_.path_prefix + "/chat/completions", headers, body.dump(),
                         "application/json");
  if (!res) {
    throw BackendError("request failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw BackendError("backend returned HTTP " + std::to_string(res->status));
  }
  auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) {
    throw BackendError("backend reply is not JSON");
  }
  return reply;
}

namespace {

const nlohmann::json* first_message(const nlohmann::json& reply) {
  auto choices = reply.find("choices");
  if (choices == reply.end() || !choices->is_array() || choices->empty()) return nullptr;
  auto msg = (*choices)[0].find("message");
  if (msg == (*choices)[0].end() || !msg->is_object()) return nullptr;
  return &*msg;
}

}  // namespace

std::string HttpChatBackend::complete(const std::string& system, const std::string& user,
                                      int max_tokens) {
  nlohmann::json body = {{"model", config_.model},
                         {"max_tokens", max_tokens},
                         {"messages",
                          {{{"role", "system"}, {"content", system}},
                           {{"role", "user"}, {"content", user}}}}};
  const auto reply = post(body);
  const auto* msg = first_message(reply);
  if (msg == nullptr || !msg->contains("content") || !(*msg)["content"].is_string()) {
    throw BackendError("backend reply has no message content");
  }
  return (*msg)["content"].get<std::string>();
}

std::string HttpChatBackend::generate(const ReasonerRequest& request) {
  return complete(request.system, request.prompt, request.max_tokens);
}

std::string HttpChatBackend::call(const ActorRequest& request) {
  nlohmann::json body = {
      {"model", config_.model},
      {"messages",
       {{{"role", "system"},
         {"content", "Translate the manoeuvre intent into a single set_thrust call."}},
        {{"role", "user"}, {"content", request.prompt}}}},
      {"tools", nlohmann::json::array({request.tool_schema})},
      {"tool_choice", {{"type", "function"}, {"function", {{"name", "set_thrust"}}}}}};
  const auto reply = post(body);
  const auto* msg = first_message(reply);
  if (msg == nullptr) {
    return {};
  }
  auto calls = msg->find("tool_calls");
  if (calls == msg->end() || !calls->is_array() || calls->empty()) {
    return {};
  }
  const auto& fn = (*calls)[0].value("function", nlohmann::json::object());
  auto args = fn.find("arguments");
  if (args == fn.end()) return {};
  return args->is_string() ? args->get<std::string>() : args->dump();
}

}  // namespace guide
