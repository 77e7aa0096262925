#pragma once

// OpenAI-compatible chat-completions client serving as reasoner, actor and
// free-form completion backend.

#include <chrono>
#include <string>

#include "guide/backend.hpp"

namespace guide {

struct ChatEndpoint {
  std::string scheme_host_port;  // "http://127.0.0.1:8080"
  std::string path_prefix;       // "/v1"
};

// Splits "http(s)://host[:port][/prefix]". Throws InvalidInput.
ChatEndpoint parse_base_url(const std::string& base_url);

struct ChatConfig {
  std::string base_url;
  std::string model;
  std::string api_key;
  std::chrono::milliseconds timeout{30000};

  // Reads GUIDE_LLM_BASE_URL, GUIDE_LLM_MODEL, GUIDE_LLM_API_KEY. Throws
  // BackendError naming the first missing variable.
  static ChatConfig from_env();
};

class HttpChatBackend final : public ReasonerBackend, public ActorBackend {
 public:
  explicit HttpChatBackend(ChatConfig config);

  std::string generate(const ReasonerRequest& request) override;
  std::string call(const ActorRequest& request) override;

  // Plain completion; throws BackendError on transport or HTTP failure.
  std::string complete(const std::string& system, const std::string& user, int max_tokens);

 private:
  nlohmann::json post(const nlohmann::json& body);

  ChatConfig config_;
  ChatEndpoint endpoint_;
};

}  // namespace guide
