#pragma once

// Backend seams for the two per-step LLM calls. Implementations throw
// BackendError on timeout or transport failure; malformed content is returned
// as-is and judged by the caller.

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "guide/dynamics.hpp"

namespace guide {

struct ReasonerRequest {
  std::string system;
  std::string prompt;
  int max_tokens = 256;
};

class ReasonerBackend {
 public:
  virtual ~ReasonerBackend() = default;
  virtual std::string generate(const ReasonerRequest& request) = 0;
};

struct ActorRequest {
  std::string prompt;
  nlohmann::json tool_schema;
  const Observation* obs = nullptr;
  std::string intent;
  double control_period = 1.0;
};

class ActorBackend {
 public:
  virtual ~ActorBackend() = default;
  // Raw tool-call arguments, expected to be a JSON object {fx, fy, fz, duration}.
  virtual std::string call(const ActorRequest& request) = 0;
};

// Stable 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text);
std::string hex_digest(std::string_view text);

// Canned prompt-hash -> intent table with an optional generator for misses.
// Records every prompt it sees. Thread-safe.
class MockReasoner final : public ReasonerBackend {
 public:
  using Generator = std::function<std::string(const std::string& prompt)>;

  MockReasoner() = default;
  explicit MockReasoner(Generator fallback) : fallback_(std::move(fallback)) {}

  void set(std::uint64_t prompt_hash, std::string intent);
  void fail_with_timeout(bool fail) { timeout_ = fail; }

  std::string generate(const ReasonerRequest& request) override;
  std::vector<std::string> prompts() const;

 private:
  Generator fallback_;
  std::map<std::uint64_t, std::string> canned_;
  bool timeout_ = false;
  mutable std::mutex mutex_;
  std::vector<std::string> prompts_;
};

// Intent generator that mimics a playbook-following model: evade when a
// guard_avoidance rule is injected, brake on an approach rule, else pursue.
std::string heuristic_intent(const std::string& prompt);

// Keyword interpreter of intents into thrust tool calls. A fixed raw reply can
// be forced for failure-path tests.
class MockActor final : public ActorBackend {
 public:
  void force_reply(std::string raw) { forced_ = std::move(raw); }
  std::string call(const ActorRequest& request) override;

 private:
  std::string forced_;
};

}  // namespace guide
