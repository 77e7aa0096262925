#include "guide/backend.hpp"

#include <fmt/format.h>

#include "guide/error.hpp"
#include "guide/policy.hpp"

namespace guide {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_digest(std::string_view text) { return fmt::format("{:016x}", fnv1a(text)); }

void MockReasoner::set(std::uint64_t prompt_hash, std::string intent) {
  std::lock_guard lock(mutex_);
  canned_[prompt_hash] = std::move(intent);
}

std::string MockReasoner::generate(const ReasonerRequest& request) {
  std::lock_guard lock(mutex_);
  prompts_.push_back(request.prompt);
  if (timeout_) {
    throw BackendError("mock reasoner: simulated timeout");
  }
  if (auto it = canned_.find(fnv1a(request.prompt)); it != canned_.end()) {
    return it->second;
  }
  if (fallback_) {
    return fallback_(request.prompt);
  }
  return heuristic_intent(request.prompt);
}

std::vector<std::string> MockReasoner::prompts() const {
  std::lock_guard lock(mutex_);
  return prompts_;
}

std::string heuristic_intent(const std::string& prompt) {
  if (prompt.find("[guard_avoidance]") != std::string::npos) {
    return "evade laterally away from the guard";
  }
  if (prompt.find("[approach]") != std::string::npos) {
    return "brake along the lady line to avoid overshoot";
  }
  return "pursue the lady at full throttle";
}

namespace {

bool mentions(const std::string& text, std::string_view word) {
  return text.find(word) != std::string::npos;
}

Vec3 toward_lady(const Observation& obs) {
  const Vec3 d = obs.lady.position - obs.bandit.position;
  const double n = d.norm();
  return n > 0.0 ? Vec3(d / n) : Vec3::Zero();
}

}  // namespace

std::string MockActor::call(const ActorRequest& request) {
  if (!forced_.empty()) {
    return forced_;
  }
  const std::string& intent = request.intent;
  Vec3 throttle = Vec3::Zero();
  if (mentions(intent, "hold") || mentions(intent, "zero thrust")) {
    throttle.setZero();
  } else if (mentions(intent, "full forward")) {
    throttle = Vec3::UnitX();
  } else if (request.obs != nullptr && (mentions(intent, "evade") || mentions(intent, "lateral"))) {
    throttle = evasive_direction(*request.obs);
  } else if (request.obs != nullptr && mentions(intent, "brake")) {
    throttle = -toward_lady(*request.obs);
  } else if (request.obs != nullptr && (mentions(intent, "pursue") || mentions(intent, "lady"))) {
    throttle = toward_lady(*request.obs);
  }
  nlohmann::json reply = {{"fx", throttle.x()},
                          {"fy", throttle.y()},
                          {"fz", throttle.z()},
                          {"duration", request.control_period}};
  return reply.dump();
}

}  // namespace guide
