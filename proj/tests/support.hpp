#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include <algorithm>

#include "guide/playbook.hpp"
#include "guide/rng.hpp"
#include "guide/scenario.hpp"

namespace testing {

// Hand-rolled generators over the library's seeded Rng.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double real(double lo, double hi) { return rng_.uniform(lo, hi); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng_.next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  bool chance(double p) { return rng_.bernoulli(p); }
  guide::Vec3 vec(double scale) {
    return {real(-scale, scale), real(-scale, scale), real(-scale, scale)};
  }
  template <typename T>
  const T& pick(const std::vector<T>& items) {
    return items[static_cast<std::size_t>(integer(0, static_cast<int>(items.size()) - 1))];
  }

  std::string text(int max_words) {
    static const std::vector<std::string> words = {
        "guard", "closing", "inside", "∼220 m", "lateral", "thrust", "brake", "Lady",
        "\"quoted\"", "back\\slash", "tab\there", "fx=1.0", "über", "m/s"};
    std::string out;
    const int n = integer(0, max_words);
    for (int i = 0; i < n; ++i) {
      if (i > 0) out += ' ';
      out += pick(words);
    }
    return out;
  }

  guide::RangeBound range(double lo, double hi) {
    guide::RangeBound r;
    const int shape = integer(0, 2);
    double a = real(lo, hi), b = real(lo, hi);
    if (a > b) std::swap(a, b);
    if (shape != 1) r.min = a;
    if (shape != 2) r.max = b;
    return r;
  }

  guide::ConditionBlock conditions() {
    guide::ConditionBlock c;
    if (chance(0.5)) c.time = range(0.0, 240.0);
    if (chance(0.5)) c.guard_distance = range(0.0, 400.0);
    if (chance(0.5)) c.target_distance = range(0.0, 900.0);
    if (chance(0.5)) c.velocity = range(-30.0, 30.0);
    if (chance(0.4)) c.guard_approaching = chance(0.5);
    if (chance(0.4)) c.approaching = chance(0.5);
    return c;
  }

  guide::DerivedFeatures features() {
    guide::DerivedFeatures f;
    f.time = real(0.0, 240.0);
    f.guard_distance = real(0.0, 400.0);
    f.target_distance = real(0.0, 900.0);
    f.velocity = real(-30.0, 30.0);
    f.guard_approaching = chance(0.5);
    f.approaching = f.velocity > 0.0;
    return f;
  }

  guide::Bullet bullet(const std::string& section, int counter) {
    guide::Bullet b;
    b.section = section;
    b.id = guide::make_bullet_id(section, counter);
    b.type = chance(0.5) ? guide::BulletType::Constraint : guide::BulletType::Rule;
    b.text = text(12);
    b.conditions = conditions();
    const int n_states = integer(0, 3);
    for (int i = 0; i < n_states; ++i) {
      b.states.push_back({real(0, 240), real(0, 900), real(-30, 30), real(0, 400)});
    }
    b.evidence = text(8);
    const int n_hist = integer(0, 4);
    for (int i = 0; i < n_hist; ++i) b.episode_history.push_back("ep-" + std::to_string(integer(0, 50)));
    std::vector<std::string> distinct;
    for (const auto& e : b.episode_history) {
      if (std::find(distinct.begin(), distinct.end(), e) == distinct.end()) distinct.push_back(e);
    }
    b.occurrence_count = static_cast<int>(distinct.size()) + integer(0, 3);
    return b;
  }

  guide::Playbook playbook(int version) {
    static const std::vector<std::string> sections = {"guard_avoidance", "approach", "fuel",
                                                      "terminal_phase"};
    guide::Playbook p;
    p.version = version;
    if (version == 0) return p;
    if (chance(0.8)) p.parent_version = integer(0, version - 1);
    const int n = integer(0, 6);
    for (int i = 0; i < n; ++i) p.bullets.push_back(bullet(pick(sections), i + 1));
    const int n_eps = integer(0, 3);
    for (int i = 0; i < n_eps; ++i) p.created_from_episodes.push_back("r00" + std::to_string(i));
    return p;
  }

  guide::Rng& rng() { return rng_; }

 private:
  guide::Rng rng_;
};

// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("guide-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace testing
