#pragma once

#include <cstdint>

namespace ruleforge {

// Thread-local high-water mark for numeric buffer allocations. Enabled only
// while a scaling benchmark (or test) wants a peak-byte reading; the hooks
// are no-ops otherwise.
namespace memtrack {

struct Counters {
  std::int64_t live = 0;
  std::int64_t peak = 0;
  bool enabled = false;
};

inline Counters& counters() {
  thread_local Counters c;
  return c;
}

inline void add(std::int64_t bytes) {
  Counters& c = counters();
  if (!c.enabled) return;
  c.live += bytes;
  if (c.live > c.peak) c.peak = c.live;
}

inline void sub(std::int64_t bytes) {
  Counters& c = counters();
  if (!c.enabled) return;
  c.live -= bytes;
}

class Scope {
 public:
  Scope() {
    Counters& c = counters();
    c.live = 0;
    c.peak = 0;
    c.enabled = true;
  }
  ~Scope() { counters().enabled = false; }
  std::int64_t peak() const { return counters().peak; }
};

}  // namespace memtrack
}  // namespace ruleforge
