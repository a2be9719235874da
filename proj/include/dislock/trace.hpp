#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace dislock {

using TimeNs = uint64_t;
constexpr TimeNs kUs = 1000;       // nanoseconds per microsecond
constexpr TimeNs kMs = 1000000;

enum class Mode : uint8_t { Shared = 0, Exclusive = 1 };

inline char mode_char(Mode m) { return m == Mode::Shared ? 'S' : 'X'; }

// One line of the JSONL trace. Fabric-level events fill addr/old/new;
// lock-level events fill lock/client/cn/mode/seq instead.
struct TraceEvent {
  TimeNs t = 0;
  std::string node;       // "cn3" or "mn"
  std::string kind;       // faa, cas, read, write, msg, enqueue, grant, ...
  bool has_mem = false;
  uint64_t addr = 0;
  uint64_t old_val = 0;
  uint64_t new_val = 0;
  bool has_lock = false;
  uint64_t lock = 0;
  uint32_t client = 0;
  uint32_t cn = 0;
  char mode = 0;
  uint64_t seq = 0;
  std::string tag;
};

class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void emit(const TraceEvent& ev) = 0;
};

// All 64-bit values rendered as unsigned decimal; key order is fixed so that
// equal runs produce byte-identical files.
class JsonlTraceWriter final : public TraceSink {
 public:
  explicit JsonlTraceWriter(std::ostream& out) : out_(out) {}
  void emit(const TraceEvent& ev) override {
    out_ << "{\"t\":" << ev.t << ",\"node\":\"" << ev.node << "\",\"kind\":\""
         << ev.kind << '"';
    if (ev.has_mem) {
      out_ << ",\"addr\":" << ev.addr << ",\"old\":" << ev.old_val
           << ",\"new\":" << ev.new_val;
    }
    if (ev.has_lock) {
      out_ << ",\"lock\":" << ev.lock << ",\"client\":" << ev.client
           << ",\"cn\":" << ev.cn << ",\"mode\":\"" << ev.mode
           << "\",\"seq\":" << ev.seq;
    }
    if (!ev.tag.empty()) out_ << ",\"tag\":\"" << ev.tag << '"';
    out_ << "}\n";
  }

 private:
  std::ostream& out_;
};

// Compact lock-level event record consumed by the checker.
struct LockEvent {
  enum class Kind : uint8_t {
    Enqueue,     // acquisition issued (t = issue time)
    Grant,       // ownership obtained
    Release,     // release initiated (ownership given up)
    Abort,       // acquisition aborted by a reset; will be retried
    ResetBegin,
    ResetDone,
  };
  Kind kind;
  TimeNs t;
  uint64_t lock;
  uint32_t client;
  uint32_t cn;
  Mode mode;
  uint64_t seq;      // enqueue order at the MN (0 when the lock has no order)
  TimeNs issue_t;    // when the acquisition was issued (Grant events)
};

using LockEventLog = std::vector<LockEvent>;

inline const char* lock_event_kind_name(LockEvent::Kind k) {
  switch (k) {
    case LockEvent::Kind::Enqueue: return "enqueue";
    case LockEvent::Kind::Grant: return "grant";
    case LockEvent::Kind::Release: return "release";
    case LockEvent::Kind::Abort: return "abort";
    case LockEvent::Kind::ResetBegin: return "reset_begin";
    case LockEvent::Kind::ResetDone: return "reset_done";
  }
  return "?";
}

}  // namespace dislock
