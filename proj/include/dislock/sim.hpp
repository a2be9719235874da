#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <variant>
#include <vector>

#include "dislock/rng.hpp"
#include "dislock/task.hpp"
#include "dislock/trace.hpp"

namespace dislock {

struct NodeId {
  enum class Kind : uint8_t { CN, MN };
  Kind kind = Kind::CN;
  uint32_t index = 0;  // CN indices are 1..numCNs; 0 is reserved for "no CN"

  static NodeId cn(uint32_t i) { return {Kind::CN, i}; }
  static NodeId mn() { return {Kind::MN, 0}; }
  bool operator==(const NodeId&) const = default;
};

struct FabricConfig {
  uint32_t num_cns = 8;
  double latency_cn_mn_us = 2.0;
  double latency_cn_cn_us = 2.0;
  double mn_nic_iops_capacity = 40e6;        // weighted ops per second
  double mn_bandwidth_bytes_per_s = 12.5e9;  // 100 Gbps
  double op_cost_read = 1.0;
  double op_cost_write = 1.0;
  double op_cost_cas = 4.0;
  double op_cost_faa = 4.0;
  uint64_t mn_memory_bytes = 64ull << 20;
  uint64_t max_op_len = 4096;
  uint64_t seed = 1;

  TimeNs latency_cn_mn() const {
    return static_cast<TimeNs>(latency_cn_mn_us * 1e3);
  }
  TimeNs latency_cn_cn() const {
    return static_cast<TimeNs>(latency_cn_cn_us * 1e3);
  }
};

// Lock-level payloads carried by CN-to-CN messages.
struct Notification {
  uint64_t lock = 0;
  Mode grant_mode = Mode::Shared;
  uint64_t reset_count = 0;
  std::optional<uint16_t> earliest_remote_ts;
  uint32_t target_client = 0;
};

struct ResetSignal {
  uint64_t lock = 0;
  uint32_t from_cn = 0;
  uint64_t new_count = 0;
};

struct ResetAck {
  uint64_t lock = 0;
  uint32_t from_cn = 0;
};

using Message = std::variant<Notification, ResetSignal, ResetAck>;

struct Unit {};

// Awaitable completion handle resolved by the simulator.
template <typename T>
class Completion {
 public:
  struct State {
    std::optional<T> value;
    std::coroutine_handle<> waiter;
  };
  using StatePtr = std::shared_ptr<State>;

  Completion() : state_(std::make_shared<State>()) {}
  explicit Completion(StatePtr s) : state_(std::move(s)) {}

  bool await_ready() const noexcept { return state_->value.has_value(); }
  void await_suspend(std::coroutine_handle<> h) { state_->waiter = h; }
  T await_resume() { return std::move(*state_->value); }

  StatePtr state() const { return state_; }

 private:
  StatePtr state_;
};

class Simulator;

// Settles a Completion; resuming the waiter is scheduled as a fresh event so
// callers never run protocol code on the resolver's stack.
template <typename T>
class Resolver {
 public:
  Resolver() = default;
  Resolver(Simulator* sim, typename Completion<T>::StatePtr s)
      : sim_(sim), state_(std::move(s)) {}

  bool settled() const { return state_ && state_->value.has_value(); }
  inline void resolve(T value) const;

 private:
  Simulator* sim_ = nullptr;
  typename Completion<T>::StatePtr state_;
};

struct FabricCounters {
  uint64_t reads = 0;
  uint64_t writes = 0;
  uint64_t cas = 0;
  uint64_t faa = 0;
  uint64_t messages = 0;
  uint64_t total_mn_ops() const { return reads + writes + cas + faa; }
};

// Deterministic discrete-event fabric: CN/MN nodes, one-sided memory verbs
// with MN-side atomicity, a weighted token-bucket MN-NIC, reliable in-order
// CN-to-CN messaging, and failure injection. Single-threaded; all randomness
// comes from the seeded generator, so identical (config, seed) reproduces
// identical event traces.
class Simulator {
 public:
  explicit Simulator(FabricConfig cfg);
  ~Simulator();

  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  TimeNs now() const { return now_; }
  const FabricConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }

  // -- scheduling --------------------------------------------------------
  void schedule_at(TimeNs t, std::function<void()> fn);
  void schedule_now(std::function<void()> fn) { schedule_at(now_, std::move(fn)); }
  void schedule_after(TimeNs delay, std::function<void()> fn) {
    schedule_at(now_ + delay, std::move(fn));
  }
  Completion<Unit> sleep(TimeNs delay);

  template <typename T>
  std::pair<Completion<T>, Resolver<T>> make_completion() {
    Completion<T> c;
    return {c, Resolver<T>(this, c.state())};
  }

  // -- MN memory ---------------------------------------------------------
  uint64_t alloc(uint64_t size, uint64_t align = 8);
  // Zero-cost accessors for tests, assertions, and initialization; these do
  // not model fabric traffic.
  uint64_t peek_u64(uint64_t addr) const;
  void poke_u64(uint64_t addr, uint64_t value);
  std::vector<uint8_t> peek(uint64_t addr, uint32_t len) const;

  // -- one-sided verbs ---------------------------------------------------
  Completion<uint64_t> faa(NodeId src, uint64_t addr, uint64_t add,
                           const char* tag = "");
  Completion<uint64_t> cas(NodeId src, uint64_t addr, uint64_t expected,
                           uint64_t desired, const char* tag = "");
  Completion<std::vector<uint8_t>> read(NodeId src, uint64_t addr, uint32_t len,
                                        const char* tag = "");
  Completion<Unit> write(NodeId src, uint64_t addr, std::vector<uint8_t> data,
                         const char* tag = "");
  struct FaaReadResult {
    uint64_t old_value = 0;
    std::vector<uint8_t> bytes;
  };
  // FAA with a piggybacked READ: one round trip, charged as both ops.
  Completion<FaaReadResult> faa_read(NodeId src, uint64_t faa_addr, uint64_t add,
                                     uint64_t read_addr, uint32_t read_len,
                                     const char* tag = "");

  // -- CN-to-CN messaging (reliable, in order per channel) ---------------
  void send_message(uint32_t from_cn, uint32_t to_cn, Message msg);
  void set_message_handler(uint32_t cn,
                           std::function<void(uint32_t from, const Message&)> h);

  // -- failures ----------------------------------------------------------
  void fail_node(NodeId node);
  void recover_node(NodeId node);
  bool is_failed(NodeId node) const;
  // Invoked on MN recovery before stalled ops are re-dispatched (lock
  // reinitialization hook).
  void set_mn_recovery_hook(std::function<void()> hook) {
    mn_recovery_hook_ = std::move(hook);
  }

  // -- run loop ----------------------------------------------------------
  // Processes events in timestamp order (ties broken by insertion sequence)
  // until the queue drains or the horizon is reached. Returns the final time.
  TimeNs run_until_quiescent(TimeNs horizon = std::numeric_limits<TimeNs>::max());
  bool horizon_exceeded() const { return horizon_exceeded_; }

  // -- accounting --------------------------------------------------------
  const FabricCounters& counters() const { return counters_; }
  TimeNs nic_busy_ns() const { return nic_busy_ns_; }

  void set_trace_sink(TraceSink* sink) { trace_ = sink; }
  TraceSink* trace_sink() const { return trace_; }

 private:
  enum class Verb : uint8_t { Read, Write, Cas, Faa, FaaRead };

  struct MnOp {
    Verb verb;
    NodeId src;
    uint64_t addr = 0;
    uint32_t len = 0;
    uint64_t operand_a = 0;  // CAS expected / FAA addend
    uint64_t operand_b = 0;  // CAS swap
    uint64_t read_addr = 0;  // FaaRead piggyback
    uint32_t read_len = 0;
    std::vector<uint8_t> payload;
    const char* tag = "";
    std::function<void(uint64_t, std::vector<uint8_t>)> complete;
  };

  void dispatch_to_mn(MnOp op);
  void service_at_mn(MnOp& op);
  double service_cost(Verb verb) const;
  void check_addr(uint64_t addr, uint64_t len) const;
  void trace_mem(const char* kind, NodeId src, uint64_t addr, uint64_t oldv,
                 uint64_t newv, const char* tag);

  struct Event {
    TimeNs t;
    uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Event& o) const {
      return t != o.t ? t > o.t : seq > o.seq;
    }
  };

  FabricConfig cfg_;
  Rng rng_;
  TimeNs now_ = 0;
  uint64_t event_seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  bool horizon_exceeded_ = false;

  std::vector<uint8_t> memory_;
  uint64_t alloc_next_ = 0;

  TimeNs nic_free_at_ = 0;
  TimeNs nic_busy_ns_ = 0;

  std::vector<bool> cn_failed_;  // index 0 unused
  bool mn_failed_ = false;
  std::vector<MnOp> stalled_ops_;
  std::function<void()> mn_recovery_hook_;

  std::vector<std::function<void(uint32_t, const Message&)>> msg_handlers_;
  std::map<std::pair<uint32_t, uint32_t>, TimeNs> channel_last_delivery_;

  FabricCounters counters_;
  TraceSink* trace_ = nullptr;
};

template <typename T>
inline void Resolver<T>::resolve(T value) const {
  if (!state_ || state_->value.has_value()) return;
  state_->value.emplace(std::move(value));
  if (state_->waiter) {
    auto h = state_->waiter;
    sim_->schedule_now([h] { h.resume(); });
  }
}

}  // namespace dislock
