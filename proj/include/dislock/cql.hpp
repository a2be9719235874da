#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "dislock/header.hpp"
#include "dislock/reset.hpp"
#include "dislock/sim.hpp"
#include "dislock/task.hpp"

namespace dislock {

// MN layout of an array of CQL locks: per lock an 8-byte header followed by
// C contiguous 8-byte queue entries.
struct CqlLockSet {
  uint64_t base = 0;
  HeaderLayout layout;
  uint64_t count = 0;

  uint64_t stride() const { return 8 + layout.capacity() * 8ull; }
  uint64_t header_addr(uint64_t lock) const { return base + lock * stride(); }
  uint64_t queue_addr(uint64_t lock) const { return header_addr(lock) + 8; }
  uint64_t entry_addr(uint64_t lock, uint32_t slot) const {
    return queue_addr(lock) + slot * 8ull;
  }
  uint32_t queue_bytes() const { return layout.capacity() * 8; }

  // Allocates and initializes all headers to 0 and entries to version -1.
  static CqlLockSet create(Simulator& sim, const HeaderLayout& layout,
                           uint64_t count);
  // Reinitializes one lock in place (used by the MN recovery hook and tests).
  static void reinit_lock(Simulator& sim, const CqlLockSet& set, uint64_t lock);
};

struct CqlOptions {
  uint32_t clients_per_cn = 32;
  TimeNs acquisition_timeout = 100 * kMs;
  TimeNs abort_retry_base = 8 * kUs;
  TimeNs abort_retry_cap = 1 * kMs;
  TimeNs reset_barrier_poll = 20 * kUs;
  bool emit_lock_events = true;  // off when wrapped by hierarchical locking
};

struct CqlMetrics {
  uint64_t acquisitions = 0;     // logical (granted) acquisitions
  uint64_t acquire_mn_ops = 0;   // FAAs + entry WRITEs, including retries
  uint64_t releases = 0;
  uint64_t release_mn_ops = 0;   // base FAA+READ charges
  uint64_t refetch_reads = 0;    // extra READs for obsolete entries
  uint64_t notifications = 0;
  uint64_t aborts = 0;
  uint64_t timeouts = 0;
  uint64_t lost_wakeups = 0;
  uint64_t resets_started = 0;
  uint64_t resets_won = 0;
  uint64_t resets_done = 0;
  uint64_t reset_postcond_fail = 0;
};

// Per-CN CQL protocol runtime: acquire/release workflows, queue resolution
// with refetching, reset execution, and notification routing. Clients on the
// CN invoke it as suspendable tasks; all cross-node effects go through the
// fabric simulator.
class CqlCn {
 public:
  CqlCn(Simulator& sim, uint32_t cn, const CqlLockSet& set, CqlOptions options,
        CqlMetrics* metrics, LockEventLog* log);

  struct Grant {
    uint64_t seq = 0;  // MN enqueue order (FAA service order)
    std::optional<uint16_t> earliest_remote_ts;  // from the notification
  };

  // Retries aborts and runs resets internally; returns once granted.
  Co<Grant> acquire(uint32_t client, uint64_t lock, Mode mode, uint16_t ts);
  Co<void> release(uint32_t client, uint64_t lock, Mode mode);

  // Message entry point; wire this CN's handler to the simulator.
  void on_message(uint32_t from_cn, const Message& msg);
  // Registers on_message as this CN's simulator handler (non-hierarchical use).
  void attach_handler();

  ResetState& reset_state() { return reset_state_; }
  const CqlLockSet& lock_set() const { return set_; }
  uint32_t cn() const { return cn_; }

  uint32_t cn_of(uint32_t cid) const {
    return cid / options_.clients_per_cn + 1;
  }

 private:
  enum class TryKind : uint8_t { Holder, Granted, Aborted, NeedReset };
  struct TryResult {
    TryKind kind;
    uint64_t seq = 0;
    std::optional<uint16_t> earliest_remote_ts;
  };

  enum class WaitKind : uint8_t { Notified, Timeout, AbortedByReset };
  struct WaitResult {
    WaitKind kind;
    Notification n;
  };

  enum class ResolveStatus : uint8_t { Done, NeedReset };

  struct EntryLookup {
    enum class K : uint8_t { Valid, Reset } k;
    QueueEntry e;
  };
  using GrantList = std::vector<std::pair<uint64_t, QueueEntry>>;

  Co<TryResult> try_acquire_once(uint32_t client, uint64_t lock, Mode mode,
                                 uint16_t ts);
  Co<ResolveStatus> resolve_and_notify(uint32_t client, uint64_t lock,
                                       Mode releasing_mode, const LockHeader& h,
                                       std::vector<uint8_t> queue_bytes);
  Co<void> settle_waiter_entries(uint64_t lock, const LockHeader& h,
                                 uint64_t start_offset,
                                 std::vector<uint8_t>& cache);
  Co<EntryLookup> fetch_valid_entry(uint64_t lock, const LockHeader& h,
                                    uint64_t offset, std::vector<uint8_t>& cache,
                                    TimeNs deadline);
  Co<void> run_reset(uint32_t client, uint64_t lock);

  std::optional<uint16_t> earliest_for(const LockHeader& h,
                                       const std::vector<uint8_t>& cache,
                                       const GrantList& grants,
                                       uint32_t target_cn) const;
  uint32_t involved_count(uint64_t lock) const {
    auto it = involved_.find(lock);
    return it == involved_.end() ? 0 : it->second;
  }

  void handle_notification(const Notification& n);
  void handle_reset_signal(uint64_t lock, uint32_t from_cn, uint64_t new_count);
  void handle_reset_ack(uint64_t lock, uint32_t from_cn);

  void involvement_done(uint64_t lock);
  void deliver_ack(uint64_t lock, uint32_t to_cn);
  void send_notification(uint64_t lock, Mode grant_mode, uint32_t target_cid,
                         std::optional<uint16_t> earliest_remote_ts);

  void log_event(LockEvent::Kind kind, uint64_t lock, uint32_t client, Mode mode,
                 uint64_t seq, TimeNs issue_t);

  NodeId node() const { return NodeId::cn(cn_); }
  QueueEntry entry_from(const std::vector<uint8_t>& queue_bytes,
                        uint32_t slot) const;

  Simulator& sim_;
  uint32_t cn_;
  CqlLockSet set_;
  CqlOptions options_;
  CqlMetrics* metrics_;
  LockEventLog* log_;

  ResetState reset_state_;
  std::map<std::pair<uint64_t, uint32_t>, Resolver<WaitResult>> waits_;
  std::map<std::pair<uint64_t, uint32_t>, uint64_t> wait_gen_;
  uint64_t wait_arm_counter_ = 0;
  std::map<uint64_t, uint32_t> involved_;       // in-flight ops + holders
  std::map<uint64_t, uint32_t> pending_ack_to_;  // lock -> CN awaiting our ack

  struct ResetBarrier {
    std::vector<bool> pending;
    uint32_t remaining = 0;
    Resolver<Unit> kick;
  };
  std::map<uint64_t, ResetBarrier> barriers_;  // resets this CN is executing
  std::set<uint64_t> resetting_;
};

}  // namespace dislock
