#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>

#include "dislock/cql.hpp"

namespace dislock {

enum class Fairness : uint8_t { TaskFair, PhaseFair };

struct HierOptions {
  Fairness policy = Fairness::TaskFair;
  TimeNs sync_interval = 1000 * kMs;
  TimeNs sync_round_timeout = 10 * kMs;
  TimeNs sync_poll = 1 * kUs;
};

struct HierMetrics {
  uint64_t acquisitions = 0;
  uint64_t local_fast_shares = 0;    // reader joined SHARED state, 0 MN ops
  uint64_t local_share_grants = 0;   // readers granted via the share set
  uint64_t local_transfers = 0;      // handover without touching the CQL lock
  uint64_t remote_transfers = 0;     // CQL released in favor of remote waiters
  uint64_t cql_acquires = 0;
  uint64_t cql_reacquires_mode = 0;  // released+reacquired due to mode change
  uint64_t prefetch_reads = 0;
  uint64_t sync_rounds = 0;
};

// Per-CN local waiter record; `wake` is resolved either when a sharing reader
// admits it (granted=true) or when it is selected to take over ownership.
struct LocalWaiter {
  Mode mode;
  uint32_t cid;
  uint16_t ts;
  Resolver<Unit> wake;
  bool granted = false;
};

struct LocalLock {
  enum class State : uint8_t { Free, Shared, Exclusive };
  State state = State::Free;
  uint32_t holder_cnt = 0;
  bool cql_held = false;
  Mode cql_mode = Mode::Shared;
  std::deque<std::shared_ptr<LocalWaiter>> wq;
  std::optional<uint16_t> prefetched_remote_ts;
  // MN-snapshot time that produced prefetched_remote_ts; newer snapshots
  // replace the value outright (a fresh "no remote waiter" clears it).
  TimeNs remote_snap = 0;
  // In-flight prefetch reads; handover decisions wait for them so a remote
  // waiter already visible at the MN is never raced past by a local grant.
  uint32_t prefetch_pending = 0;
  std::deque<Resolver<Unit>> prefetch_waiters;
  // Async FIFO mutex protecting this record across suspension points.
  bool guard_held = false;
  std::deque<Resolver<Unit>> guard_q;
};

// Selection helpers, exposed for direct testing.
std::vector<size_t> select_share_set(
    const std::deque<std::shared_ptr<LocalWaiter>>& wq, Fairness policy,
    std::optional<uint16_t> remote_ts);
size_t select_release_waiter(const std::deque<std::shared_ptr<LocalWaiter>>& wq,
                             Fairness policy, Mode releasing_mode);

// Timestamp-based hierarchical locking on top of the CQL lock: a per-CN local
// lock table funnels at most one CQL waiter per lock per CN, with 16-bit
// synchronized timestamps preserving cross-CN acquisition order.
class HierCn {
 public:
  HierCn(Simulator& sim, uint32_t cn, const CqlLockSet& set, CqlOptions cql_opt,
         HierOptions opt, uint64_t sync_counter_addr, CqlMetrics* cql_metrics,
         HierMetrics* metrics, LockEventLog* log);

  Co<void> acquire(uint32_t client, uint64_t lock, Mode mode);
  Co<void> release(uint32_t client, uint64_t lock, Mode mode);

  // One synchronization round (all CNs must run it concurrently).
  Co<void> sync_once();
  // Detached loop: a round at every multiple of sync_interval.
  void start_time_sync();
  void stop_time_sync() { sync_stop_ = true; }

  uint16_t ts_now() const {
    return static_cast<uint16_t>(((sim_.now() - epoch_start_) / kUs) & 0xFFFF);
  }

  void attach_handler();
  CqlCn& cql() { return cql_; }
  uint32_t cn() const { return cn_; }

 private:
  Co<void> guard_lock(LocalLock& l);
  void guard_unlock(LocalLock& l);
  Co<void> take_ownership(uint32_t client, uint64_t lock, LocalLock& l,
                          Mode mode, uint16_t ts);
  Co<void> reacquire_task(uint32_t client, uint64_t lock, Mode mode,
                          uint16_t ts, Resolver<CqlCn::Grant> done);
  Co<void> prefetch_remote_ts(uint64_t lock);
  Co<void> fetch_remote_ts_into(uint64_t lock);
  Co<void> await_prefetches(LocalLock& l);
  void refresh_state_on_claim(LocalLock& l, Mode mode);
  void log_event(LockEvent::Kind kind, uint64_t lock, uint32_t client,
                 Mode mode, TimeNs issue_t);

  Simulator& sim_;
  uint32_t cn_;
  CqlCn cql_;
  HierOptions opt_;
  uint64_t sync_counter_addr_;
  HierMetrics* metrics_;
  LockEventLog* log_;
  std::map<uint64_t, LocalLock> table_;
  TimeNs epoch_start_ = 0;
  bool sync_stop_ = false;
};

}  // namespace dislock
