#pragma once

#include <cstdint>
#include <map>

#include "dislock/sim.hpp"
#include "dislock/task.hpp"

namespace dislock {

struct BaselineMetrics {
  uint64_t acquisitions = 0;
  uint64_t cas_attempts = 0;   // CASLock: every CAS round trip
  uint64_t faa_ops = 0;        // ticket draws and releases
  uint64_t polls = 0;          // ticket: READs of the served word
  uint64_t timeouts = 0;       // waits exceeding the reporting bound
};

// Reader-writer CAS spinlock: one 64-bit word per lock,
// writerId in the low 16 bits, readerCount above. Free <=> word == 0.
// Clients retry CAS blindly; every attempt is a full MN round trip.
class CasLockService {
 public:
  struct Options {
    TimeNs report_timeout = 100 * kMs;
  };

  CasLockService(Simulator& sim, uint64_t num_locks, Options opt,
                 BaselineMetrics* metrics, LockEventLog* log);

  Co<void> acquire(uint32_t client, uint32_t cn, uint64_t lock, Mode mode);
  Co<void> release(uint32_t client, uint32_t cn, uint64_t lock, Mode mode);

  uint64_t word_addr(uint64_t lock) const { return base_ + lock * 8; }

 private:
  void log_event(LockEvent::Kind kind, uint64_t lock, uint32_t client,
                 uint32_t cn, Mode mode, uint64_t seq, TimeNs issue_t);

  Simulator& sim_;
  uint64_t base_;
  Options opt_;
  BaselineMetrics* metrics_;
  LockEventLog* log_;
  std::map<uint64_t, uint64_t> arrival_seq_;  // reported enqueue order
};

// Ticket lock with truncated exponential backoff. Two 64-bit words per lock
// with 32-bit fields (readTicket|writeTicket and readServed|writeServed):
// wider than the classical 16-bit packing so hot locks cannot wrap a field
// into its neighbor under FAA. The ticket draw piggybacks a READ of the
// served word, so the uncontended path stays one round trip.
class TicketLockService {
 public:
  struct Options {
    TimeNs backoff_base = 2 * kUs;
    TimeNs backoff_cap = 256 * kUs;
    TimeNs report_timeout = 100 * kMs;
  };

  TicketLockService(Simulator& sim, uint64_t num_locks, Options opt,
                    BaselineMetrics* metrics, LockEventLog* log);

  Co<void> acquire(uint32_t client, uint32_t cn, uint64_t lock, Mode mode);
  Co<void> release(uint32_t client, uint32_t cn, uint64_t lock, Mode mode);

  uint64_t ticket_addr(uint64_t lock) const { return base_ + lock * 16; }
  uint64_t served_addr(uint64_t lock) const { return base_ + lock * 16 + 8; }

  static TimeNs backoff_delay(uint32_t attempt, TimeNs base, TimeNs cap);

 private:
  void log_event(LockEvent::Kind kind, uint64_t lock, uint32_t client,
                 uint32_t cn, Mode mode, uint64_t seq, TimeNs issue_t);

  Simulator& sim_;
  uint64_t base_;
  Options opt_;
  BaselineMetrics* metrics_;
  LockEventLog* log_;
};

}  // namespace dislock
