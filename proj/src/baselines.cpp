#include "dislock/baselines.hpp"

#include <algorithm>
#include <cstring>

namespace dislock {

namespace {

constexpr uint64_t kWriterMask = 0xFFFFull;
constexpr uint64_t kReaderOne = 1ull << 16;
constexpr uint64_t kLow32 = 0xFFFFFFFFull;

uint64_t u64_from(const std::vector<uint8_t>& b) {
  uint64_t v;
  std::memcpy(&v, b.data(), 8);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// CASLock
// ---------------------------------------------------------------------------

CasLockService::CasLockService(Simulator& sim, uint64_t num_locks, Options opt,
                               BaselineMetrics* metrics, LockEventLog* log)
    : sim_(sim), base_(sim.alloc(num_locks * 8)), opt_(opt),
      metrics_(metrics), log_(log) {}

void CasLockService::log_event(LockEvent::Kind kind, uint64_t lock,
                               uint32_t client, uint32_t cn, Mode mode,
                               uint64_t seq, TimeNs issue_t) {
  if (log_) {
    log_->push_back(
        LockEvent{kind, sim_.now(), lock, client, cn, mode, seq, issue_t});
  }
}

Co<void> CasLockService::acquire(uint32_t client, uint32_t cn, uint64_t lock,
                                 Mode mode) {
  const TimeNs issue = sim_.now();
  const uint64_t seq = arrival_seq_[lock]++;
  log_event(LockEvent::Kind::Enqueue, lock, client, cn, mode, seq, issue);
  const NodeId src = NodeId::cn(cn);
  const uint64_t addr = word_addr(lock);
  bool reported = false;
  if (mode == Mode::Exclusive) {
    const uint64_t my_id = (client & 0x7FFF) + 1;
    for (;;) {
      metrics_->cas_attempts++;
      const uint64_t old = co_await sim_.cas(src, addr, 0, my_id, "cas_acq");
      if (old == 0) break;
      if (!reported && sim_.now() - issue > opt_.report_timeout) {
        metrics_->timeouts++;
        reported = true;
      }
    }
  } else {
    uint64_t guess = 0;
    for (;;) {
      metrics_->cas_attempts++;
      const uint64_t old =
          co_await sim_.cas(src, addr, guess, guess + kReaderOne, "cas_acq");
      if (old == guess) break;
      guess = old & ~kWriterMask;  // wait out any writer; track reader count
      if (!reported && sim_.now() - issue > opt_.report_timeout) {
        metrics_->timeouts++;
        reported = true;
      }
    }
  }
  metrics_->acquisitions++;
  log_event(LockEvent::Kind::Grant, lock, client, cn, mode, seq, issue);
}

Co<void> CasLockService::release(uint32_t client, uint32_t cn, uint64_t lock,
                                 Mode mode) {
  log_event(LockEvent::Kind::Release, lock, client, cn, mode, 0, sim_.now());
  const NodeId src = NodeId::cn(cn);
  const uint64_t addr = word_addr(lock);
  if (mode == Mode::Exclusive) {
    metrics_->cas_attempts++;
    const uint64_t my_id = (client & 0x7FFF) + 1;
    co_await sim_.cas(src, addr, my_id, 0, "cas_rel");
  } else {
    // No writer can enter while readers hold, so only the reader count churns.
    uint64_t guess = kReaderOne;
    for (;;) {
      metrics_->cas_attempts++;
      const uint64_t old =
          co_await sim_.cas(src, addr, guess, guess - kReaderOne, "cas_rel");
      if (old == guess) break;
      guess = old;
    }
  }
}

// ---------------------------------------------------------------------------
// Ticket lock with truncated exponential backoff
// ---------------------------------------------------------------------------

TicketLockService::TicketLockService(Simulator& sim, uint64_t num_locks,
                                     Options opt, BaselineMetrics* metrics,
                                     LockEventLog* log)
    : sim_(sim), base_(sim.alloc(num_locks * 16)), opt_(opt),
      metrics_(metrics), log_(log) {}

void TicketLockService::log_event(LockEvent::Kind kind, uint64_t lock,
                                  uint32_t client, uint32_t cn, Mode mode,
                                  uint64_t seq, TimeNs issue_t) {
  if (log_) {
    log_->push_back(
        LockEvent{kind, sim_.now(), lock, client, cn, mode, seq, issue_t});
  }
}

TimeNs TicketLockService::backoff_delay(uint32_t attempt, TimeNs base,
                                        TimeNs cap) {
  TimeNs d = base;
  for (uint32_t i = 0; i < attempt && d < cap; ++i) d *= 2;
  return std::min(d, cap);
}

Co<void> TicketLockService::acquire(uint32_t client, uint32_t cn, uint64_t lock,
                                    Mode mode) {
  const TimeNs issue = sim_.now();
  log_event(LockEvent::Kind::Enqueue, lock, client, cn, mode, 0, issue);
  const NodeId src = NodeId::cn(cn);
  metrics_->faa_ops++;
  const uint64_t add = mode == Mode::Exclusive ? (1ull << 32) : 1ull;
  auto draw = co_await sim_.faa_read(src, ticket_addr(lock), add,
                                     served_addr(lock), 8, "ticket");
  const uint64_t readers_before = draw.old_value & kLow32;
  const uint64_t writers_before = draw.old_value >> 32;
  const uint64_t seq = readers_before + writers_before;  // global draw order
  uint64_t served = u64_from(draw.bytes);
  bool reported = false;
  for (uint32_t attempt = 0;; ++attempt) {
    const uint64_t read_served = served & kLow32;
    const uint64_t write_served = served >> 32;
    const bool granted =
        mode == Mode::Exclusive
            ? (write_served == writers_before && read_served == readers_before)
            : (write_served == writers_before);
    if (granted) break;
    if (!reported && sim_.now() - issue > opt_.report_timeout) {
      metrics_->timeouts++;
      reported = true;
    }
    co_await sim_.sleep(
        backoff_delay(attempt, opt_.backoff_base, opt_.backoff_cap));
    metrics_->polls++;
    served = u64_from(co_await sim_.read(src, served_addr(lock), 8, "poll"));
  }
  metrics_->acquisitions++;
  log_event(LockEvent::Kind::Grant, lock, client, cn, mode, seq, issue);
}

Co<void> TicketLockService::release(uint32_t client, uint32_t cn, uint64_t lock,
                                    Mode mode) {
  log_event(LockEvent::Kind::Release, lock, client, cn, mode, 0, sim_.now());
  metrics_->faa_ops++;
  const uint64_t add = mode == Mode::Exclusive ? (1ull << 32) : 1ull;
  co_await sim_.faa(NodeId::cn(cn), served_addr(lock), add, "ticket_rel");
}

}  // namespace dislock
