#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dislock/trace.hpp"

namespace dislock {

struct Violation {
  std::string kind;  // "mutual_exclusion", "tf_overtake", "pf_phase", "stuck"
  uint64_t lock = 0;
  uint32_t client_a = 0;
  uint32_t client_b = 0;
  TimeNs t = 0;
  std::string detail;
};

struct FairnessReport {
  uint64_t tf_overtakes = 0;       // grant order vs. enqueue seq (batched)
  uint64_t pf_phase_violations = 0;
  uint64_t cross_cn_writer_overtakes = 0;  // hierarchical, outside skew window
  std::vector<Violation> violations;       // only for asserted categories
};

struct CheckerConfig {
  TimeNs skew_bound = 0;      // 2 x CN-MN latency; 0 disables the cross-CN check
  TimeNs ts_window = 32768 * kUs;  // half the 16-bit microsecond timestamp range
};

// Mutual exclusion over [grant, release-start] intervals: no writer interval
// may overlap any other interval on the same lock.
std::vector<Violation> check_mutual_exclusion(const LockEventLog& log);

// Task-fair order: grants follow enqueue seq per lock, with consecutive
// reader grants collapsed into one batch. Used for CQL (non-hierarchical) and
// the ticket lock, and for unfairness reporting on CASLock.
uint64_t count_tf_overtakes(const LockEventLog& log);

// Phase-fair: between two consecutive writer grants on a lock, every reader
// already waiting when the first writer released must be granted.
uint64_t count_pf_phase_violations(const LockEventLog& log);

// Hierarchical cross-CN writer order: two writer grants on different CNs must
// follow issue order whenever their issue times differ by more than the skew
// bound but less than the timestamp half-window (beyond it the 16-bit
// timestamps cannot order them).
uint64_t count_cross_cn_writer_overtakes(const LockEventLog& log,
                                         const CheckerConfig& cfg);

// Liveness: every Enqueue is eventually followed by that client's Grant and
// Release (aborts are retries, not completions).
std::vector<Violation> check_liveness(const LockEventLog& log);

// JSONL round trip for the CLI: only lock-level events are materialized.
LockEventLog read_lock_events_jsonl(std::istream& in);

}  // namespace dislock
