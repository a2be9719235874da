#pragma once

#include <cstdint>
#include <map>

#include "dislock/header.hpp"
#include "dislock/trace.hpp"

namespace dislock {

// Per-CN reset bookkeeping: one monotone counter per lock (synchronized by the
// reset broadcast) plus the acquisition timeout that bounds every wait.
struct ResetState {
  std::map<uint64_t, uint64_t> per_lock_counter;
  TimeNs acquisition_timeout = 100 * kMs;

  uint64_t counter(uint64_t lock) const {
    auto it = per_lock_counter.find(lock);
    return it == per_lock_counter.end() ? 0 : it->second;
  }
  void observe(uint64_t lock, uint64_t count) {
    auto& c = per_lock_counter[lock];
    if (count > c) c = count;
  }
};

enum class ResetOccasion : uint8_t { None, Overwrite, VersionOverflow, Timeout };

// Entry overwrite: the fetched version is strictly newer (wraparound compare)
// than the version computed from the queue index.
inline ResetOccasion classify_fetched_version(uint16_t fetched,
                                              uint16_t expected) {
  return version_newer(fetched, expected) ? ResetOccasion::Overwrite
                                          : ResetOccasion::None;
}

// Version overflow: the traversal version has wrapped back to the entry
// initialization value, which valid entries can no longer be told apart from.
inline ResetOccasion classify_computed_version(uint16_t version) {
  return version == kEntryInitVersion ? ResetOccasion::VersionOverflow
                                      : ResetOccasion::None;
}

inline ResetOccasion classify_wait(TimeNs waited, TimeNs timeout) {
  return waited > timeout ? ResetOccasion::Timeout : ResetOccasion::None;
}

enum class NotificationFate : uint8_t { Deliver, Drop };

// Expired-notification filter: drop iff the notification's reset count is
// older than the local counter for that lock. Counts from a reset whose
// signal has not reached us yet are delivered; the corresponding waiters have
// already aborted, so delivery is harmless.
inline NotificationFate filter_notification(uint64_t notification_count,
                                            uint64_t local_count) {
  return notification_count < local_count ? NotificationFate::Drop
                                          : NotificationFate::Deliver;
}

}  // namespace dislock
