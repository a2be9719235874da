#pragma once

#include <cstdint>
#include <stdexcept>

#include "dislock/trace.hpp"

namespace dislock {

// 64-bit lock header bit layout, least significant field first:
//   resetId[0..K)  wcnt[K..K+N)  qsize[K+N..K+2N)  qhead[K+2N..64)
// The queue capacity is C = 2^(N-1); qsize gets one extra bit so transient
// overflow past C cannot corrupt qhead. qhead occupies the top M+N-1 bits and
// is the only field allowed to wrap.
struct HeaderLayout {
  uint32_t reset_bits = 8;  // K
  uint32_t count_bits = 4;  // N

  uint32_t capacity() const { return 1u << (count_bits - 1); }
  uint32_t qhead_bits() const { return 64 - reset_bits - 2 * count_bits; }
  uint32_t qhead_shift() const { return reset_bits + 2 * count_bits; }
  uint32_t qsize_shift() const { return reset_bits + count_bits; }
  uint32_t wcnt_shift() const { return reset_bits; }
  uint64_t reset_mask() const { return (1ull << reset_bits) - 1; }
  uint64_t count_mask() const { return (1ull << count_bits) - 1; }
  uint64_t qhead_mask() const {
    return qhead_bits() == 64 ? ~0ull : (1ull << qhead_bits()) - 1;
  }

  // Smallest layout for a power-of-two capacity.
  static HeaderLayout for_capacity(uint32_t capacity, uint32_t reset_bits = 8) {
    if (capacity < 2 || (capacity & (capacity - 1)) != 0) {
      throw std::invalid_argument("queue capacity must be a power of two >= 2");
    }
    uint32_t n = 1;
    while ((1u << (n - 1)) < capacity) n++;
    if (reset_bits + 2 * n >= 64) {
      throw std::invalid_argument("header fields do not fit in 64 bits");
    }
    return HeaderLayout{reset_bits, n};
  }
};

struct LockHeader {
  uint64_t qhead = 0;
  uint32_t qsize = 0;
  uint32_t wcnt = 0;
  uint32_t reset_id = 0;

  bool operator==(const LockHeader&) const = default;
};

class FieldOverflow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline uint64_t encode_header(const LockHeader& h, const HeaderLayout& lo) {
  if (h.qhead > lo.qhead_mask() || h.qsize > lo.count_mask() ||
      h.wcnt > lo.count_mask() || h.reset_id > lo.reset_mask()) {
    throw FieldOverflow("header field exceeds its bit width");
  }
  return (h.qhead << lo.qhead_shift()) |
         (static_cast<uint64_t>(h.qsize) << lo.qsize_shift()) |
         (static_cast<uint64_t>(h.wcnt) << lo.wcnt_shift()) | h.reset_id;
}

inline LockHeader decode_header(uint64_t word, const HeaderLayout& lo) {
  LockHeader h;
  h.reset_id = static_cast<uint32_t>(word & lo.reset_mask());
  h.wcnt = static_cast<uint32_t>((word >> lo.wcnt_shift()) & lo.count_mask());
  h.qsize = static_cast<uint32_t>((word >> lo.qsize_shift()) & lo.count_mask());
  h.qhead = word >> lo.qhead_shift();
  return h;
}

enum class HeaderAction : uint8_t { AcqShared, AcqExclusive, RelReader, RelWriter };

// 64-bit wrapping addend whose FAA application performs exactly the intended
// field edits, provided the action's preconditions hold (releases need
// qsize >= 1; writer release additionally wcnt >= 1).
inline uint64_t faa_delta(HeaderAction action, const HeaderLayout& lo) {
  const uint64_t qsize_one = 1ull << lo.qsize_shift();
  const uint64_t wcnt_one = 1ull << lo.wcnt_shift();
  const uint64_t qhead_one = 1ull << lo.qhead_shift();
  switch (action) {
    case HeaderAction::AcqShared: return qsize_one;
    case HeaderAction::AcqExclusive: return qsize_one + wcnt_one;
    case HeaderAction::RelReader: return qhead_one - qsize_one;
    case HeaderAction::RelWriter: return qhead_one - qsize_one - wcnt_one;
  }
  return 0;
}

struct SlotRef {
  uint32_t slot = 0;
  uint16_t version = 0;
};

// Maps an unbounded queue position (head counter + offset) to its circular
// slot and the 16-bit traversal version for that slot.
inline SlotRef slot_of(uint64_t qhead_counter, uint64_t offset,
                       const HeaderLayout& lo) {
  const uint64_t absolute = (qhead_counter + offset) & lo.qhead_mask();
  return SlotRef{static_cast<uint32_t>(absolute % lo.capacity()),
                 static_cast<uint16_t>((absolute / lo.capacity()) & 0xFFFF)};
}

// 8-byte queue entry: version(16) | timestamp(16) | cid(16) | mode(8) | rsvd(8).
// Fresh entries carry version 0xFFFF (all ones).
struct QueueEntry {
  uint16_t version = 0xFFFF;
  uint16_t timestamp = 0;
  uint16_t cid = 0;
  Mode mode = Mode::Shared;

  bool operator==(const QueueEntry&) const = default;
};

constexpr uint16_t kEntryInitVersion = 0xFFFF;
constexpr uint64_t kEntryInitWord = 0x000000000000FFFFull;

inline uint64_t encode_entry(const QueueEntry& e) {
  return static_cast<uint64_t>(e.version) |
         (static_cast<uint64_t>(e.timestamp) << 16) |
         (static_cast<uint64_t>(e.cid) << 32) |
         (static_cast<uint64_t>(e.mode) << 48);
}

inline QueueEntry decode_entry(uint64_t word) {
  QueueEntry e;
  e.version = static_cast<uint16_t>(word & 0xFFFF);
  e.timestamp = static_cast<uint16_t>((word >> 16) & 0xFFFF);
  e.cid = static_cast<uint16_t>((word >> 32) & 0xFFFF);
  e.mode = static_cast<Mode>((word >> 48) & 0xFF);
  return e;
}

// Half-window wraparound compare for 16-bit timestamps: a is earlier than b
// iff the forward distance from a to b is under half the window. At exactly
// half a window apart neither is earlier.
inline bool ts_earlier(uint16_t a, uint16_t b) {
  if (a == b) return false;
  return static_cast<uint16_t>(b - a) < 0x8000;
}

// Same wraparound rule applied to queue entry versions: true iff `fetched` is
// strictly newer than `expected`.
inline bool version_newer(uint16_t fetched, uint16_t expected) {
  if (fetched == expected) return false;
  return static_cast<uint16_t>(fetched - expected) < 0x8000;
}

}  // namespace dislock
