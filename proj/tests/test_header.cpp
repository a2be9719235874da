#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dislock/header.hpp"
#include "dislock/reset.hpp"
#include "dislock/rng.hpp"

using namespace dislock;

TEST_CASE("layout geometry for supported capacities") {
  auto l2 = HeaderLayout::for_capacity(2);
  CHECK(l2.count_bits == 2);
  CHECK(l2.capacity() == 2);
  CHECK(l2.qhead_bits() == 52);

  auto l8 = HeaderLayout::for_capacity(8);
  CHECK(l8.count_bits == 4);
  CHECK(l8.capacity() == 8);
  CHECK(l8.qhead_bits() == 48);
  CHECK(l8.qhead_shift() == 16);
  CHECK(l8.qsize_shift() == 12);
  CHECK(l8.wcnt_shift() == 8);

  auto l128 = HeaderLayout::for_capacity(128);
  CHECK(l128.count_bits == 8);
  CHECK(l128.capacity() == 128);
  CHECK(l128.qhead_bits() == 40);

  CHECK_THROWS_AS(HeaderLayout::for_capacity(3), std::invalid_argument);
  CHECK_THROWS_AS(HeaderLayout::for_capacity(0), std::invalid_argument);
  CHECK_THROWS_AS(HeaderLayout::for_capacity(1u << 28),  // needs 2*29+8 > 64
                  std::invalid_argument);
}

TEST_CASE("encode/decode round trip and frozen encodings") {
  const auto lo = HeaderLayout::for_capacity(8);
  const LockHeader h{5, 3, 1, 0};
  CHECK(encode_header(h, lo) == 340224);  // 5<<16 | 3<<12 | 1<<8
  CHECK(decode_header(340224, lo) == h);

  CHECK(decode_header(0, lo) == LockHeader{0, 0, 0, 0});
  CHECK_THROWS_AS(encode_header(LockHeader{0, 16, 0, 0}, lo), FieldOverflow);
  CHECK_THROWS_AS(encode_header(LockHeader{0, 0, 0, 256}, lo), FieldOverflow);
  CHECK_THROWS_AS(encode_header(LockHeader{1ull << 48, 0, 0, 0}, lo),
                  FieldOverflow);
}

TEST_CASE("faa deltas, frozen for the capacity-8 layout") {
  const auto lo = HeaderLayout::for_capacity(8);
  CHECK(faa_delta(HeaderAction::AcqShared, lo) == 4096);
  CHECK(faa_delta(HeaderAction::AcqExclusive, lo) == 4352);
  CHECK(faa_delta(HeaderAction::RelReader, lo) == 61440);
  CHECK(faa_delta(HeaderAction::RelWriter, lo) == 61184);
}

TEST_CASE("faa application edits exactly the intended fields") {
  const auto lo = HeaderLayout::for_capacity(8);
  uint64_t w = encode_header(LockHeader{5, 3, 1, 0}, lo);
  w += faa_delta(HeaderAction::RelReader, lo);
  CHECK(w == 401664);
  CHECK(decode_header(w, lo) == LockHeader{6, 2, 1, 0});

  // Last writer leaving an otherwise empty queue.
  uint64_t v = encode_header(LockHeader{0, 1, 1, 0}, lo);
  v += faa_delta(HeaderAction::RelWriter, lo);
  CHECK(decode_header(v, lo) == LockHeader{1, 0, 0, 0});
}

TEST_CASE("faa application matches a field-level model over random histories") {
  const auto lo = HeaderLayout::for_capacity(8);
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    uint64_t word = 0;
    // Model state tracked independently per field; qhead as an unbounded
    // counter reduced mod 2^48.
    uint64_t qhead = 0;
    uint32_t qsize = 0, wcnt = 0, writers_in_queue = 0;
    for (int step = 0; step < 1000; ++step) {
      const uint64_t pick = rng.below(4);
      HeaderAction act;
      if (pick == 0 && qsize < lo.capacity()) {
        act = HeaderAction::AcqShared;
        qsize++;
      } else if (pick == 1 && qsize < lo.capacity()) {
        act = HeaderAction::AcqExclusive;
        qsize++;
        wcnt++;
        writers_in_queue++;
      } else if (pick == 2 && qsize > 0 && qsize > writers_in_queue) {
        act = HeaderAction::RelReader;
        qhead++;
        qsize--;
      } else if (qsize > 0 && writers_in_queue > 0) {
        act = HeaderAction::RelWriter;
        qhead++;
        qsize--;
        wcnt--;
        writers_in_queue--;
      } else {
        continue;
      }
      word += faa_delta(act, lo);
      const LockHeader h = decode_header(word, lo);
      REQUIRE(h.qhead == (qhead & lo.qhead_mask()));
      REQUIRE(h.qsize == qsize);
      REQUIRE(h.wcnt == wcnt);
      REQUIRE(h.reset_id == 0);
    }
  }
}

TEST_CASE("qhead wraps cleanly at its field boundary") {
  const auto lo = HeaderLayout::for_capacity(8);
  uint64_t w = encode_header(LockHeader{lo.qhead_mask(), 2, 1, 7}, lo);
  w += faa_delta(HeaderAction::RelReader, lo);
  const LockHeader h = decode_header(w, lo);
  CHECK(h.qhead == 0);
  CHECK(h.qsize == 1);
  CHECK(h.wcnt == 1);
  CHECK(h.reset_id == 7);  // wrap must not spill into lower fields
}

TEST_CASE("slot_of maps positions to slots and traversal versions") {
  const auto lo = HeaderLayout::for_capacity(8);
  CHECK(slot_of(0, 0, lo).slot == 0);
  CHECK(slot_of(0, 0, lo).version == 0);
  CHECK(slot_of(0, 7, lo).slot == 7);
  CHECK(slot_of(0, 8, lo).slot == 0);
  CHECK(slot_of(0, 8, lo).version == 1);
  CHECK(slot_of(13, 2, lo).slot == 7);
  CHECK(slot_of(13, 2, lo).version == 1);
  // Wrap of the qhead counter itself.
  CHECK(slot_of((1ull << 48) - 3, 5, lo).slot == 2);
  CHECK(slot_of((1ull << 48) - 3, 5, lo).version == 0);
  // Version wraps mod 2^16.
  CHECK(slot_of(8ull * 65536, 0, lo).version == 0);
  CHECK(slot_of(8ull * 65536 - 8, 0, lo).version == 0xFFFF);
}

TEST_CASE("entry encode/decode round trip and frozen word") {
  QueueEntry e{0x1234, 0xABCD, 0x42, Mode::Exclusive};
  CHECK(encode_entry(e) == 0x00010042ABCD1234ull);
  CHECK(decode_entry(0x00010042ABCD1234ull) == e);
  CHECK(decode_entry(kEntryInitWord).version == kEntryInitVersion);
  CHECK(QueueEntry{}.version == kEntryInitVersion);
}

TEST_CASE("timestamp and version wraparound comparators") {
  CHECK(ts_earlier(1, 2));
  CHECK_FALSE(ts_earlier(2, 1));
  CHECK_FALSE(ts_earlier(5, 5));
  CHECK(ts_earlier(0xFFFF, 3));  // across the wrap
  CHECK_FALSE(ts_earlier(3, 0xFFFF));
  CHECK_FALSE(ts_earlier(0, 0x8000));  // exactly half a window: neither earlier
  CHECK_FALSE(ts_earlier(0x8000, 0));

  CHECK(version_newer(1, 0));
  CHECK_FALSE(version_newer(0, 1));
  CHECK(version_newer(0, 0xFFFF));
  CHECK_FALSE(version_newer(0xFFFF, 0));
  CHECK_FALSE(version_newer(7, 7));
}

TEST_CASE("reset occasion classifiers") {
  CHECK(classify_fetched_version(3, 2) == ResetOccasion::Overwrite);
  CHECK(classify_fetched_version(2, 2) == ResetOccasion::None);
  CHECK(classify_fetched_version(1, 2) == ResetOccasion::None);
  CHECK(classify_computed_version(0xFFFF) == ResetOccasion::VersionOverflow);
  CHECK(classify_computed_version(0) == ResetOccasion::None);
  CHECK(classify_wait(2000001, 2000000) == ResetOccasion::Timeout);
  CHECK(classify_wait(2000000, 2000000) == ResetOccasion::None);
}

TEST_CASE("expired notification filter") {
  CHECK(filter_notification(0, 1) == NotificationFate::Drop);
  CHECK(filter_notification(1, 1) == NotificationFate::Deliver);
  CHECK(filter_notification(2, 1) == NotificationFate::Deliver);
}
