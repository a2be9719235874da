#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "dislock/checker.hpp"

using namespace dislock;

namespace {

LockEvent ev(LockEvent::Kind k, TimeNs t, uint64_t lock, uint32_t client,
             Mode mode, uint64_t seq = 0, uint32_t cn = 1, TimeNs issue = 0) {
  return LockEvent{k, t, lock, client, cn, mode, seq, issue ? issue : t};
}

using K = LockEvent::Kind;

// A clean serial history: W0, then readers 1+2 together, then W3.
LockEventLog clean_log() {
  LockEventLog log;
  log.push_back(ev(K::Enqueue, 100, 0, 0, Mode::Exclusive, 0));
  log.push_back(ev(K::Grant, 110, 0, 0, Mode::Exclusive, 0));
  log.push_back(ev(K::Enqueue, 120, 0, 1, Mode::Shared, 1));
  log.push_back(ev(K::Enqueue, 130, 0, 2, Mode::Shared, 2));
  log.push_back(ev(K::Enqueue, 140, 0, 3, Mode::Exclusive, 3));
  log.push_back(ev(K::Release, 200, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Grant, 210, 0, 1, Mode::Shared, 1));
  log.push_back(ev(K::Grant, 212, 0, 2, Mode::Shared, 2));
  log.push_back(ev(K::Release, 300, 0, 1, Mode::Shared));
  log.push_back(ev(K::Release, 310, 0, 2, Mode::Shared));
  log.push_back(ev(K::Grant, 320, 0, 3, Mode::Exclusive, 3));
  log.push_back(ev(K::Release, 400, 0, 3, Mode::Exclusive));
  return log;
}

}  // namespace

TEST_CASE("clean history passes every check") {
  const auto log = clean_log();
  CHECK(check_mutual_exclusion(log).empty());
  CHECK(count_tf_overtakes(log) == 0);
  CHECK(count_pf_phase_violations(log) == 0);
  CHECK(check_liveness(log).empty());
}

TEST_CASE("planted writer-writer overlap is detected") {
  LockEventLog log;
  log.push_back(ev(K::Grant, 100, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Grant, 150, 0, 1, Mode::Exclusive));  // fault
  log.push_back(ev(K::Release, 200, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Release, 250, 0, 1, Mode::Exclusive));
  const auto v = check_mutual_exclusion(log);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == "mutual_exclusion");
  CHECK(v[0].client_a == 1);
  CHECK(v[0].client_b == 0);
  CHECK(v[0].t == 150);
}

TEST_CASE("planted reader under a writer is detected") {
  LockEventLog log;
  log.push_back(ev(K::Grant, 100, 7, 0, Mode::Exclusive));
  log.push_back(ev(K::Grant, 150, 7, 1, Mode::Shared));  // fault
  log.push_back(ev(K::Release, 160, 7, 1, Mode::Shared));
  log.push_back(ev(K::Release, 200, 7, 0, Mode::Exclusive));
  const auto v = check_mutual_exclusion(log);
  REQUIRE(v.size() == 1);
  CHECK(v[0].detail == "reader granted while writer holds");
}

TEST_CASE("writer granted while readers hold is detected") {
  LockEventLog log;
  log.push_back(ev(K::Grant, 100, 0, 0, Mode::Shared));
  log.push_back(ev(K::Grant, 110, 0, 1, Mode::Shared));
  log.push_back(ev(K::Grant, 150, 0, 2, Mode::Exclusive));  // fault
  log.push_back(ev(K::Release, 200, 0, 0, Mode::Shared));
  log.push_back(ev(K::Release, 210, 0, 1, Mode::Shared));
  log.push_back(ev(K::Release, 260, 0, 2, Mode::Exclusive));
  CHECK(check_mutual_exclusion(log).size() == 1);
}

TEST_CASE("back-to-back handover at one instant is not an overlap") {
  LockEventLog log;
  log.push_back(ev(K::Grant, 100, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Release, 200, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Grant, 200, 0, 1, Mode::Exclusive));
  log.push_back(ev(K::Release, 300, 0, 1, Mode::Exclusive));
  CHECK(check_mutual_exclusion(log).empty());
}

TEST_CASE("TF overtakes: writer inversion counted, reader batch collapsed") {
  LockEventLog log;
  // Writers granted in seq order 0, 2, 1: one inverted pair.
  log.push_back(ev(K::Grant, 100, 0, 0, Mode::Exclusive, 0));
  log.push_back(ev(K::Release, 110, 0, 0, Mode::Exclusive, 0));
  log.push_back(ev(K::Grant, 120, 0, 2, Mode::Exclusive, 2));
  log.push_back(ev(K::Release, 130, 0, 2, Mode::Exclusive, 2));
  log.push_back(ev(K::Grant, 140, 0, 1, Mode::Exclusive, 1));
  log.push_back(ev(K::Release, 150, 0, 1, Mode::Exclusive, 1));
  CHECK(count_tf_overtakes(log) == 1);

  LockEventLog batched;
  // W(seq 0), then readers granted as a batch in internal order 2, 1, then
  // W(seq 3): the batch collapses to seq 1, so no inversions.
  batched.push_back(ev(K::Grant, 100, 0, 0, Mode::Exclusive, 0));
  batched.push_back(ev(K::Release, 110, 0, 0, Mode::Exclusive, 0));
  batched.push_back(ev(K::Grant, 120, 0, 9, Mode::Shared, 2));
  batched.push_back(ev(K::Grant, 121, 0, 8, Mode::Shared, 1));
  batched.push_back(ev(K::Release, 130, 0, 9, Mode::Shared));
  batched.push_back(ev(K::Release, 131, 0, 8, Mode::Shared));
  batched.push_back(ev(K::Grant, 140, 0, 7, Mode::Exclusive, 3));
  batched.push_back(ev(K::Release, 150, 0, 7, Mode::Exclusive, 3));
  CHECK(count_tf_overtakes(batched) == 0);

  LockEventLog overtaken;
  // The writer with seq 3 jumps ahead of the reader batch (seqs 1, 2).
  overtaken.push_back(ev(K::Grant, 100, 0, 7, Mode::Exclusive, 3));
  overtaken.push_back(ev(K::Release, 110, 0, 7, Mode::Exclusive, 3));
  overtaken.push_back(ev(K::Grant, 120, 0, 8, Mode::Shared, 1));
  overtaken.push_back(ev(K::Grant, 121, 0, 9, Mode::Shared, 2));
  CHECK(count_tf_overtakes(overtaken) == 1);
}

TEST_CASE("locks that saw a reset are excluded from TF counting") {
  LockEventLog log;
  log.push_back(ev(K::Grant, 100, 0, 0, Mode::Exclusive, 5));
  log.push_back(ev(K::ResetBegin, 110, 0, 1, Mode::Exclusive));
  log.push_back(ev(K::ResetDone, 120, 0, 1, Mode::Exclusive));
  log.push_back(ev(K::Grant, 140, 0, 1, Mode::Exclusive, 0));  // seq restarted
  CHECK(count_tf_overtakes(log) == 0);
}

TEST_CASE("PF phase violation: waiting reader skipped by the next writer") {
  LockEventLog log;
  log.push_back(ev(K::Grant, 100, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Enqueue, 120, 0, 5, Mode::Shared));  // reader waits
  log.push_back(ev(K::Release, 200, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Grant, 210, 0, 1, Mode::Exclusive));  // writer jumps in
  log.push_back(ev(K::Release, 300, 0, 1, Mode::Exclusive));
  log.push_back(ev(K::Grant, 310, 0, 5, Mode::Shared));
  log.push_back(ev(K::Release, 320, 0, 5, Mode::Shared));
  CHECK(count_pf_phase_violations(log) == 1);

  LockEventLog ok = log;
  // Same shape but the reader phase runs between the two writers.
  ok[3] = ev(K::Grant, 210, 0, 5, Mode::Shared);
  ok[4] = ev(K::Release, 220, 0, 5, Mode::Shared);
  ok[5] = ev(K::Grant, 230, 0, 1, Mode::Exclusive);
  ok[6] = ev(K::Release, 300, 0, 1, Mode::Exclusive);
  CHECK(count_pf_phase_violations(ok) == 0);
}

TEST_CASE("cross-CN writer overtakes respect the skew and window bounds") {
  CheckerConfig cfg;
  cfg.skew_bound = 4 * kUs;
  auto make = [](TimeNs issue_first_granted, TimeNs issue_second_granted,
                 uint32_t cn_a, uint32_t cn_b) {
    LockEventLog log;
    log.push_back(ev(K::Grant, 1000 * kUs, 0, 0, Mode::Exclusive, 0, cn_a,
                     issue_first_granted));
    log.push_back(ev(K::Release, 1010 * kUs, 0, 0, Mode::Exclusive));
    log.push_back(ev(K::Grant, 1020 * kUs, 0, 9, Mode::Exclusive, 1, cn_b,
                     issue_second_granted));
    log.push_back(ev(K::Release, 1030 * kUs, 0, 9, Mode::Exclusive));
    return log;
  };
  // Second grant issued 100us earlier than the first: overtake.
  CHECK(count_cross_cn_writer_overtakes(make(200 * kUs, 100 * kUs, 1, 2), cfg)
        == 1);
  // Issue order matches grant order: fine.
  CHECK(count_cross_cn_writer_overtakes(make(100 * kUs, 200 * kUs, 1, 2), cfg)
        == 0);
  // Gap inside the skew bound: indistinguishable, not counted.
  CHECK(count_cross_cn_writer_overtakes(make(103 * kUs, 100 * kUs, 1, 2), cfg)
        == 0);
  // Same CN: local order is the local queue's business, not this check's.
  CHECK(count_cross_cn_writer_overtakes(make(200 * kUs, 100 * kUs, 1, 1), cfg)
        == 0);
  // Gap beyond the 16-bit timestamp half-window: timestamps cannot order it.
  CHECK(count_cross_cn_writer_overtakes(
            make(40000 * kUs, 1 * kUs, 1, 2), cfg) == 0);
  // skew_bound == 0 disables the check entirely.
  CHECK(count_cross_cn_writer_overtakes(make(200 * kUs, 100 * kUs, 1, 2),
                                        CheckerConfig{}) == 0);
}

TEST_CASE("liveness: unfinished acquisitions are reported") {
  LockEventLog log;
  log.push_back(ev(K::Enqueue, 100, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Grant, 110, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Release, 120, 0, 0, Mode::Exclusive));
  log.push_back(ev(K::Enqueue, 130, 0, 1, Mode::Exclusive));  // never granted
  log.push_back(ev(K::Abort, 140, 0, 1, Mode::Exclusive));    // retry, not done
  log.push_back(ev(K::Enqueue, 150, 1, 2, Mode::Shared));
  log.push_back(ev(K::Grant, 160, 1, 2, Mode::Shared));       // never released
  const auto v = check_liveness(log);
  REQUIRE(v.size() == 2);
  CHECK(v[0].kind == "stuck");
  CHECK(v[0].client_a == 1);
  CHECK(v[1].client_a == 2);
  CHECK(check_liveness(clean_log()).empty());
}

TEST_CASE("JSONL round trip reconstructs events and grant issue times") {
  std::stringstream ss;
  ss << R"({"t":100,"node":"cn1","kind":"enqueue","lock":3,"client":7,"cn":1,"mode":"X","seq":2})"
     << "\n"
     << R"({"t":150,"node":"mn","kind":"faa","addr":64,"old":0,"new":4096})"
     << "\n"
     << R"({"t":200,"node":"cn1","kind":"grant","lock":3,"client":7,"cn":1,"mode":"X","seq":2})"
     << "\n"
     << R"({"t":300,"node":"cn1","kind":"release","lock":3,"client":7,"cn":1,"mode":"X","seq":2})"
     << "\n";
  const auto log = read_lock_events_jsonl(ss);
  REQUIRE(log.size() == 3);  // the fabric-level faa line is skipped
  CHECK(log[0].kind == K::Enqueue);
  CHECK(log[1].kind == K::Grant);
  CHECK(log[1].t == 200);
  CHECK(log[1].lock == 3);
  CHECK(log[1].client == 7);
  CHECK(log[1].mode == Mode::Exclusive);
  CHECK(log[1].seq == 2);
  CHECK(log[1].issue_t == 100);  // recovered from the enqueue line
  CHECK(log[2].kind == K::Release);
  CHECK(check_mutual_exclusion(log).empty());
  CHECK(check_liveness(log).empty());
}
