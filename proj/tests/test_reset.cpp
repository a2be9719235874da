#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>

#include "dislock/checker.hpp"
#include "dislock/cql.hpp"

using namespace dislock;

namespace {

struct Harness {
  Simulator sim;
  CqlLockSet set;
  CqlMetrics metrics;
  LockEventLog log;
  std::vector<std::unique_ptr<CqlCn>> cns;
  uint32_t cpc;

  Harness(uint32_t num_cns, uint32_t clients_per_cn, uint32_t capacity,
          uint64_t locks, TimeNs timeout, uint64_t seed = 1)
      : sim([&] {
          FabricConfig cfg;
          cfg.num_cns = num_cns;
          cfg.seed = seed;
          return cfg;
        }()),
        set(CqlLockSet::create(sim, HeaderLayout::for_capacity(capacity),
                               locks)),
        cpc(clients_per_cn) {
    CqlOptions opt;
    opt.clients_per_cn = clients_per_cn;
    opt.acquisition_timeout = timeout;
    for (uint32_t c = 1; c <= num_cns; ++c) {
      cns.push_back(std::make_unique<CqlCn>(sim, c, set, opt, &metrics, &log));
      cns.back()->attach_handler();
    }
  }

  CqlCn& cn_for(uint32_t client) { return *cns[client / cpc]; }

  // Invariant check after every completed reset: queue entries back to the
  // init version; reset_id cleared.
  void check_lock_reset_postcondition(uint64_t lock) const {
    const LockHeader h =
        decode_header(sim.peek_u64(set.header_addr(lock)), set.layout);
    CHECK(h.reset_id == 0);
    for (uint32_t s = 0; s < set.layout.capacity(); ++s) {
      CHECK(sim.peek_u64(set.entry_addr(lock, s)) == kEntryInitWord);
    }
  }
};

Co<void> acquire_and_vanish(Harness* h, uint32_t client, uint64_t lock,
                            Mode mode, TimeNs start) {
  co_await h->sim.sleep(start);
  co_await h->cn_for(client).acquire(client, lock, mode, 0);
  // Never releases; the test fails this client's node.
}

Co<void> hold_release(Harness* h, uint32_t client, uint64_t lock, Mode mode,
                      TimeNs start, TimeNs hold) {
  co_await h->sim.sleep(start);
  CqlCn& cn = h->cn_for(client);
  co_await cn.acquire(client, lock, mode, 0);
  co_await h->sim.sleep(hold);
  co_await cn.release(client, lock, mode);
}

LockEventLog without_client(const LockEventLog& log, uint32_t client) {
  LockEventLog out;
  for (const auto& ev : log) {
    if (ev.client != client) out.push_back(ev);
  }
  return out;
}

}  // namespace

TEST_CASE("failed holder: waiter times out, resets, and proceeds") {
  Harness h(2, 2, 8, 1, /*timeout=*/2 * kMs);
  detach(acquire_and_vanish(&h, 0, 0, Mode::Exclusive, 0));
  h.sim.schedule_at(100 * kUs, [&] { h.sim.fail_node(NodeId::cn(1)); });
  detach(hold_release(&h, 2, 0, Mode::Exclusive, 200 * kUs, 50 * kUs));
  h.sim.run_until_quiescent(60ull * 1000 * kMs);
  REQUIRE_FALSE(h.sim.horizon_exceeded());

  CHECK(h.metrics.timeouts >= 1);
  CHECK(h.metrics.resets_started >= 1);
  CHECK(h.metrics.resets_won == 1);
  CHECK(h.metrics.resets_done == 1);
  CHECK(h.metrics.reset_postcond_fail == 0);
  // The surviving client got through after the reset.
  const auto survivors = without_client(h.log, 0);
  CHECK(check_mutual_exclusion(survivors).empty());
  CHECK(check_liveness(survivors).empty());
  // Lock usable and drained afterwards.
  const LockHeader end =
      decode_header(h.sim.peek_u64(h.set.header_addr(0)), h.set.layout);
  CHECK(end.reset_id == 0);
  CHECK(end.qsize == 0);
  CHECK(end.wcnt == 0);
}

TEST_CASE("several waiters race to reset: exactly one executor wins") {
  Harness h(3, 2, 8, 1, /*timeout=*/2 * kMs, 5);
  detach(acquire_and_vanish(&h, 0, 0, Mode::Exclusive, 0));
  h.sim.schedule_at(100 * kUs, [&] { h.sim.fail_node(NodeId::cn(1)); });
  // Waiters on two other CNs all time out around the same moment.
  detach(hold_release(&h, 2, 0, Mode::Exclusive, 200 * kUs, 30 * kUs));
  detach(hold_release(&h, 3, 0, Mode::Shared, 210 * kUs, 30 * kUs));
  detach(hold_release(&h, 4, 0, Mode::Exclusive, 220 * kUs, 30 * kUs));
  detach(hold_release(&h, 5, 0, Mode::Shared, 230 * kUs, 30 * kUs));
  h.sim.run_until_quiescent(60ull * 1000 * kMs);
  REQUIRE_FALSE(h.sim.horizon_exceeded());

  // One CAS claim succeeds per reset round; everyone else backs off.
  CHECK(h.metrics.resets_won == h.metrics.resets_done);
  CHECK(h.metrics.resets_done >= 1);
  CHECK(h.metrics.reset_postcond_fail == 0);
  const auto survivors = without_client(h.log, 0);
  CHECK(check_mutual_exclusion(survivors).empty());
  CHECK(check_liveness(survivors).empty());
  // The reset postcondition (entries reinitialized, header cleared) is asserted inside the protocol
  // (reset_postcond_fail above); by now post-reset traffic has repopulated
  // entries, so only assert the header drained back to idle.
  const LockHeader end =
      decode_header(h.sim.peek_u64(h.set.header_addr(0)), h.set.layout);
  CHECK(end.reset_id == 0);
  CHECK(end.qsize == 0);
  CHECK(end.wcnt == 0);
}

TEST_CASE("reset aborts live waiters, which retry and still finish") {
  Harness h(2, 4, 8, 2, /*timeout=*/1 * kMs, 9);
  // Client 0 wedges lock 0; clients on CN2 pile up behind it, and traffic on
  // lock 1 keeps flowing untouched throughout.
  detach(acquire_and_vanish(&h, 0, 0, Mode::Exclusive, 0));
  h.sim.schedule_at(50 * kUs, [&] { h.sim.fail_node(NodeId::cn(1)); });
  detach(hold_release(&h, 4, 0, Mode::Exclusive, 100 * kUs, 20 * kUs));
  detach(hold_release(&h, 5, 0, Mode::Shared, 110 * kUs, 20 * kUs));
  detach(hold_release(&h, 6, 1, Mode::Exclusive, 100 * kUs, 500 * kUs));
  detach(hold_release(&h, 7, 1, Mode::Exclusive, 120 * kUs, 100 * kUs));
  h.sim.run_until_quiescent(60ull * 1000 * kMs);
  REQUIRE_FALSE(h.sim.horizon_exceeded());

  CHECK(h.metrics.resets_done >= 1);
  CHECK(h.metrics.aborts >= 1);  // the non-executing waiter is aborted
  CHECK(h.metrics.reset_postcond_fail == 0);
  const auto survivors = without_client(h.log, 0);
  CHECK(check_mutual_exclusion(survivors).empty());
  CHECK(check_liveness(survivors).empty());
  // Lock 1 never needed a reset.
  for (const auto& ev : h.log) {
    if (ev.kind == LockEvent::Kind::ResetBegin) CHECK(ev.lock == 0);
  }
}

TEST_CASE("lock remains fair and functional after a reset") {
  Harness h(2, 4, 8, 1, /*timeout=*/1 * kMs, 3);
  detach(acquire_and_vanish(&h, 0, 0, Mode::Exclusive, 0));
  h.sim.schedule_at(50 * kUs, [&] { h.sim.fail_node(NodeId::cn(1)); });
  detach(hold_release(&h, 4, 0, Mode::Exclusive, 100 * kUs, 20 * kUs));
  // Post-reset traffic, well after the reset settles.
  for (uint32_t i = 0; i < 4; ++i) {
    detach(hold_release(&h, 5 + (i % 3), 0, i % 2 ? Mode::Shared : Mode::Exclusive,
                        (20 + 5 * i) * kMs, 100 * kUs));
  }
  h.sim.run_until_quiescent(120ull * 1000 * kMs);
  REQUIRE_FALSE(h.sim.horizon_exceeded());

  CHECK(h.metrics.resets_done >= 1);
  CHECK(h.metrics.reset_postcond_fail == 0);
  const auto survivors = without_client(h.log, 0);
  CHECK(check_mutual_exclusion(survivors).empty());
  CHECK(check_liveness(survivors).empty());
  const LockHeader end =
      decode_header(h.sim.peek_u64(h.set.header_addr(0)), h.set.layout);
  CHECK(end.qsize == 0);
  CHECK(end.wcnt == 0);
  CHECK(end.reset_id == 0);
}

TEST_CASE("stale notifications after a reset are dropped, not misapplied") {
  // Covered at the unit level by the reset-count filter; here we just confirm
  // no lost wakeups or postcondition failures across a reset-heavy run.
  Harness h(3, 2, 4, 1, /*timeout=*/1 * kMs, 77);
  detach(acquire_and_vanish(&h, 0, 0, Mode::Exclusive, 0));
  h.sim.schedule_at(30 * kUs, [&] { h.sim.fail_node(NodeId::cn(1)); });
  for (uint32_t c = 2; c < 6; ++c) {
    detach(hold_release(&h, c, 0, c % 2 ? Mode::Shared : Mode::Exclusive,
                        (50 + c * 17) * kUs, 40 * kUs));
  }
  h.sim.run_until_quiescent(60ull * 1000 * kMs);
  REQUIRE_FALSE(h.sim.horizon_exceeded());
  CHECK(h.metrics.lost_wakeups == 0);
  CHECK(h.metrics.reset_postcond_fail == 0);
  const auto survivors = without_client(h.log, 0);
  CHECK(check_mutual_exclusion(survivors).empty());
  CHECK(check_liveness(survivors).empty());
}
