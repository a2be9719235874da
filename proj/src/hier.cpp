#include "dislock/hier.hpp"

#include <cstring>

namespace dislock {

std::vector<size_t> select_share_set(
    const std::deque<std::shared_ptr<LocalWaiter>>& wq, Fairness policy,
    std::optional<uint16_t> remote_ts) {
  std::vector<size_t> out;
  if (policy == Fairness::TaskFair) {
    for (size_t i = 0; i < wq.size(); ++i) {
      if (wq[i]->mode == Mode::Exclusive) break;
      if (remote_ts && ts_earlier(*remote_ts, wq[i]->ts)) break;
      out.push_back(i);
    }
  } else {
    for (size_t i = 0; i < wq.size(); ++i) {
      if (wq[i]->mode == Mode::Shared) out.push_back(i);
    }
  }
  return out;
}

size_t select_release_waiter(const std::deque<std::shared_ptr<LocalWaiter>>& wq,
                             Fairness policy, Mode releasing_mode) {
  if (policy == Fairness::PhaseFair && releasing_mode == Mode::Exclusive) {
    for (size_t i = 0; i < wq.size(); ++i) {
      if (wq[i]->mode == Mode::Shared) return i;
    }
  }
  return 0;
}

HierCn::HierCn(Simulator& sim, uint32_t cn, const CqlLockSet& set,
               CqlOptions cql_opt, HierOptions opt, uint64_t sync_counter_addr,
               CqlMetrics* cql_metrics, HierMetrics* metrics, LockEventLog* log)
    : sim_(sim), cn_(cn),
      cql_(sim, cn, set,
           [&] {
             cql_opt.emit_lock_events = false;  // app events come from hier
             return cql_opt;
           }(),
           cql_metrics, log),
      opt_(opt), sync_counter_addr_(sync_counter_addr), metrics_(metrics),
      log_(log) {}

void HierCn::attach_handler() { cql_.attach_handler(); }

void HierCn::log_event(LockEvent::Kind kind, uint64_t lock, uint32_t client,
                       Mode mode, TimeNs issue_t) {
  if (log_) {
    log_->push_back(
        LockEvent{kind, sim_.now(), lock, client, cn_, mode, 0, issue_t});
  }
  if (TraceSink* tr = sim_.trace_sink()) {
    TraceEvent ev;
    ev.t = sim_.now();
    ev.node = "cn" + std::to_string(cn_);
    ev.kind = lock_event_kind_name(kind);
    ev.has_lock = true;
    ev.lock = lock;
    ev.client = client;
    ev.cn = cn_;
    ev.mode = mode_char(mode);
    tr->emit(ev);
  }
}

Co<void> HierCn::guard_lock(LocalLock& l) {
  if (!l.guard_held) {
    l.guard_held = true;
    co_return;
  }
  auto c = sim_.make_completion<Unit>();
  l.guard_q.push_back(c.second);
  co_await Completion<Unit>(c.first);  // holder status transferred by unlock
}

void HierCn::guard_unlock(LocalLock& l) {
  if (!l.guard_q.empty()) {
    auto next = l.guard_q.front();
    l.guard_q.pop_front();
    next.resolve(Unit{});  // guard stays held, ownership moves
  } else {
    l.guard_held = false;
  }
}

void HierCn::refresh_state_on_claim(LocalLock& l, Mode mode) {
  bool writer_waiting = false;
  for (const auto& w : l.wq) {
    if (w->mode == Mode::Exclusive) {
      writer_waiting = true;
      break;
    }
  }
  l.state = (mode == Mode::Exclusive || writer_waiting)
                ? LocalLock::State::Exclusive
                : LocalLock::State::Shared;
}

// Called with the guard held; returns with it held. Establishes this client
// as the owner: bumps holder_cnt, reconciles the CQL lock (acquire, or
// release+reacquire on a mode change), and shares with waiting readers.
Co<void> HierCn::take_ownership(uint32_t client, uint64_t lock, LocalLock& l,
                                Mode mode, uint16_t ts) {
  refresh_state_on_claim(l, mode);
  l.holder_cnt++;
  const bool need_cql = !l.cql_held || l.cql_mode != mode;
  if (need_cql) {
    const bool reacquire = l.cql_held;
    const Mode old_mode = l.cql_mode;
    l.cql_held = false;
    guard_unlock(l);
    CqlCn::Grant g;
    if (reacquire) {
      metrics_->cql_reacquires_mode++;
      // Mode change: enqueue the new-mode entry before dropping the current
      // hold so this CN keeps its queue position; releasing first opens a
      // window where a remote FAA finds the queue empty and is granted ahead
      // of a locally older waiter. The transient extra entry is bounded by
      // one per lock (only the holder CN reacquires) and the overflow slot
      // is the holder's own, which no resolution scan reads.
      auto c = sim_.make_completion<CqlCn::Grant>();
      detach(reacquire_task(client, lock, mode, ts, c.second));
      co_await sim_.sleep(0);
      co_await cql_.release(client, lock, old_mode);
      g = co_await Completion<CqlCn::Grant>(c.first);
    } else {
      g = co_await cql_.acquire(client, lock, mode, ts);
    }
    metrics_->cql_acquires++;
    co_await guard_lock(l);
    l.cql_held = true;
    l.cql_mode = mode;
    // The notification embeds the releaser's queue snapshot; estimate when
    // the MN produced it and keep whichever source (notification vs. a
    // concurrent prefetch read) saw the MN more recently. A kept stale value
    // would trigger a bogus remote handover that forfeits queue position.
    const TimeNs snap = sim_.now() - sim_.config().latency_cn_cn() -
                        sim_.config().latency_cn_mn();
    if (snap > l.remote_snap) {
      l.remote_snap = snap;
      l.prefetched_remote_ts = g.earliest_remote_ts;
    }
  }
  if (mode == Mode::Shared) {
    co_await await_prefetches(l);
    const auto idxs = select_share_set(l.wq, opt_.policy,
                                       l.prefetched_remote_ts);
    std::vector<std::shared_ptr<LocalWaiter>> admitted;
    for (auto it = idxs.rbegin(); it != idxs.rend(); ++it) {
      admitted.push_back(l.wq[*it]);
      l.wq.erase(l.wq.begin() + static_cast<ptrdiff_t>(*it));
    }
    for (auto it = admitted.rbegin(); it != admitted.rend(); ++it) {
      l.holder_cnt++;
      (*it)->granted = true;
      (*it)->wake.resolve(Unit{});
      metrics_->local_share_grants++;
    }
  }
}

Co<void> HierCn::acquire(uint32_t client, uint64_t lock, Mode mode) {
  const TimeNs issue = sim_.now();
  const uint16_t ts = ts_now();
  metrics_->acquisitions++;
  log_event(LockEvent::Kind::Enqueue, lock, client, mode, issue);
  LocalLock& l = table_[lock];
  co_await guard_lock(l);
  if (mode == Mode::Shared && l.state == LocalLock::State::Shared &&
      l.cql_held) {
    l.holder_cnt++;
    metrics_->local_fast_shares++;
    log_event(LockEvent::Kind::Grant, lock, client, mode, issue);
    guard_unlock(l);
    co_return;
  }
  if (l.state == LocalLock::State::Free) {
    co_await take_ownership(client, lock, l, mode, ts);
    log_event(LockEvent::Kind::Grant, lock, client, mode, issue);
    guard_unlock(l);
    co_return;
  }
  // Wait locally; the prefetch task hides the remote-timestamp lookup.
  auto w = std::make_shared<LocalWaiter>();
  w->mode = mode;
  w->cid = client;
  w->ts = ts;
  auto c = sim_.make_completion<Unit>();
  w->wake = c.second;
  if (mode == Mode::Exclusive) l.state = LocalLock::State::Exclusive;
  l.wq.push_back(w);
  // Refresh on every local enqueue, even with one already in flight: the new
  // snapshot lands a full round trip later and can observe a remote waiter
  // whose entry was still being written when the previous one passed the MN.
  detach(prefetch_remote_ts(lock));
  guard_unlock(l);
  co_await Completion<Unit>(c.first);
  co_await guard_lock(l);
  if (!w->granted) {
    co_await take_ownership(client, lock, l, mode, ts);
  }
  log_event(LockEvent::Kind::Grant, lock, client, mode, issue);
  guard_unlock(l);
}

Co<void> HierCn::release(uint32_t client, uint64_t lock, Mode mode) {
  LocalLock& l = table_.at(lock);
  co_await guard_lock(l);
  log_event(LockEvent::Kind::Release, lock, client, mode, sim_.now());
  if (l.holder_cnt > 1) {
    l.holder_cnt--;
    guard_unlock(l);
    co_return;
  }
  l.holder_cnt = 0;
  if (l.wq.empty()) {
    l.state = LocalLock::State::Free;
    const bool held = l.cql_held;
    const Mode cm = l.cql_mode;
    l.cql_held = false;
    l.prefetched_remote_ts.reset();
    l.remote_snap = sim_.now();
    guard_unlock(l);
    if (held) co_await cql_.release(client, lock, cm);
    co_return;
  }
  // Let in-flight prefetches land before choosing local vs. remote handover.
  co_await await_prefetches(l);
  const size_t idx = select_release_waiter(l.wq, opt_.policy, mode);
  auto sel = l.wq[idx];
  l.wq.erase(l.wq.begin() + static_cast<ptrdiff_t>(idx));
  const bool remote_first =
      l.prefetched_remote_ts && ts_earlier(*l.prefetched_remote_ts, sel->ts);
  if (!remote_first) {
    metrics_->local_transfers++;
    sel->wake.resolve(Unit{});
    guard_unlock(l);
  } else {
    metrics_->remote_transfers++;
    const bool held = l.cql_held;
    const Mode cm = l.cql_mode;
    l.cql_held = false;
    l.prefetched_remote_ts.reset();
    l.remote_snap = sim_.now();
    // Wake the selected waiter before issuing the CQL release and yield one
    // event so its CQL enqueue reaches the MN first. The successor CN's grant
    // notification then carries this waiter's timestamp, which keeps it from
    // granting later-stamped local waiters ahead of ours. At most one such
    // extra entry exists per lock (only the holder CN does this), so the
    // queue never exceeds capacity + 1 and the spare slot is the holder's
    // own, which no resolution scan reads.
    sel->wake.resolve(Unit{});
    guard_unlock(l);
    if (held) {
      co_await sim_.sleep(0);
      co_await cql_.release(client, lock, cm);
    }
  }
}

Co<void> HierCn::reacquire_task(uint32_t client, uint64_t lock, Mode mode,
                                uint16_t ts, Resolver<CqlCn::Grant> done) {
  CqlCn::Grant g = co_await cql_.acquire(client, lock, mode, ts);
  done.resolve(g);
}

Co<void> HierCn::prefetch_remote_ts(uint64_t lock) {
  LocalLock& l = table_[lock];
  l.prefetch_pending++;
  co_await fetch_remote_ts_into(lock);
  l.prefetch_pending--;
  while (!l.prefetch_waiters.empty()) {
    auto r = l.prefetch_waiters.front();
    l.prefetch_waiters.pop_front();
    r.resolve(Unit{});
  }
}

Co<void> HierCn::await_prefetches(LocalLock& l) {
  while (l.prefetch_pending > 0) {
    auto c = sim_.make_completion<Unit>();
    l.prefetch_waiters.push_back(c.second);
    co_await Completion<Unit>(c.first);
  }
}

Co<void> HierCn::fetch_remote_ts_into(uint64_t lock) {
  metrics_->prefetch_reads++;
  const CqlLockSet& set = cql_.lock_set();
  auto bytes = co_await sim_.read(NodeId::cn(cn_), set.header_addr(lock),
                                  8 + set.queue_bytes(), "prefetch");
  uint64_t hword;
  std::memcpy(&hword, bytes.data(), 8);
  const LockHeader h = decode_header(hword, set.layout);
  if (h.reset_id != 0) co_return;
  std::optional<uint16_t> best;
  for (uint64_t off = 1; off < h.qsize; ++off) {
    const SlotRef sr = slot_of(h.qhead, off, set.layout);
    if (sr.version == kEntryInitVersion) continue;
    uint64_t eword;
    std::memcpy(&eword, bytes.data() + 8 + sr.slot * 8ull, 8);
    const QueueEntry e = decode_entry(eword);
    if (e.version != sr.version) continue;
    if (cql_.cn_of(e.cid) == cn_) continue;
    if (!best || ts_earlier(e.timestamp, *best)) best = e.timestamp;
  }
  const TimeNs snap = sim_.now() - sim_.config().latency_cn_mn();
  LocalLock& l = table_[lock];
  if (snap > l.remote_snap) {
    l.remote_snap = snap;
    l.prefetched_remote_ts = best;  // clears it when no remote waiter exists
  }
}

Co<void> HierCn::sync_once() {
  const uint32_t n = sim_.config().num_cns;
  const uint64_t old =
      co_await sim_.faa(NodeId::cn(cn_), sync_counter_addr_, 1, "tsync");
  if (old + 1 == n) {
    co_await sim_.write(NodeId::cn(cn_), sync_counter_addr_,
                        std::vector<uint8_t>(8, 0), "tsync_zero");
  }
  const TimeNs deadline = sim_.now() + opt_.sync_round_timeout;
  for (;;) {
    auto b = co_await sim_.read(NodeId::cn(cn_), sync_counter_addr_, 8,
                                "tsync_poll");
    uint64_t v;
    std::memcpy(&v, b.data(), 8);
    if (v == 0) {
      epoch_start_ = sim_.now();
      metrics_->sync_rounds++;
      break;
    }
    if (sim_.now() > deadline) break;  // round abandoned, keep previous epoch
    co_await sim_.sleep(opt_.sync_poll);
  }
}

void HierCn::start_time_sync() {
  detach([](HierCn* self) -> Co<void> {
    while (!self->sync_stop_) {
      co_await self->sync_once();
      const TimeNs next =
          (self->sim_.now() / self->opt_.sync_interval + 1) *
          self->opt_.sync_interval;
      co_await self->sim_.sleep(next - self->sim_.now());
    }
  }(this));
}

}  // namespace dislock
