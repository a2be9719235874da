#include "dislock/cql.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>

namespace dislock {

namespace {

std::vector<uint8_t> bytes_of_u64(uint64_t v) {
  std::vector<uint8_t> b(8);
  std::memcpy(b.data(), &v, 8);
  return b;
}

uint64_t u64_from(const std::vector<uint8_t>& b, size_t offset = 0) {
  uint64_t v;
  std::memcpy(&v, b.data() + offset, 8);
  return v;
}

}  // namespace

CqlLockSet CqlLockSet::create(Simulator& sim, const HeaderLayout& layout,
                              uint64_t count) {
  CqlLockSet set{0, layout, count};
  set.base = sim.alloc(set.stride() * count, 8);
  for (uint64_t l = 0; l < count; ++l) reinit_lock(sim, set, l);
  return set;
}

void CqlLockSet::reinit_lock(Simulator& sim, const CqlLockSet& set,
                             uint64_t lock) {
  sim.poke_u64(set.header_addr(lock), 0);
  for (uint32_t s = 0; s < set.layout.capacity(); ++s) {
    sim.poke_u64(set.entry_addr(lock, s), kEntryInitWord);
  }
}

CqlCn::CqlCn(Simulator& sim, uint32_t cn, const CqlLockSet& set,
             CqlOptions options, CqlMetrics* metrics, LockEventLog* log)
    : sim_(sim), cn_(cn), set_(set), options_(options), metrics_(metrics),
      log_(log) {
  reset_state_.acquisition_timeout = options_.acquisition_timeout;
}

void CqlCn::attach_handler() {
  sim_.set_message_handler(
      cn_, [this](uint32_t from, const Message& m) { on_message(from, m); });
}

void CqlCn::on_message(uint32_t from_cn, const Message& msg) {
  (void)from_cn;
  if (const auto* n = std::get_if<Notification>(&msg)) {
    handle_notification(*n);
  } else if (const auto* s = std::get_if<ResetSignal>(&msg)) {
    handle_reset_signal(s->lock, s->from_cn, s->new_count);
  } else if (const auto* a = std::get_if<ResetAck>(&msg)) {
    handle_reset_ack(a->lock, a->from_cn);
  }
}

void CqlCn::log_event(LockEvent::Kind kind, uint64_t lock, uint32_t client,
                      Mode mode, uint64_t seq, TimeNs issue_t) {
  if (!options_.emit_lock_events) return;
  if (log_) {
    log_->push_back(
        LockEvent{kind, sim_.now(), lock, client, cn_, mode, seq, issue_t});
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
    ev.seq = seq;
    tr->emit(ev);
  }
}

QueueEntry CqlCn::entry_from(const std::vector<uint8_t>& queue_bytes,
                             uint32_t slot) const {
  return decode_entry(u64_from(queue_bytes, slot * 8ull));
}

// ---------------------------------------------------------------------------
// Acquire
// ---------------------------------------------------------------------------

Co<CqlCn::Grant> CqlCn::acquire(uint32_t client, uint64_t lock, Mode mode,
                                uint16_t ts) {
  const TimeNs issue = sim_.now();
  log_event(LockEvent::Kind::Enqueue, lock, client, mode, 0, issue);
  TimeNs backoff = options_.abort_retry_base;
  for (;;) {
    TryResult r = co_await try_acquire_once(client, lock, mode, ts);
    if (r.kind == TryKind::Holder || r.kind == TryKind::Granted) {
      metrics_->acquisitions++;
      log_event(LockEvent::Kind::Grant, lock, client, mode, r.seq, issue);
      co_return Grant{r.seq, r.earliest_remote_ts};
    }
    if (r.kind == TryKind::NeedReset) {
      co_await run_reset(client, lock);
      continue;
    }
    log_event(LockEvent::Kind::Abort, lock, client, mode, r.seq, issue);
    if (sim_.now() - issue > options_.acquisition_timeout) {
      // The reset owner may have failed mid-reset; attempt a takeover. Back
      // off afterwards regardless: when the claimant is alive run_reset
      // returns immediately, and retrying with no delay would keep this
      // client's MN involvement alive and stall the claimant's barrier.
      co_await run_reset(client, lock);
    }
    co_await sim_.sleep(backoff);
    backoff = std::min(backoff * 2, options_.abort_retry_cap);
  }
}

Co<CqlCn::TryResult> CqlCn::try_acquire_once(uint32_t client, uint64_t lock,
                                             Mode mode, uint16_t ts) {
  involved_[lock]++;
  metrics_->acquire_mn_ops++;
  const HeaderAction act = mode == Mode::Shared ? HeaderAction::AcqShared
                                                : HeaderAction::AcqExclusive;
  const uint64_t old = co_await sim_.faa(node(), set_.header_addr(lock),
                                         faa_delta(act, set_.layout), "acq");
  const LockHeader h = decode_header(old, set_.layout);
  const uint64_t seq = (h.qhead + h.qsize) & set_.layout.qhead_mask();
  if (h.reset_id != 0) {
    involvement_done(lock);
    metrics_->aborts++;
    co_return TryResult{TryKind::Aborted, seq, {}};
  }
  const bool holder = (mode == Mode::Shared && h.wcnt == 0) ||
                      (mode == Mode::Exclusive && h.qsize == 0);
  if (holder) {
    // Involvement is kept until release; the reset ack barrier waits on it.
    co_return TryResult{TryKind::Holder, seq, {}};
  }
  if (pending_ack_to_.count(lock)) {
    // A reset signal raced with our in-flight FAA; stand down immediately.
    involvement_done(lock);
    metrics_->aborts++;
    co_return TryResult{TryKind::Aborted, seq, {}};
  }
  const SlotRef sr = slot_of(h.qhead, h.qsize, set_.layout);
  if (sr.version == kEntryInitVersion) {
    // Traversal version wrapped into the init sentinel: force a reset.
    involvement_done(lock);
    co_return TryResult{TryKind::NeedReset, seq, {}};
  }
  auto arm_wait = [this, lock, client]() {
    auto pending = sim_.make_completion<WaitResult>();
    waits_[{lock, client}] = pending.second;
    // The generation tag keeps a timeout scheduled for an earlier wait on the
    // same (lock, client) key from firing against a later one after the
    // client was granted, released, and re-enqueued within the timeout.
    const uint64_t gen = ++wait_arm_counter_;
    wait_gen_[{lock, client}] = gen;
    sim_.schedule_after(options_.acquisition_timeout, [this, lock, client, gen] {
      auto g = wait_gen_.find({lock, client});
      if (g == wait_gen_.end() || g->second != gen) return;
      wait_gen_.erase(g);
      auto it = waits_.find({lock, client});
      if (it == waits_.end()) return;
      auto r = it->second;
      waits_.erase(it);
      r.resolve(WaitResult{WaitKind::Timeout, {}});
    });
    return pending.first;
  };
  Completion<WaitResult> comp = arm_wait();
  metrics_->acquire_mn_ops++;
  const QueueEntry entry{sr.version, ts, static_cast<uint16_t>(client), mode};
  co_await sim_.write(node(), set_.entry_addr(lock, sr.slot),
                      bytes_of_u64(encode_entry(entry)), "populate");
  uint64_t last_qhead = h.qhead;
  for (;;) {
    // Awaited as a prvalue copy: GCC 11 mishandles co_await on lvalue awaiters
    // when the result type is not trivially destructible.
    const WaitResult w = co_await Completion<WaitResult>(comp);
    if (w.kind == WaitKind::Notified) {
      co_return TryResult{TryKind::Granted, seq, w.n.earliest_remote_ts};
    }
    if (w.kind == WaitKind::AbortedByReset) {
      involvement_done(lock);
      metrics_->aborts++;
      co_return TryResult{TryKind::Aborted, seq, {}};
    }
    // Timeout. The timeout exists to detect dead holders, not long queues: a
    // hot lock can legitimately keep a waiter queued past the timeout while
    // still making progress. Probe the header and only escalate to a reset
    // when the queue is stalled or has moved past our position (lost grant).
    // Re-arm the wait first so a grant racing the probe is not dropped.
    comp = arm_wait();
    metrics_->acquire_mn_ops++;
    auto probe = co_await sim_.read(node(), set_.header_addr(lock), 8, "tprobe");
    const LockHeader h2 = decode_header(u64_from(probe), set_.layout);
    const uint64_t dist = (h2.qhead - seq) & set_.layout.qhead_mask();
    const bool passed = dist != 0 && dist <= set_.layout.qhead_mask() / 2;
    if (h2.reset_id == 0 && !passed && h2.qhead != last_qhead) {
      last_qhead = h2.qhead;  // progress since last look: keep waiting
      continue;
    }
    // Cancel the re-armed wait; if a grant or abort won the race, honor it.
    if (waits_.erase({lock, client}) == 0) continue;
    involvement_done(lock);
    if (h2.reset_id != 0) {
      metrics_->aborts++;
      co_return TryResult{TryKind::Aborted, seq, {}};
    }
    metrics_->timeouts++;
    co_return TryResult{TryKind::NeedReset, seq, {}};
  }
}

// ---------------------------------------------------------------------------
// Release and queue resolution
// ---------------------------------------------------------------------------

Co<void> CqlCn::release(uint32_t client, uint64_t lock, Mode mode) {
  log_event(LockEvent::Kind::Release, lock, client, mode, 0, sim_.now());
  metrics_->releases++;
  metrics_->release_mn_ops += 2;  // one round trip, charged as FAA + READ
  const HeaderAction act =
      mode == Mode::Shared ? HeaderAction::RelReader : HeaderAction::RelWriter;
  auto fr = co_await sim_.faa_read(node(), set_.header_addr(lock),
                                   faa_delta(act, set_.layout),
                                   set_.queue_addr(lock), set_.queue_bytes(),
                                   "rel");
  const LockHeader h = decode_header(fr.old_value, set_.layout);
  bool need_reset = false;
  if (h.reset_id == 0 && h.qsize > 1) {
    const ResolveStatus st = co_await resolve_and_notify(
        client, lock, mode, h, std::move(fr.bytes));
    need_reset = st == ResolveStatus::NeedReset;
  }
  involvement_done(lock);
  if (need_reset) co_await run_reset(client, lock);
}

// Best-effort: wait briefly for waiter entries that are still being
// populated (their FAA is applied but the entry WRITE is in flight), so the
// earliest-remote timestamp embedded in notifications does not silently miss
// an in-flight waiter. Scanning starts past the granted prefix, which
// fetch_valid_entry resolves on its own. Every scanned offset belongs to a
// waiter that will populate its slot, so the wait is short; a hard cap keeps
// a crashed waiter from stalling the release (fairness degrades, correctness
// does not).
Co<void> CqlCn::settle_waiter_entries(uint64_t lock, const LockHeader& h,
                                      uint64_t start_offset,
                                      std::vector<uint8_t>& cache) {
  const TimeNs deadline = sim_.now() + 10 * 2 * sim_.config().latency_cn_mn();
  for (;;) {
    bool pending = false;
    for (uint64_t off = start_offset; off < h.qsize; ++off) {
      const SlotRef sr = slot_of(h.qhead, off, set_.layout);
      if (sr.version == kEntryInitVersion) co_return;  // reset pending
      const QueueEntry e = entry_from(cache, sr.slot);
      if (e.version != sr.version && !version_newer(e.version, sr.version)) {
        pending = true;
        break;
      }
    }
    if (!pending || sim_.now() > deadline) co_return;
    metrics_->refetch_reads++;
    auto bytes = co_await sim_.read(node(), set_.queue_addr(lock),
                                    set_.queue_bytes(), "refetch_q");
    cache = std::move(bytes);
  }
}

Co<CqlCn::EntryLookup> CqlCn::fetch_valid_entry(uint64_t lock,
                                                const LockHeader& h,
                                                uint64_t offset,
                                                std::vector<uint8_t>& cache,
                                                TimeNs deadline) {
  const SlotRef sr = slot_of(h.qhead, offset, set_.layout);
  if (sr.version == kEntryInitVersion) {
    co_return EntryLookup{EntryLookup::K::Reset, {}};
  }
  for (;;) {
    const QueueEntry e = entry_from(cache, sr.slot);
    if (e.version == sr.version) co_return EntryLookup{EntryLookup::K::Valid, e};
    if (version_newer(e.version, sr.version)) {
      co_return EntryLookup{EntryLookup::K::Reset, {}};
    }
    if (sim_.now() > deadline) co_return EntryLookup{EntryLookup::K::Reset, {}};
    metrics_->refetch_reads++;
    auto bytes =
        co_await sim_.read(node(), set_.entry_addr(lock, sr.slot), 8, "refetch");
    std::copy(bytes.begin(), bytes.end(), cache.begin() + sr.slot * 8ull);
  }
}

Co<CqlCn::ResolveStatus> CqlCn::resolve_and_notify(
    uint32_t client, uint64_t lock, Mode releasing_mode, const LockHeader& h,
    std::vector<uint8_t> cache) {
  (void)client;
  const TimeNs deadline = sim_.now() + options_.acquisition_timeout;

  if (releasing_mode == Mode::Exclusive) {
    // Last holder by construction: hand over to the successor writer or to
    // the whole adjacent run of readers.
    auto first = co_await fetch_valid_entry(lock, h, 1, cache, deadline);
    if (first.k == EntryLookup::K::Reset) co_return ResolveStatus::NeedReset;
    GrantList grants{{1, first.e}};
    if (first.e.mode == Mode::Shared) {
      for (uint64_t off = 2; off < h.qsize; ++off) {
        auto el = co_await fetch_valid_entry(lock, h, off, cache, deadline);
        if (el.k == EntryLookup::K::Reset) co_return ResolveStatus::NeedReset;
        if (el.e.mode == Mode::Exclusive) break;
        grants.emplace_back(off, el.e);
      }
    }
    const Mode grant_mode = first.e.mode;
    if (grants.size() + 1 < h.qsize) {
      co_await settle_waiter_entries(lock, h, grants.size() + 1, cache);
    }
    for (size_t i = 0; i < grants.size(); ++i) {
      const QueueEntry& e = grants[i].second;
      send_notification(lock, grant_mode, e.cid,
                        earliest_for(h, cache, grants, cn_of(e.cid)));
    }
    co_return ResolveStatus::Done;
  }

  // Reader release: responsibility ends once every waiting writer recorded in
  // wcnt is visible in the queue; only then can the successor be judged.
  if (h.wcnt == 0) co_return ResolveStatus::Done;
  for (;;) {
    uint32_t valid_writers = 0;
    bool reset = false;
    for (uint64_t off = 1; off < h.qsize; ++off) {
      const SlotRef sr = slot_of(h.qhead, off, set_.layout);
      if (sr.version == kEntryInitVersion) {
        reset = true;
        break;
      }
      const QueueEntry e = entry_from(cache, sr.slot);
      if (e.version == sr.version) {
        if (e.mode == Mode::Exclusive) valid_writers++;
      } else if (version_newer(e.version, sr.version)) {
        reset = true;
        break;
      }
    }
    if (reset) co_return ResolveStatus::NeedReset;
    if (valid_writers >= h.wcnt) break;
    if (sim_.now() > deadline) co_return ResolveStatus::NeedReset;
    metrics_->refetch_reads++;
    cache = co_await sim_.read(node(), set_.queue_addr(lock),
                               set_.queue_bytes(), "refetch_q");
  }
  const SlotRef sr = slot_of(h.qhead, 1, set_.layout);
  const QueueEntry succ = entry_from(cache, sr.slot);
  if (succ.version == sr.version && succ.mode == Mode::Exclusive) {
    // An invalid successor entry here is a holder reader that never
    // populated its slot; it still holds the lock, so nothing to notify.
    GrantList grants{{1, succ}};
    if (h.qsize > 2) co_await settle_waiter_entries(lock, h, 2, cache);
    send_notification(lock, Mode::Exclusive, succ.cid,
                      earliest_for(h, cache, grants, cn_of(succ.cid)));
  }
  co_return ResolveStatus::Done;
}

std::optional<uint16_t> CqlCn::earliest_for(const LockHeader& h,
                                            const std::vector<uint8_t>& cache,
                                            const GrantList& grants,
                                            uint32_t target_cn) const {
  std::optional<uint16_t> best;
  for (uint64_t off = 1; off < h.qsize; ++off) {
    bool granted = false;
    for (const auto& [goff, ge] : grants) {
      if (goff == off) {
        granted = true;
        break;
      }
    }
    if (granted) continue;
    const SlotRef sr = slot_of(h.qhead, off, set_.layout);
    if (sr.version == kEntryInitVersion) continue;
    const QueueEntry e = entry_from(cache, sr.slot);
    if (e.version != sr.version) continue;  // not yet populated; best effort
    if (cn_of(e.cid) == target_cn) continue;
    if (!best || ts_earlier(e.timestamp, *best)) best = e.timestamp;
  }
  return best;
}

void CqlCn::send_notification(uint64_t lock, Mode grant_mode,
                              uint32_t target_cid,
                              std::optional<uint16_t> earliest_remote_ts) {
  metrics_->notifications++;
  Notification n;
  n.lock = lock;
  n.grant_mode = grant_mode;
  n.reset_count = reset_state_.counter(lock);
  n.earliest_remote_ts = earliest_remote_ts;
  n.target_client = target_cid;
  sim_.send_message(cn_, cn_of(target_cid), n);
}

void CqlCn::handle_notification(const Notification& n) {
  if (filter_notification(n.reset_count, reset_state_.counter(n.lock)) ==
      NotificationFate::Drop) {
    return;
  }
  auto it = waits_.find({n.lock, n.target_client});
  if (it == waits_.end()) {
    metrics_->lost_wakeups++;
    return;
  }
  auto r = it->second;
  waits_.erase(it);
  r.resolve(WaitResult{WaitKind::Notified, n});
}

// ---------------------------------------------------------------------------
// Reset
// ---------------------------------------------------------------------------

void CqlCn::involvement_done(uint64_t lock) {
  auto it = involved_.find(lock);
  assert(it != involved_.end() && it->second > 0);
  if (--it->second == 0) {
    involved_.erase(it);
    auto p = pending_ack_to_.find(lock);
    if (p != pending_ack_to_.end()) {
      const uint32_t to = p->second;
      pending_ack_to_.erase(p);
      deliver_ack(lock, to);
    }
  }
}

void CqlCn::deliver_ack(uint64_t lock, uint32_t to_cn) {
  if (to_cn == cn_) {
    handle_reset_ack(lock, cn_);
  } else {
    sim_.send_message(cn_, to_cn, ResetAck{lock, cn_});
  }
}

void CqlCn::handle_reset_signal(uint64_t lock, uint32_t from_cn,
                                uint64_t new_count) {
  reset_state_.observe(lock, new_count);
  std::vector<Resolver<WaitResult>> to_abort;
  for (auto it = waits_.lower_bound({lock, 0});
       it != waits_.end() && it->first.first == lock;) {
    to_abort.push_back(it->second);
    it = waits_.erase(it);
  }
  for (const auto& r : to_abort) {
    r.resolve(WaitResult{WaitKind::AbortedByReset, {}});
  }
  // Aborted waiters and current holders are still counted as involved; the
  // ack goes out once the last of them unwinds.
  if (involved_count(lock) == 0) {
    deliver_ack(lock, from_cn);
  } else {
    pending_ack_to_[lock] = from_cn;
  }
}

void CqlCn::handle_reset_ack(uint64_t lock, uint32_t from_cn) {
  auto it = barriers_.find(lock);
  if (it == barriers_.end()) return;
  ResetBarrier& b = it->second;
  if (from_cn < b.pending.size() && b.pending[from_cn]) {
    b.pending[from_cn] = false;
    b.remaining--;
    b.kick.resolve(Unit{});
  }
}

Co<void> CqlCn::run_reset(uint32_t client, uint64_t lock) {
  if (resetting_.count(lock)) co_return;  // a local client already runs it
  metrics_->resets_started++;
  const uint64_t haddr = set_.header_addr(lock);

  // Step 1: claim the reset id slot; take over only from a failed claimant.
  auto peeked = co_await sim_.read(node(), haddr, 8, "reset_read");
  uint64_t cur = u64_from(peeked);
  for (;;) {
    if (resetting_.count(lock)) co_return;
    const LockHeader h = decode_header(cur, set_.layout);
    if (h.reset_id != 0 && !sim_.is_failed(NodeId::cn(h.reset_id))) {
      co_return;  // lost to a live claimant (possibly on this CN)
    }
    const uint64_t desired = (cur & ~set_.layout.reset_mask()) | cn_;
    const uint64_t old =
        co_await sim_.cas(node(), haddr, cur, desired, "reset_claim");
    if (old == cur) break;
    cur = old;
  }
  metrics_->resets_won++;
  resetting_.insert(lock);
  log_event(LockEvent::Kind::ResetBegin, lock, client, Mode::Exclusive, 0,
            sim_.now());

  // Step 2: broadcast the signal and wait for every live CN to drain its
  // involvement (waiters abort; holders release first).
  const uint64_t new_count = reset_state_.counter(lock) + 1;
  {
    ResetBarrier& b = barriers_[lock];
    b.pending.assign(sim_.config().num_cns + 1, false);
    b.remaining = 0;
    for (uint32_t c = 1; c <= sim_.config().num_cns; ++c) {
      if (!sim_.is_failed(NodeId::cn(c))) {
        b.pending[c] = true;
        b.remaining++;
      }
    }
  }
  handle_reset_signal(lock, cn_, new_count);
  for (uint32_t c = 1; c <= sim_.config().num_cns; ++c) {
    if (c != cn_ && barriers_[lock].pending[c]) {
      sim_.send_message(cn_, c, ResetSignal{lock, cn_, new_count});
    }
  }
  while (barriers_[lock].remaining > 0) {
    ResetBarrier& b = barriers_[lock];
    for (uint32_t c = 1; c <= sim_.config().num_cns; ++c) {
      if (b.pending[c] && sim_.is_failed(NodeId::cn(c))) {
        b.pending[c] = false;
        b.remaining--;
      }
    }
    if (b.remaining == 0) break;
    auto poll = sim_.make_completion<Unit>();
    b.kick = poll.second;
    sim_.schedule_after(options_.reset_barrier_poll,
                        [kick = poll.second] { kick.resolve(Unit{}); });
    co_await Completion<Unit>(poll.first);
  }
  barriers_.erase(lock);

  // Step 3: reinitialize the queue, then the header.
  std::vector<uint8_t> qinit(set_.queue_bytes());
  for (uint32_t s = 0; s < set_.layout.capacity(); ++s) {
    std::memcpy(qinit.data() + s * 8ull, &kEntryInitWord, 8);
  }
  co_await sim_.write(node(), set_.queue_addr(lock), std::move(qinit),
                      "reset_entries");
  co_await sim_.write(node(), haddr, std::vector<uint8_t>(8, 0),
                      "reset_header");
  // Between the two reset WRITEs no entry write can land (all involved
  // clients drained at the barrier, and fresh attempts abort on the reset
  // id), and a new waiter needs a full extra round trip past the cleared
  // header, so this peek observes the reinitialized queue. Retried FAAs may
  // already have bumped the header counters, hence only the reset-id field
  // is asserted there.
  bool ok = decode_header(sim_.peek_u64(haddr), set_.layout).reset_id == 0;
  for (uint32_t s = 0; s < set_.layout.capacity(); ++s) {
    ok = ok && decode_entry(sim_.peek_u64(set_.entry_addr(lock, s))).version ==
                   kEntryInitVersion;
  }
  if (!ok) metrics_->reset_postcond_fail++;
  metrics_->resets_done++;
  resetting_.erase(lock);
  log_event(LockEvent::Kind::ResetDone, lock, client, Mode::Exclusive, 0,
            sim_.now());
}

}  // namespace dislock
