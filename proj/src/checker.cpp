#include "dislock/checker.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <set>

#include <json.hpp>

namespace dislock {

namespace {

struct Interval {
  TimeNs t0, t1;
  Mode mode;
  uint32_t client;
};

// Grant/Release pairing per (lock, client), in log order.
std::map<uint64_t, std::vector<Interval>> collect_intervals(
    const LockEventLog& log, std::vector<Violation>* out) {
  std::map<uint64_t, std::vector<Interval>> by_lock;
  std::map<std::pair<uint64_t, uint32_t>, std::pair<TimeNs, Mode>> open;
  for (const auto& ev : log) {
    if (ev.kind == LockEvent::Kind::Grant) {
      open[{ev.lock, ev.client}] = {ev.t, ev.mode};
    } else if (ev.kind == LockEvent::Kind::Release) {
      auto it = open.find({ev.lock, ev.client});
      if (it == open.end()) {
        if (out) {
          out->push_back({"mutual_exclusion", ev.lock, ev.client, 0, ev.t,
                          "release without grant"});
        }
        continue;
      }
      by_lock[ev.lock].push_back(
          {it->second.first, ev.t, it->second.second, ev.client});
      open.erase(it);
    }
  }
  return by_lock;
}

uint64_t count_inversions(std::vector<uint64_t> v) {
  // Merge sort inversion count.
  if (v.size() < 2) return 0;
  std::vector<uint64_t> tmp(v.size());
  uint64_t inv = 0;
  for (size_t width = 1; width < v.size(); width *= 2) {
    for (size_t lo = 0; lo + width < v.size(); lo += 2 * width) {
      const size_t mid = lo + width;
      const size_t hi = std::min(lo + 2 * width, v.size());
      size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[i] <= v[j]) {
          tmp[k++] = v[i++];
        } else {
          inv += mid - i;
          tmp[k++] = v[j++];
        }
      }
      while (i < mid) tmp[k++] = v[i++];
      while (j < hi) tmp[k++] = v[j++];
      std::copy(tmp.begin() + lo, tmp.begin() + hi, v.begin() + lo);
    }
  }
  return inv;
}

std::set<uint64_t> locks_with_resets(const LockEventLog& log) {
  std::set<uint64_t> out;
  for (const auto& ev : log) {
    if (ev.kind == LockEvent::Kind::ResetBegin) out.insert(ev.lock);
  }
  return out;
}

}  // namespace

std::vector<Violation> check_mutual_exclusion(const LockEventLog& log) {
  std::vector<Violation> out;
  auto by_lock = collect_intervals(log, &out);
  struct Edge {
    TimeNs t;
    bool start;
    Mode mode;
    uint32_t client;
  };
  for (auto& [lock, ivals] : by_lock) {
    std::vector<Edge> edges;
    edges.reserve(ivals.size() * 2);
    for (const auto& iv : ivals) {
      edges.push_back({iv.t0, true, iv.mode, iv.client});
      edges.push_back({iv.t1, false, iv.mode, iv.client});
    }
    // Ends sort before starts at equal times: handover at one instant is fine.
    std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
      if (a.t != b.t) return a.t < b.t;
      return !a.start && b.start;
    });
    uint32_t readers = 0, writers = 0;
    uint32_t writer_client = 0;
    for (const auto& e : edges) {
      if (e.start) {
        if (e.mode == Mode::Exclusive) {
          if (readers > 0 || writers > 0) {
            out.push_back({"mutual_exclusion", lock, e.client, writer_client,
                           e.t, "writer granted while lock held"});
          }
          writers++;
          writer_client = e.client;
        } else {
          if (writers > 0) {
            out.push_back({"mutual_exclusion", lock, e.client, writer_client,
                           e.t, "reader granted while writer holds"});
          }
          readers++;
        }
      } else {
        if (e.mode == Mode::Exclusive) {
          if (writers > 0) writers--;
        } else if (readers > 0) {
          readers--;
        }
      }
    }
  }
  return out;
}

uint64_t count_tf_overtakes(const LockEventLog& log) {
  const auto skip = locks_with_resets(log);
  std::map<uint64_t, std::vector<std::pair<uint64_t, Mode>>> grants;
  for (const auto& ev : log) {
    if (ev.kind == LockEvent::Kind::Grant && !skip.count(ev.lock)) {
      grants[ev.lock].emplace_back(ev.seq, ev.mode);
    }
  }
  uint64_t total = 0;
  for (auto& [lock, gs] : grants) {
    // Collapse consecutive reader grants into one batch keyed by min seq.
    std::vector<uint64_t> batched;
    size_t i = 0;
    while (i < gs.size()) {
      if (gs[i].second == Mode::Exclusive) {
        batched.push_back(gs[i].first);
        i++;
      } else {
        uint64_t mn = gs[i].first;
        while (i < gs.size() && gs[i].second == Mode::Shared) {
          mn = std::min(mn, gs[i].first);
          i++;
        }
        batched.push_back(mn);
      }
    }
    total += count_inversions(std::move(batched));
  }
  return total;
}

uint64_t count_pf_phase_violations(const LockEventLog& log) {
  struct Reader {
    TimeNs enq, grant;
  };
  struct Writer {
    TimeNs grant, release;
    uint32_t client;
  };
  std::map<uint64_t, std::vector<Reader>> readers;
  std::map<uint64_t, std::vector<Writer>> writers;
  std::map<std::pair<uint64_t, uint32_t>, TimeNs> open_enq;
  std::map<std::pair<uint64_t, uint32_t>, size_t> open_writer;
  constexpr TimeNs kNever = ~0ull;
  for (const auto& ev : log) {
    const auto key = std::make_pair(ev.lock, ev.client);
    switch (ev.kind) {
      case LockEvent::Kind::Enqueue:
        open_enq[key] = ev.t;
        break;
      case LockEvent::Kind::Grant:
        if (ev.mode == Mode::Shared) {
          readers[ev.lock].push_back({open_enq[key], ev.t});
        } else {
          open_writer[key] = writers[ev.lock].size();
          writers[ev.lock].push_back({ev.t, kNever, ev.client});
        }
        break;
      case LockEvent::Kind::Release: {
        auto it = open_writer.find(key);
        if (it != open_writer.end()) {
          writers[ev.lock][it->second].release = ev.t;
          open_writer.erase(it);
        }
        break;
      }
      default:
        break;
    }
  }
  uint64_t total = 0;
  for (auto& [lock, ws] : writers) {
    const auto& rs = readers[lock];
    for (size_t i = 0; i + 1 < ws.size(); ++i) {
      const TimeNs r1 = ws[i].release;
      const TimeNs g2 = ws[i + 1].grant;
      if (r1 == kNever || g2 < r1) continue;
      for (const auto& r : rs) {
        if (r.enq <= r1 && r.grant > r1 && r.grant > g2) total++;
      }
      // Readers that never got granted at all.
    }
  }
  return total;
}

uint64_t count_cross_cn_writer_overtakes(const LockEventLog& log,
                                         const CheckerConfig& cfg) {
  if (cfg.skew_bound == 0) return 0;
  struct WG {
    TimeNs grant, issue;
    uint32_t cn;
  };
  std::map<uint64_t, std::vector<WG>> by_lock;
  for (const auto& ev : log) {
    if (ev.kind == LockEvent::Kind::Grant && ev.mode == Mode::Exclusive) {
      by_lock[ev.lock].push_back({ev.t, ev.issue_t, ev.cn});
    }
  }
  uint64_t total = 0;
  for (auto& [lock, ws] : by_lock) {
    // ws is in grant order already (log order).
    for (size_t i = 0; i < ws.size(); ++i) {
      for (size_t j = i + 1; j < ws.size(); ++j) {
        if (ws[i].cn == ws[j].cn) continue;
        // j granted after i; an overtake needs j issued earlier than i by
        // more than the skew bound, within the timestamp half-window.
        if (ws[j].issue >= ws[i].issue) continue;
        const TimeNs gap = ws[i].issue - ws[j].issue;
        if (gap > cfg.skew_bound && gap < cfg.ts_window) total++;
      }
    }
  }
  return total;
}

std::vector<Violation> check_liveness(const LockEventLog& log) {
  enum class St : uint8_t { Idle, Waiting, Holding };
  std::map<std::pair<uint64_t, uint32_t>, std::pair<St, TimeNs>> st;
  std::vector<Violation> out;
  for (const auto& ev : log) {
    auto& s = st[{ev.lock, ev.client}];
    switch (ev.kind) {
      case LockEvent::Kind::Enqueue:
        s = {St::Waiting, ev.t};
        break;
      case LockEvent::Kind::Grant:
        s.first = St::Holding;
        break;
      case LockEvent::Kind::Release:
        s.first = St::Idle;
        break;
      default:
        break;  // aborts keep the waiter waiting
    }
  }
  for (const auto& [key, s] : st) {
    if (s.first == St::Waiting) {
      out.push_back({"stuck", key.first, key.second, 0, s.second,
                     "acquisition never granted"});
    } else if (s.first == St::Holding) {
      out.push_back({"stuck", key.first, key.second, 0, s.second,
                     "grant never released"});
    }
  }
  return out;
}

LockEventLog read_lock_events_jsonl(std::istream& in) {
  LockEventLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::string kind = j.value("kind", "");
    LockEvent ev{};
    if (kind == "enqueue") ev.kind = LockEvent::Kind::Enqueue;
    else if (kind == "grant") ev.kind = LockEvent::Kind::Grant;
    else if (kind == "release") ev.kind = LockEvent::Kind::Release;
    else if (kind == "abort") ev.kind = LockEvent::Kind::Abort;
    else if (kind == "reset_begin") ev.kind = LockEvent::Kind::ResetBegin;
    else if (kind == "reset_done") ev.kind = LockEvent::Kind::ResetDone;
    else continue;
    ev.t = j.value("t", 0ull);
    ev.lock = j.value("lock", 0ull);
    ev.client = j.value("client", 0u);
    ev.cn = j.value("cn", 0u);
    ev.mode = j.value("mode", "S") == "X" ? Mode::Exclusive : Mode::Shared;
    ev.seq = j.value("seq", 0ull);
    ev.issue_t = ev.t;
    log.push_back(ev);
  }
  // Reconstruct grant issue times from the preceding enqueue of the same
  // (lock, client): traces do not carry them explicitly.
  std::map<std::pair<uint64_t, uint32_t>, TimeNs> enq;
  for (auto& ev : log) {
    const auto key = std::make_pair(ev.lock, ev.client);
    if (ev.kind == LockEvent::Kind::Enqueue) {
      enq[key] = ev.t;
    } else if (ev.kind == LockEvent::Kind::Grant) {
      auto it = enq.find(key);
      if (it != enq.end()) ev.issue_t = it->second;
    }
  }
  return log;
}

}  // namespace dislock
