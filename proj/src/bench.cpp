#include "dislock/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

namespace dislock {

const char* lock_kind_name(LockKind k) {
  switch (k) {
    case LockKind::Cql: return "cql";
    case LockKind::CasLock: return "caslock";
    case LockKind::Ticket: return "ticket";
  }
  return "?";
}

ZipfSampler::ZipfSampler(uint64_t n, double alpha) {
  cdf_.resize(n);
  double sum = 0;
  for (uint64_t i = 0; i < n; ++i) {
    sum += std::pow(static_cast<double>(i + 1), -alpha);
    cdf_[i] = sum;
  }
  for (auto& v : cdf_) v /= sum;
}

uint64_t ZipfSampler::sample(Rng& rng) const {
  const double u = rng.next_double();
  const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
  const size_t i = static_cast<size_t>(it - cdf_.begin());
  return std::min<uint64_t>(i, cdf_.size() - 1);
}

namespace {

uint32_t next_pow2(uint32_t v) {
  uint32_t p = 2;
  while (p < v) p <<= 1;
  return p;
}

constexpr TimeNs kWorkloadStart = 1 * kMs;  // after the initial time sync
constexpr TimeNs kRunHorizon = 36000ull * 1000 * kMs;  // 10 simulated hours
constexpr uint32_t kSmallObject = 64;
constexpr uint32_t kLargeObject = 4096;

struct Op {
  uint64_t lock;
  Mode mode;
  uint32_t len;
};

struct Engine {
  BenchConfig cfg;
  uint32_t capacity;
  Simulator sim;
  LockEventLog log;
  CqlMetrics cqlm;
  HierMetrics hierm;
  BaselineMetrics basem;
  CqlLockSet set;  // unused (zero locks) for baseline kinds
  uint64_t sync_addr = 0;
  uint64_t obj_base = 0;
  uint64_t obj_slots = 0;
  std::vector<std::unique_ptr<CqlCn>> cql_cns;
  std::vector<std::unique_ptr<HierCn>> hier_cns;
  std::unique_ptr<CasLockService> cas;
  std::unique_ptr<TicketLockService> ticket;
  std::vector<std::vector<Op>> streams;
  std::vector<TimeNs> latencies;
  TimeNs workload_end = 0;  // last client completion; quiescence time runs
                            // longer because stale acquisition-timeout
                            // callbacks stay queued after their grants

  static uint32_t resolve_capacity(const BenchConfig& c) {
    if (c.queue_capacity) return next_pow2(std::max(c.queue_capacity, 2u));
    // Hierarchical locking funnels one CQL waiter per CN, plus one transient
    // extra entry on the holder CN during handover or a mode reacquire;
    // otherwise every client can be queued at once.
    return next_pow2(std::max(
        c.hierarchy ? c.workload.num_cns + 1 : c.workload.total_clients(),
        2u));
  }

  static FabricConfig sized_fabric(const BenchConfig& c, uint32_t capacity) {
    FabricConfig f = c.fabric;
    f.num_cns = c.workload.num_cns;
    f.seed = c.seed;
    const uint64_t obj_slots = std::min<uint64_t>(c.workload.num_locks, 16384);
    const uint64_t need = c.workload.num_locks * (8 + capacity * 8ull) +
                          obj_slots * kLargeObject + (1 << 20);
    f.mn_memory_bytes = std::max(f.mn_memory_bytes, need);
    return f;
  }

  explicit Engine(const BenchConfig& c)
      : cfg(c), capacity(resolve_capacity(c)), sim(sized_fabric(c, capacity)),
        set(cfg.lock == LockKind::Cql
                ? CqlLockSet::create(sim, HeaderLayout::for_capacity(capacity),
                                     cfg.workload.num_locks)
                : CqlLockSet{}) {
    const auto& w = cfg.workload;
    obj_slots = std::min<uint64_t>(w.num_locks, 16384);
    obj_base = sim.alloc(obj_slots * kLargeObject);
    LockEventLog* log_ptr = cfg.collect_log ? &log : nullptr;

    CqlOptions co;
    co.clients_per_cn = w.clients_per_cn;
    co.acquisition_timeout = cfg.acquisition_timeout;
    switch (cfg.lock) {
      case LockKind::Cql:
        if (cfg.hierarchy) {
          sync_addr = sim.alloc(8);
          HierOptions ho;
          ho.policy = cfg.fairness;
          for (uint32_t i = 1; i <= w.num_cns; ++i) {
            hier_cns.push_back(std::make_unique<HierCn>(
                sim, i, set, co, ho, sync_addr, &cqlm, &hierm, log_ptr));
            hier_cns.back()->attach_handler();
          }
        } else {
          for (uint32_t i = 1; i <= w.num_cns; ++i) {
            cql_cns.push_back(
                std::make_unique<CqlCn>(sim, i, set, co, &cqlm, log_ptr));
            cql_cns.back()->attach_handler();
          }
        }
        break;
      case LockKind::CasLock:
        cas = std::make_unique<CasLockService>(
            sim, w.num_locks, CasLockService::Options{cfg.acquisition_timeout},
            &basem, log_ptr);
        break;
      case LockKind::Ticket: {
        TicketLockService::Options to;
        to.report_timeout = cfg.acquisition_timeout;
        to.backoff_base = cfg.ticket_backoff_base;
        to.backoff_cap = cfg.ticket_backoff_cap;
        ticket = std::make_unique<TicketLockService>(sim, w.num_locks, to,
                                                     &basem, log_ptr);
        break;
      }
    }
    generate_workload();
    latencies.reserve(w.total_clients() * w.ops_per_client);
  }

  void generate_workload() {
    const auto& w = cfg.workload;
    const ZipfSampler zipf(w.num_locks, w.zipf_alpha);
    streams.resize(w.total_clients());
    for (uint32_t c = 0; c < w.total_clients(); ++c) {
      Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + c + 1);
      auto& s = streams[c];
      s.reserve(w.ops_per_client);
      for (uint64_t i = 0; i < w.ops_per_client; ++i) {
        Op op;
        op.lock = zipf.sample(rng);
        op.mode = rng.next_double() < w.read_ratio ? Mode::Shared
                                                   : Mode::Exclusive;
        op.len = w.mode == "objectstore" && rng.below(10) == 0 ? kLargeObject
                                                               : kSmallObject;
        s.push_back(op);
      }
    }
  }

  uint32_t cn_of(uint32_t client) const {
    return client / cfg.workload.clients_per_cn + 1;
  }
};

Co<void> critical_section(Engine* e, uint32_t cn, const Op& op) {
  for (uint32_t k = 0; k < e->cfg.workload.critical_section_ops; ++k) {
    const uint64_t addr =
        e->obj_base + (op.lock % e->obj_slots) * kLargeObject;
    if (op.mode == Mode::Exclusive) {
      co_await e->sim.write(NodeId::cn(cn), addr,
                            std::vector<uint8_t>(op.len, 0xAB), "obj");
    } else {
      co_await e->sim.read(NodeId::cn(cn), addr, op.len, "obj");
    }
  }
}

Co<void> client_main(Engine* e, uint32_t client) {
  co_await e->sim.sleep(kWorkloadStart);
  const uint32_t cn = e->cn_of(client);
  for (const Op& op : e->streams[client]) {
    const TimeNs t0 = e->sim.now();
    switch (e->cfg.lock) {
      case LockKind::Cql:
        if (e->cfg.hierarchy) {
          co_await e->hier_cns[cn - 1]->acquire(client, op.lock, op.mode);
        } else {
          co_await e->cql_cns[cn - 1]->acquire(
              client, op.lock, op.mode,
              static_cast<uint16_t>((e->sim.now() / kUs) & 0xFFFF));
        }
        break;
      case LockKind::CasLock:
        co_await e->cas->acquire(client, cn, op.lock, op.mode);
        break;
      case LockKind::Ticket:
        co_await e->ticket->acquire(client, cn, op.lock, op.mode);
        break;
    }
    e->latencies.push_back(e->sim.now() - t0);
    co_await critical_section(e, cn, op);
    switch (e->cfg.lock) {
      case LockKind::Cql:
        if (e->cfg.hierarchy) {
          co_await e->hier_cns[cn - 1]->release(client, op.lock, op.mode);
        } else {
          co_await e->cql_cns[cn - 1]->release(client, op.lock, op.mode);
        }
        break;
      case LockKind::CasLock:
        co_await e->cas->release(client, cn, op.lock, op.mode);
        break;
      case LockKind::Ticket:
        co_await e->ticket->release(client, cn, op.lock, op.mode);
        break;
    }
  }
  e->workload_end = std::max(e->workload_end, e->sim.now());
}

Co<void> initial_sync(HierCn* cn) { co_await cn->sync_once(); }

double percentile_us(std::vector<TimeNs>& lat, double p) {
  if (lat.empty()) return 0;
  const size_t idx = static_cast<size_t>(
      std::ceil(p / 100.0 * static_cast<double>(lat.size()))) - 1;
  std::nth_element(lat.begin(), lat.begin() + static_cast<ptrdiff_t>(idx),
                   lat.end());
  return static_cast<double>(lat[idx]) / kUs;
}

void validate(const BenchConfig& c) {
  const auto& w = c.workload;
  if (w.num_cns == 0 || w.clients_per_cn == 0 || w.num_locks == 0 ||
      w.critical_section_ops == 0 || w.ops_per_client == 0) {
    throw ConfigError("all workload counts must be > 0");
  }
  if (w.read_ratio < 0 || w.read_ratio > 1) {
    throw ConfigError("readRatio must be in [0,1]");
  }
  if (w.zipf_alpha < 0) throw ConfigError("zipfAlpha must be >= 0");
  if (w.mode != "microbench" && w.mode != "objectstore") {
    throw ConfigError("mode must be microbench or objectstore");
  }
  if (c.hierarchy && c.lock != LockKind::Cql) {
    throw ConfigError("hierarchy=on requires lock=cql");
  }
  if (c.fabric.latency_cn_mn_us <= 0 || c.fabric.latency_cn_cn_us <= 0 ||
      c.fabric.mn_nic_iops_capacity <= 0 ||
      c.fabric.mn_bandwidth_bytes_per_s <= 0) {
    throw ConfigError("fabric parameters must be positive");
  }
}

}  // namespace

RunResult run_bench(const BenchConfig& cfg, TraceSink* trace) {
  validate(cfg);
  Engine e(cfg);
  if (trace) e.sim.set_trace_sink(trace);
  if (cfg.lock == LockKind::Cql && cfg.hierarchy) {
    for (auto& cn : e.hier_cns) detach(initial_sync(cn.get()));
  }
  for (uint32_t c = 0; c < cfg.workload.total_clients(); ++c) {
    detach(client_main(&e, c));
  }
  e.sim.run_until_quiescent(kRunHorizon);
  const TimeNs end = e.workload_end;

  RunResult r;
  r.cql = e.cqlm;
  r.hier = e.hierm;
  r.baseline = e.basem;
  RunMetrics& m = r.metrics;
  m.horizon_exceeded = e.sim.horizon_exceeded();
  const TimeNs active = end > kWorkloadStart ? end - kWorkloadStart : 1;
  m.sim_seconds = static_cast<double>(active) / 1e9;

  switch (cfg.lock) {
    case LockKind::Cql:
      if (cfg.hierarchy) {
        m.acquisitions = e.hierm.acquisitions;
        m.mn_ops_per_acq =
            static_cast<double>(e.cqlm.acquire_mn_ops + e.hierm.prefetch_reads) /
            std::max<uint64_t>(m.acquisitions, 1);
      } else {
        m.acquisitions = e.cqlm.acquisitions;
        m.mn_ops_per_acq = static_cast<double>(e.cqlm.acquire_mn_ops) /
                           std::max<uint64_t>(m.acquisitions, 1);
      }
      m.refetch_per_release = static_cast<double>(e.cqlm.refetch_reads) /
                              std::max<uint64_t>(e.cqlm.releases, 1);
      m.notifications_per_release = static_cast<double>(e.cqlm.notifications) /
                                    std::max<uint64_t>(e.cqlm.releases, 1);
      m.reset_fraction = static_cast<double>(e.cqlm.resets_done) /
                         std::max<uint64_t>(m.acquisitions, 1);
      break;
    case LockKind::CasLock:
      m.acquisitions = e.basem.acquisitions;
      m.mn_ops_per_acq = static_cast<double>(e.basem.cas_attempts) /
                         std::max<uint64_t>(m.acquisitions, 1);
      // The lock-free cycle costs two CASes (acquire win + release).
      m.retries_per_acq = std::max(0.0, m.mn_ops_per_acq - 2.0);
      break;
    case LockKind::Ticket:
      m.acquisitions = e.basem.acquisitions;
      m.mn_ops_per_acq =
          static_cast<double>(e.basem.faa_ops + e.basem.polls) /
          std::max<uint64_t>(m.acquisitions, 1);
      m.retries_per_acq = static_cast<double>(e.basem.polls) /
                          std::max<uint64_t>(m.acquisitions, 1);
      break;
  }
  m.throughput = static_cast<double>(m.acquisitions) / m.sim_seconds;
  m.latency_median_us = percentile_us(e.latencies, 50);
  m.latency_p99_us = percentile_us(e.latencies, 99);
  m.nic_utilization =
      static_cast<double>(e.sim.nic_busy_ns()) / static_cast<double>(active);

  if (cfg.collect_log) {
    m.mutex_violations = check_mutual_exclusion(e.log).size();
    m.stuck_clients = check_liveness(e.log).size();
    m.fairness.tf_overtakes = count_tf_overtakes(e.log);
    if (cfg.fairness == Fairness::PhaseFair) {
      m.fairness.pf_phase_violations = count_pf_phase_violations(e.log);
    }
    if (cfg.hierarchy) {
      CheckerConfig cc;
      cc.skew_bound =
          2 * static_cast<TimeNs>(cfg.fabric.latency_cn_mn_us * kUs);
      m.fairness.cross_cn_writer_overtakes =
          count_cross_cn_writer_overtakes(e.log, cc);
    }
  }
  r.log = std::move(e.log);
  return r;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

LockKind parse_lock(const std::string& s) {
  if (s == "cql") return LockKind::Cql;
  if (s == "caslock") return LockKind::CasLock;
  if (s == "ticket") return LockKind::Ticket;
  throw ConfigError("unknown lock kind: " + s);
}

Fairness parse_fairness(const std::string& s) {
  if (s == "tf" || s == "taskfair") return Fairness::TaskFair;
  if (s == "pf" || s == "phasefair") return Fairness::PhaseFair;
  throw ConfigError("unknown fairness policy: " + s);
}

bool parse_on_off(const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw ConfigError("expected on|off, got: " + s);
}

void apply_key(BenchConfig& c, const std::string& key,
               const nlohmann::json& v) {
  auto& w = c.workload;
  auto& f = c.fabric;
  try {
    if (key == "numCNs") w.num_cns = v.get<uint32_t>();
    else if (key == "clientsPerCN") w.clients_per_cn = v.get<uint32_t>();
    else if (key == "numLocks") w.num_locks = v.get<uint64_t>();
    else if (key == "zipfAlpha") w.zipf_alpha = v.get<double>();
    else if (key == "readRatio") w.read_ratio = v.get<double>();
    else if (key == "criticalSectionOps") w.critical_section_ops = v.get<uint32_t>();
    else if (key == "opsPerClient") w.ops_per_client = v.get<uint64_t>();
    else if (key == "mode") w.mode = v.get<std::string>();
    else if (key == "lock") c.lock = parse_lock(v.get<std::string>());
    else if (key == "fairness") c.fairness = parse_fairness(v.get<std::string>());
    else if (key == "hierarchy") {
      c.hierarchy = v.is_boolean() ? v.get<bool>()
                                   : parse_on_off(v.get<std::string>());
    }
    else if (key == "seed") c.seed = v.get<uint64_t>();
    else if (key == "queueCapacity") c.queue_capacity = v.get<uint32_t>();
    else if (key == "backoffBaseUs") {
      c.ticket_backoff_base = static_cast<TimeNs>(v.get<double>() * kUs);
    }
    else if (key == "backoffCapUs") {
      c.ticket_backoff_cap = static_cast<TimeNs>(v.get<double>() * kUs);
    }
    else if (key == "acquisitionTimeoutUs") {
      c.acquisition_timeout = static_cast<TimeNs>(v.get<double>() * kUs);
    }
    else if (key == "collectLog") c.collect_log = v.get<bool>();
    else if (key == "latencyCnMnUs") f.latency_cn_mn_us = v.get<double>();
    else if (key == "latencyCnCnUs") f.latency_cn_cn_us = v.get<double>();
    else if (key == "mnNicIopsCapacity") f.mn_nic_iops_capacity = v.get<double>();
    else if (key == "mnBandwidthBytesPerS") {
      f.mn_bandwidth_bytes_per_s = v.get<double>();
    }
    else if (key == "opCostRead") f.op_cost_read = v.get<double>();
    else if (key == "opCostWrite") f.op_cost_write = v.get<double>();
    else if (key == "opCostCas") f.op_cost_cas = v.get<double>();
    else if (key == "opCostFaa") f.op_cost_faa = v.get<double>();
    else throw ConfigError("unknown config key: " + key);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("bad value for " + key + ": " + ex.what());
  }
}

}  // namespace

BenchConfig parse_bench_config_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config is not valid JSON: ") + ex.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  BenchConfig c;
  for (const auto& [key, value] : j.items()) apply_key(c, key, value);
  validate(c);
  return c;
}

BenchConfig parse_bench_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_bench_config_json(ss.str());
}

void apply_config_override(BenchConfig& cfg, const std::string& key,
                           const std::string& value) {
  if (key == "lock") cfg.lock = parse_lock(value);
  else if (key == "fairness") cfg.fairness = parse_fairness(value);
  else if (key == "hierarchy") cfg.hierarchy = parse_on_off(value);
  else if (key == "seed") cfg.seed = std::stoull(value);
  else throw ConfigError("unknown override: " + key);
  validate(cfg);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string csv_header() {
  return "lock,fairness,hierarchy,numCNs,clientsPerCN,numLocks,zipfAlpha,"
         "readRatio,criticalSectionOps,opsPerClient,mode,seed,simSeconds,"
         "throughputOpsPerS,latencyMedianUs,latencyP99Us,mnOpsPerAcq,"
         "refetchPerRelease,notificationsPerRelease,nicUtilization,"
         "retriesPerAcq,resetFraction,tfOvertakes,pfPhaseViolations,"
         "crossCnWriterOvertakes,mutexViolations,stuckClients";
}

std::string csv_row(const BenchConfig& cfg, const RunMetrics& m) {
  const auto& w = cfg.workload;
  std::ostringstream os;
  os << lock_kind_name(cfg.lock) << ','
     << (cfg.fairness == Fairness::TaskFair ? "tf" : "pf") << ','
     << (cfg.hierarchy ? "on" : "off") << ',' << w.num_cns << ','
     << w.clients_per_cn << ',' << w.num_locks << ',' << w.zipf_alpha << ','
     << w.read_ratio << ',' << w.critical_section_ops << ','
     << w.ops_per_client << ',' << w.mode << ',' << cfg.seed << ','
     << m.sim_seconds << ',' << m.throughput << ',' << m.latency_median_us
     << ',' << m.latency_p99_us << ',' << m.mn_ops_per_acq << ','
     << m.refetch_per_release << ',' << m.notifications_per_release << ','
     << m.nic_utilization << ',' << m.retries_per_acq << ','
     << m.reset_fraction << ',' << m.fairness.tf_overtakes << ','
     << m.fairness.pf_phase_violations << ','
     << m.fairness.cross_cn_writer_overtakes << ',' << m.mutex_violations
     << ',' << m.stuck_clients;
  return os.str();
}

}  // namespace dislock
