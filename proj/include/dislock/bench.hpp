#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dislock/baselines.hpp"
#include "dislock/checker.hpp"
#include "dislock/hier.hpp"

namespace dislock {

enum class LockKind : uint8_t { Cql, CasLock, Ticket };

const char* lock_kind_name(LockKind k);

// Exact Zipf(alpha) sampler over ranks 0..n-1 by inverse CDF over the
// precomputed cumulative weights; alpha = 0 degenerates to uniform.
class ZipfSampler {
 public:
  ZipfSampler(uint64_t n, double alpha);
  uint64_t sample(Rng& rng) const;

 private:
  std::vector<double> cdf_;
};

struct WorkloadSpec {
  uint32_t num_cns = 8;
  uint32_t clients_per_cn = 32;
  uint64_t num_locks = 100000;
  double zipf_alpha = 0.99;
  double read_ratio = 0.5;
  uint32_t critical_section_ops = 1;
  uint64_t ops_per_client = 10000;  // CI profile
  std::string mode = "microbench";  // or "objectstore"

  uint32_t total_clients() const { return num_cns * clients_per_cn; }
};

struct BenchConfig {
  WorkloadSpec workload;
  FabricConfig fabric;
  LockKind lock = LockKind::Cql;
  Fairness fairness = Fairness::TaskFair;
  bool hierarchy = false;  // CQL only
  uint32_t queue_capacity = 0;  // 0 = auto-size (power of two)
  TimeNs ticket_backoff_base = 2 * kUs;
  TimeNs ticket_backoff_cap = 256 * kUs;
  TimeNs acquisition_timeout = 100 * kMs;
  uint64_t seed = 1;
  bool collect_log = true;  // keep lock events for the inline checker
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parses the documented JSON key set; throws ConfigError on bad input.
BenchConfig parse_bench_config_json(const std::string& text);
BenchConfig parse_bench_config_file(const std::string& path);
// Applies one key=value override (same keys as the config file).
void apply_config_override(BenchConfig& cfg, const std::string& key,
                           const std::string& value);

struct RunMetrics {
  double sim_seconds = 0;
  uint64_t acquisitions = 0;
  double throughput = 0;  // acquisitions per simulated second
  double latency_median_us = 0;
  double latency_p99_us = 0;
  double mn_ops_per_acq = 0;        // acquisition-path MN verbs per grant
  double refetch_per_release = 0;   // CQL extra READs for obsolete entries
  double notifications_per_release = 0;
  double nic_utilization = 0;
  double retries_per_acq = 0;       // baselines: failed CASes / served polls
  double reset_fraction = 0;        // resets per acquisition
  uint64_t mutex_violations = 0;
  uint64_t stuck_clients = 0;
  bool horizon_exceeded = false;
  FairnessReport fairness;
};

struct RunResult {
  RunMetrics metrics;
  LockEventLog log;
  CqlMetrics cql;
  HierMetrics hier;
  BaselineMetrics baseline;
};

// Builds the fabric and lock module per config, runs the workload to
// completion, then runs the checker inline over the collected events.
RunResult run_bench(const BenchConfig& cfg, TraceSink* trace = nullptr);

// Stable CSV schema: one header line, one row per run.
std::string csv_header();
std::string csv_row(const BenchConfig& cfg, const RunMetrics& m);

}  // namespace dislock
