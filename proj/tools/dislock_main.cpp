// dislock: benchmark and trace-checking CLI for the decoupled-lock simulator.
//
//   dislock bench --config cfg.json [--lock ...] [--trace out.jsonl]
//                 [--csv out.csv] [--strict]
//   dislock check trace.jsonl
//   dislock sweep --matrix matrix.json [--csv out.csv]
//
// Exit codes: 0 ok, 2 checker violation, 3 config error.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dislock/bench.hpp"
#include "dislock/checker.hpp"

namespace {

using namespace dislock;

constexpr int kExitViolation = 2;
constexpr int kExitConfig = 3;

void print_summary(const BenchConfig& cfg, const RunMetrics& m) {
  std::cout << "lock=" << lock_kind_name(cfg.lock)
            << " hierarchy=" << (cfg.hierarchy ? "on" : "off")
            << " clients=" << cfg.workload.total_clients()
            << " seed=" << cfg.seed << '\n'
            << "  acquisitions          " << m.acquisitions << '\n'
            << "  throughput (ops/s)    " << m.throughput << '\n'
            << "  latency median/p99 us " << m.latency_median_us << " / "
            << m.latency_p99_us << '\n'
            << "  mnOpsPerAcq           " << m.mn_ops_per_acq << '\n'
            << "  refetchPerRelease     " << m.refetch_per_release << '\n'
            << "  retriesPerAcq         " << m.retries_per_acq << '\n'
            << "  nicUtilization        " << m.nic_utilization << '\n'
            << "  resetFraction         " << m.reset_fraction << '\n'
            << "  tfOvertakes           " << m.fairness.tf_overtakes << '\n'
            << "  pfPhaseViolations     " << m.fairness.pf_phase_violations
            << '\n'
            << "  crossCnWriterOvertakes "
            << m.fairness.cross_cn_writer_overtakes << '\n'
            << "  mutexViolations       " << m.mutex_violations << '\n'
            << "  stuckClients          " << m.stuck_clients << '\n';
}

// Categories a clean run must keep at zero; reported-only unfairness (e.g.
// the CAS lock's overtakes) is excluded.
bool has_asserted_violation(const BenchConfig& cfg, const RunMetrics& m) {
  if (m.mutex_violations > 0 || m.stuck_clients > 0) return true;
  const bool fifo_lock = (cfg.lock == LockKind::Cql && !cfg.hierarchy) ||
                         cfg.lock == LockKind::Ticket;
  if (fifo_lock && m.fairness.tf_overtakes > 0) return true;
  return false;
}

void write_csv(const std::string& path, const std::vector<std::string>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open csv output: " + path);
  out << csv_header() << '\n';
  for (const auto& r : rows) out << r << '\n';
}

int cmd_bench(const std::string& config_path,
              const std::vector<std::pair<std::string, std::string>>& overrides,
              const std::string& trace_path, const std::string& csv_path,
              bool strict) {
  BenchConfig cfg = parse_bench_config_file(config_path);
  for (const auto& [k, v] : overrides) apply_config_override(cfg, k, v);

  std::ofstream trace_out;
  std::unique_ptr<JsonlTraceWriter> writer;
  if (!trace_path.empty()) {
    trace_out.open(trace_path);
    if (!trace_out) throw ConfigError("cannot open trace output: " + trace_path);
    writer = std::make_unique<JsonlTraceWriter>(trace_out);
  }

  const RunResult r = run_bench(cfg, writer.get());
  print_summary(cfg, r.metrics);
  if (!csv_path.empty()) write_csv(csv_path, {csv_row(cfg, r.metrics)});
  if (strict && has_asserted_violation(cfg, r.metrics)) {
    std::cerr << "strict: checker violations present\n";
    return kExitViolation;
  }
  return 0;
}

int cmd_check(const std::string& trace_path) {
  std::ifstream in(trace_path);
  if (!in) throw ConfigError("cannot open trace: " + trace_path);
  const LockEventLog log = read_lock_events_jsonl(in);
  const auto mutex = check_mutual_exclusion(log);
  const auto live = check_liveness(log);
  const uint64_t tf = count_tf_overtakes(log);
  std::cout << "events              " << log.size() << '\n'
            << "mutexViolations     " << mutex.size() << '\n'
            << "livenessViolations  " << live.size() << '\n'
            << "tfOvertakes         " << tf << '\n';
  for (const auto& v : mutex) {
    std::cout << "  " << v.kind << " lock=" << v.lock << " clients=" << v.client_a
              << '/' << v.client_b << " t=" << v.t << " " << v.detail << '\n';
  }
  for (const auto& v : live) {
    std::cout << "  " << v.kind << " lock=" << v.lock << " client=" << v.client_a
              << " " << v.detail << '\n';
  }
  return (mutex.empty() && live.empty()) ? 0 : kExitViolation;
}

// Matrix file: {"base": {<config keys>}, "sweep": {<key>: [v1, v2, ...]}}.
// Runs the cartesian product of the sweep axes over the base config.
int cmd_sweep(const std::string& matrix_path, const std::string& csv_path) {
  std::ifstream in(matrix_path);
  if (!in) throw ConfigError("cannot open matrix file: " + matrix_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("matrix is not valid JSON: ") + ex.what());
  }
  if (!j.is_object()) throw ConfigError("matrix root must be a JSON object");
  nlohmann::json base = j.value("base", nlohmann::json::object());
  nlohmann::json sweep = j.value("sweep", nlohmann::json::object());
  if (!base.is_object() || !sweep.is_object()) {
    throw ConfigError("matrix base/sweep must be JSON objects");
  }

  std::vector<std::string> keys;
  std::vector<std::vector<nlohmann::json>> values;
  for (const auto& [k, v] : sweep.items()) {
    if (!v.is_array() || v.empty()) {
      throw ConfigError("sweep axis " + k + " must be a non-empty array");
    }
    keys.push_back(k);
    values.emplace_back(v.begin(), v.end());
  }

  std::vector<std::string> rows;
  std::vector<size_t> idx(keys.size(), 0);
  bool violation = false;
  for (;;) {
    nlohmann::json combo = base;
    for (size_t i = 0; i < keys.size(); ++i) combo[keys[i]] = values[i][idx[i]];
    const BenchConfig cfg = parse_bench_config_json(combo.dump());
    const RunResult r = run_bench(cfg);
    rows.push_back(csv_row(cfg, r.metrics));
    std::cout << rows.back() << '\n';
    violation |= has_asserted_violation(cfg, r.metrics);

    size_t d = 0;
    while (d < idx.size() && ++idx[d] == values[d].size()) idx[d++] = 0;
    if (d == idx.size() && !idx.empty()) break;
    if (idx.empty()) break;
  }
  if (!csv_path.empty()) write_csv(csv_path, rows);
  return violation ? kExitViolation : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dislock: decoupled-lock simulator benchmark"};
  app.require_subcommand(1);

  std::string config_path, trace_path, csv_path, matrix_path, check_path;
  std::string lock_s, fairness_s, hierarchy_s, seed_s;
  bool strict = false;

  CLI::App* bench = app.add_subcommand("bench", "run one benchmark");
  bench->add_option("--config", config_path, "JSON config file")->required();
  bench->add_option("--lock", lock_s, "cql|caslock|ticket");
  bench->add_option("--fairness", fairness_s, "tf|pf");
  bench->add_option("--hierarchy", hierarchy_s, "on|off");
  bench->add_option("--seed", seed_s, "RNG seed");
  bench->add_option("--trace", trace_path, "JSONL trace output");
  bench->add_option("--csv", csv_path, "CSV output");
  bench->add_flag("--strict", strict, "exit 2 on checker violations");

  CLI::App* check = app.add_subcommand("check", "check a JSONL trace");
  check->add_option("trace", check_path, "trace file")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "run a parameter grid");
  sweep->add_option("--matrix", matrix_path, "JSON sweep matrix")->required();
  sweep->add_option("--csv", csv_path, "CSV output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (bench->parsed()) {
      std::vector<std::pair<std::string, std::string>> ov;
      if (!lock_s.empty()) ov.emplace_back("lock", lock_s);
      if (!fairness_s.empty()) ov.emplace_back("fairness", fairness_s);
      if (!hierarchy_s.empty()) ov.emplace_back("hierarchy", hierarchy_s);
      if (!seed_s.empty()) ov.emplace_back("seed", seed_s);
      return cmd_bench(config_path, ov, trace_path, csv_path, strict);
    }
    if (check->parsed()) return cmd_check(check_path);
    if (sweep->parsed()) return cmd_sweep(matrix_path, csv_path);
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return kExitConfig;
  }
  return 0;
}
