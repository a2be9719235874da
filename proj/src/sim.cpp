#include "dislock/sim.hpp"

#include <cassert>
#include <cstring>
#include <stdexcept>

namespace dislock {

Simulator::Simulator(FabricConfig cfg)
    : cfg_(cfg), rng_(cfg.seed), memory_(cfg.mn_memory_bytes, 0),
      cn_failed_(cfg.num_cns + 1, false),
      msg_handlers_(cfg.num_cns + 1) {}

Simulator::~Simulator() = default;

void Simulator::schedule_at(TimeNs t, std::function<void()> fn) {
  assert(t >= now_);
  events_.push(Event{t, event_seq_++, std::move(fn)});
}

Completion<Unit> Simulator::sleep(TimeNs delay) {
  auto [c, r] = make_completion<Unit>();
  schedule_after(delay, [r] { r.resolve(Unit{}); });
  return c;
}

uint64_t Simulator::alloc(uint64_t size, uint64_t align) {
  uint64_t addr = (alloc_next_ + align - 1) & ~(align - 1);
  if (addr + size > memory_.size()) {
    throw std::runtime_error("MN memory exhausted");
  }
  alloc_next_ = addr + size;
  return addr;
}

uint64_t Simulator::peek_u64(uint64_t addr) const {
  uint64_t v;
  std::memcpy(&v, memory_.data() + addr, 8);
  return v;
}

void Simulator::poke_u64(uint64_t addr, uint64_t value) {
  std::memcpy(memory_.data() + addr, &value, 8);
}

std::vector<uint8_t> Simulator::peek(uint64_t addr, uint32_t len) const {
  return {memory_.begin() + addr, memory_.begin() + addr + len};
}

void Simulator::check_addr(uint64_t addr, uint64_t len) const {
  if (addr + len > memory_.size()) {
    throw std::out_of_range("fabric op outside MN memory region");
  }
}

double Simulator::service_cost(Verb verb) const {
  switch (verb) {
    case Verb::Read: return cfg_.op_cost_read;
    case Verb::Write: return cfg_.op_cost_write;
    case Verb::Cas: return cfg_.op_cost_cas;
    case Verb::Faa: return cfg_.op_cost_faa;
    case Verb::FaaRead: return cfg_.op_cost_faa + cfg_.op_cost_read;
  }
  return 1.0;
}

void Simulator::trace_mem(const char* kind, NodeId src, uint64_t addr,
                          uint64_t oldv, uint64_t newv, const char* tag) {
  if (!trace_) return;
  TraceEvent ev;
  ev.t = now_;
  ev.node = src.kind == NodeId::Kind::MN ? "mn" : "cn" + std::to_string(src.index);
  ev.kind = kind;
  ev.has_mem = true;
  ev.addr = addr;
  ev.old_val = oldv;
  ev.new_val = newv;
  ev.tag = tag;
  trace_->emit(ev);
}

Completion<uint64_t> Simulator::faa(NodeId src, uint64_t addr, uint64_t add,
                                    const char* tag) {
  check_addr(addr, 8);
  if (addr % 8 != 0) throw std::out_of_range("FAA addr must be 8-byte aligned");
  auto [c, r] = make_completion<uint64_t>();
  MnOp op;
  op.verb = Verb::Faa;
  op.src = src;
  op.addr = addr;
  op.len = 8;
  op.operand_a = add;
  op.tag = tag;
  op.complete = [r](uint64_t old, std::vector<uint8_t>) { r.resolve(old); };
  dispatch_to_mn(std::move(op));
  return c;
}

Completion<uint64_t> Simulator::cas(NodeId src, uint64_t addr, uint64_t expected,
                                    uint64_t desired, const char* tag) {
  check_addr(addr, 8);
  if (addr % 8 != 0) throw std::out_of_range("CAS addr must be 8-byte aligned");
  auto [c, r] = make_completion<uint64_t>();
  MnOp op;
  op.verb = Verb::Cas;
  op.src = src;
  op.addr = addr;
  op.len = 8;
  op.operand_a = expected;
  op.operand_b = desired;
  op.tag = tag;
  op.complete = [r](uint64_t old, std::vector<uint8_t>) { r.resolve(old); };
  dispatch_to_mn(std::move(op));
  return c;
}

Completion<std::vector<uint8_t>> Simulator::read(NodeId src, uint64_t addr,
                                                 uint32_t len, const char* tag) {
  check_addr(addr, len);
  if (len > cfg_.max_op_len) throw std::out_of_range("READ larger than max op len");
  auto [c, r] = make_completion<std::vector<uint8_t>>();
  MnOp op;
  op.verb = Verb::Read;
  op.src = src;
  op.addr = addr;
  op.len = len;
  op.tag = tag;
  op.complete = [r](uint64_t, std::vector<uint8_t> bytes) {
    r.resolve(std::move(bytes));
  };
  dispatch_to_mn(std::move(op));
  return c;
}

Completion<Unit> Simulator::write(NodeId src, uint64_t addr,
                                  std::vector<uint8_t> data, const char* tag) {
  check_addr(addr, data.size());
  if (data.size() > cfg_.max_op_len) {
    throw std::out_of_range("WRITE larger than max op len");
  }
  auto [c, r] = make_completion<Unit>();
  MnOp op;
  op.verb = Verb::Write;
  op.src = src;
  op.addr = addr;
  op.len = static_cast<uint32_t>(data.size());
  op.payload = std::move(data);
  op.tag = tag;
  op.complete = [r](uint64_t, std::vector<uint8_t>) { r.resolve(Unit{}); };
  dispatch_to_mn(std::move(op));
  return c;
}

Completion<Simulator::FaaReadResult> Simulator::faa_read(
    NodeId src, uint64_t faa_addr, uint64_t add, uint64_t read_addr,
    uint32_t read_len, const char* tag) {
  check_addr(faa_addr, 8);
  check_addr(read_addr, read_len);
  auto [c, r] = make_completion<FaaReadResult>();
  MnOp op;
  op.verb = Verb::FaaRead;
  op.src = src;
  op.addr = faa_addr;
  op.len = 8;
  op.operand_a = add;
  op.read_addr = read_addr;
  op.read_len = read_len;
  op.tag = tag;
  op.complete = [r](uint64_t old, std::vector<uint8_t> bytes) {
    r.resolve(FaaReadResult{old, std::move(bytes)});
  };
  dispatch_to_mn(std::move(op));
  return c;
}

void Simulator::dispatch_to_mn(MnOp op) {
  auto shared = std::make_shared<MnOp>(std::move(op));
  schedule_after(cfg_.latency_cn_mn(), [this, shared] {
    if (mn_failed_) {
      stalled_ops_.push_back(std::move(*shared));
      return;
    }
    service_at_mn(*shared);
  });
}

// The MN-NIC is a FIFO single server: each op reserves the NIC for
// weight / capacity seconds (plus payload transfer time), so a saturated NIC
// lengthens queuing delay for every concurrent op. Memory effects are applied
// in reservation order, which is exactly NIC service order.
void Simulator::service_at_mn(MnOp& op) {
  const TimeNs arrival = now_;
  const double weight = service_cost(op.verb);
  const uint64_t payload_len = op.verb == Verb::Read ? op.len
                               : op.verb == Verb::FaaRead ? op.read_len
                                                          : op.len;
  const double service_s = weight / cfg_.mn_nic_iops_capacity +
                           static_cast<double>(payload_len) /
                               cfg_.mn_bandwidth_bytes_per_s;
  const TimeNs service_ns = static_cast<TimeNs>(service_s * 1e9);
  const TimeNs start = std::max(arrival, nic_free_at_);
  const TimeNs end = start + service_ns;
  nic_free_at_ = end;
  nic_busy_ns_ += service_ns;

  uint64_t old_value = 0;
  std::vector<uint8_t> bytes;
  switch (op.verb) {
    case Verb::Faa: {
      old_value = peek_u64(op.addr);
      poke_u64(op.addr, old_value + op.operand_a);
      counters_.faa++;
      trace_mem("faa", op.src, op.addr, old_value, old_value + op.operand_a,
                op.tag);
      break;
    }
    case Verb::Cas: {
      old_value = peek_u64(op.addr);
      uint64_t newv = old_value;
      if (old_value == op.operand_a) {
        newv = op.operand_b;
        poke_u64(op.addr, newv);
      }
      counters_.cas++;
      trace_mem("cas", op.src, op.addr, old_value, newv, op.tag);
      break;
    }
    case Verb::Read: {
      bytes = peek(op.addr, op.len);
      counters_.reads++;
      trace_mem("read", op.src, op.addr, 0, 0, op.tag);
      break;
    }
    case Verb::Write: {
      std::memcpy(memory_.data() + op.addr, op.payload.data(), op.payload.size());
      counters_.writes++;
      uint64_t newv = op.payload.size() >= 8 ? peek_u64(op.addr) : 0;
      trace_mem("write", op.src, op.addr, 0, newv, op.tag);
      break;
    }
    case Verb::FaaRead: {
      old_value = peek_u64(op.addr);
      poke_u64(op.addr, old_value + op.operand_a);
      bytes = peek(op.read_addr, op.read_len);
      counters_.faa++;
      counters_.reads++;
      trace_mem("faa", op.src, op.addr, old_value, old_value + op.operand_a,
                op.tag);
      break;
    }
  }

  auto complete = std::move(op.complete);
  schedule_at(end + cfg_.latency_cn_mn(),
              [complete = std::move(complete), old_value,
               bytes = std::move(bytes)]() mutable {
                complete(old_value, std::move(bytes));
              });
}

void Simulator::send_message(uint32_t from_cn, uint32_t to_cn, Message msg) {
  counters_.messages++;
  if (cn_failed_[from_cn]) return;
  if (trace_) {
    TraceEvent ev;
    ev.t = now_;
    ev.node = "cn" + std::to_string(from_cn);
    ev.kind = "msg";
    ev.tag = "to=cn" + std::to_string(to_cn);
    trace_->emit(ev);
  }
  TimeNs delivery;
  if (from_cn == to_cn) {
    delivery = now_;  // local loopback, no network hop
  } else {
    delivery = now_ + cfg_.latency_cn_cn();
    auto& last = channel_last_delivery_[{from_cn, to_cn}];
    delivery = std::max(delivery, last);  // RC: in order per channel
    last = delivery;
  }
  schedule_at(delivery, [this, from_cn, to_cn, msg = std::move(msg)] {
    // Notifications to failed nodes are lost.
    if (cn_failed_[to_cn] || cn_failed_[from_cn]) return;
    if (msg_handlers_[to_cn]) msg_handlers_[to_cn](from_cn, msg);
  });
}

void Simulator::set_message_handler(
    uint32_t cn, std::function<void(uint32_t, const Message&)> h) {
  msg_handlers_[cn] = std::move(h);
}

void Simulator::fail_node(NodeId node) {
  if (node.kind == NodeId::Kind::MN) {
    mn_failed_ = true;
  } else {
    cn_failed_[node.index] = true;
  }
}

void Simulator::recover_node(NodeId node) {
  if (node.kind == NodeId::Kind::MN) {
    mn_failed_ = false;
    if (mn_recovery_hook_) mn_recovery_hook_();
    auto stalled = std::move(stalled_ops_);
    stalled_ops_.clear();
    for (auto& op : stalled) {
      service_at_mn(op);
    }
  } else {
    cn_failed_[node.index] = false;
  }
}

bool Simulator::is_failed(NodeId node) const {
  return node.kind == NodeId::Kind::MN ? mn_failed_ : cn_failed_[node.index];
}

TimeNs Simulator::run_until_quiescent(TimeNs horizon) {
  horizon_exceeded_ = false;
  while (!events_.empty()) {
    if (events_.top().t > horizon) {
      horizon_exceeded_ = true;
      break;
    }
    auto ev = std::move(const_cast<Event&>(events_.top()));
    events_.pop();
    now_ = ev.t;
    ev.fn();
  }
  return now_;
}

}  // namespace dislock
