#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "povm/chain.hpp"
#include "povm/hashcash.hpp"
#include "povm/lottery.hpp"
#include "povm/prng.hpp"
#include "povm/redundancy.hpp"
#include "povm/vm.hpp"

namespace povm {

// Deterministic discrete-event simulation of the miner/customer network.
// The multiparty-consensus pieces (job queue ordering, lottery rounds,
// block replication) are filled by deterministic replication inside the
// kernel: an honest-but-delayed network, no Byzantine queue behavior.

enum class SimMode { PoVM, HashcashBaseline };

struct EnergyModel {
  double joules_per_hash_op = 1.0;
  double joules_per_vm_instruction = 0.001;
  double co2_grams_per_joule = 0.0005;
};

struct ScenarioConfig {
  std::uint64_t miners = 5;
  std::uint64_t customers = 2;
  std::uint64_t k = 3;               // clones per job, odd
  std::uint64_t block_interval = 10; // m, ticks between blocks
  std::uint64_t epoch_length = 10;   // T, ticks per PoVM service epoch
  std::uint64_t horizon_ticks = 500;
  std::uint64_t jobs = 20;
  std::uint64_t coinflip_heads = 3;
  Sla sla{100000, 256, 128, 10};
  std::uint64_t latency_min = 1;
  std::uint64_t latency_max = 1;
  std::uint64_t seed = 1;
  SimMode mode = SimMode::PoVM;
  std::uint32_t difficulty = 8;  // baseline mode
  EnergyModel energy;
  std::uint64_t block_reward = 50;
  std::uint64_t transactions = 10;
  std::vector<NodeId> dishonest_miners;  // scripted wrong-output miners
  std::vector<std::uint64_t> forced_tie_rounds;  // baseline: rounds announcing two
                                                 // simultaneous winners (fork injection)
  unsigned threads = 1;

  NodeId miner_id(std::uint64_t i) const { return 1 + i; }
  NodeId customer_id(std::uint64_t i) const { return 1 + miners + i; }

  std::optional<std::string> validate() const {
    if (miners < 1) return "miners must be >= 1";
    if (customers < 1) return "customers must be >= 1";
    if (k < 1 || k % 2 == 0) return "k must be odd and >= 1";
    if (k > miners) return "k must be <= miners";
    if (block_interval < 1) return "block_interval must be >= 1";
    if (epoch_length < 1) return "epoch_length must be >= 1";
    if (horizon_ticks < block_interval) return "horizon_ticks must be >= block_interval";
    if (latency_min > latency_max) return "latency.min must be <= latency.max";
    if (latency_min < 1) return "latency.min must be >= 1";
    if (difficulty > 62) return "difficulty must be <= 62";
    if (threads < 1) return "threads must be >= 1";
    if (auto err = sla.validate()) return err;
    for (NodeId m : dishonest_miners)
      if (m < 1 || m > miners) return "dishonest_miners entries must name miner ids";
    return std::nullopt;
  }
};

inline nlohmann::json config_to_json(const ScenarioConfig& c) {
  return {
      {"miners", c.miners},
      {"customers", c.customers},
      {"k", c.k},
      {"block_interval", c.block_interval},
      {"epoch_length", c.epoch_length},
      {"horizon_ticks", c.horizon_ticks},
      {"jobs", c.jobs},
      {"coinflip_heads", c.coinflip_heads},
      {"sla",
       {{"max_instructions", c.sla.max_instructions},
        {"max_memory_cells", c.sla.max_memory_cells},
        {"checkpoint_interval", c.sla.checkpoint_interval},
        {"epoch_length_ticks", c.sla.epoch_length_ticks}}},
      {"latency", {{"min", c.latency_min}, {"max", c.latency_max}}},
      {"seed", c.seed},
      {"mode", c.mode == SimMode::PoVM ? "povm" : "hashcash"},
      {"difficulty", c.difficulty},
      {"energy",
       {{"joules_per_hash_op", c.energy.joules_per_hash_op},
        {"joules_per_vm_instruction", c.energy.joules_per_vm_instruction},
        {"co2_grams_per_joule", c.energy.co2_grams_per_joule}}},
      {"block_reward", c.block_reward},
      {"transactions", c.transactions},
      {"dishonest_miners", c.dishonest_miners},
      {"forced_tie_rounds", c.forced_tie_rounds},
      {"threads", c.threads},
  };
}

// Throws std::runtime_error naming the offending field.
inline ScenarioConfig config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  auto get = [&](const nlohmann::json& obj, const char* field, auto& out) {
    if (obj.contains(field)) {
      try {
        obj.at(field).get_to(out);
      } catch (const nlohmann::json::exception&) {
        throw std::runtime_error(std::string("config field '") + field + "' has the wrong type");
      }
    }
  };
  get(j, "miners", c.miners);
  get(j, "customers", c.customers);
  get(j, "k", c.k);
  get(j, "block_interval", c.block_interval);
  get(j, "epoch_length", c.epoch_length);
  get(j, "horizon_ticks", c.horizon_ticks);
  get(j, "jobs", c.jobs);
  get(j, "coinflip_heads", c.coinflip_heads);
  if (j.contains("sla")) {
    const auto& s = j.at("sla");
    get(s, "max_instructions", c.sla.max_instructions);
    get(s, "max_memory_cells", c.sla.max_memory_cells);
    get(s, "checkpoint_interval", c.sla.checkpoint_interval);
    get(s, "epoch_length_ticks", c.sla.epoch_length_ticks);
  }
  if (j.contains("latency")) {
    get(j.at("latency"), "min", c.latency_min);
    get(j.at("latency"), "max", c.latency_max);
  }
  get(j, "seed", c.seed);
  if (j.contains("mode")) {
    std::string m = j.at("mode").get<std::string>();
    if (m == "povm")
      c.mode = SimMode::PoVM;
    else if (m == "hashcash")
      c.mode = SimMode::HashcashBaseline;
    else
      throw std::runtime_error("config field 'mode' must be \"povm\" or \"hashcash\"");
  }
  get(j, "difficulty", c.difficulty);
  if (j.contains("energy")) {
    const auto& e = j.at("energy");
    get(e, "joules_per_hash_op", c.energy.joules_per_hash_op);
    get(e, "joules_per_vm_instruction", c.energy.joules_per_vm_instruction);
    get(e, "co2_grams_per_joule", c.energy.co2_grams_per_joule);
  }
  get(j, "block_reward", c.block_reward);
  get(j, "transactions", c.transactions);
  get(j, "dishonest_miners", c.dishonest_miners);
  get(j, "forced_tie_rounds", c.forced_tie_rounds);
  get(j, "threads", c.threads);
  c.sla.epoch_length_ticks = c.epoch_length;
  if (auto err = c.validate()) throw std::runtime_error(*err);
  return c;
}

// --- events -------------------------------------------------------------

struct EvJobSubmit { Job job; };
struct EvTxSubmit { Transaction tx; };
struct EvJobAssign { Job job; std::uint64_t attempt = 1; };
struct EvJobResult {
  std::uint64_t job_id = 0;
  NodeId miner = 0;
  std::uint64_t attempt = 1;
  Word output = 0;
  ExecStatus status = ExecStatus::Trap;
  std::uint64_t instructions = 0;
  std::uint64_t peak_memory = 0;
};
struct EvCheckpointBatch {
  std::uint64_t job_id = 0;
  NodeId miner = 0;
  std::uint64_t attempt = 1;
  std::vector<Digest256> checkpoints;
};
struct EvCommit { Commitment commitment; Tick round = 0; };
struct EvReveal { Reveal reveal; Tick round = 0; };
struct EvBlockTick { Tick round = 0; };
struct EvBlockBuild { Tick round = 0; };
struct EvBlockAnnounce { Block block; bool tentative = false; };

using SimPayload = std::variant<EvJobSubmit, EvTxSubmit, EvJobAssign, EvJobResult,
                                EvCheckpointBatch, EvCommit, EvReveal, EvBlockTick,
                                EvBlockBuild, EvBlockAnnounce>;

struct SimEvent {
  Tick deliver_at = 0;
  std::uint64_t seq = 0;  // monotone tiebreaker
  NodeId from = 0;
  NodeId to = 0;  // 0 = kernel
  SimPayload payload;
};

inline const char* payload_name(const SimPayload& p) {
  static const char* names[] = {"JobSubmit",   "TxSubmit",  "JobAssign", "JobResult",
                                "CheckpointBatch", "Commit", "Reveal",   "BlockTick",
                                "BlockBuild",  "BlockAnnounce"};
  return names[p.index()];
}

// --- replicated job queue ----------------------------------------------

struct QueuedJob {
  Job job;
  Tick submit_tick = 0;
  std::uint64_t attempt = 1;
};

// Total order by (submit tick, customer id, job id); identical on every
// node after event quiescence since all nodes see the same event order.
struct JobQueue {
  std::vector<QueuedJob> entries;

  enum class Error { DuplicateJob };

  std::optional<Error> enqueue(QueuedJob qj) {
    for (const auto& e : entries)
      if (e.job.id == qj.job.id) return Error::DuplicateJob;
    auto key = [](const QueuedJob& e) {
      return std::tuple(e.submit_tick, e.job.customer, e.job.id);
    };
    auto pos = std::lower_bound(entries.begin(), entries.end(), qj,
                                [&](const auto& a, const auto& b) { return key(a) < key(b); });
    entries.insert(pos, std::move(qj));
    return std::nullopt;
  }
};

// --- report -------------------------------------------------------------

struct MetricsRow {
  Tick tick = 0;
  std::uint64_t blocks = 0;
  std::uint64_t jobs_accepted = 0;
  std::uint64_t jobs_rejected = 0;
  std::uint64_t vm_instructions = 0;
  std::uint64_t hash_ops = 0;
  std::uint64_t tickets_issued = 0;
};

struct SimCounters {
  std::uint64_t total_hash_ops = 0;
  std::uint64_t total_vm_instructions = 0;
  std::uint64_t clone_executions = 0;
  std::uint64_t total_clone_instructions = 0;
  std::uint64_t dispatch_messages = 0;
};

struct EnergyReport {
  double joules_pow = 0;
  double joules_povm = 0;
  double grams_co2 = 0;
  CostModel cost;
  std::int64_t tau_value = 0;
};

// tau symbols measured from the run: T = mean VM instructions per clone
// (integer division), c = dispatch message count, p = hash ops per miner
// (integer division), w = miner count.
inline EnergyReport account_energy(const SimCounters& n, std::uint64_t k, std::uint64_t miners,
                                   const EnergyModel& e) {
  EnergyReport r;
  r.joules_pow = static_cast<double>(n.total_hash_ops) * e.joules_per_hash_op;
  r.joules_povm = static_cast<double>(n.total_vm_instructions) * e.joules_per_vm_instruction;
  r.grams_co2 = (r.joules_pow + r.joules_povm) * e.co2_grams_per_joule;
  r.cost.k = k;
  r.cost.clone_cost = n.clone_executions ? n.total_clone_instructions / n.clone_executions : 0;
  r.cost.coordination = n.dispatch_messages;
  r.cost.miners = miners;
  r.cost.pow_cost = miners ? n.total_hash_ops / miners : 0;
  r.tau_value = tau(r.cost);
  return r;
}

struct SimReport {
  Chain chain;
  SimCounters counters;
  std::map<NodeId, std::uint64_t> vm_instructions_by_node;
  std::map<NodeId, std::uint64_t> hash_ops_by_node;
  std::uint64_t jobs_submitted = 0;
  std::uint64_t jobs_accepted = 0;
  std::uint64_t jobs_rejected = 0;
  std::uint64_t jobs_requeued = 0;
  std::uint64_t jobs_pending = 0;  // submitted - accepted - rejected
  std::uint64_t tickets_issued = 0;
  std::uint64_t bootstrap_rounds = 0;
  std::uint64_t forks_created = 0;
  std::uint64_t forks_resolved = 0;
  std::map<NodeId, std::uint64_t> blocks_by_producer;
  std::map<NodeId, double> reputation;
  std::map<NodeId, std::uint64_t> dissents;
  std::map<std::uint64_t, std::uint64_t> accepted_job_block_height;  // job id -> height
  bool all_nodes_agree = true;
  EnergyReport energy;
  std::vector<MetricsRow> metrics;
};

inline nlohmann::json report_to_json(const SimReport& r) {
  auto map_json = [](const auto& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
  };
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& row : r.metrics)
    metrics.push_back({{"tick", row.tick},
                       {"blocks", row.blocks},
                       {"jobs_accepted", row.jobs_accepted},
                       {"jobs_rejected", row.jobs_rejected},
                       {"vm_instructions", row.vm_instructions},
                       {"hash_ops", row.hash_ops},
                       {"tickets_issued", row.tickets_issued}});
  return {
      {"chain_length", r.chain.size()},
      {"chain_tip", to_hex(r.chain.tip_digest())},
      {"jobs",
       {{"submitted", r.jobs_submitted},
        {"accepted", r.jobs_accepted},
        {"rejected", r.jobs_rejected},
        {"requeued", r.jobs_requeued},
        {"pending", r.jobs_pending}}},
      {"tickets_issued", r.tickets_issued},
      {"bootstrap_rounds", r.bootstrap_rounds},
      {"forks", {{"created", r.forks_created}, {"resolved", r.forks_resolved}}},
      {"blocks_by_producer", map_json(r.blocks_by_producer)},
      {"reputation", map_json(r.reputation)},
      {"dissents", map_json(r.dissents)},
      {"vm_instructions_by_node", map_json(r.vm_instructions_by_node)},
      {"hash_ops_by_node", map_json(r.hash_ops_by_node)},
      {"all_nodes_agree", r.all_nodes_agree},
      {"counters",
       {{"total_hash_ops", r.counters.total_hash_ops},
        {"total_vm_instructions", r.counters.total_vm_instructions},
        {"clone_executions", r.counters.clone_executions},
        {"total_clone_instructions", r.counters.total_clone_instructions},
        {"dispatch_messages", r.counters.dispatch_messages}}},
      {"energy",
       {{"joules_pow", r.energy.joules_pow},
        {"joules_povm", r.energy.joules_povm},
        {"grams_co2", r.energy.grams_co2},
        {"tau",
         {{"k", r.energy.cost.k},
          {"T", r.energy.cost.clone_cost},
          {"c", r.energy.cost.coordination},
          {"p", r.energy.cost.pow_cost},
          {"w", r.energy.cost.miners},
          {"value", r.energy.tau_value}}}}},
      {"metrics", std::move(metrics)},
  };
}

// --- the simulation world ----------------------------------------------

using TraceSink = std::function<void(const nlohmann::json&)>;

class SimInvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SimWorld {
 public:
  explicit SimWorld(ScenarioConfig config, TraceSink trace = {})
      : cfg_(std::move(config)),
        trace_(std::move(trace)),
        sched_prng_(cfg_.seed),
        job_seed_prng_(sched_prng_.split()),
        tx_prng_(sched_prng_.split()) {
    if (auto err = cfg_.validate()) throw std::invalid_argument(*err);
    chain_ = make_chain();
    for (std::uint64_t i = 0; i < cfg_.miners; ++i) {
      NodeId id = cfg_.miner_id(i);
      miner_prngs_.emplace(id, sched_prng_.split());
      free_slots_[id] = slot_capacity();
      reputations_[id] = Reputation{};
      node_tips_[id] = chain_.tip_digest();
    }
    for (std::uint64_t i = 0; i < cfg_.customers; ++i)
      node_tips_[cfg_.customer_id(i)] = chain_.tip_digest();
    seed_events();
  }

  // Pops the minimum (deliver_at, seq) event and applies its handler.
  // Returns false when the queue is drained.
  bool step() {
    // Executions requested during the current tick run once the tick is
    // fully drained; their result events then take part in ordering.
    if (!exec_batch_.empty() && (queue_.empty() || queue_.top().deliver_at > now_))
      flush_exec_batch();
    if (queue_.empty()) return false;
    SimEvent ev = queue_.top();
    queue_.pop();
    now_ = ev.deliver_at;
    if (trace_)
      trace_({{"tick", ev.deliver_at},
              {"seq", ev.seq},
              {"from", ev.from},
              {"to", ev.to},
              {"payload", payload_name(ev.payload)}});
    std::visit([&](auto& p) { handle(ev, p); }, ev.payload);
    return true;
  }

  void run() {
    while (step()) {
    }
  }

  SimReport report() const {
    SimReport r;
    r.chain = chain_;
    r.counters = counters_;
    r.vm_instructions_by_node = vm_instructions_by_node_;
    r.hash_ops_by_node = hash_ops_by_node_;
    r.jobs_submitted = jobs_submitted_;
    r.jobs_accepted = jobs_accepted_;
    r.jobs_rejected = jobs_rejected_;
    r.jobs_requeued = jobs_requeued_;
    r.jobs_pending = jobs_submitted_ - jobs_accepted_ - jobs_rejected_;
    r.tickets_issued = tickets_issued_;
    r.bootstrap_rounds = bootstrap_rounds_;
    r.forks_created = forks_created_;
    r.forks_resolved = forks_resolved_;
    r.blocks_by_producer = blocks_by_producer_;
    for (const auto& [id, rep] : reputations_) r.reputation[id] = rep.score;
    r.dissents = dissents_;
    r.accepted_job_block_height = accepted_job_block_height_;
    Digest256 tip = chain_.tip_digest();
    for (const auto& [id, node_tip] : node_tips_)
      if (node_tip != tip) r.all_nodes_agree = false;
    r.energy = account_energy(counters_, cfg_.k, cfg_.miners, cfg_.energy);
    r.metrics = metrics_;
    return r;
  }

  const Chain& chain() const { return chain_; }
  const JobQueue& job_queue() const { return job_queue_; }

 private:
  static constexpr NodeId kKernel = 0;

  std::uint64_t slot_capacity() const {
    return std::max<std::uint64_t>(1, (cfg_.epoch_length + cfg_.block_interval - 1) /
                                          cfg_.block_interval);
  }

  void enqueue(Tick at, NodeId from, NodeId to, SimPayload payload) {
    queue_.push(SimEvent{at, next_seq_++, from, to, std::move(payload)});
  }

  Tick latency() { return sched_prng_.uniform(cfg_.latency_min, cfg_.latency_max); }

  void seed_events() {
    // Customer job submissions, spread over the first half of the horizon.
    std::uint64_t spread = std::max<std::uint64_t>(1, cfg_.horizon_ticks / (2 * std::max<std::uint64_t>(1, cfg_.jobs)));
    for (std::uint64_t i = 0; i < cfg_.jobs; ++i) {
      Job job;
      job.id = i + 1;
      job.program = coinflip_program(cfg_.coinflip_heads);
      job.sla = cfg_.sla;
      job.customer = cfg_.customer_id(i % cfg_.customers);
      job.seed = job_seed_prng_.next();
      Tick at = 1 + i * spread;
      enqueue(at, job.customer, kKernel, EvJobSubmit{std::move(job)});
    }
    // Currency transactions.
    std::uint64_t tx_spread =
        std::max<std::uint64_t>(1, cfg_.horizon_ticks / (std::max<std::uint64_t>(1, cfg_.transactions) + 1));
    for (std::uint64_t i = 0; i < cfg_.transactions; ++i) {
      Transaction tx;
      tx.id = 1'000'000 + i;
      tx.payer = cfg_.customer_id(i % cfg_.customers);
      tx.payee = cfg_.miner_id(i % cfg_.miners);
      tx.amount = 1 + tx_prng_.uniform(0, 99);
      Tick at = 1 + i * tx_spread;
      tx.timestamp = at;
      enqueue(at, tx.payer, kKernel, EvTxSubmit{tx});
    }
    // Block cadence.
    for (Tick t = cfg_.block_interval; t <= cfg_.horizon_ticks; t += cfg_.block_interval)
      enqueue(t, kKernel, kKernel, EvBlockTick{t});
  }

  // --- job flow ---------------------------------------------------------

  void handle(const SimEvent&, EvJobSubmit& ev) {
    ++jobs_submitted_;
    if (job_queue_.enqueue(QueuedJob{std::move(ev.job), now_, 1})) {
      --jobs_submitted_;  // duplicate id, dropped
      return;
    }
    // The hashcash baseline does no useful work; submitted jobs sit in the
    // queue so the paired runs face the same demand.
    if (cfg_.mode == SimMode::PoVM) try_dispatch();
  }

  void handle(const SimEvent&, EvTxSubmit& ev) { mempool_.add(ev.tx); }

  void try_dispatch() {
    while (!job_queue_.entries.empty()) {
      const QueuedJob& front = job_queue_.entries.front();
      std::set<NodeId> free_miners;
      for (const auto& [id, slots] : free_slots_)
        if (slots > 0) free_miners.insert(id);
      auto assignment = assign_clones(front.job, free_miners, cfg_.k, sched_prng_);
      if (!assignment) return;  // insufficient free miners, wait for results
      QueuedJob qj = front;
      job_queue_.entries.erase(job_queue_.entries.begin());
      JobRun& run = job_runs_[qj.job.id];
      run.job = qj.job;
      run.attempt = qj.attempt;
      run.assignment = *assignment;
      run.results.clear();
      for (NodeId m : assignment->miners) {
        --free_slots_[m];
        ++counters_.dispatch_messages;
        enqueue(now_ + latency(), kKernel, m, EvJobAssign{qj.job, qj.attempt});
      }
    }
  }

  void handle(const SimEvent& ev, EvJobAssign& p) {
    exec_batch_.push_back(ExecRequest{std::move(p.job), p.attempt, ev.to});
  }

  struct ExecRequest {
    Job job;
    std::uint64_t attempt = 1;
    NodeId miner = 0;
    Tick deliver_at = 0;
    ExecutionTrace trace;
  };

  // Executes every job assigned during the tick that just ended. Latency
  // draws happen sequentially in a sorted order first, so the schedule is
  // identical for any thread count; execute() itself is pure.
  void flush_exec_batch() {
    if (exec_batch_.empty()) return;
    std::sort(exec_batch_.begin(), exec_batch_.end(), [](const auto& a, const auto& b) {
      return std::tuple(a.job.id, a.attempt, a.miner) < std::tuple(b.job.id, b.attempt, b.miner);
    });
    for (auto& req : exec_batch_) req.deliver_at = now_ + 1 + latency();

    auto run_range = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        ExecRequest& req = exec_batch_[i];
        req.trace = execute(req.job);
        bool dishonest = std::find(cfg_.dishonest_miners.begin(), cfg_.dishonest_miners.end(),
                                   req.miner) != cfg_.dishonest_miners.end();
        if (dishonest && req.trace.status == ExecStatus::Completed) req.trace.output ^= 1;
      }
    };
    if (cfg_.threads <= 1 || exec_batch_.size() < 2) {
      run_range(0, exec_batch_.size());
    } else {
      std::vector<std::thread> workers;
      std::size_t n = exec_batch_.size();
      std::size_t per = (n + cfg_.threads - 1) / cfg_.threads;
      for (std::size_t lo = 0; lo < n; lo += per)
        workers.emplace_back(run_range, lo, std::min(n, lo + per));
      for (auto& w : workers) w.join();
    }

    for (ExecRequest& req : exec_batch_) {
      vm_instructions_by_node_[req.miner] += req.trace.instructions_executed;
      counters_.total_vm_instructions += req.trace.instructions_executed;
      ++counters_.clone_executions;
      counters_.total_clone_instructions += req.trace.instructions_executed;
      enqueue(req.deliver_at, req.miner, kKernel,
              EvCheckpointBatch{req.job.id, req.miner, req.attempt, req.trace.checkpoints});
      enqueue(req.deliver_at, req.miner, kKernel,
              EvJobResult{req.job.id, req.miner, req.attempt, req.trace.output, req.trace.status,
                          req.trace.instructions_executed, req.trace.peak_memory_cells});
    }
    exec_batch_.clear();
  }

  struct CloneResult {
    Word output = 0;
    ExecStatus status = ExecStatus::Trap;
    std::uint64_t instructions = 0;
    std::vector<Digest256> checkpoints;
    bool have_checkpoints = false;
    bool have_result = false;
  };

  struct JobRun {
    Job job;
    std::uint64_t attempt = 1;
    CloneAssignment assignment;
    std::map<NodeId, CloneResult> results;
  };

  void handle(const SimEvent&, EvCheckpointBatch& p) {
    auto it = job_runs_.find(p.job_id);
    if (it == job_runs_.end() || it->second.attempt != p.attempt) return;
    CloneResult& cr = it->second.results[p.miner];
    cr.checkpoints = std::move(p.checkpoints);
    cr.have_checkpoints = true;
  }

  void handle(const SimEvent&, EvJobResult& p) {
    auto it = job_runs_.find(p.job_id);
    if (it == job_runs_.end() || it->second.attempt != p.attempt) return;
    JobRun& run = it->second;
    CloneResult& cr = run.results[p.miner];
    cr.output = p.output;
    cr.status = p.status;
    cr.instructions = p.instructions;
    cr.have_result = true;
    ++free_slots_[p.miner];
    std::uint64_t complete = 0;
    for (const auto& [m, res] : run.results)
      if (res.have_result && res.have_checkpoints) ++complete;
    if (complete == cfg_.k) {
      finalize_job(run);
      job_runs_.erase(it);
      try_dispatch();
    }
  }

  void finalize_job(JobRun& run) {
    std::vector<std::pair<NodeId, Word>> votes;
    for (NodeId m : run.assignment.miners) votes.emplace_back(m, run.results[m].output);
    MajorityVerdict verdict = majority_vote(votes);

    // Checkpoint divergence marks dissenters even when outputs agree; the
    // checkpoints are evidence, not the verdict.
    std::vector<std::vector<Digest256>> traces;
    for (NodeId m : run.assignment.miners) traces.push_back(run.results[m].checkpoints);
    std::optional<std::size_t> divergence = compare_checkpoints(traces.size() >= 2 ? traces
                                            : std::vector<std::vector<Digest256>>{traces[0], traces[0]});

    // Majority checkpoint sequence = the sequence shared by most clones.
    std::map<Digest256, std::uint64_t> seq_tally;
    for (const auto& t : traces) {
      ByteWriter w;
      for (const auto& d : t) w.raw(d);
      ++seq_tally[sha256(w.data())];
    }
    Digest256 modal_root{};
    std::uint64_t modal_count = 0;
    for (const auto& [root, n] : seq_tally)
      if (n > modal_count) { modal_count = n; modal_root = root; }

    bool accepted_any = false;
    for (NodeId m : run.assignment.miners) {
      const CloneResult& cr = run.results[m];
      std::uint64_t votes_for = 0;
      for (const auto& [mm, out] : votes)
        if (out == cr.output) ++votes_for;
      bool sla_ok = cr.status == ExecStatus::Completed;
      bool quorum = votes_for >= (cfg_.k + 1) / 2;

      PovmRecord rec;
      rec.job_id = run.job.id;
      rec.miner = m;
      {
        ByteWriter w;
        w.u64(cr.output);
        rec.result_digest = sha256(w.data());
      }
      {
        ByteWriter w;
        for (const auto& d : cr.checkpoints) w.raw(d);
        rec.checkpoint_root = sha256(w.data());
      }
      rec.votes_for = votes_for;
      rec.votes_total = cfg_.k;
      rec.sla_ok = sla_ok;
      rec.verdict = (quorum && sla_ok) ? Verdict::Accepted : Verdict::Rejected;
      if (rec.verdict == Verdict::Accepted) accepted_any = true;

      pending_records_.push_back(rec);
      history_.push_back(TimedRecord{rec, now_});

      RepOutcome outcome;
      if (!sla_ok) {
        outcome = RepOutcome::SlaViolated;
      } else if (verdict.accepted_output && cr.output != *verdict.accepted_output) {
        outcome = RepOutcome::Dissented;
      } else if (rec.checkpoint_root != modal_root && divergence.has_value()) {
        outcome = RepOutcome::Dissented;
      } else {
        outcome = RepOutcome::Agreed;
      }
      if (outcome != RepOutcome::Agreed) ++dissents_[m];
      reputations_[m] = update_reputation(reputations_[m], outcome);
    }

    if (accepted_any) {
      ++jobs_accepted_;
      accepted_jobs_awaiting_block_[run.job.id] = true;
    } else if (!verdict.accepted_output && run.attempt == 1) {
      // Three-way split: re-queue once with fresh clones.
      ++jobs_requeued_;
      QueuedJob qj{run.job, now_, 2};
      job_queue_.enqueue(std::move(qj));
    } else {
      ++jobs_rejected_;
    }
  }

  // --- block production -------------------------------------------------

  void handle(const SimEvent&, EvBlockTick& p) {
    if (cfg_.mode == SimMode::PoVM)
      block_tick_povm(p.round);
    else
      block_tick_baseline(p.round);
  }

  void block_tick_povm(Tick t) {
    // Eligibility window = the last fully completed epoch.
    Tick epoch_end = (t / cfg_.epoch_length) * cfg_.epoch_length;
    TicketTable table;
    if (epoch_end >= cfg_.epoch_length) {
      std::map<NodeId, double> reps;
      for (const auto& [id, rep] : reputations_) reps[id] = rep.score;
      table = issue_tickets(history_, epoch_end - cfg_.epoch_length, epoch_end, reps);
    }
    bool bootstrap = table.entries.empty();
    if (bootstrap) {
      // Liveness before the first productive epoch: one ticket each.
      ++bootstrap_rounds_;
      for (std::uint64_t i = 0; i < cfg_.miners; ++i) table.entries[cfg_.miner_id(i)] = 1;
      table.window_start = table.window_end = t;
    } else {
      tickets_issued_ += table.total();
    }
    rounds_[t].table = table;
    rounds_[t].bootstrap = bootstrap;
    for (const auto& [miner, n] : table.entries) {
      Prng& mp = miner_prngs_.at(miner);
      std::uint64_t seed = mp.next();
      Salt salt{};
      std::uint64_t s0 = mp.next(), s1 = mp.next();
      for (int i = 0; i < 8; ++i) {
        salt[i] = static_cast<std::uint8_t>(s0 >> (8 * i));
        salt[8 + i] = static_cast<std::uint8_t>(s1 >> (8 * i));
      }
      enqueue(t, miner, kKernel, EvCommit{commit(miner, seed, salt), t});
      enqueue(t, miner, kKernel, EvReveal{Reveal{miner, seed, salt}, t});
    }
    enqueue(t, kKernel, kKernel, EvBlockBuild{t});
  }

  void handle(const SimEvent&, EvCommit& p) { rounds_[p.round].commitments.push_back(p.commitment); }
  void handle(const SimEvent&, EvReveal& p) { rounds_[p.round].reveals.push_back(p.reveal); }

  void handle(const SimEvent&, EvBlockBuild& p) {
    RoundState& round = rounds_.at(p.round);
    auto outcome = run_draw(round.reveals, round.commitments, round.table);
    if (!outcome.winner)
      throw SimInvariantError("lottery round yields no winner at tick " + std::to_string(p.round));
    NodeId winner = *outcome.winner;

    LotteryTranscript transcript;
    transcript.commitments = round.commitments;
    transcript.reveals = round.reveals;
    transcript.tickets = round.table;
    transcript.winner = winner;

    Block b;
    b.height = chain_.tip().height + 1;
    b.prev_digest = chain_.tip_digest();
    b.timestamp = p.round;
    b.producer = winner;
    b.transactions = mempool_.drain();
    b.transactions.push_back(reward_tx(p.round, winner));
    b.povm_records = std::move(pending_records_);
    pending_records_.clear();
    b.lottery_proof = serialize_transcript(transcript);

    announce_block(std::move(b), false);
    rounds_.erase(p.round);
  }

  Transaction reward_tx(Tick t, NodeId producer) {
    Transaction tx;
    tx.id = (std::uint64_t{1} << 63) | (t << 16) | producer;  // deterministic, collision-free
    tx.payer = kKernel;  // the network mints the reward
    tx.payee = producer;
    tx.amount = cfg_.block_reward;
    tx.timestamp = t;
    return tx;
  }

  void announce_block(Block b, bool tentative) {
    if (!tentative) {
      for (const auto& rec : b.povm_records)
        if (rec.verdict == Verdict::Accepted) {
          accepted_job_block_height_[rec.job_id] = b.height;
          accepted_jobs_awaiting_block_.erase(rec.job_id);
        }
      if (auto err = append_block(chain_, b))
        throw SimInvariantError(std::string("block append failed: ") + to_string(*err));
      ++blocks_by_producer_[b.producer];
      MetricsRow row;
      row.tick = now_;
      row.blocks = chain_.size() - 1;
      row.jobs_accepted = jobs_accepted_;
      row.jobs_rejected = jobs_rejected_;
      row.vm_instructions = counters_.total_vm_instructions;
      row.hash_ops = counters_.total_hash_ops;
      row.tickets_issued = tickets_issued_;
      metrics_.push_back(row);
    }
    for (const auto& [node, tip] : node_tips_)
      enqueue(now_ + latency(), b.producer, node, EvBlockAnnounce{b, tentative});
  }

  void handle(const SimEvent& ev, EvBlockAnnounce& p) {
    if (!p.tentative) node_tips_[ev.to] = digest_block(p.block);
  }

  // Baseline: the network's collective nonce search is modeled as one
  // interleaved sequential scan across miners (rotating start order), so
  // the first success ends the round and difficulty 0 costs exactly one
  // digest per block. forced_tie_rounds lets a scenario credit two miners
  // simultaneously, exercising the tie-deferral rule.
  void block_tick_baseline(Tick t) {
    ++baseline_round_;
    std::vector<Transaction> txs = mempool_.drain();

    std::vector<Block> parents;
    if (fork_) {
      parents = fork_->heads;
    } else {
      parents = {chain_.tip()};
    }

    bool force_tie = std::find(cfg_.forced_tie_rounds.begin(), cfg_.forced_tie_rounds.end(),
                               baseline_round_) != cfg_.forced_tie_rounds.end();

    auto candidate_for = [&](NodeId miner) {
      Block b;
      const Block& parent = parents[miner % parents.size()];
      b.height = parent.height + 1;
      b.prev_digest = digest_block(parent);
      b.timestamp = t;
      b.producer = miner;
      b.transactions = txs;
      b.transactions.push_back(reward_tx(t, miner));
      return b;
    };

    auto scan = [&](const std::set<NodeId>& exclude) -> std::optional<std::pair<NodeId, Block>> {
      std::vector<std::pair<NodeId, std::vector<std::uint8_t>>> prefixes;
      std::vector<Block> cands;
      std::vector<std::uint64_t> starts;
      for (std::uint64_t i = 0; i < cfg_.miners; ++i) {
        NodeId m = cfg_.miner_id((i + baseline_round_) % cfg_.miners);
        if (exclude.count(m)) continue;
        Block c = candidate_for(m);
        ByteWriter w;
        serialize_block_prefix(w, c);
        prefixes.emplace_back(m, w.take());
        cands.push_back(std::move(c));
        starts.push_back(miner_prngs_.at(m).next());
      }
      if (prefixes.empty()) return std::nullopt;
      constexpr std::uint64_t kMaxSteps = std::uint64_t{1} << 24;
      for (std::uint64_t s = 0; s < kMaxSteps; ++s) {
        for (std::size_t i = 0; i < prefixes.size(); ++i) {
          auto outcome = mine(prefixes[i].second, Difficulty{cfg_.difficulty}, starts[i] + s, 1);
          ++hash_ops_by_node_[prefixes[i].first];
          ++counters_.total_hash_ops;
          if (outcome) {
            cands[i].nonce = outcome->nonce;
            return std::make_pair(prefixes[i].first, cands[i]);
          }
        }
      }
      return std::nullopt;
    };

    auto first = scan({});
    if (!first) return;  // exhausted the step budget; defer to next round
    auto [winner, block] = *first;

    std::optional<std::pair<NodeId, Block>> second;
    if (force_tie && cfg_.miners >= 2) second = scan({winner});

    if (second) {
      // Simultaneous credit: two potential winning subchains; declaring a
      // winner is deferred to the next mining round.
      ForkSet f;
      f.heads = {block, second->second};
      announce_block(block, true);
      announce_block(second->second, true);
      fork_ = std::move(f);
      ++forks_created_;
      return;
    }

    if (fork_) {
      auto resolution = resolve_fork(*fork_, block);
      if (!resolution) throw SimInvariantError("baseline extension orphaned its fork set");
      if (auto err = append_block(chain_, fork_->heads[resolution->winner_index]))
        throw SimInvariantError(std::string("fork head append failed: ") + to_string(*err));
      ++blocks_by_producer_[fork_->heads[resolution->winner_index].producer];
      ++forks_resolved_;
      fork_.reset();  // abandoned heads dropped after one height
    }
    announce_block(std::move(block), false);
  }

  // --- state ------------------------------------------------------------

  struct RoundState {
    std::vector<Commitment> commitments;
    std::vector<Reveal> reveals;
    TicketTable table;
    bool bootstrap = false;
  };

  struct EventOrder {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      return std::tuple(a.deliver_at, a.seq) > std::tuple(b.deliver_at, b.seq);
    }
  };

  ScenarioConfig cfg_;
  TraceSink trace_;
  Prng sched_prng_;
  Prng job_seed_prng_;
  Prng tx_prng_;
  std::map<NodeId, Prng> miner_prngs_;

  std::priority_queue<SimEvent, std::vector<SimEvent>, EventOrder> queue_;
  std::uint64_t next_seq_ = 0;
  Tick now_ = 0;

  Chain chain_;
  Mempool mempool_;
  JobQueue job_queue_;
  std::map<std::uint64_t, JobRun> job_runs_;
  std::vector<ExecRequest> exec_batch_;
  std::map<NodeId, std::uint64_t> free_slots_;
  std::map<NodeId, Reputation> reputations_;
  std::map<NodeId, std::uint64_t> dissents_;
  std::vector<TimedRecord> history_;
  std::vector<PovmRecord> pending_records_;
  std::map<Tick, RoundState> rounds_;
  std::map<NodeId, Digest256> node_tips_;
  std::optional<ForkSet> fork_;
  std::uint64_t baseline_round_ = 0;

  SimCounters counters_;
  std::map<NodeId, std::uint64_t> vm_instructions_by_node_;
  std::map<NodeId, std::uint64_t> hash_ops_by_node_;
  std::uint64_t jobs_submitted_ = 0;
  std::uint64_t jobs_accepted_ = 0;
  std::uint64_t jobs_rejected_ = 0;
  std::uint64_t jobs_requeued_ = 0;
  std::uint64_t tickets_issued_ = 0;
  std::uint64_t bootstrap_rounds_ = 0;
  std::uint64_t forks_created_ = 0;
  std::uint64_t forks_resolved_ = 0;
  std::map<NodeId, std::uint64_t> blocks_by_producer_;
  std::map<std::uint64_t, std::uint64_t> accepted_job_block_height_;
  std::map<std::uint64_t, bool> accepted_jobs_awaiting_block_;
  std::vector<MetricsRow> metrics_;
};

inline SimReport run_scenario(const ScenarioConfig& config, TraceSink trace = {}) {
  SimWorld world(config, std::move(trace));
  world.run();
  return world.report();
}

// Runs the same job load in PoVM mode and hashcash-baseline mode with the
// shared seed, for the paired energy / tau comparison.
struct ComparisonReport {
  SimReport povm;
  SimReport baseline;
  CostModel cost;  // k, T, c from the PoVM run; p, w from the baseline run
  std::int64_t tau_value = 0;
};

inline ComparisonReport compare_modes(ScenarioConfig config) {
  ComparisonReport out;
  config.mode = SimMode::PoVM;
  out.povm = run_scenario(config);
  config.mode = SimMode::HashcashBaseline;
  out.baseline = run_scenario(config);
  out.cost.k = config.k;
  out.cost.clone_cost = out.povm.energy.cost.clone_cost;
  out.cost.coordination = out.povm.counters.dispatch_messages;
  out.cost.miners = config.miners;
  out.cost.pow_cost = config.miners ? out.baseline.counters.total_hash_ops / config.miners : 0;
  out.tau_value = tau(out.cost);
  return out;
}

inline nlohmann::json comparison_to_json(const ComparisonReport& c) {
  return {
      {"povm",
       {{"joules", c.povm.energy.joules_povm + c.povm.energy.joules_pow},
        {"joules_vm", c.povm.energy.joules_povm},
        {"grams_co2", c.povm.energy.grams_co2},
        {"chain_length", c.povm.chain.size()},
        {"jobs_accepted", c.povm.jobs_accepted}}},
      {"baseline",
       {{"joules", c.baseline.energy.joules_pow + c.baseline.energy.joules_povm},
        {"joules_hash", c.baseline.energy.joules_pow},
        {"grams_co2", c.baseline.energy.grams_co2},
        {"chain_length", c.baseline.chain.size()},
        {"hash_ops", c.baseline.counters.total_hash_ops}}},
      {"tau",
       {{"k", c.cost.k},
        {"T", c.cost.clone_cost},
        {"c", c.cost.coordination},
        {"p", c.cost.pow_cost},
        {"w", c.cost.miners},
        {"value", c.tau_value}}},
  };
}

}  // namespace povm
