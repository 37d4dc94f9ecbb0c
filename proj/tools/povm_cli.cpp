// Scenario runner and chain inspection tool.
//
// Subcommands:
//   run      execute a scenario config, write report/chain/metrics files
//   verify   validate a chain.bin dump
//   job      run one VM job locally and print its trace summary
//   compare  run the same load in PoVM and hashcash mode, print energy + tau
//
// Exit codes: 0 success, 1 invalid input / failed check, 2 file or
// invariant errors. POVM_LOG=trace emits per-event JSON lines to stderr.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "povm/lottery.hpp"
#include "povm/simnet.hpp"
#include "povm/vm.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

povm::TraceSink trace_sink_from_env() {
  const char* lvl = std::getenv("POVM_LOG");
  if (lvl && std::string(lvl) == "trace")
    return [](const nlohmann::json& j) { std::cerr << j.dump() << "\n"; };
  return {};
}

std::string metrics_csv(const povm::SimReport& report) {
  std::ostringstream os;
  os << "tick,blocks,jobs_accepted,jobs_rejected,vm_instructions,hash_ops,tickets_issued\n";
  for (const auto& row : report.metrics)
    os << row.tick << ',' << row.blocks << ',' << row.jobs_accepted << ',' << row.jobs_rejected
       << ',' << row.vm_instructions << ',' << row.hash_ops << ',' << row.tickets_issued << '\n';
  return os.str();
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_override) {
  povm::ScenarioConfig config;
  try {
    config = povm::config_from_json(nlohmann::json::parse(read_file(config_path)));
    if (seed_override) config.seed = *seed_override;
    if (auto err = config.validate()) throw std::runtime_error(*err);
  } catch (const std::exception& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 1;
  }
  try {
    povm::SimReport report = povm::run_scenario(config, trace_sink_from_env());
    auto bin = povm::dump_chain(report.chain);
    write_file(out_dir + "/report.json", povm::report_to_json(report).dump(2) + "\n");
    write_file(out_dir + "/chain.bin",
               std::string_view(reinterpret_cast<const char*>(bin.data()), bin.size()));
    write_file(out_dir + "/chain.json", povm::chain_to_json(report.chain).dump(2) + "\n");
    write_file(out_dir + "/metrics.csv", metrics_csv(report));
    std::cout << nlohmann::json{{"chain_length", report.chain.size()},
                                {"chain_tip", povm::to_hex(report.chain.tip_digest())},
                                {"jobs_accepted", report.jobs_accepted},
                                {"tau", report.energy.tau_value}}
                     .dump()
              << "\n";
    return 0;
  } catch (const povm::SimInvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_verify(const std::string& chain_path) {
  povm::LoadedChain loaded;
  try {
    std::string raw = read_file(chain_path);
    loaded = povm::load_chain(
        std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
  } catch (const std::exception& e) {
    std::cerr << "unreadable chain: " << e.what() << "\n";
    return 2;
  }
  povm::ValidationReport rep = povm::validate_chain_full(loaded.chain, loaded.recorded_tip);
  if (rep.valid) {
    std::cout << "Valid\n";
    return 0;
  }
  std::cout << "Invalid at height " << rep.first_invalid << ": " << rep.reason << "\n";
  return 1;
}

int cmd_job(const std::string& program_path, std::optional<std::uint64_t> k_heads,
            std::uint64_t seed, const povm::Sla& sla) {
  povm::Job job;
  try {
    if (k_heads)
      job.program = povm::coinflip_program(*k_heads);
    else
      job.program = povm::parse_program(read_file(program_path));
  } catch (const std::exception& e) {
    std::cerr << "bad program: " << e.what() << "\n";
    return 1;
  }
  job.sla = sla;
  job.seed = seed;
  povm::ExecutionTrace trace = povm::execute(job);
  std::cout << nlohmann::json{{"output", trace.output},
                              {"status", povm::to_string(trace.status)},
                              {"instructions", trace.instructions_executed},
                              {"peak_memory_cells", trace.peak_memory_cells},
                              {"checkpoints", trace.checkpoints.size()}}
                   .dump()
            << "\n";
  return trace.status == povm::ExecStatus::Completed ? 0 : 1;
}

int cmd_compare(const std::string& config_path, std::optional<std::uint64_t> seed_override) {
  povm::ScenarioConfig config;
  try {
    config = povm::config_from_json(nlohmann::json::parse(read_file(config_path)));
    if (seed_override) config.seed = *seed_override;
  } catch (const std::exception& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 1;
  }
  try {
    povm::ComparisonReport cmp = povm::compare_modes(config);
    std::cout << povm::comparison_to_json(cmp).dump(2) << "\n";
    return 0;
  } catch (const povm::SimInvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PoVM blockchain simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", chain_path, program_path;
  std::optional<std::uint64_t> seed_override, k_heads;
  std::uint64_t job_seed = 0;
  povm::Sla sla;

  auto* run = app.add_subcommand("run", "run a scenario");
  run->add_option("config", config_path, "scenario config JSON")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--seed", seed_override, "override the scenario seed");

  auto* verify = app.add_subcommand("verify", "validate a chain dump");
  verify->add_option("chain", chain_path, "chain.bin path")->required();

  auto* job = app.add_subcommand("job", "run one VM job locally");
  job->add_option("--program", program_path, "program text file");
  job->add_option("--k-heads", k_heads, "run the coin-flip job for k heads");
  job->add_option("--seed", job_seed, "job PRNG seed");
  job->add_option("--max-instructions", sla.max_instructions, "SLA instruction budget");
  job->add_option("--max-memory", sla.max_memory_cells, "SLA memory cap (cells)");
  job->add_option("--checkpoint-interval", sla.checkpoint_interval, "checkpoint cadence");

  auto* compare = app.add_subcommand("compare", "paired PoVM vs hashcash run");
  compare->add_option("config", config_path, "scenario config JSON")->required();
  compare->add_option("--seed", seed_override, "override the scenario seed");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return cmd_run(config_path, out_dir, seed_override);
  if (verify->parsed()) return cmd_verify(chain_path);
  if (job->parsed()) {
    if (!k_heads && program_path.empty()) {
      std::cerr << "job needs --program or --k-heads\n";
      return 1;
    }
    return cmd_job(program_path, k_heads, job_seed, sla);
  }
  if (compare->parsed()) return cmd_compare(config_path, seed_override);
  return 1;
}
