#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "povm/bytes.hpp"
#include "povm/chain.hpp"
#include "povm/digest.hpp"
#include "povm/prng.hpp"

namespace povm {

using Word = std::uint64_t;

// Resource contract for one job. Instruction budget is per epoch (rate x
// epoch length); there is no wall clock in simulated time.
struct Sla {
  std::uint64_t max_instructions = 1'000'000;
  std::uint64_t max_memory_cells = 256;
  std::uint64_t checkpoint_interval = 256;  // instructions between implicit checkpoints
  Tick epoch_length_ticks = 10;

  std::optional<std::string> validate() const {
    if (max_instructions < 1) return "sla.max_instructions must be >= 1";
    if (max_memory_cells < 1) return "sla.max_memory_cells must be >= 1";
    if (checkpoint_interval < 1) return "sla.checkpoint_interval must be >= 1";
    if (epoch_length_ticks < 1) return "sla.epoch_length_ticks must be >= 1";
    if (checkpoint_interval > max_instructions)
      return "sla.checkpoint_interval must be <= sla.max_instructions";
    return std::nullopt;
  }
};

enum class Opcode : std::uint8_t {
  Push,        // push immediate
  Pop,         // discard top
  Dup,         // duplicate top
  Add,         // pop b, a; push a+b (mod 2^64)
  Sub,         // pop b, a; push a-b
  Mul,         // pop b, a; push a*b
  Cmp,         // pop b, a; push a<b ? 1 : 0 (unsigned)
  Jmp,         // pc = arg
  Jz,          // pop v; if v==0, pc = arg
  Load,        // push memory[arg]
  Store,       // pop v; memory[arg] = v
  Rand,        // push next PRNG word
  Checkpoint,  // emit a checkpoint digest
  Halt,        // stop; output = top of stack (0 if empty)
};

struct Instr {
  Opcode op = Opcode::Halt;
  Word arg = 0;

  bool operator==(const Instr&) const = default;
};

struct Program {
  std::vector<Instr> code;

  bool operator==(const Program&) const = default;

  // Jump targets must land inside the code.
  std::optional<std::string> validate() const {
    if (code.empty()) return "empty program";
    for (std::size_t i = 0; i < code.size(); ++i) {
      const Instr& in = code[i];
      if ((in.op == Opcode::Jmp || in.op == Opcode::Jz) && in.arg >= code.size()) {
        std::ostringstream os;
        os << "jump target out of range at instruction " << i;
        return os.str();
      }
    }
    return std::nullopt;
  }
};

struct Job {
  std::uint64_t id = 0;
  Program program;
  std::vector<Word> input;  // preloaded into memory cells 0..n-1
  Sla sla;
  NodeId customer = 0;
  std::uint64_t seed = 0;  // system-assigned, shared across clones
};

enum class ExecStatus : std::uint8_t {
  Completed,
  InstructionBudgetExceeded,
  MemoryExceeded,
  Trap,
};

inline const char* to_string(ExecStatus s) {
  switch (s) {
    case ExecStatus::Completed: return "Completed";
    case ExecStatus::InstructionBudgetExceeded: return "InstructionBudgetExceeded";
    case ExecStatus::MemoryExceeded: return "MemoryExceeded";
    case ExecStatus::Trap: return "Trap";
  }
  return "?";
}

struct ExecutionTrace {
  Word output = 0;
  std::uint64_t instructions_executed = 0;
  std::uint64_t peak_memory_cells = 0;
  std::vector<Digest256> checkpoints;
  ExecStatus status = ExecStatus::Trap;
};

// Digest of (pc, full stack, full memory, instruction count), canonical
// little-endian serialization. Identical VM states give identical digests;
// the instruction count distinguishes loops that revisit a memory state.
inline Digest256 checkpoint_digest(std::uint64_t pc, const std::vector<Word>& stack,
                                   const std::vector<Word>& memory,
                                   std::uint64_t instructions_executed) {
  ByteWriter w;
  w.u64(pc);
  w.u64(stack.size());
  for (Word v : stack) w.u64(v);
  w.u64(memory.size());
  for (Word v : memory) w.u64(v);
  w.u64(instructions_executed);
  return sha256(w.data());
}

// Test hook: after instruction `after_instruction` completes (checkpoints
// included), XOR 1 into memory[cell]. Models a faulty or cheating clone.
struct FaultInjection {
  std::uint64_t after_instruction = 0;
  std::uint64_t cell = 0;
};

// Deterministic metered execution. Never throws for job misbehavior; SLA
// breaches and traps are surfaced in the trace status.
inline ExecutionTrace execute(const Job& job,
                              std::optional<FaultInjection> fault = std::nullopt) {
  ExecutionTrace tr;
  if (job.program.validate()) {
    tr.status = ExecStatus::Trap;
    return tr;
  }

  const Sla& sla = job.sla;
  std::vector<Word> stack;
  std::vector<Word> memory(job.input.begin(), job.input.end());
  if (memory.size() > sla.max_memory_cells) {
    tr.status = ExecStatus::MemoryExceeded;
    return tr;
  }
  PrngState prng{job.seed};
  std::uint64_t pc = 0;
  std::uint64_t executed = 0;

  auto touch = [&](std::uint64_t cell) -> bool {
    if (cell >= sla.max_memory_cells) return false;
    if (cell >= memory.size()) memory.resize(cell + 1, 0);
    return true;
  };
  auto finish = [&](ExecStatus st, Word out) {
    tr.status = st;
    tr.output = out;
    tr.instructions_executed = executed;
    tr.peak_memory_cells = memory.size();
  };

  while (true) {
    if (executed >= sla.max_instructions) {
      finish(ExecStatus::InstructionBudgetExceeded, 0);
      return tr;
    }
    const Instr in = job.program.code[pc];
    std::uint64_t next_pc = pc + 1;
    bool explicit_ckpt = false;

    switch (in.op) {
      case Opcode::Push:
        stack.push_back(in.arg);
        break;
      case Opcode::Pop:
        if (stack.empty()) { finish(ExecStatus::Trap, 0); return tr; }
        stack.pop_back();
        break;
      case Opcode::Dup:
        if (stack.empty()) { finish(ExecStatus::Trap, 0); return tr; }
        stack.push_back(stack.back());
        break;
      case Opcode::Add:
      case Opcode::Sub:
      case Opcode::Mul:
      case Opcode::Cmp: {
        if (stack.size() < 2) { finish(ExecStatus::Trap, 0); return tr; }
        Word b = stack.back();
        stack.pop_back();
        Word a = stack.back();
        stack.pop_back();
        Word v = 0;
        switch (in.op) {
          case Opcode::Add: v = a + b; break;
          case Opcode::Sub: v = a - b; break;
          case Opcode::Mul: v = a * b; break;
          default: v = a < b ? 1 : 0; break;
        }
        stack.push_back(v);
        break;
      }
      case Opcode::Jmp:
        next_pc = in.arg;
        break;
      case Opcode::Jz:
        if (stack.empty()) { finish(ExecStatus::Trap, 0); return tr; }
        if (stack.back() == 0) next_pc = in.arg;
        stack.pop_back();
        break;
      case Opcode::Load:
        if (!touch(in.arg)) { finish(ExecStatus::MemoryExceeded, 0); return tr; }
        stack.push_back(memory[in.arg]);
        break;
      case Opcode::Store: {
        if (stack.empty()) { finish(ExecStatus::Trap, 0); return tr; }
        Word v = stack.back();
        stack.pop_back();
        if (!touch(in.arg)) { finish(ExecStatus::MemoryExceeded, 0); return tr; }
        memory[in.arg] = v;
        break;
      }
      case Opcode::Rand: {
        auto [v, s] = prng_next(prng);
        prng = s;
        stack.push_back(v);
        break;
      }
      case Opcode::Checkpoint:
        explicit_ckpt = true;
        break;
      case Opcode::Halt:
        ++executed;
        if (executed % sla.checkpoint_interval == 0)
          tr.checkpoints.push_back(checkpoint_digest(next_pc, stack, memory, executed));
        finish(ExecStatus::Completed, stack.empty() ? 0 : stack.back());
        return tr;
    }

    pc = next_pc;
    ++executed;
    if (explicit_ckpt)
      tr.checkpoints.push_back(checkpoint_digest(pc, stack, memory, executed));
    if (executed % sla.checkpoint_interval == 0)
      tr.checkpoints.push_back(checkpoint_digest(pc, stack, memory, executed));
    if (fault && executed == fault->after_instruction) {
      if (touch(fault->cell)) memory[fault->cell] ^= 1;
    }
  }
}

// --- coin-flip workload -------------------------------------------------

// Counts flips of a pseudo-random coin until k consecutive heads, HALTing
// with the total flip count. Heads = low bit of a RAND word, extracted as
// (x * 2^63) mod 2^64. Emits CHECKPOINT every 64 flips via the analogous
// (flips * 2^58) parity-of-low-6-bits test.
// Expected output over random seeds is 2^(k+1) - 2.
inline Program coinflip_program(std::uint64_t k) {
  Program p;
  if (k == 0) {
    p.code = {{Opcode::Push, 0}, {Opcode::Halt, 0}};
    return p;
  }
  // memory: cell 0 = current run of heads, cell 1 = total flips
  p.code = {
      /* 0: loop */ {Opcode::Rand, 0},
      /* 1 */ {Opcode::Push, Word{1} << 63},
      /* 2 */ {Opcode::Mul, 0},  // 0 if tails, 2^63 if heads
      /* 3 */ {Opcode::Load, 1},
      /* 4 */ {Opcode::Push, 1},
      /* 5 */ {Opcode::Add, 0},
      /* 6 */ {Opcode::Store, 1},  // flips += 1
      /* 7 */ {Opcode::Load, 1},
      /* 8 */ {Opcode::Push, Word{1} << 58},
      /* 9 */ {Opcode::Mul, 0},  // 0 iff flips % 64 == 0
      /* 10 */ {Opcode::Jz, 12},
      /* 11 */ {Opcode::Jmp, 13},
      /* 12 */ {Opcode::Checkpoint, 0},
      /* 13 */ {Opcode::Jz, 23},  // pops the coin parity; tails -> 23
      /* 14 */ {Opcode::Load, 0},
      /* 15 */ {Opcode::Push, 1},
      /* 16 */ {Opcode::Add, 0},
      /* 17 */ {Opcode::Store, 0},  // run += 1
      /* 18 */ {Opcode::Load, 0},
      /* 19 */ {Opcode::Push, k},
      /* 20 */ {Opcode::Sub, 0},
      /* 21 */ {Opcode::Jz, 26},  // run == k -> done
      /* 22 */ {Opcode::Jmp, 0},
      /* 23: tails */ {Opcode::Push, 0},
      /* 24 */ {Opcode::Store, 0},  // run = 0
      /* 25 */ {Opcode::Jmp, 0},
      /* 26: done */ {Opcode::Load, 1},
      /* 27 */ {Opcode::Halt, 0},
  };
  return p;
}

// --- program text format ------------------------------------------------
// One opcode per line, '#' comments, decimal operands.

inline const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::Push: return "PUSH";
    case Opcode::Pop: return "POP";
    case Opcode::Dup: return "DUP";
    case Opcode::Add: return "ADD";
    case Opcode::Sub: return "SUB";
    case Opcode::Mul: return "MUL";
    case Opcode::Cmp: return "CMP";
    case Opcode::Jmp: return "JMP";
    case Opcode::Jz: return "JZ";
    case Opcode::Load: return "LOAD";
    case Opcode::Store: return "STORE";
    case Opcode::Rand: return "RAND";
    case Opcode::Checkpoint: return "CHECKPOINT";
    case Opcode::Halt: return "HALT";
  }
  return "?";
}

inline bool opcode_takes_arg(Opcode op) {
  switch (op) {
    case Opcode::Push:
    case Opcode::Jmp:
    case Opcode::Jz:
    case Opcode::Load:
    case Opcode::Store:
      return true;
    default:
      return false;
  }
}

inline std::string format_program(const Program& p) {
  std::ostringstream os;
  for (const auto& in : p.code) {
    os << opcode_name(in.op);
    if (opcode_takes_arg(in.op)) os << ' ' << in.arg;
    os << '\n';
  }
  return os.str();
}

// Throws std::runtime_error naming the offending line.
inline Program parse_program(std::string_view text) {
  Program p;
  std::size_t line_no = 0;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;  // blank or comment-only
    std::optional<Opcode> op;
    for (int i = 0; i <= static_cast<int>(Opcode::Halt); ++i)
      if (name == opcode_name(static_cast<Opcode>(i))) op = static_cast<Opcode>(i);
    if (!op)
      throw std::runtime_error("line " + std::to_string(line_no) + ": unknown opcode '" + name + "'");
    Instr in{*op, 0};
    if (opcode_takes_arg(*op)) {
      if (!(ls >> in.arg))
        throw std::runtime_error("line " + std::to_string(line_no) + ": missing operand");
    }
    std::string extra;
    if (ls >> extra)
      throw std::runtime_error("line " + std::to_string(line_no) + ": trailing token '" + extra + "'");
    p.code.push_back(in);
  }
  if (auto err = p.validate()) throw std::runtime_error(*err);
  return p;
}

}  // namespace povm
