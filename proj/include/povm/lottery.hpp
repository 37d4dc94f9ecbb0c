#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "povm/bytes.hpp"
#include "povm/chain.hpp"
#include "povm/digest.hpp"

namespace povm {

// Multiparty commit-reveal lottery. Each miner commits to a private seed,
// reveals after all commitments are in, and the combined reveals pick the
// block producer with probability proportional to lottery tickets.

using Salt = std::array<std::uint8_t, 16>;

struct Commitment {
  NodeId miner = 0;
  Digest256 commit_digest{};

  bool operator==(const Commitment&) const = default;
};

inline Digest256 commit_digest_of(std::uint64_t seed, const Salt& salt) {
  ByteWriter w;
  w.u64(seed);
  w.raw(salt);
  return sha256(w.data());
}

inline Commitment commit(NodeId miner, std::uint64_t seed, const Salt& salt) {
  return Commitment{miner, commit_digest_of(seed, salt)};
}

inline bool verify_reveal(const Commitment& c, std::uint64_t seed, const Salt& salt) {
  return commit_digest_of(seed, salt) == c.commit_digest;
}

struct Reveal {
  NodeId miner = 0;
  std::uint64_t seed = 0;
  Salt salt{};

  bool operator==(const Reveal&) const = default;
};

// Per-miner ticket counts over an eligibility window. std::map keeps miner
// ids ascending, which the winner interval rule depends on.
struct TicketTable {
  std::map<NodeId, std::uint64_t> entries;
  Tick window_start = 0;
  Tick window_end = 0;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [id, n] : entries) t += n;
    return t;
  }

  bool operator==(const TicketTable&) const = default;
};

struct TimedRecord {
  PovmRecord record;
  Tick completed_at = 0;
};

// tickets(miner) = floor(reputation x accepted-record count in window).
// Miners that floor to zero are absent from the table.
inline TicketTable issue_tickets(std::span<const TimedRecord> records, Tick window_start,
                                 Tick window_end,
                                 const std::map<NodeId, double>& reputation = {}) {
  std::map<NodeId, std::uint64_t> accepted;
  for (const auto& tr : records) {
    if (tr.completed_at < window_start || tr.completed_at >= window_end) continue;
    if (tr.record.verdict != Verdict::Accepted || !tr.record.sla_ok) continue;
    ++accepted[tr.record.miner];
  }
  TicketTable table;
  table.window_start = window_start;
  table.window_end = window_end;
  for (const auto& [miner, n] : accepted) {
    double rep = 1.0;
    if (auto it = reputation.find(miner); it != reputation.end()) rep = it->second;
    auto tickets = static_cast<std::uint64_t>(rep * static_cast<double>(n));
    if (tickets > 0) table.entries[miner] = tickets;
  }
  return table;
}

enum class DrawError { BadReveal, EmptyTable };

struct DrawFailure {
  DrawError error = DrawError::EmptyTable;
  NodeId offender = 0;  // meaningful for BadReveal
};

// Combined randomness = digest of all reveals in ascending miner-id order;
// winner = the miner whose cumulative ticket interval (ids ascending)
// contains combined mod total. Modulo bias is < 2^-200 at desk scale.
inline Digest256 combine_reveals(std::span<const Reveal> reveals) {
  std::vector<Reveal> sorted(reveals.begin(), reveals.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const Reveal& a, const Reveal& b) { return a.miner < b.miner; });
  ByteWriter w;
  for (const auto& r : sorted) {
    w.u64(r.miner);
    w.u64(r.seed);
    w.raw(r.salt);
  }
  return sha256(w.data());
}

inline std::uint64_t digest_mod(const Digest256& d, std::uint64_t m) {
  // big-endian residue; m is tiny relative to 2^256
  std::uint64_t acc = 0;
  for (auto b : d) acc = (acc * 256 + b) % m;
  return acc;
}

inline std::variant<NodeId, DrawFailure> draw_winner(std::span<const Reveal> reveals,
                                                     std::span<const Commitment> commitments,
                                                     const TicketTable& tickets) {
  for (const auto& r : reveals) {
    const Commitment* c = nullptr;
    for (const auto& cand : commitments)
      if (cand.miner == r.miner) c = &cand;
    if (!c || !verify_reveal(*c, r.seed, r.salt))
      return DrawFailure{DrawError::BadReveal, r.miner};
  }
  std::uint64_t total = tickets.total();
  if (total == 0) return DrawFailure{DrawError::EmptyTable, 0};
  std::uint64_t residue = digest_mod(combine_reveals(reveals), total);
  std::uint64_t cumulative = 0;
  for (const auto& [miner, n] : tickets.entries) {
    cumulative += n;
    if (residue < cumulative) return miner;
  }
  return tickets.entries.rbegin()->first;  // unreachable
}

// Voids the tickets and reveal of each offending miner and redraws.
struct DrawOutcome {
  std::optional<NodeId> winner;
  std::vector<NodeId> offenders;
};

inline DrawOutcome run_draw(std::vector<Reveal> reveals, std::span<const Commitment> commitments,
                            TicketTable tickets) {
  DrawOutcome out;
  while (true) {
    auto res = draw_winner(reveals, commitments, tickets);
    if (std::holds_alternative<NodeId>(res)) {
      out.winner = std::get<NodeId>(res);
      return out;
    }
    DrawFailure f = std::get<DrawFailure>(res);
    if (f.error == DrawError::EmptyTable) return out;
    out.offenders.push_back(f.offender);
    std::erase_if(reveals, [&](const Reveal& r) { return r.miner == f.offender; });
    tickets.entries.erase(f.offender);
  }
}

// --- lottery transcript -------------------------------------------------
// Serialized into the block's lottery_proof field and re-verified during
// chain validation.

struct LotteryTranscript {
  std::vector<Commitment> commitments;
  std::vector<Reveal> reveals;
  TicketTable tickets;
  NodeId winner = 0;

  bool operator==(const LotteryTranscript&) const = default;
};

inline std::vector<std::uint8_t> serialize_transcript(const LotteryTranscript& t) {
  ByteWriter w;
  w.u64(t.commitments.size());
  for (const auto& c : t.commitments) {
    w.u64(c.miner);
    w.raw(c.commit_digest);
  }
  w.u64(t.reveals.size());
  for (const auto& r : t.reveals) {
    w.u64(r.miner);
    w.u64(r.seed);
    w.raw(r.salt);
  }
  w.u64(t.tickets.window_start);
  w.u64(t.tickets.window_end);
  w.u64(t.tickets.entries.size());
  for (const auto& [miner, n] : t.tickets.entries) {
    w.u64(miner);
    w.u64(n);
  }
  w.u64(t.winner);
  return w.take();
}

inline LotteryTranscript deserialize_transcript(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  LotteryTranscript t;
  std::uint64_t nc = r.length();
  for (std::uint64_t i = 0; i < nc; ++i) {
    Commitment c;
    c.miner = r.u64();
    r.raw(c.commit_digest);
    t.commitments.push_back(c);
  }
  std::uint64_t nr = r.length();
  for (std::uint64_t i = 0; i < nr; ++i) {
    Reveal rv;
    rv.miner = r.u64();
    rv.seed = r.u64();
    r.raw(rv.salt);
    t.reveals.push_back(rv);
  }
  t.tickets.window_start = r.u64();
  t.tickets.window_end = r.u64();
  std::uint64_t ne = r.length();
  for (std::uint64_t i = 0; i < ne; ++i) {
    NodeId miner = r.u64();
    t.tickets.entries[miner] = r.u64();
  }
  t.winner = r.u64();
  if (!r.done()) throw std::runtime_error("trailing bytes after transcript");
  return t;
}

// Recomputes the draw from the transcript's own commitments, reveals and
// table; the recorded winner must match and must hold tickets.
inline std::optional<std::string> verify_transcript(const LotteryTranscript& t,
                                                    NodeId block_producer) {
  auto outcome = run_draw(t.reveals, t.commitments, t.tickets);
  if (!outcome.winner) return "transcript draw yields no winner";
  if (*outcome.winner != t.winner) return "transcript winner does not recompute";
  if (t.winner != block_producer) return "block producer is not the lottery winner";
  auto it = t.tickets.entries.find(t.winner);
  if (it == t.tickets.entries.end() || it->second == 0) return "winner holds no tickets";
  return std::nullopt;
}

// Chain validation including lottery transcripts: blocks carrying a
// non-empty lottery_proof must re-verify.
inline ValidationReport validate_chain_full(const Chain& chain,
                                            std::optional<Digest256> expected_tip = std::nullopt) {
  ValidationReport rep = validate_chain(chain, expected_tip);
  if (!rep.valid) return rep;
  for (std::size_t i = 0; i < chain.blocks.size(); ++i) {
    const Block& b = chain.blocks[i];
    if (b.lottery_proof.empty()) continue;
    try {
      LotteryTranscript t = deserialize_transcript(b.lottery_proof);
      if (auto err = verify_transcript(t, b.producer))
        return ValidationReport::fail(i, *err);
    } catch (const std::exception& e) {
      return ValidationReport::fail(i, std::string("bad lottery transcript: ") + e.what());
    }
  }
  return rep;
}

}  // namespace povm
