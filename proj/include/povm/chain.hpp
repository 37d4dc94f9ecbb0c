#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "povm/bytes.hpp"
#include "povm/digest.hpp"

#include <nlohmann/json.hpp>

namespace povm {

using NodeId = std::uint64_t;
using Tick = std::uint64_t;

struct Transaction {
  std::uint64_t id = 0;
  NodeId payer = 0;
  NodeId payee = 0;
  std::uint64_t amount = 0;
  Tick timestamp = 0;

  bool operator==(const Transaction&) const = default;
};

// Pending currency transactions, ordered by (timestamp, id).
struct Mempool {
  std::vector<Transaction> pending;

  bool add(const Transaction& tx) {
    for (const auto& t : pending)
      if (t.id == tx.id) return false;
    auto pos = std::lower_bound(pending.begin(), pending.end(), tx, [](const auto& a, const auto& b) {
      return std::pair(a.timestamp, a.id) < std::pair(b.timestamp, b.id);
    });
    pending.insert(pos, tx);
    return true;
  }

  std::vector<Transaction> drain() {
    std::vector<Transaction> out = std::move(pending);
    pending.clear();
    return out;
  }
};

enum class Verdict : std::uint8_t { Rejected = 0, Accepted = 1 };

// Per-clone evidence that a miner ran one job under its SLA.
struct PovmRecord {
  std::uint64_t job_id = 0;
  NodeId miner = 0;
  Digest256 result_digest{};
  Digest256 checkpoint_root{};  // digest of concatenated checkpoint digests
  Verdict verdict = Verdict::Rejected;
  std::uint64_t votes_for = 0;
  std::uint64_t votes_total = 0;
  bool sla_ok = false;

  bool operator==(const PovmRecord&) const = default;

  // verdict must equal the quorum rule: Accepted iff votes_for >= (votes_total+1)/2 and sla_ok.
  bool consistent() const {
    if (votes_total == 0 || votes_total % 2 == 0) return false;
    bool quorum = votes_for >= (votes_total + 1) / 2;
    return (verdict == Verdict::Accepted) == (quorum && sla_ok);
  }
};

struct Block {
  std::uint64_t height = 0;
  Digest256 prev_digest{};
  Tick timestamp = 0;
  NodeId producer = 0;
  std::vector<Transaction> transactions;
  std::vector<PovmRecord> povm_records;
  std::vector<std::uint8_t> lottery_proof;  // empty in hashcash mode
  std::uint64_t nonce = 0;                  // zero in PoVM mode

  bool operator==(const Block&) const = default;
};

inline void serialize_tx(ByteWriter& w, const Transaction& tx) {
  w.u64(tx.id);
  w.u64(tx.payer);
  w.u64(tx.payee);
  w.u64(tx.amount);
  w.u64(tx.timestamp);
}

inline Transaction deserialize_tx(ByteReader& r) {
  Transaction tx;
  tx.id = r.u64();
  tx.payer = r.u64();
  tx.payee = r.u64();
  tx.amount = r.u64();
  tx.timestamp = r.u64();
  return tx;
}

inline void serialize_record(ByteWriter& w, const PovmRecord& rec) {
  w.u64(rec.job_id);
  w.u64(rec.miner);
  w.raw(rec.result_digest);
  w.raw(rec.checkpoint_root);
  w.u8(static_cast<std::uint8_t>(rec.verdict));
  w.u64(rec.votes_for);
  w.u64(rec.votes_total);
  w.u8(rec.sla_ok ? 1 : 0);
}

inline PovmRecord deserialize_record(ByteReader& r) {
  PovmRecord rec;
  rec.job_id = r.u64();
  rec.miner = r.u64();
  r.raw(rec.result_digest);
  r.raw(rec.checkpoint_root);
  std::uint8_t v = r.u8();
  if (v > 1) throw std::runtime_error("bad verdict byte");
  rec.verdict = static_cast<Verdict>(v);
  rec.votes_for = r.u64();
  rec.votes_total = r.u64();
  std::uint8_t s = r.u8();
  if (s > 1) throw std::runtime_error("bad sla_ok byte");
  rec.sla_ok = s == 1;
  return rec;
}

// The nonce is serialized last so hashcash mining can hash
// (prefix bytes ‖ nonce) and land on the same digest as digest_block.
inline void serialize_block_prefix(ByteWriter& w, const Block& b) {
  w.u64(b.height);
  w.raw(b.prev_digest);
  w.u64(b.timestamp);
  w.u64(b.producer);
  w.u64(b.transactions.size());
  for (const auto& tx : b.transactions) serialize_tx(w, tx);
  w.u64(b.povm_records.size());
  for (const auto& rec : b.povm_records) serialize_record(w, rec);
  w.bytes(b.lottery_proof);
}

inline std::vector<std::uint8_t> serialize_block(const Block& b) {
  ByteWriter w;
  serialize_block_prefix(w, b);
  w.u64(b.nonce);
  return w.take();
}

inline Block deserialize_block(ByteReader& r) {
  Block b;
  b.height = r.u64();
  r.raw(b.prev_digest);
  b.timestamp = r.u64();
  b.producer = r.u64();
  std::uint64_t ntx = r.length() ;
  b.transactions.reserve(ntx);
  for (std::uint64_t i = 0; i < ntx; ++i) b.transactions.push_back(deserialize_tx(r));
  std::uint64_t nrec = r.length();
  b.povm_records.reserve(nrec);
  for (std::uint64_t i = 0; i < nrec; ++i) b.povm_records.push_back(deserialize_record(r));
  b.lottery_proof = r.bytes();
  b.nonce = r.u64();
  return b;
}

inline Block deserialize_block(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  Block b = deserialize_block(r);
  if (!r.done()) throw std::runtime_error("trailing bytes after block");
  return b;
}

inline Digest256 digest_block(const Block& b) { return sha256(serialize_block(b)); }

struct Chain {
  std::vector<Block> blocks;

  const Block& tip() const { return blocks.back(); }
  std::size_t size() const { return blocks.size(); }
  bool empty() const { return blocks.empty(); }
  Digest256 tip_digest() const { return digest_block(blocks.back()); }
};

inline Block make_genesis(Tick timestamp = 0) {
  Block g;
  g.height = 0;
  g.prev_digest = kZeroDigest;
  g.timestamp = timestamp;
  return g;
}

inline Chain make_chain(Block genesis = make_genesis()) { return Chain{{std::move(genesis)}}; }

enum class AppendError { WrongParent, WrongHeight, DuplicateTransaction };

inline const char* to_string(AppendError e) {
  switch (e) {
    case AppendError::WrongParent: return "WrongParent";
    case AppendError::WrongHeight: return "WrongHeight";
    case AppendError::DuplicateTransaction: return "DuplicateTransaction";
  }
  return "?";
}

inline std::optional<AppendError> append_block(Chain& chain, Block block) {
  if (block.height != chain.tip().height + 1) return AppendError::WrongHeight;
  if (block.prev_digest != chain.tip_digest()) return AppendError::WrongParent;
  std::unordered_set<std::uint64_t> ids;
  for (const auto& tx : block.transactions)
    if (!ids.insert(tx.id).second) return AppendError::DuplicateTransaction;
  for (const auto& b : chain.blocks)
    for (const auto& tx : b.transactions)
      if (ids.count(tx.id)) return AppendError::DuplicateTransaction;
  chain.blocks.push_back(std::move(block));
  return std::nullopt;
}

struct ValidationReport {
  bool valid = true;
  std::size_t first_invalid = 0;  // block index, meaningful when !valid
  std::string reason;

  static ValidationReport fail(std::size_t idx, std::string why) {
    return {false, idx, std::move(why)};
  }
};

// Re-derives every digest link, height, genesis sentinel, transaction
// uniqueness, and every PovmRecord quorum invariant. When expected_tip is
// given the tip block's own digest is checked against it as well.
inline ValidationReport validate_chain(const Chain& chain,
                                       std::optional<Digest256> expected_tip = std::nullopt) {
  if (chain.empty()) return ValidationReport::fail(0, "empty chain");
  if (chain.blocks[0].height != 0) return ValidationReport::fail(0, "genesis height not 0");
  if (chain.blocks[0].prev_digest != kZeroDigest)
    return ValidationReport::fail(0, "genesis prev_digest not all-zero");

  std::unordered_set<std::uint64_t> tx_ids;
  for (std::size_t i = 0; i < chain.blocks.size(); ++i) {
    const Block& b = chain.blocks[i];
    if (b.height != i) return ValidationReport::fail(i, "height out of sequence");
    for (const auto& tx : b.transactions)
      if (!tx_ids.insert(tx.id).second)
        return ValidationReport::fail(i, "duplicate transaction id");
    for (const auto& rec : b.povm_records)
      if (!rec.consistent())
        return ValidationReport::fail(i, "PovmRecord violates quorum invariant");
    if (i + 1 < chain.blocks.size()) {
      if (chain.blocks[i + 1].prev_digest != digest_block(b))
        return ValidationReport::fail(i + 1, "digest link broken");
    }
  }
  if (expected_tip && chain.tip_digest() != *expected_tip)
    return ValidationReport::fail(chain.blocks.size() - 1, "tip digest mismatch");
  return {};
}

// --- fork handling ------------------------------------------------------

struct ForkSet {
  std::vector<Block> heads;  // candidate tips at equal height
};

enum class ForkError { OrphanExtension };

struct ForkResolution {
  std::size_t winner_index = 0;
  NodeId winner_producer = 0;
  std::vector<Block> abandoned;  // retained one height, then dropped by the caller
};

// The head that `extension` extends becomes canonical; the rest are abandoned.
inline std::optional<ForkResolution> resolve_fork(const ForkSet& forks, const Block& extension) {
  for (std::size_t i = 0; i < forks.heads.size(); ++i) {
    if (digest_block(forks.heads[i]) == extension.prev_digest) {
      ForkResolution res;
      res.winner_index = i;
      res.winner_producer = forks.heads[i].producer;
      for (std::size_t j = 0; j < forks.heads.size(); ++j)
        if (j != i) res.abandoned.push_back(forks.heads[j]);
      return res;
    }
  }
  return std::nullopt;  // OrphanExtension
}

// --- chain file formats -------------------------------------------------

inline constexpr std::uint64_t kChainFileMagic = 0x504f564d43484e31ULL;  // "POVMCHN1"

// Binary dump: magic, block count, length-prefixed blocks, tip digest.
inline std::vector<std::uint8_t> dump_chain(const Chain& chain) {
  ByteWriter w;
  w.u64(kChainFileMagic);
  w.u64(chain.blocks.size());
  for (const auto& b : chain.blocks) w.bytes(serialize_block(b));
  w.raw(chain.tip_digest());
  return w.take();
}

struct LoadedChain {
  Chain chain;
  Digest256 recorded_tip{};
};

inline LoadedChain load_chain(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.u64() != kChainFileMagic) throw std::runtime_error("bad chain file magic");
  std::uint64_t n = r.length();
  LoadedChain out;
  for (std::uint64_t i = 0; i < n; ++i) {
    auto blob = r.bytes();
    out.chain.blocks.push_back(deserialize_block(blob));
  }
  r.raw(out.recorded_tip);
  if (!r.done()) throw std::runtime_error("trailing bytes after chain");
  if (out.chain.empty()) throw std::runtime_error("chain file holds no blocks");
  return out;
}

inline nlohmann::json tx_to_json(const Transaction& tx) {
  return {{"id", tx.id},
          {"payer", tx.payer},
          {"payee", tx.payee},
          {"amount", tx.amount},
          {"timestamp", tx.timestamp}};
}

inline nlohmann::json record_to_json(const PovmRecord& rec) {
  return {{"job_id", rec.job_id},
          {"miner", rec.miner},
          {"result_digest", to_hex(rec.result_digest)},
          {"checkpoint_root", to_hex(rec.checkpoint_root)},
          {"verdict", rec.verdict == Verdict::Accepted ? "accepted" : "rejected"},
          {"votes_for", rec.votes_for},
          {"votes_total", rec.votes_total},
          {"sla_ok", rec.sla_ok}};
}

inline nlohmann::json block_to_json(const Block& b) {
  nlohmann::json txs = nlohmann::json::array();
  for (const auto& tx : b.transactions) txs.push_back(tx_to_json(tx));
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& rec : b.povm_records) recs.push_back(record_to_json(rec));
  return {{"height", b.height},
          {"prev_digest", to_hex(b.prev_digest)},
          {"digest", to_hex(digest_block(b))},
          {"timestamp", b.timestamp},
          {"producer", b.producer},
          {"transactions", std::move(txs)},
          {"povm_records", std::move(recs)},
          {"lottery_proof_bytes", b.lottery_proof.size()},
          {"nonce", b.nonce}};
}

inline nlohmann::json chain_to_json(const Chain& chain) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : chain.blocks) blocks.push_back(block_to_json(b));
  return {{"length", chain.blocks.size()},
          {"tip_digest", to_hex(chain.tip_digest())},
          {"blocks", std::move(blocks)}};
}

}  // namespace povm
