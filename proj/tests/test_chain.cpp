#include <catch2/catch_amalgamated.hpp>

#include "povm/chain.hpp"
#include "povm/prng.hpp"

using namespace povm;

namespace {

Transaction tx(std::uint64_t id, NodeId payer, NodeId payee, std::uint64_t amount, Tick ts) {
  return Transaction{id, payer, payee, amount, ts};
}

Block child_of(const Chain& chain, std::vector<Transaction> txs = {}) {
  Block b;
  b.height = chain.tip().height + 1;
  b.prev_digest = chain.tip_digest();
  b.timestamp = chain.tip().timestamp + 10;
  b.producer = 1;
  b.transactions = std::move(txs);
  return b;
}

Chain random_chain(Prng& prng, std::size_t blocks) {
  Chain chain = make_chain();
  std::uint64_t next_tx = 1;
  for (std::size_t i = 1; i < blocks; ++i) {
    Block b = child_of(chain);
    b.producer = 1 + prng.uniform(0, 4);
    b.transactions.push_back(tx(next_tx++, 10, b.producer, prng.uniform(1, 100), b.timestamp));
    PovmRecord rec;
    rec.job_id = 100 + i;
    rec.miner = b.producer;
    rec.votes_for = 2;
    rec.votes_total = 3;
    rec.sla_ok = true;
    rec.verdict = Verdict::Accepted;
    rec.result_digest = sha256(std::vector<std::uint8_t>{static_cast<std::uint8_t>(i)});
    b.povm_records.push_back(rec);
    REQUIRE(!append_block(chain, std::move(b)));
  }
  return chain;
}

}  // namespace

TEST_CASE("digest_block is deterministic") {
  Block g = make_genesis();
  Digest256 d = digest_block(g);
  for (int i = 0; i < 100; ++i) REQUIRE(digest_block(g) == d);
}

TEST_CASE("genesis digest matches the pinned fixture") {
  // Genesis serializes to 88 zero bytes; SHA-256 of that is fixed forever.
  REQUIRE(to_hex(digest_block(make_genesis())) ==
          "10eef285deef7a4b7c82b22aa53589b7833df29de3814649c772bbd5c832f365");
}

TEST_CASE("flipping one transaction bit changes the digest") {
  Chain chain = make_chain();
  Block b = child_of(chain, {tx(1, 2, 3, 40, 5)});
  Digest256 before = digest_block(b);
  b.transactions[0].amount ^= 1;
  REQUIRE(digest_block(b) != before);
}

TEST_CASE("block serialization round-trips") {
  Chain chain = make_chain();
  Block b = child_of(chain, {tx(1, 2, 3, 40, 5), tx(2, 3, 2, 7, 6)});
  PovmRecord rec;
  rec.job_id = 9;
  rec.miner = 4;
  rec.result_digest = sha256(std::vector<std::uint8_t>{1, 2, 3});
  rec.checkpoint_root = sha256(std::vector<std::uint8_t>{4, 5});
  rec.verdict = Verdict::Accepted;
  rec.votes_for = 2;
  rec.votes_total = 3;
  rec.sla_ok = true;
  b.povm_records.push_back(rec);
  b.lottery_proof = {0xde, 0xad, 0xbe, 0xef};
  b.nonce = 424242;

  REQUIRE(deserialize_block(serialize_block(b)) == b);
}

TEST_CASE("truncated block bytes are rejected") {
  auto bytes = serialize_block(make_genesis());
  bytes.pop_back();
  REQUIRE_THROWS_AS(deserialize_block(bytes), std::runtime_error);
  bytes.push_back(0);
  bytes.push_back(0);
  REQUIRE_THROWS_AS(deserialize_block(bytes), std::runtime_error);  // trailing byte
}

TEST_CASE("append_block accepts a valid child") {
  Chain chain = make_chain();
  REQUIRE(!append_block(chain, child_of(chain)));
  REQUIRE(chain.size() == 2);
}

TEST_CASE("append_block rejects a wrong parent") {
  Chain chain = make_chain();
  REQUIRE(!append_block(chain, child_of(chain)));
  Block b = child_of(chain);
  b.prev_digest = kZeroDigest;  // genesis sentinel onto non-genesis tip
  REQUIRE(append_block(chain, b) == AppendError::WrongParent);
}

TEST_CASE("append_block rejects a wrong height") {
  Chain chain = make_chain();
  Block b = child_of(chain);
  b.height = 5;
  REQUIRE(append_block(chain, b) == AppendError::WrongHeight);
}

TEST_CASE("append_block rejects duplicate transaction ids") {
  Chain chain = make_chain();
  REQUIRE(!append_block(chain, child_of(chain, {tx(1, 2, 3, 4, 5)})));
  SECTION("duplicate within the block") {
    REQUIRE(append_block(chain, child_of(chain, {tx(7, 0, 0, 0, 0), tx(7, 0, 0, 0, 0)})) ==
            AppendError::DuplicateTransaction);
  }
  SECTION("duplicate of an earlier block") {
    REQUIRE(append_block(chain, child_of(chain, {tx(1, 0, 0, 0, 0)})) ==
            AppendError::DuplicateTransaction);
  }
}

TEST_CASE("chains built via append_block validate") {
  Prng prng(7);
  Chain chain = random_chain(prng, 11);
  REQUIRE(validate_chain(chain).valid);
  REQUIRE(validate_chain(chain, chain.tip_digest()).valid);
}

TEST_CASE("genesis-only chain is valid") { REQUIRE(validate_chain(make_chain()).valid); }

TEST_CASE("post-append payload mutation is flagged at the broken link") {
  Prng prng(11);
  Chain chain = random_chain(prng, 6);
  chain.blocks[3].transactions[0].amount += 1;
  ValidationReport rep = validate_chain(chain);
  REQUIRE(!rep.valid);
  REQUIRE(rep.first_invalid == 4);  // block 3's digest no longer matches block 4's link
}

TEST_CASE("tip mutation is caught via the expected tip digest") {
  Prng prng(12);
  Chain chain = random_chain(prng, 4);
  Digest256 tip = chain.tip_digest();
  chain.blocks.back().producer ^= 1;
  REQUIRE(validate_chain(chain).valid);  // no successor link to break
  ValidationReport rep = validate_chain(chain, tip);
  REQUIRE(!rep.valid);
  REQUIRE(rep.first_invalid == 3);
}

TEST_CASE("quorum-violating PovmRecord invalidates the chain") {
  Chain chain = make_chain();
  Block b = child_of(chain);
  PovmRecord rec;
  rec.votes_for = 1;
  rec.votes_total = 3;
  rec.sla_ok = true;
  rec.verdict = Verdict::Accepted;  // 1 < (3+1)/2
  REQUIRE(!rec.consistent());
  b.povm_records.push_back(rec);
  REQUIRE(!append_block(chain, b));
  ValidationReport rep = validate_chain(chain);
  REQUIRE(!rep.valid);
  REQUIRE(rep.first_invalid == 1);
}

TEST_CASE("PovmRecord quorum invariant") {
  PovmRecord rec;
  rec.votes_total = 3;
  rec.sla_ok = true;
  rec.votes_for = 2;
  rec.verdict = Verdict::Accepted;
  REQUIRE(rec.consistent());
  rec.sla_ok = false;
  REQUIRE(!rec.consistent());
  rec.sla_ok = true;
  rec.votes_total = 4;  // even totals never consistent
  REQUIRE(!rec.consistent());
}

TEST_CASE("resolve_fork picks the extended head") {
  Chain chain = make_chain();
  Block a = child_of(chain);
  a.producer = 1;
  Block b = child_of(chain);
  b.producer = 2;
  ForkSet forks{{a, b}};

  Block ext;
  ext.height = 2;
  ext.prev_digest = digest_block(b);
  auto res = resolve_fork(forks, ext);
  REQUIRE(res);
  REQUIRE(res->winner_index == 1);
  REQUIRE(res->winner_producer == 2);
  REQUIRE(res->abandoned.size() == 1);
  REQUIRE(res->abandoned[0] == a);
}

TEST_CASE("resolve_fork degenerate single head") {
  Chain chain = make_chain();
  Block a = child_of(chain);
  ForkSet forks{{a}};
  Block ext;
  ext.prev_digest = digest_block(a);
  auto res = resolve_fork(forks, ext);
  REQUIRE(res);
  REQUIRE(res->winner_index == 0);
  REQUIRE(res->abandoned.empty());
}

TEST_CASE("resolve_fork rejects an orphan extension") {
  Chain chain = make_chain();
  ForkSet forks{{child_of(chain)}};
  Block ext;
  ext.prev_digest = sha256(std::vector<std::uint8_t>{9});
  REQUIRE(!resolve_fork(forks, ext));
}

TEST_CASE("chain dump/load round-trips") {
  Prng prng(3);
  Chain chain = random_chain(prng, 8);
  auto bytes = dump_chain(chain);
  LoadedChain loaded = load_chain(bytes);
  REQUIRE(loaded.chain.blocks == chain.blocks);
  REQUIRE(loaded.recorded_tip == chain.tip_digest());
}

TEST_CASE("load_chain rejects bad input") {
  Prng prng(4);
  auto bytes = dump_chain(random_chain(prng, 3));
  SECTION("bad magic") {
    bytes[0] ^= 1;
    REQUIRE_THROWS_AS(load_chain(bytes), std::runtime_error);
  }
  SECTION("truncated") {
    bytes.resize(bytes.size() - 5);
    REQUIRE_THROWS_AS(load_chain(bytes), std::runtime_error);
  }
  SECTION("empty") {
    REQUIRE_THROWS_AS(load_chain(std::span<const std::uint8_t>{}), std::runtime_error);
  }
}

TEST_CASE("mempool orders by (timestamp, id) and drops duplicates") {
  Mempool pool;
  REQUIRE(pool.add(tx(5, 0, 0, 0, 20)));
  REQUIRE(pool.add(tx(9, 0, 0, 0, 10)));
  REQUIRE(pool.add(tx(2, 0, 0, 0, 10)));
  REQUIRE(!pool.add(tx(5, 0, 0, 0, 1)));  // duplicate id
  auto txs = pool.drain();
  REQUIRE(txs.size() == 3);
  REQUIRE(txs[0].id == 2);
  REQUIRE(txs[1].id == 9);
  REQUIRE(txs[2].id == 5);
  REQUIRE(pool.pending.empty());
}

TEST_CASE("hex encoding round-trips") {
  Digest256 d = sha256(std::vector<std::uint8_t>{1, 2, 3});
  REQUIRE(from_hex(to_hex(d)) == d);
  REQUIRE(!from_hex("zz"));
  REQUIRE(!from_hex(std::string(64, 'g')));
}
