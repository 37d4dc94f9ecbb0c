#include <catch2/catch_amalgamated.hpp>

#include "povm/lottery.hpp"
#include "povm/prng.hpp"

using namespace povm;

namespace {

Salt salt_of(Prng& prng) {
  Salt s{};
  std::uint64_t a = prng.next(), b = prng.next();
  for (int i = 0; i < 8; ++i) {
    s[i] = static_cast<std::uint8_t>(a >> (8 * i));
    s[8 + i] = static_cast<std::uint8_t>(b >> (8 * i));
  }
  return s;
}

PovmRecord accepted_record(NodeId miner, std::uint64_t job_id) {
  PovmRecord rec;
  rec.job_id = job_id;
  rec.miner = miner;
  rec.votes_for = 2;
  rec.votes_total = 3;
  rec.sla_ok = true;
  rec.verdict = Verdict::Accepted;
  return rec;
}

}  // namespace

TEST_CASE("commitments are deterministic and salt-sensitive") {
  Salt s{};
  REQUIRE(commit(1, 5, s) == commit(1, 5, s));
  Salt s2 = s;
  s2[3] ^= 1;
  REQUIRE(commit_digest_of(5, s) != commit_digest_of(5, s2));
}

TEST_CASE("commitment fixture: seed 1, zero salt") {
  Salt zeros{};
  REQUIRE(to_hex(commit_digest_of(1, zeros)) ==
          "32edb6022c0921d99aa347e9cda5dc2db413f5574eebaaa8592234308ffebd2b");
}

TEST_CASE("verify_reveal") {
  Prng prng(1);
  Salt s = salt_of(prng);
  Commitment c = commit(7, 99, s);
  REQUIRE(verify_reveal(c, 99, s));
  REQUIRE(!verify_reveal(c, 100, s));  // seed+1
  Commitment other = commit(8, 5, salt_of(prng));
  REQUIRE(!verify_reveal(other, 99, s));  // replayed commitment, own reveal
}

TEST_CASE("issue_tickets counts accepted records in the window") {
  std::vector<TimedRecord> records;
  for (std::uint64_t i = 0; i < 3; ++i) records.push_back({accepted_record(1, i), 5});
  TicketTable t = issue_tickets(records, 0, 10);
  REQUIRE(t.entries.at(1) == 3);
  REQUIRE(t.total() == 3);
}

TEST_CASE("issue_tickets ignores rejected records") {
  PovmRecord rec = accepted_record(2, 1);
  rec.verdict = Verdict::Rejected;
  rec.votes_for = 1;
  std::vector<TimedRecord> records{{rec, 5}};
  TicketTable t = issue_tickets(records, 0, 10);
  REQUIRE(t.entries.empty());
}

TEST_CASE("issue_tickets scales by reputation with floor") {
  std::vector<TimedRecord> records;
  for (std::uint64_t i = 0; i < 4; ++i) records.push_back({accepted_record(3, i), 5});
  TicketTable t = issue_tickets(records, 0, 10, {{3, 0.5}});
  REQUIRE(t.entries.at(3) == 2);  // floor(0.5 * 4)
  t = issue_tickets(records, 0, 10, {{3, 0.2}});
  REQUIRE(t.entries.empty());  // floor(0.8) = 0 -> absent
}

TEST_CASE("issue_tickets respects the half-open window") {
  std::vector<TimedRecord> records{{accepted_record(1, 1), 9},
                                   {accepted_record(1, 2), 10},
                                   {accepted_record(1, 3), 19},
                                   {accepted_record(1, 4), 20}};
  TicketTable t = issue_tickets(records, 10, 20);
  REQUIRE(t.entries.at(1) == 2);  // ticks 10 and 19 only
}

TEST_CASE("single-ticket miner always wins") {
  Prng prng(2);
  Salt s = salt_of(prng);
  std::vector<Commitment> commits{commit(4, 11, s)};
  std::vector<Reveal> reveals{{4, 11, s}};
  TicketTable t;
  t.entries[4] = 1;
  auto res = draw_winner(reveals, commits, t);
  REQUIRE(std::get<NodeId>(res) == 4);
}

TEST_CASE("draw is deterministic") {
  Prng prng(3);
  std::vector<Commitment> commits;
  std::vector<Reveal> reveals;
  for (NodeId m = 1; m <= 3; ++m) {
    Salt s = salt_of(prng);
    std::uint64_t seed = prng.next();
    commits.push_back(commit(m, seed, s));
    reveals.push_back({m, seed, s});
  }
  TicketTable t;
  t.entries = {{1, 3}, {2, 1}, {3, 2}};
  auto a = draw_winner(reveals, commits, t);
  auto b = draw_winner(reveals, commits, t);
  REQUIRE(std::get<NodeId>(a) == std::get<NodeId>(b));
  // Reveal order does not matter: combination sorts by miner id.
  std::swap(reveals[0], reveals[2]);
  REQUIRE(std::get<NodeId>(draw_winner(reveals, commits, t)) == std::get<NodeId>(a));
}

TEST_CASE("empty ticket table fails the draw") {
  auto res = draw_winner({}, {}, TicketTable{});
  REQUIRE(std::get<DrawFailure>(res).error == DrawError::EmptyTable);
}

TEST_CASE("bad reveal names the offender and redraw succeeds") {
  Prng prng(4);
  std::vector<Commitment> commits;
  std::vector<Reveal> reveals;
  for (NodeId m = 1; m <= 2; ++m) {
    Salt s = salt_of(prng);
    std::uint64_t seed = prng.next();
    commits.push_back(commit(m, seed, s));
    reveals.push_back({m, seed, s});
  }
  reveals[1].seed += 1;  // miner 2 lies
  TicketTable t;
  t.entries = {{1, 2}, {2, 5}};

  auto res = draw_winner(reveals, commits, t);
  REQUIRE(std::get<DrawFailure>(res).error == DrawError::BadReveal);
  REQUIRE(std::get<DrawFailure>(res).offender == 2);

  DrawOutcome out = run_draw(reveals, commits, t);
  REQUIRE(out.winner == 1);  // only miner 1's tickets remain
  REQUIRE(out.offenders == std::vector<NodeId>{2});
}

TEST_CASE("run_draw with every reveal bad yields no winner") {
  Prng prng(5);
  Salt s = salt_of(prng);
  std::vector<Commitment> commits{commit(1, 7, s)};
  std::vector<Reveal> reveals{{1, 8, s}};
  TicketTable t;
  t.entries = {{1, 4}};
  DrawOutcome out = run_draw(reveals, commits, t);
  REQUIRE(!out.winner);
  REQUIRE(out.offenders == std::vector<NodeId>{1});
}

TEST_CASE("winners always hold tickets") {
  Prng prng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Commitment> commits;
    std::vector<Reveal> reveals;
    for (NodeId m = 1; m <= 4; ++m) {
      Salt s = salt_of(prng);
      std::uint64_t seed = prng.next();
      commits.push_back(commit(m, seed, s));
      reveals.push_back({m, seed, s});
    }
    TicketTable t;
    t.entries = {{1, 5}, {3, 2}};  // miners 2 and 4 reveal but hold nothing
    auto res = draw_winner(reveals, commits, t);
    NodeId w = std::get<NodeId>(res);
    REQUIRE(t.entries.count(w) == 1);
    REQUIRE(t.entries.at(w) > 0);
  }
}

TEST_CASE("ticket ratio drives win frequency (light)") {
  // 2000 draws at 3:1; the acceptance suite runs the full 10k version.
  Prng prng(7);
  TicketTable t;
  t.entries = {{1, 3}, {2, 1}};
  int wins1 = 0;
  const int draws = 2000;
  for (int i = 0; i < draws; ++i) {
    std::vector<Commitment> commits;
    std::vector<Reveal> reveals;
    for (NodeId m = 1; m <= 2; ++m) {
      Salt s = salt_of(prng);
      std::uint64_t seed = prng.next();
      commits.push_back(commit(m, seed, s));
      reveals.push_back({m, seed, s});
    }
    if (std::get<NodeId>(draw_winner(reveals, commits, t)) == 1) ++wins1;
  }
  double freq = static_cast<double>(wins1) / draws;
  double sigma = std::sqrt(0.75 * 0.25 / draws);
  REQUIRE(std::abs(freq - 0.75) < 4 * sigma);
}

TEST_CASE("transcript serialization round-trips") {
  Prng prng(8);
  LotteryTranscript t;
  for (NodeId m = 1; m <= 3; ++m) {
    Salt s = salt_of(prng);
    std::uint64_t seed = prng.next();
    t.commitments.push_back(commit(m, seed, s));
    t.reveals.push_back({m, seed, s});
  }
  t.tickets.entries = {{1, 2}, {2, 2}, {3, 1}};
  t.tickets.window_start = 10;
  t.tickets.window_end = 20;
  t.winner = std::get<NodeId>(draw_winner(t.reveals, t.commitments, t.tickets));
  REQUIRE(deserialize_transcript(serialize_transcript(t)) == t);
  REQUIRE(!verify_transcript(t, t.winner));
}

TEST_CASE("verify_transcript rejects tampering") {
  Prng prng(9);
  LotteryTranscript t;
  for (NodeId m = 1; m <= 2; ++m) {
    Salt s = salt_of(prng);
    std::uint64_t seed = prng.next();
    t.commitments.push_back(commit(m, seed, s));
    t.reveals.push_back({m, seed, s});
  }
  t.tickets.entries = {{1, 3}, {2, 1}};
  t.winner = std::get<NodeId>(draw_winner(t.reveals, t.commitments, t.tickets));

  SECTION("wrong block producer") {
    REQUIRE(verify_transcript(t, t.winner == 1 ? 2 : 1));
  }
  SECTION("recorded winner swapped") {
    t.winner = t.winner == 1 ? 2 : 1;
    REQUIRE(verify_transcript(t, t.winner));
  }
  SECTION("zero-ticket winner") {
    t.tickets.entries[t.winner] = 0;
    auto err = verify_transcript(t, t.winner);
    REQUIRE(err);
  }
}

TEST_CASE("validate_chain_full checks embedded transcripts") {
  Prng prng(10);
  LotteryTranscript t;
  Salt s = salt_of(prng);
  std::uint64_t seed = prng.next();
  t.commitments.push_back(commit(5, seed, s));
  t.reveals.push_back({5, seed, s});
  t.tickets.entries = {{5, 1}};
  t.winner = 5;

  Chain chain = make_chain();
  Block b;
  b.height = 1;
  b.prev_digest = chain.tip_digest();
  b.producer = 5;
  b.lottery_proof = serialize_transcript(t);
  REQUIRE(!append_block(chain, b));
  REQUIRE(validate_chain_full(chain).valid);

  Chain bad = make_chain();
  Block c = b;
  c.producer = 6;  // not the lottery winner
  c.prev_digest = bad.tip_digest();
  REQUIRE(!append_block(bad, c));
  ValidationReport rep = validate_chain_full(bad);
  REQUIRE(!rep.valid);
  REQUIRE(rep.first_invalid == 1);
}
