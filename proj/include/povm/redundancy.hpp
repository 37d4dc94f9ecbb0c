#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "povm/chain.hpp"
#include "povm/digest.hpp"
#include "povm/prng.hpp"
#include "povm/vm.hpp"

namespace povm {

// k-vote traditional redundancy: clone one job onto k distinct miners,
// accept the output holding at least (k+1)/2 votes.

struct CloneAssignment {
  std::uint64_t job_id = 0;
  std::vector<NodeId> miners;  // k distinct, never the job's customer
  std::uint64_t k = 1;
};

enum class AssignError { InsufficientMiners };

// Deterministic partial Fisher-Yates over the sorted candidate set, driven
// by the scenario PRNG.
inline std::optional<CloneAssignment> assign_clones(const Job& job,
                                                    const std::set<NodeId>& available_miners,
                                                    std::uint64_t k, Prng& prng) {
  if (k == 0 || k % 2 == 0) throw std::invalid_argument("k must be odd");
  std::vector<NodeId> pool(available_miners.begin(), available_miners.end());
  std::erase(pool, job.customer);
  if (pool.size() < k) return std::nullopt;
  for (std::uint64_t i = 0; i < k; ++i) {
    std::uint64_t j = prng.uniform(i, pool.size() - 1);
    std::swap(pool[i], pool[j]);
  }
  CloneAssignment a;
  a.job_id = job.id;
  a.k = k;
  a.miners.assign(pool.begin(), pool.begin() + k);
  return a;
}

struct MajorityVerdict {
  std::optional<Word> accepted_output;  // nullopt when no output reaches quorum
  std::uint64_t votes_for = 0;
  std::uint64_t votes_total = 0;
  std::set<NodeId> dissenting_miners;
};

inline MajorityVerdict majority_vote(std::span<const std::pair<NodeId, Word>> results) {
  if (results.empty()) throw std::invalid_argument("empty result set");
  if (results.size() % 2 == 0) throw std::invalid_argument("k must be odd");
  std::map<Word, std::uint64_t> tally;
  for (const auto& [miner, out] : results) ++tally[out];

  MajorityVerdict v;
  v.votes_total = results.size();
  std::uint64_t quorum = (v.votes_total + 1) / 2;
  for (const auto& [out, n] : tally) {
    if (n >= quorum) {
      v.accepted_output = out;
      v.votes_for = n;
      break;
    }
  }
  if (v.accepted_output) {
    for (const auto& [miner, out] : results)
      if (out != *v.accepted_output) v.dissenting_miners.insert(miner);
  }
  return v;
}

// Earliest index at which any pair of checkpoint sequences differs; ragged
// lengths diverge at the shorter length. nullopt when all identical.
inline std::optional<std::size_t> compare_checkpoints(
    std::span<const std::vector<Digest256>> traces) {
  if (traces.size() < 2) throw std::invalid_argument("need at least two traces");
  std::size_t min_len = traces[0].size();
  std::size_t max_len = traces[0].size();
  for (const auto& t : traces) {
    min_len = std::min(min_len, t.size());
    max_len = std::max(max_len, t.size());
  }
  for (std::size_t i = 0; i < min_len; ++i)
    for (std::size_t j = 1; j < traces.size(); ++j)
      if (traces[j][i] != traces[0][i]) return i;
  if (min_len != max_len) return min_len;
  return std::nullopt;
}

struct Reputation {
  double score = 1.0;  // always in [0,1]
};

enum class RepOutcome { Agreed, Dissented, SlaViolated };

// Agreed nudges up slowly, any misbehavior halves the score: a single
// dissent outweighs several agreements.
inline constexpr double kRepAlpha = 0.1;
inline constexpr double kRepBeta = 0.5;

inline Reputation update_reputation(Reputation r, RepOutcome outcome) {
  if (outcome == RepOutcome::Agreed)
    r.score = r.score + kRepAlpha * (1.0 - r.score);
  else
    r.score = r.score * (1.0 - kRepBeta);
  return r;
}

// Cost comparison tau = (k*T + c) - p*w between redundant VM execution of
// one job and network-wide hashcash work.
struct CostModel {
  std::uint64_t k = 1;             // clones per job
  std::uint64_t clone_cost = 0;    // T, cost units per clone execution
  std::uint64_t coordination = 0;  // c, dispatch overhead in cost units
  std::uint64_t pow_cost = 0;      // p, cost units of PoW per miner
  std::uint64_t miners = 0;        // w, PoW miner count
};

inline std::int64_t tau(const CostModel& m) {
  return static_cast<std::int64_t>(m.k * m.clone_cost + m.coordination) -
         static_cast<std::int64_t>(m.pow_cost * m.miners);
}

}  // namespace povm
