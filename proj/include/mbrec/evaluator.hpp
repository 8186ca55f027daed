#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mbrec/encoder.hpp"
#include "mbrec/fusion.hpp"
#include "mbrec/graph.hpp"
#include "mbrec/model.hpp"
#include "mbrec/ndcore/random.hpp"
#include "mbrec/sampler.hpp"

namespace mbrec {

// ---------------------------------------------------------------------------
// Ranking metrics

/// 1-based rank of candidate `positive` when candidates are ordered by
/// descending score, ties broken by ascending item index.
inline std::size_t rank_of_positive(std::span<const real> scores, std::span<const index_t> items,
                                    std::size_t positive) {
  if (scores.size() != items.size() || positive >= scores.size()) {
    throw ContractError("rank_of_positive: inconsistent candidate arrays");
  }
  std::size_t rank = 1;
  const real ps = scores[positive];
  const index_t pi = items[positive];
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (c == positive) continue;
    if (scores[c] > ps || (scores[c] == ps && items[c] < pi)) ++rank;
  }
  return rank;
}

inline real hit_ratio(std::size_t rank, std::size_t n) { return rank <= n ? real(1) : real(0); }

inline real ndcg(std::size_t rank, std::size_t n) {
  return rank <= n ? real(1) / std::log2(static_cast<real>(rank) + 1) : real(0);
}

struct EvalConfig {
  std::size_t negatives = 99;
  std::vector<std::size_t> topn{10};
  std::uint64_t seed = 7;
  std::size_t node_cap = 60000;  // full graph at or below this many nodes
  std::size_t sample_depth = 2;
  std::size_t sample_per_step = 5000;
  std::size_t batch_users = 64;
};

struct RankingResult {
  index_t user = 0;
  index_t positive = 0;
  std::vector<index_t> candidates;  // positive first, then sampled negatives
  std::vector<real> scores;
  std::size_t rank = 0;
  std::vector<real> hr;  // per configured N
  std::vector<real> ndcg;
};

struct MetricValue {
  std::size_t n = 0;
  real hr = 0;
  real ndcg = 0;
};

struct EvaluationReport {
  std::vector<std::size_t> topn;
  std::vector<RankingResult> users;
  std::vector<MetricValue> metrics;
  std::size_t short_candidate_users = 0;  // users with fewer eligible negatives than requested
  std::size_t subgraph_nodes = 0;
};

// ---------------------------------------------------------------------------

/// Sub-graph holding the requested nodes: the full graph when it fits under
/// the node cap, otherwise a weighted sample seeded with them.
inline SubGraph evaluation_subgraph(const InteractionTensor& t, std::vector<index_t> users,
                                    std::vector<index_t> items, const EvalConfig& cfg, Rng& rng) {
  if (t.num_users() + t.num_items() <= cfg.node_cap) return full_graph(t);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  const std::size_t seeded = users.size() + items.size();
  const std::size_t room = cfg.node_cap > seeded ? cfg.node_cap - seeded : 0;
  const std::size_t depth = room == 0 ? 0 : cfg.sample_depth;
  const std::size_t per_step =
      depth == 0 ? 1 : std::max<std::size_t>(1, std::min(cfg.sample_per_step, room / (2 * depth)));
  const NormalizedAdjacency adj = build_normalized_adjacency(t);
  return sample_subgraph(t, adj, SeedSet{std::move(users), std::move(items)}, depth, per_step, rng);
}

namespace detail {

// Up to `count` uniform items outside `excluded` (sorted), without replacement.
inline std::vector<index_t> sample_negatives(std::size_t num_items, const std::vector<index_t>& excluded,
                                             std::size_t count, Rng& rng) {
  const std::size_t eligible = num_items - excluded.size();
  auto is_excluded = [&](index_t j) { return std::binary_search(excluded.begin(), excluded.end(), j); };
  std::vector<index_t> out;
  if (eligible <= 2 * count) {
    std::vector<index_t> pool;
    for (std::size_t j = 0; j < num_items; ++j)
      if (!is_excluded(static_cast<index_t>(j))) pool.push_back(static_cast<index_t>(j));
    for (std::size_t i : rng.sample_without_replacement(pool.size(), count)) out.push_back(pool[i]);
    return out;
  }
  std::unordered_set<index_t> taken;
  while (out.size() < count) {
    const auto j = static_cast<index_t>(rng.below(num_items));
    if (is_excluded(j) || !taken.insert(j).second) continue;
    out.push_back(j);
  }
  return out;
}

}  // namespace detail

/// Leave-one-out top-N evaluation. Each test user's held-out item competes with
/// up to `negatives` items the user never adopted under the target behavior.
/// All candidates are scored with the full model on one shared sub-graph.
inline EvaluationReport evaluate(const ModelParams& params, const InteractionTensor& train,
                                 std::span<const TestPair> test, std::size_t target, const EvalConfig& cfg) {
  if (cfg.topn.empty()) throw ConfigError("at least one N is required");
  Rng rng(cfg.seed);
  EvaluationReport report;
  report.topn = cfg.topn;

  std::vector<index_t> users, items;
  for (const auto& tp : test) {
    if (tp.user >= train.num_users() || tp.item >= train.num_items()) throw ContractError("test pair out of range");
    const auto owned = train.neighbors(Side::user, tp.user, target);
    std::vector<index_t> excluded(owned.begin(), owned.end());
    excluded.insert(std::upper_bound(excluded.begin(), excluded.end(), tp.item), tp.item);
    excluded.erase(std::unique(excluded.begin(), excluded.end()), excluded.end());
    RankingResult r;
    r.user = tp.user;
    r.positive = tp.item;
    r.candidates.push_back(tp.item);
    for (index_t j : detail::sample_negatives(train.num_items(), excluded, cfg.negatives, rng))
      r.candidates.push_back(j);
    if (r.candidates.size() - 1 < cfg.negatives) ++report.short_candidate_users;
    users.push_back(tp.user);
    items.insert(items.end(), r.candidates.begin(), r.candidates.end());
    report.users.push_back(std::move(r));
  }

  const SubGraph sub = evaluation_subgraph(train, users, items, cfg, rng);
  report.subgraph_nodes = sub.num_nodes();
  Tape encode_tape;
  const BoundParams bp = bind(encode_tape, params);
  const NodeStates states = encode_subgraph(bp, sub);

  // Score user batches on fresh tapes holding copies of the encoded states.
  for (std::size_t start = 0; start < report.users.size(); start += cfg.batch_users) {
    const std::size_t end = std::min(report.users.size(), start + cfg.batch_users);
    std::vector<PairIndex> pairs;
    for (std::size_t r = start; r < end; ++r) {
      const auto lu = sub.local_user(report.users[r].user);
      for (index_t j : report.users[r].candidates) {
        const auto li = sub.local_item(j);
        if (!lu || !li) throw ContractError("evaluation sub-graph is missing a candidate node");
        pairs.push_back({*lu, *li});
      }
    }
    Tape tape;
    BoundParams sbp{&params, {}};
    for (std::size_t i = 0; i < params.size(); ++i) sbp.vars.push_back(tape.constant(params[i]));
    NodeStates copy;
    for (Var v : states.users) copy.users.push_back(tape.constant(encode_tape.value(v)));
    for (Var v : states.items) copy.items.push_back(tape.constant(encode_tape.value(v)));
    const Array& scores = tape.value(score_pairs(sbp, copy, pairs));
    std::size_t offset = 0;
    for (std::size_t r = start; r < end; ++r) {
      RankingResult& res = report.users[r];
      res.scores.assign(scores.data().begin() + static_cast<std::ptrdiff_t>(offset),
                        scores.data().begin() + static_cast<std::ptrdiff_t>(offset + res.candidates.size()));
      offset += res.candidates.size();
      res.rank = rank_of_positive(res.scores, res.candidates, 0);
      for (std::size_t n : cfg.topn) {
        res.hr.push_back(hit_ratio(res.rank, n));
        res.ndcg.push_back(ndcg(res.rank, n));
      }
    }
  }

  for (std::size_t q = 0; q < cfg.topn.size(); ++q) {
    MetricValue m;
    m.n = cfg.topn[q];
    for (const auto& r : report.users) {
      m.hr += r.hr[q];
      m.ndcg += r.ndcg[q];
    }
    if (!report.users.empty()) {
      m.hr /= static_cast<real>(report.users.size());
      m.ndcg /= static_cast<real>(report.users.size());
    }
    report.metrics.push_back(m);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Sparsity buckets

struct Bucket {
  std::size_t min_degree = 0;
  std::size_t max_degree = 0;
  std::vector<index_t> users;
  std::vector<MetricValue> metrics;
};

/// Splits evaluated users into equal-population groups (sizes differ by at most
/// one) ordered by total interaction count, ties by user index.
inline std::vector<Bucket> sparsity_buckets(const InteractionTensor& t, std::span<const RankingResult> results,
                                            std::span<const std::size_t> topn, std::size_t bucket_count = 5) {
  if (bucket_count == 0) throw ContractError("bucket count must be positive");
  std::vector<std::size_t> order(results.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const std::size_t da = t.user_degree(results[a].user), db = t.user_degree(results[b].user);
    return da != db ? da < db : results[a].user < results[b].user;
  });
  const std::size_t n = results.size();
  const std::size_t buckets = std::min(bucket_count, n);
  std::vector<Bucket> out;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t size = n / buckets + (b < n % buckets ? 1 : 0);
    Bucket bucket;
    bucket.metrics.resize(topn.size());
    for (std::size_t q = 0; q < topn.size(); ++q) bucket.metrics[q].n = topn[q];
    for (std::size_t i = pos; i < pos + size; ++i) {
      const RankingResult& r = results[order[i]];
      bucket.users.push_back(r.user);
      const std::size_t deg = t.user_degree(r.user);
      bucket.min_degree = i == pos ? deg : std::min(bucket.min_degree, deg);
      bucket.max_degree = std::max(bucket.max_degree, deg);
      for (std::size_t q = 0; q < topn.size(); ++q) {
        bucket.metrics[q].hr += hit_ratio(r.rank, topn[q]);
        bucket.metrics[q].ndcg += ndcg(r.rank, topn[q]);
      }
    }
    for (auto& m : bucket.metrics) {
      m.hr /= static_cast<real>(size);
      m.ndcg /= static_cast<real>(size);
    }
    pos += size;
    out.push_back(std::move(bucket));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention export

struct AttentionRecord {
  Array behavior_correlation;  // [K x K], layer-1 inter-behavior attention of the user, head-averaged
  Array behavior_importance;   // [1 x K], layer-1 aggregation weights of the user
  Array layer_importance;      // [(L+1) x (L+1)], cross-layer importance for (user, item), head-averaged
};

inline AttentionRecord export_attention(const ModelParams& params, const InteractionTensor& t, index_t user,
                                        index_t item, const EvalConfig& cfg = {}) {
  if (user >= t.num_users() || item >= t.num_items()) {
    throw ContractError("export_attention: user " + std::to_string(user) + " / item " + std::to_string(item) +
                        " out of range");
  }
  Rng rng(cfg.seed);
  const SubGraph sub = evaluation_subgraph(t, {user}, {item}, cfg, rng);
  const index_t lu = *sub.local_user(user);
  const index_t li = *sub.local_item(item);
  Tape tape;
  const BoundParams bp = bind(tape, params);
  const NodeStates states = encode_subgraph(bp, sub);
  const std::size_t K = params.config().behaviors, C = params.config().heads, L = params.config().layers;

  AttentionRecord rec;
  rec.behavior_correlation = Array::matrix(K, K);
  const SideTrace& first = states.trace.front().user;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < K; ++k) {
      const Array& alpha = tape.value(first.attention[c][k]);
      for (std::size_t k2 = 0; k2 < K; ++k2) rec.behavior_correlation(k, k2) += alpha(lu, k2) / static_cast<real>(C);
    }
  rec.behavior_importance = Array::matrix(1, K);
  const Array& beta = tape.value(first.aggregation);
  for (std::size_t k = 0; k < K; ++k) rec.behavior_importance(0, k) = beta(lu, k);

  std::vector<std::vector<std::vector<Var>>> phi;
  const PairIndex pair{lu, li};
  score_pairs(bp, states, std::span<const PairIndex>(&pair, 1), &phi);
  rec.layer_importance = Array::matrix(L + 1, L + 1);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t l = 0; l <= L; ++l)
      for (std::size_t l2 = 0; l2 <= L; ++l2)
        rec.layer_importance(l, l2) += tape.value(phi[c][l][l2]).item() / static_cast<real>(C);
  return rec;
}

// ---------------------------------------------------------------------------
// Text output

namespace detail {
inline void write_labeled_matrix(std::ostream& out, const std::string& title, const Array& m,
                                 const std::vector<std::string>& row_labels,
                                 const std::vector<std::string>& col_labels) {
  out << "# " << title << '\n';
  for (const auto& c : col_labels) out << '\t' << c;
  out << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << row_labels[r];
    for (std::size_t c = 0; c < m.cols(); ++c) out << '\t' << m(r, c);
    out << '\n';
  }
}
}  // namespace detail

inline void write_attention(std::ostream& out, const AttentionRecord& rec, const std::vector<std::string>& behaviors) {
  const auto old = out.precision(17);
  detail::write_labeled_matrix(out, "behavior_correlation", rec.behavior_correlation, behaviors, behaviors);
  detail::write_labeled_matrix(out, "behavior_importance", rec.behavior_importance, {"weight"}, behaviors);
  std::vector<std::string> layers;
  for (std::size_t l = 0; l < rec.layer_importance.rows(); ++l) layers.push_back("layer" + std::to_string(l));
  std::vector<std::string> user_layers, item_layers;
  for (const auto& l : layers) {
    user_layers.push_back("user_" + l);
    item_layers.push_back("item_" + l);
  }
  detail::write_labeled_matrix(out, "layer_importance", rec.layer_importance, user_layers, item_layers);
  out.precision(old);
}

// metric<TAB>N<TAB>value
inline void write_summary(std::ostream& out, const EvaluationReport& report) {
  const auto old = out.precision(17);
  for (const auto& m : report.metrics) {
    out << "HR\t" << m.n << '\t' << m.hr << '\n';
    out << "NDCG\t" << m.n << '\t' << m.ndcg << '\n';
  }
  out.precision(old);
}

inline void write_report(std::ostream& out, const EvaluationReport& report, std::span<const Bucket> buckets) {
  const auto old = out.precision(6);
  out << std::fixed;
  out << "section\tgroup\tusers";
  for (std::size_t n : report.topn) out << "\tHR@" << n << "\tNDCG@" << n;
  out << '\n';
  out << "overall\tall\t" << report.users.size();
  for (const auto& m : report.metrics) out << '\t' << m.hr << '\t' << m.ndcg;
  out << '\n';
  for (const auto& b : buckets) {
    out << "sparsity\t" << b.min_degree << '-' << b.max_degree << '\t' << b.users.size();
    for (const auto& m : b.metrics) out << '\t' << m.hr << '\t' << m.ndcg;
    out << '\n';
  }
  out << "note\tshort_candidate_users\t" << report.short_candidate_users << '\n';
  out.unsetf(std::ios::floatfield);
  out.precision(old);
}

}  // namespace mbrec
