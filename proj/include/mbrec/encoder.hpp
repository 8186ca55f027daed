#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "mbrec/graph.hpp"
#include "mbrec/model.hpp"
#include "mbrec/ndcore/ops.hpp"
#include "mbrec/sampler.hpp"

namespace mbrec {

// ModelParams bound to variables on one tape.
struct BoundParams {
  const ModelParams* params = nullptr;
  std::vector<Var> vars;

  Var operator[](std::size_t i) const { return vars.at(i); }
  const ModelConfig& config() const { return params->config(); }
  Tape& tape() const { return *vars.front().tape; }
};

inline BoundParams bind(Tape& tape, const ModelParams& params) { return BoundParams{&params, params.bind(tape)}; }

/// Behavior-specific message for every target node of one side. `pattern`
/// rows are target nodes and its columns index `sources`. With s the summed
/// neighbor embedding, the message is sum_m relu(K s + b)_m * U_m s; nodes
/// without neighbors get the zero vector.
inline Var behavior_message(const BoundParams& bp, const SideParams& side, std::size_t k,
                            const std::shared_ptr<const SparsePattern>& pattern, Var sources) {
  const std::size_t d = bp.config().dim, M = bp.config().channels;
  Var s = spmm(pattern, sources, bp.config().mean_pool);
  Var gates = relu(add_row(matmul(s, transpose(bp[side.channel_gate[k]])), bp[side.channel_bias[k]]));
  Var projected = matmul(s, transpose(bp[side.channel_transform[k]]));  // [n x M*d]
  Var out = scale_rows(slice_cols(projected, 0, d), slice_cols(gates, 0, 1));
  for (std::size_t m = 1; m < M; ++m) {
    out = out + scale_rows(slice_cols(projected, m * d, (m + 1) * d), slice_cols(gates, m, m + 1));
  }
  return out;
}

struct InterdependencyResult {
  std::vector<Var> refined;                 // per behavior, [n x d]
  std::vector<std::vector<Var>> attention;  // [head][behavior] -> [n x K] softmax weights
};

/// Multi-head scaled dot-product attention across the K behavior messages of
/// each node, followed by the residual connection.
inline InterdependencyResult behavior_interdependency(const BoundParams& bp, const SideParams& side,
                                                      std::span<const Var> messages) {
  const std::size_t K = messages.size(), C = bp.config().heads, dh = bp.config().head_dim();
  const real inv_scale = real(1) / std::sqrt(static_cast<real>(dh));
  Var qt = transpose(bp[side.query]);
  Var kt = transpose(bp[side.key]);
  Var vt = transpose(bp[side.value]);
  // [head][behavior] -> [n x dh]
  std::vector<std::vector<Var>> q(C), key(C), val(C);
  for (std::size_t b = 0; b < K; ++b) {
    Var qb = matmul(messages[b], qt), kb = matmul(messages[b], kt), vb = matmul(messages[b], vt);
    for (std::size_t c = 0; c < C; ++c) {
      q[c].push_back(slice_cols(qb, c * dh, (c + 1) * dh));
      key[c].push_back(slice_cols(kb, c * dh, (c + 1) * dh));
      val[c].push_back(slice_cols(vb, c * dh, (c + 1) * dh));
    }
  }
  InterdependencyResult result;
  result.attention.assign(C, {});
  for (std::size_t b = 0; b < K; ++b) {
    std::vector<Var> heads;
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<Var> logits;
      for (std::size_t b2 = 0; b2 < K; ++b2) logits.push_back(row_sum(q[c][b] * key[c][b2]));
      Var alpha = softmax(scale(concat_cols(logits), inv_scale));
      result.attention[c].push_back(alpha);
      Var head = scale_rows(val[c][0], slice_cols(alpha, 0, 1));
      for (std::size_t b2 = 1; b2 < K; ++b2) head = head + scale_rows(val[c][b2], slice_cols(alpha, b2, b2 + 1));
      heads.push_back(head);
    }
    Var recalibrated = C == 1 ? heads.front() : concat_cols(heads);
    result.refined.push_back(recalibrated + messages[b]);
  }
  return result;
}

struct AggregationResult {
  Var embedding;  // [n x d]
  Var weights;    // [n x K]
};

/// Personalized weighting of the refined behavior messages by a two-layer
/// scoring network followed by a softmax over behaviors.
inline AggregationResult aggregate_behaviors(const BoundParams& bp, const SideParams& side,
                                             std::span<const Var> refined) {
  Var w1t = transpose(bp[side.agg_weight]);
  std::vector<Var> scores;
  for (Var h : refined) {
    Var hidden = relu(add_row(matmul(h, w1t), bp[side.agg_bias]));
    scores.push_back(add_row(matmul(hidden, bp[side.agg_out]), bp[side.agg_out_bias]));
  }
  AggregationResult result;
  result.weights = softmax(concat_cols(scores));
  result.embedding = scale_rows(refined[0], slice_cols(result.weights, 0, 1));
  for (std::size_t k = 1; k < refined.size(); ++k) {
    result.embedding = result.embedding + scale_rows(refined[k], slice_cols(result.weights, k, k + 1));
  }
  return result;
}

// Attention internals of one side of one layer, kept for interpretation.
struct SideTrace {
  std::vector<std::vector<Var>> attention;  // [head][behavior] -> [n x K]
  Var aggregation;                          // [n x K]
};

struct LayerTrace {
  SideTrace user;
  SideTrace item;
};

struct NodeStates {
  std::vector<Var> users;  // layer 0..L, each [|users| x d]
  std::vector<Var> items;
  std::vector<LayerTrace> trace;  // layer 1..L stored at index 0..L-1
};

namespace detail {
inline std::pair<Var, SideTrace> propagate_side(const BoundParams& bp, const SideParams& side,
                                                const InteractionTensor& t, Side target, Var sources) {
  std::vector<Var> messages;
  for (std::size_t k = 0; k < t.num_behaviors(); ++k) {
    messages.push_back(behavior_message(bp, side, k, t.pattern(target, k), sources));
  }
  auto inter = behavior_interdependency(bp, side, messages);
  auto agg = aggregate_behaviors(bp, side, inter.refined);
  return {agg.embedding, SideTrace{std::move(inter.attention), agg.weights}};
}
}  // namespace detail

/// One propagation layer: users are updated from item states and items from
/// user states, both from the layer-l snapshot.
inline std::pair<Var, Var> propagate_layer(const BoundParams& bp, const InteractionTensor& t, std::size_t layer,
                                           Var users, Var items, LayerTrace* trace = nullptr) {
  if (t.num_behaviors() != bp.config().behaviors) {
    throw ContractError("tensor has " + std::to_string(t.num_behaviors()) + " behaviors, model expects " +
                        std::to_string(bp.config().behaviors));
  }
  const LayerParams& lp = bp.params->layer(layer);
  auto [next_users, user_trace] = detail::propagate_side(bp, lp.user, t, Side::user, items);
  auto [next_items, item_trace] = detail::propagate_side(bp, lp.item, t, Side::item, users);
  if (trace) *trace = LayerTrace{std::move(user_trace), std::move(item_trace)};
  return {next_users, next_items};
}

/// Stacks all configured layers, keeping every intermediate state.
inline NodeStates encode(const BoundParams& bp, const InteractionTensor& t, Var user_base, Var item_base) {
  NodeStates states;
  states.users.push_back(user_base);
  states.items.push_back(item_base);
  for (std::size_t l = 0; l < bp.config().layers; ++l) {
    LayerTrace trace;
    auto [u, v] = propagate_layer(bp, t, l, states.users.back(), states.items.back(), &trace);
    states.users.push_back(u);
    states.items.push_back(v);
    states.trace.push_back(std::move(trace));
  }
  return states;
}

// Gathers the sub-graph's base embeddings and encodes it.
inline NodeStates encode_subgraph(const BoundParams& bp, const SubGraph& sub) {
  Var users = gather_rows(bp[bp.params->user_embedding()], sub.users);
  Var items = gather_rows(bp[bp.params->item_embedding()], sub.items);
  return encode(bp, sub.tensor, users, items);
}

}  // namespace mbrec
