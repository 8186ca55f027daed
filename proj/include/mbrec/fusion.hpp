#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mbrec/encoder.hpp"
#include "mbrec/ndcore/ops.hpp"

namespace mbrec {

inline constexpr real kLayerNormEpsilon = 1e-12;

// Local (sub-graph) user and item index of one scored pair.
struct PairIndex {
  index_t user = 0;
  index_t item = 0;
};

/// Row-wise unit normalization of every layer's embeddings.
inline std::vector<Var> normalize_layers(std::span<const Var> layers, real epsilon = kLayerNormEpsilon) {
  std::vector<Var> out;
  out.reserve(layers.size());
  for (Var l : layers) out.push_back(l2_normalize(l, epsilon));
  return out;
}

namespace detail {

// Per layer, the [P x d] projection split into C head slices of width d/C.
inline std::vector<std::vector<Var>> head_projections(const BoundParams& bp, std::span<const Var> layers,
                                                      Var weight_t) {
  const std::size_t C = bp.config().heads, dh = bp.config().head_dim();
  std::vector<std::vector<Var>> out;
  for (Var l : layers) {
    Var proj = matmul(l, weight_t);
    std::vector<Var> heads;
    for (std::size_t c = 0; c < C; ++c) heads.push_back(C == 1 ? proj : slice_cols(proj, c * dh, (c + 1) * dh));
    out.push_back(std::move(heads));
  }
  return out;
}

inline std::vector<std::vector<Var>> importance_from(const std::vector<std::vector<Var>>& user_keys,
                                                     const std::vector<std::vector<Var>>& item_keys,
                                                     std::size_t head) {
  std::vector<std::vector<Var>> phi(user_keys.size());
  for (std::size_t l = 0; l < user_keys.size(); ++l)
    for (std::size_t l2 = 0; l2 < item_keys.size(); ++l2)
      phi[l].push_back(relu(row_sum(user_keys[l][head] * item_keys[l2][head])));
  return phi;
}

}  // namespace detail

/// phi[l][l'] = relu(<P^c u_l, P^c v_l'>) for head c, each [P x 1]. Inputs are
/// the normalized per-layer rows of the scored pairs.
inline std::vector<std::vector<Var>> mutual_importance(const BoundParams& bp, std::span<const Var> user_layers,
                                                       std::span<const Var> item_layers, std::size_t head) {
  if (head >= bp.config().heads) throw ContractError("head index out of range");
  Var pt = transpose(bp[bp.params->fusion().key]);
  return detail::importance_from(detail::head_projections(bp, user_layers, pt),
                                 detail::head_projections(bp, item_layers, pt), head);
}

/// Fused pair representation: per head, sum over layer pairs of
/// phi[l][l'] * (T^c u_l) ∘ (T^c v_l'); heads concatenated to width d.
/// When `importance` is given it receives phi as [head][l][l'].
inline Var fuse(const BoundParams& bp, std::span<const Var> user_layers, std::span<const Var> item_layers,
                std::vector<std::vector<std::vector<Var>>>* importance = nullptr) {
  const std::size_t C = bp.config().heads;
  const FusionParams& fp = bp.params->fusion();
  Var pt = transpose(bp[fp.key]);
  Var tt = transpose(bp[fp.value]);
  auto user_keys = detail::head_projections(bp, user_layers, pt);
  auto item_keys = detail::head_projections(bp, item_layers, pt);
  auto user_vals = detail::head_projections(bp, user_layers, tt);
  auto item_vals = detail::head_projections(bp, item_layers, tt);
  std::vector<Var> heads;
  for (std::size_t c = 0; c < C; ++c) {
    auto phi = detail::importance_from(user_keys, item_keys, c);
    Var acc{};
    bool first = true;
    for (std::size_t l = 0; l < user_layers.size(); ++l) {
      for (std::size_t l2 = 0; l2 < item_layers.size(); ++l2) {
        Var term = scale_rows(user_vals[l][c] * item_vals[l2][c], phi[l][l2]);
        acc = first ? term : acc + term;
        first = false;
      }
    }
    heads.push_back(acc);
    if (importance) importance->push_back(std::move(phi));
  }
  return C == 1 ? heads.front() : concat_cols(heads);
}

/// Score = w4 · (relu(W3 Γ + b3) + Γ), one per row of Γ; result [P x 1].
inline Var predict(const BoundParams& bp, Var gamma) {
  const FusionParams& fp = bp.params->fusion();
  Var hidden = relu(add_row(matmul(gamma, transpose(bp[fp.hidden_weight])), bp[fp.hidden_bias]));
  return matmul(hidden + gamma, bp[fp.output]);
}

/// Batched score of (user, item) pairs given encoded states; indices are local
/// to the encoded sub-graph.
inline Var score_pairs(const BoundParams& bp, const NodeStates& states, std::span<const PairIndex> pairs,
                       std::vector<std::vector<std::vector<Var>>>* importance = nullptr) {
  Tape& t = bp.tape();
  const std::size_t nu = t.value(states.users.front()).rows();
  const std::size_t ni = t.value(states.items.front()).rows();
  std::vector<index_t> users, items;
  users.reserve(pairs.size());
  items.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.user >= nu || p.item >= ni) {
      throw ContractError("pair (" + std::to_string(p.user) + ", " + std::to_string(p.item) +
                          ") lies outside the encoded sub-graph");
    }
    users.push_back(p.user);
    items.push_back(p.item);
  }
  std::vector<Var> user_layers, item_layers;
  for (Var l : states.users) user_layers.push_back(gather_rows(l, users));
  for (Var l : states.items) item_layers.push_back(gather_rows(l, items));
  user_layers = normalize_layers(user_layers);
  item_layers = normalize_layers(item_layers);
  return predict(bp, fuse(bp, user_layers, item_layers, importance));
}

}  // namespace mbrec
