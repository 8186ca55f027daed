#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mbrec/graph.hpp"
#include "mbrec/ndcore/random.hpp"

namespace mbrec {

/// Node subsets (original indices, sorted) and the tensor restricted to them,
/// re-indexed locally: local user r is users[r], local item c is items[c].
struct SubGraph {
  std::vector<index_t> users;
  std::vector<index_t> items;
  InteractionTensor tensor;

  std::optional<index_t> local_user(std::size_t original) const { return locate(users, original); }
  std::optional<index_t> local_item(std::size_t original) const { return locate(items, original); }

  std::size_t num_nodes() const { return users.size() + items.size(); }

 private:
  static std::optional<index_t> locate(const std::vector<index_t>& set, std::size_t original) {
    auto it = std::lower_bound(set.begin(), set.end(), static_cast<index_t>(original));
    if (it == set.end() || *it != original) return std::nullopt;
    return static_cast<index_t>(it - set.begin());
  }
};

// Restricts `t` to the given node sets (duplicates ignored).
inline SubGraph restrict_tensor(const InteractionTensor& t, std::vector<index_t> users,
                                std::vector<index_t> items) {
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  std::vector<std::int64_t> item_slot(t.num_items(), -1);
  for (std::size_t c = 0; c < items.size(); ++c) {
    if (items[c] >= t.num_items()) throw ContractError("sub-graph item index out of range");
    item_slot[items[c]] = static_cast<std::int64_t>(c);
  }
  std::vector<std::int64_t> user_slot(t.num_users(), -1);
  for (std::size_t r = 0; r < users.size(); ++r) {
    if (users[r] >= t.num_users()) throw ContractError("sub-graph user index out of range");
    user_slot[users[r]] = static_cast<std::int64_t>(r);
  }
  std::vector<Interaction> events;
  for (const auto& e : t.interactions()) {
    if (user_slot[e.user] < 0 || item_slot[e.item] < 0) continue;
    Interaction local = e;
    local.user = static_cast<index_t>(user_slot[e.user]);
    local.item = static_cast<index_t>(item_slot[e.item]);
    events.push_back(local);
  }
  SubGraph sub;
  sub.tensor = InteractionTensor::from_interactions(users.size(), items.size(), t.num_behaviors(),
                                                    std::move(events));
  sub.users = std::move(users);
  sub.items = std::move(items);
  return sub;
}

inline SubGraph full_graph(const InteractionTensor& t) {
  SubGraph sub;
  sub.users.resize(t.num_users());
  sub.items.resize(t.num_items());
  for (std::size_t i = 0; i < sub.users.size(); ++i) sub.users[i] = static_cast<index_t>(i);
  for (std::size_t j = 0; j < sub.items.size(); ++j) sub.items[j] = static_cast<index_t>(j);
  sub.tensor = t;
  return sub;
}

struct SeedSet {
  std::vector<index_t> users;
  std::vector<index_t> items;
};

/// `count` users and `count` items drawn uniformly without replacement
/// (clamped to the population sizes).
inline SeedSet select_seeds(const InteractionTensor& t, std::size_t count, Rng& rng) {
  if (count == 0) throw ContractError("seed count must be at least 1");
  SeedSet s;
  for (std::size_t u : rng.sample_without_replacement(t.num_users(), count))
    s.users.push_back(static_cast<index_t>(u));
  for (std::size_t v : rng.sample_without_replacement(t.num_items(), count))
    s.items.push_back(static_cast<index_t>(v));
  return s;
}

inline SeedSet select_seeds(const InteractionTensor& t, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  return select_seeds(t, count, rng);
}

/// P̄ = P^2 / |P|^2 over the nodes not yet sampled; sampled nodes get 0. All
/// zeros when no candidate has positive weight.
inline std::vector<real> square_normalize(std::span<const real> weights, std::span<const char> sampled) {
  std::vector<real> out(weights.size(), 0);
  real total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (sampled[i]) continue;
    out[i] = weights[i] * weights[i];
    total += out[i];
  }
  if (total > 0)
    for (real& p : out) p /= total;
  return out;
}

/// Draws up to `count` unsampled nodes, one at a time with probability
/// proportional to `probabilities` renormalized over what remains. Once no
/// remaining candidate has positive probability the draw continues uniformly
/// over the unsampled nodes. Marks the drawn nodes in `sampled`.
inline std::vector<index_t> draw_without_replacement(std::vector<real> probabilities,
                                                     std::vector<char>& sampled, std::size_t count,
                                                     Rng& rng) {
  std::vector<index_t> drawn;
  for (std::size_t n = 0; n < count; ++n) {
    real total = 0;
    std::size_t remaining = 0;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
      if (sampled[i]) continue;
      ++remaining;
      total += probabilities[i];
    }
    if (remaining == 0) break;
    std::size_t pick = probabilities.size();
    if (total > 0) {
      const real target = static_cast<real>(rng.uniform()) * total;
      real cum = 0;
      for (std::size_t i = 0; i < probabilities.size(); ++i) {
        if (sampled[i] || probabilities[i] <= 0) continue;
        cum += probabilities[i];
        pick = i;
        if (cum > target) break;
      }
    } else {
      std::size_t r = rng.below(remaining);
      for (std::size_t i = 0; i < probabilities.size(); ++i) {
        if (sampled[i]) continue;
        if (r-- == 0) {
          pick = i;
          break;
        }
      }
    }
    sampled[pick] = 1;
    probabilities[pick] = 0;
    drawn.push_back(static_cast<index_t>(pick));
  }
  return drawn;
}

/// Step-wise weighted sub-graph sampler. Sampling weights accumulate the
/// normalized adjacency of every sampled node onto the opposite side: a
/// sampled user's row raises its items' weights, a sampled item's column
/// raises its users' weights.
class SubgraphSampler {
 public:
  SubgraphSampler(const InteractionTensor& t, const NormalizedAdjacency& adj, const SeedSet& seeds)
      : tensor_(t),
        adj_(adj),
        user_weight_(t.num_users(), 0),
        item_weight_(t.num_items(), 0),
        user_sampled_(t.num_users(), 0),
        item_sampled_(t.num_items(), 0) {
    if (seeds.users.empty() && seeds.items.empty()) throw ContractError("sub-graph sampling needs seeds");
    std::vector<index_t> users, items;
    for (index_t u : seeds.users) {
      if (u >= t.num_users()) throw ContractError("seed user out of range");
      if (!user_sampled_[u]) users.push_back(u);
      user_sampled_[u] = 1;
    }
    for (index_t v : seeds.items) {
      if (v >= t.num_items()) throw ContractError("seed item out of range");
      if (!item_sampled_[v]) items.push_back(v);
      item_sampled_[v] = 1;
    }
    accumulate(users, items);
    users_ = std::move(users);
    items_ = std::move(items);
  }

  // One round: draw up to `per_step` new users and items, then fold their
  // adjacency into the weights.
  void step(std::size_t per_step, Rng& rng) {
    auto users = draw_without_replacement(square_normalize(user_weight_, user_sampled_), user_sampled_,
                                          per_step, rng);
    auto items = draw_without_replacement(square_normalize(item_weight_, item_sampled_), item_sampled_,
                                          per_step, rng);
    accumulate(users, items);
    users_.insert(users_.end(), users.begin(), users.end());
    items_.insert(items_.end(), items.begin(), items.end());
  }

  std::span<const real> weights(Side side) const { return side == Side::user ? user_weight_ : item_weight_; }
  std::span<const char> sampled(Side side) const { return side == Side::user ? user_sampled_ : item_sampled_; }

  // Sampled nodes in the order they were added.
  const std::vector<index_t>& users() const { return users_; }
  const std::vector<index_t>& items() const { return items_; }

  SubGraph finish() const { return restrict_tensor(tensor_, users_, items_); }

 private:
  void accumulate(std::span<const index_t> users, std::span<const index_t> items) {
    for (index_t u : users) {
      const auto idx = adj_.indices(Side::user, u);
      const auto val = adj_.values(Side::user, u);
      for (std::size_t e = 0; e < idx.size(); ++e) item_weight_[idx[e]] += val[e];
    }
    for (index_t v : items) {
      const auto idx = adj_.indices(Side::item, v);
      const auto val = adj_.values(Side::item, v);
      for (std::size_t e = 0; e < idx.size(); ++e) user_weight_[idx[e]] += val[e];
    }
  }

  const InteractionTensor& tensor_;
  const NormalizedAdjacency& adj_;
  std::vector<real> user_weight_;
  std::vector<real> item_weight_;
  std::vector<char> user_sampled_;
  std::vector<char> item_sampled_;
  std::vector<index_t> users_;
  std::vector<index_t> items_;
};

inline SubGraph sample_subgraph(const InteractionTensor& t, const NormalizedAdjacency& adj,
                                const SeedSet& seeds, std::size_t depth, std::size_t per_step, Rng& rng) {
  if (per_step == 0) throw ContractError("per-step sample count must be at least 1");
  SubgraphSampler sampler(t, adj, seeds);
  for (std::size_t d = 0; d < depth; ++d) sampler.step(per_step, rng);
  return sampler.finish();
}

inline SubGraph sample_subgraph(const InteractionTensor& t, const NormalizedAdjacency& adj,
                                const SeedSet& seeds, std::size_t depth, std::size_t per_step,
                                std::uint64_t seed) {
  Rng rng(seed);
  return sample_subgraph(t, adj, seeds, depth, per_step, rng);
}

}  // namespace mbrec
