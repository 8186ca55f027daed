#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mbrec/encoder.hpp"
#include "mbrec/fusion.hpp"
#include "mbrec/graph.hpp"
#include "mbrec/model.hpp"
#include "mbrec/ndcore/adam.hpp"
#include "mbrec/ndcore/ops.hpp"
#include "mbrec/ndcore/random.hpp"
#include "mbrec/sampler.hpp"

namespace mbrec {

enum class InitMode { random, autoencoder };

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t samples_per_user = 1;
  real weight_decay = 0.01;
  real learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  std::size_t sample_depth = 2;
  std::size_t sample_per_step = 5000;
  std::size_t seed_count = 1000;
  InitMode init = InitMode::random;
  std::size_t target_behavior = 0;

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (samples_per_user == 0) throw ConfigError("samples_per_user must be at least 1");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (sample_per_step == 0) throw ConfigError("sample_per_step must be at least 1");
    if (seed_count == 0) throw ConfigError("seed_count must be at least 1");
  }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Initial embeddings

struct BaseEmbeddings {
  Array users;  // [I x d]
  Array items;  // [J x d]
};

struct AutoencoderFit {
  Array embeddings;
  std::vector<real> loss_history;  // squared reconstruction error, one per epoch
};

inline constexpr std::size_t kAutoencoderEpochs = 50;
inline constexpr real kAutoencoderLearningRate = 0.01;

/// One-hidden-layer tied autoencoder over the K * (opposite side) binary
/// interaction rows of one side: h = relu(A x), x̂ = Aᵀ h, full-batch Adam on
/// the squared reconstruction error. The error is evaluated sparsely as
/// |hA|² - 2<hA, X> + nnz(X), so X never materializes densely.
inline AutoencoderFit fit_autoencoder(const InteractionTensor& t, Side side, std::size_t dim, Rng& rng,
                                      std::size_t epochs = kAutoencoderEpochs) {
  const std::size_t rows = side == Side::user ? t.num_users() : t.num_items();
  const std::size_t other = side == Side::user ? t.num_items() : t.num_users();
  const std::size_t width = t.num_behaviors() * other;
  auto pattern = std::make_shared<SparsePattern>();
  pattern->num_cols = width;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < t.num_behaviors(); ++k)
      for (index_t c : t.neighbors(side, r, k)) pattern->indices.push_back(static_cast<index_t>(k * other + c));
    pattern->offsets.push_back(pattern->indices.size());
  }
  const real bound = std::sqrt(real(6) / static_cast<real>(width + dim));
  Array weight(Shape{width, dim});  // Aᵀ
  for (real& x : weight.data()) x = static_cast<real>(rng.uniform(-bound, bound));
  AdamState state(weight.shape(), AdamOptions{kAutoencoderLearningRate});
  const real nnz = static_cast<real>(pattern->nnz());

  AutoencoderFit fit;
  auto run = [&](bool update) {
    Tape tape;
    Var w = tape.variable(weight);
    Var projected = spmm(pattern, w);  // X Aᵀ
    Var hidden = relu(projected);
    Var gram = matmul(transpose(w), w);  // A Aᵀ
    Var loss = add_scalar(sum(hidden * matmul(hidden, gram)) - scale(sum(hidden * projected), 2), nnz);
    if (update) {
      fit.loss_history.push_back(tape.value(loss).item());
      tape.backward(loss);
      adam_step(state, weight, tape.grad(w));
      return Array();
    }
    return tape.value(hidden);
  };
  for (std::size_t e = 0; e < epochs; ++e) run(true);
  fit.embeddings = run(false);
  return fit;
}

/// Initial node embeddings: `random` draws uniform values in +-sqrt(6/d);
/// `autoencoder` fits one autoencoder per side.
inline BaseEmbeddings pretrain_embeddings(const InteractionTensor& t, std::size_t dim, InitMode mode,
                                          std::uint64_t seed) {
  Rng rng(seed);
  BaseEmbeddings out;
  if (mode == InitMode::random) {
    const real bound = std::sqrt(real(6) / static_cast<real>(dim));
    out.users = Array(Shape{t.num_users(), dim});
    out.items = Array(Shape{t.num_items(), dim});
    for (real& x : out.users.data()) x = static_cast<real>(rng.uniform(-bound, bound));
    for (real& x : out.items.data()) x = static_cast<real>(rng.uniform(-bound, bound));
    return out;
  }
  out.users = fit_autoencoder(t, Side::user, dim, rng).embeddings;
  out.items = fit_autoencoder(t, Side::item, dim, rng).embeddings;
  return out;
}

// ---------------------------------------------------------------------------
// Pair sampling and loss

struct PairSample {
  index_t positive = 0;
  index_t negative = 0;
};

/// S (positive, negative) item pairs for a local user of `sub`. Positives are
/// the user's target-behavior items (without replacement when there are at
/// least S, otherwise with replacement); negatives are uniform over the other
/// items of the sub-graph. Empty when either set is empty.
inline std::vector<PairSample> sample_pairs(const InteractionTensor& sub, std::size_t user, std::size_t target,
                                            std::size_t samples, Rng& rng) {
  const auto positives = sub.neighbors(Side::user, user, target);
  const std::size_t items = sub.num_items();
  if (positives.empty() || positives.size() >= items) return {};
  std::vector<index_t> chosen;
  if (positives.size() >= samples) {
    for (std::size_t i : rng.sample_without_replacement(positives.size(), samples)) chosen.push_back(positives[i]);
  } else {
    for (std::size_t s = 0; s < samples; ++s) chosen.push_back(positives[rng.below(positives.size())]);
  }
  std::vector<PairSample> out;
  for (index_t p : chosen) {
    index_t n;
    do {
      n = static_cast<index_t>(rng.below(items));
    } while (std::binary_search(positives.begin(), positives.end(), n));
    out.push_back({p, n});
  }
  return out;
}

inline std::vector<PairSample> sample_pairs(const InteractionTensor& sub, std::size_t user, std::size_t target,
                                            std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  return sample_pairs(sub, user, target, samples, rng);
}

// Σ max(1 - pos + neg, 0) over paired rows.
inline Var hinge_loss(Var positive_scores, Var negative_scores) {
  return sum(relu(add_scalar(negative_scores - positive_scores, 1)));
}

// λ Σ |Θ|_F² over the given arrays.
inline Var regularization(std::span<const Var> params, real weight_decay) {
  if (params.empty()) throw ContractError("regularization over no parameters");
  Var total = sum_squares(params[0]);
  for (std::size_t i = 1; i < params.size(); ++i) total = total + sum_squares(params[i]);
  return scale(total, weight_decay);
}

/// Pairwise hinge loss plus weighted squared Frobenius norm of every parameter.
/// Pass no scores for a regularization-only loss.
inline Var compute_loss(std::optional<Var> positive_scores, std::optional<Var> negative_scores,
                        std::span<const Var> params, real weight_decay) {
  Var reg = regularization(params, weight_decay);
  if (!positive_scores || !negative_scores) return reg;
  return hinge_loss(*positive_scores, *negative_scores) + reg;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t pairs = 0;
  std::size_t batches = 0;
  real hinge_sum = 0;
  real mean_hinge = 0;
  real loss = 0;  // summed batch objectives, hinge + regularization
  std::size_t subgraph_users = 0;
  std::size_t subgraph_items = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
};

namespace detail {

[[noreturn]] inline void report_non_finite(const ModelParams& params, const Tape& tape, const BoundParams& bp,
                                           std::size_t epoch, bool grads_available) {
  // A bad value is the cause; a bad gradient is usually its symptom.
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].all_finite()) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ": parameter '" +
                          params.name(i) + "' holds non-finite values");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads_available && !tape.grad(bp[i]).all_finite()) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ": gradient of '" +
                          params.name(i) + "' is non-finite");
    }
  }
  throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
}

}  // namespace detail

/// Sub-graph-sampled mini-batch training starting from `initial`. Per epoch:
/// draw seeds, sample one sub-graph, then for every batch of users re-encode
/// the sub-graph, score S pairs per user and take one Adam step on all
/// parameters.
inline TrainResult train_from(const InteractionTensor& t, ModelParams initial, const TrainConfig& cfg, Rng& rng,
                              const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  const ModelConfig& mc = initial.config();
  if (mc.num_users != t.num_users() || mc.num_items != t.num_items() || mc.behaviors != t.num_behaviors()) {
    throw ConfigError("model extents do not match the interaction tensor");
  }
  if (cfg.target_behavior >= t.num_behaviors()) throw ConfigError("target behavior index out of range");
  TrainResult result;
  result.params = std::move(initial);
  ModelParams& params = result.params;

  const AdamOptions adam{cfg.learning_rate};
  std::vector<AdamState> optim;
  for (std::size_t i = 0; i < params.size(); ++i) optim.emplace_back(params[i].shape(), adam);

  const NormalizedAdjacency adj = build_normalized_adjacency(t);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const SeedSet seeds = select_seeds(t, cfg.seed_count, rng);
    const SubGraph sub = sample_subgraph(t, adj, seeds, cfg.sample_depth, cfg.sample_per_step, rng);

    std::vector<index_t> users;
    for (std::size_t u = 0; u < sub.users.size(); ++u) {
      const std::size_t pos = sub.tensor.neighbors(Side::user, u, cfg.target_behavior).size();
      if (pos > 0 && pos < sub.items.size()) users.push_back(static_cast<index_t>(u));
    }
    rng.shuffle(std::span<index_t>(users));

    EpochStats stats;
    stats.epoch = epoch;
    stats.subgraph_users = sub.users.size();
    stats.subgraph_items = sub.items.size();
    for (std::size_t start = 0; start < users.size(); start += cfg.batch_size) {
      std::vector<PairIndex> pos_pairs, neg_pairs;
      for (std::size_t b = start; b < std::min(users.size(), start + cfg.batch_size); ++b) {
        for (const auto& s : sample_pairs(sub.tensor, users[b], cfg.target_behavior, cfg.samples_per_user, rng)) {
          pos_pairs.push_back({users[b], s.positive});
          neg_pairs.push_back({users[b], s.negative});
        }
      }
      if (pos_pairs.empty()) continue;

      Tape tape;
      const BoundParams bp = bind(tape, params);
      const NodeStates states = encode_subgraph(bp, sub);
      Var pos = score_pairs(bp, states, pos_pairs);
      Var neg = score_pairs(bp, states, neg_pairs);
      Var hinge = hinge_loss(pos, neg);
      Var loss = hinge + regularization(bp.vars, cfg.weight_decay);
      const real loss_value = tape.value(loss).item();
      if (!std::isfinite(loss_value)) {
        tape.backward(loss);
        detail::report_non_finite(params, tape, bp, epoch, true);
      }
      tape.backward(loss);
      for (std::size_t i = 0; i < params.size(); ++i) {
        adam_step(optim[i], params[i], tape.grad(bp[i]));
        if (!params[i].all_finite()) {
          throw TrainingError("parameter '" + params.name(i) + "' became non-finite at epoch " +
                              std::to_string(epoch));
        }
      }
      stats.pairs += pos_pairs.size();
      stats.batches += 1;
      stats.hinge_sum += tape.value(hinge).item();
      stats.loss += loss_value;
    }
    stats.mean_hinge = stats.pairs ? stats.hinge_sum / static_cast<real>(stats.pairs) : 0;
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

/// Trains a freshly initialized model; all randomness derives from cfg.seed.
inline TrainResult train(const InteractionTensor& t, ModelConfig model_config, const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  model_config.num_users = t.num_users();
  model_config.num_items = t.num_items();
  model_config.behaviors = t.num_behaviors();
  Rng rng(cfg.seed);
  ModelParams params = ModelParams::create(model_config, rng);
  if (cfg.init == InitMode::autoencoder) {
    BaseEmbeddings base = pretrain_embeddings(t, model_config.dim, InitMode::autoencoder, rng.fork());
    params[params.user_embedding()] = std::move(base.users);
    params[params.item_embedding()] = std::move(base.items);
  }
  return train_from(t, std::move(params), cfg, rng, on_epoch);
}

}  // namespace mbrec
