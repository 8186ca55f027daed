#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mbrec/ndcore/array.hpp"
#include "mbrec/ndcore/checkpoint.hpp"
#include "mbrec/ndcore/random.hpp"
#include "mbrec/ndcore/tape.hpp"

namespace mbrec {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t behaviors = 1;
  std::size_t dim = 16;
  std::size_t channels = 8;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t agg_hidden = 0;  // 0: same as dim
  bool share_sides = false;
  bool mean_pool = false;

  std::size_t head_dim() const { return dim / heads; }
  std::size_t hidden_width() const { return agg_hidden == 0 ? dim : agg_hidden; }

  void validate() const {
    if (dim == 0) throw ConfigError("dim must be positive");
    if (heads == 0 || dim % heads != 0) {
      throw ConfigError("dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
    }
    if (channels == 0) throw ConfigError("channels must be positive");
    if (layers == 0) throw ConfigError("layers must be at least 1");
    if (behaviors == 0) throw ConfigError("at least one behavior type is required");
  }
};

// Indices into ModelParams::arrays for one direction of message passing
// ("user" side: users receive messages from items).
struct SideParams {
  std::vector<std::size_t> channel_transform;  // per behavior: [M*d x d], rows m*d.. hold U_m
  std::vector<std::size_t> channel_gate;       // per behavior: [M x d]
  std::vector<std::size_t> channel_bias;       // per behavior: [1 x M]
  std::size_t query = 0;                       // [d x d], head c owns rows c*d/C ..
  std::size_t key = 0;
  std::size_t value = 0;
  std::size_t agg_weight = 0;    // [d' x d]
  std::size_t agg_bias = 0;      // [1 x d']
  std::size_t agg_out = 0;       // [d' x 1]
  std::size_t agg_out_bias = 0;  // [1 x 1]
};

struct LayerParams {
  SideParams user;
  SideParams item;
};

struct FusionParams {
  std::size_t key = 0;            // [d x d], stacked P^c
  std::size_t value = 0;          // [d x d], stacked T^c
  std::size_t hidden_weight = 0;  // [d x d]
  std::size_t hidden_bias = 0;    // [1 x d]
  std::size_t output = 0;         // [d x 1]
};

/// Every learnable array of the model, addressed by name and by the typed
/// index layout above.
class ModelParams {
 public:
  ModelParams() = default;

  // Glorot-uniform weights, channel-gate biases 0.1, other biases 0, base
  // embeddings uniform in +-sqrt(6/d).
  static ModelParams create(const ModelConfig& config, Rng& rng) {
    config.validate();
    ModelParams p;
    p.config_ = config;
    const std::size_t d = config.dim, M = config.channels, K = config.behaviors, h = config.hidden_width();
    const real emb_bound = std::sqrt(real(6) / static_cast<real>(d));
    p.user_embedding_ = p.add("embedding.user", uniform(Shape{config.num_users, d}, emb_bound, rng));
    p.item_embedding_ = p.add("embedding.item", uniform(Shape{config.num_items, d}, emb_bound, rng));

    auto make_side = [&](const std::string& prefix) {
      SideParams s;
      for (std::size_t k = 0; k < K; ++k) {
        const std::string b = prefix + ".behavior" + std::to_string(k);
        s.channel_transform.push_back(p.add(b + ".channel_transform", glorot(M * d, d, d, d, rng)));
        s.channel_gate.push_back(p.add(b + ".channel_gate", glorot(M, d, M, d, rng)));
        s.channel_bias.push_back(p.add(b + ".channel_bias", Array(Shape{1, M}, real(0.1))));
      }
      s.query = p.add(prefix + ".attention_query", glorot(d, d, config.head_dim(), d, rng));
      s.key = p.add(prefix + ".attention_key", glorot(d, d, config.head_dim(), d, rng));
      s.value = p.add(prefix + ".attention_value", glorot(d, d, config.head_dim(), d, rng));
      s.agg_weight = p.add(prefix + ".aggregate_hidden_weight", glorot(h, d, h, d, rng));
      s.agg_bias = p.add(prefix + ".aggregate_hidden_bias", Array(Shape{1, h}, 0));
      s.agg_out = p.add(prefix + ".aggregate_output_weight", glorot(h, 1, h, 1, rng));
      s.agg_out_bias = p.add(prefix + ".aggregate_output_bias", Array(Shape{1, 1}, 0));
      return s;
    };
    for (std::size_t l = 0; l < config.layers; ++l) {
      const std::string prefix = "layer" + std::to_string(l);
      LayerParams lp;
      if (config.share_sides) {
        lp.user = make_side(prefix + ".shared");
        lp.item = lp.user;
      } else {
        lp.user = make_side(prefix + ".user");
        lp.item = make_side(prefix + ".item");
      }
      p.layers_.push_back(std::move(lp));
    }
    p.fusion_.key = p.add("fusion.key", glorot(d, d, config.head_dim(), d, rng));
    p.fusion_.value = p.add("fusion.value", glorot(d, d, config.head_dim(), d, rng));
    p.fusion_.hidden_weight = p.add("predict.hidden_weight", glorot(d, d, d, d, rng));
    p.fusion_.hidden_bias = p.add("predict.hidden_bias", Array(Shape{1, d}, 0));
    p.fusion_.output = p.add("predict.output_weight", glorot(d, 1, d, 1, rng));
    return p;
  }

  static ModelParams create(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    return create(config, rng);
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedArray>& arrays() const { return arrays_; }
  std::size_t size() const { return arrays_.size(); }

  Array& operator[](std::size_t i) { return arrays_.at(i).value; }
  const Array& operator[](std::size_t i) const { return arrays_.at(i).value; }
  const std::string& name(std::size_t i) const { return arrays_.at(i).name; }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < arrays_.size(); ++i)
      if (arrays_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t user_embedding() const { return user_embedding_; }
  std::size_t item_embedding() const { return item_embedding_; }
  const LayerParams& layer(std::size_t l) const { return layers_.at(l); }
  const FusionParams& fusion() const { return fusion_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.value.size();
    return n;
  }

  real squared_norm() const {
    real s = 0;
    for (const auto& a : arrays_) s += mbrec::squared_norm(a.value);
    return s;
  }

  // Replaces values from checkpoint records; names and shapes must match.
  void load(const std::vector<NamedArray>& records) {
    if (records.size() != arrays_.size()) {
      throw FormatError("checkpoint holds " + std::to_string(records.size()) + " arrays, model expects " +
                        std::to_string(arrays_.size()));
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].name != arrays_[i].name || records[i].value.shape() != arrays_[i].value.shape()) {
        throw FormatError("checkpoint record '" + records[i].name + "' " +
                          shape_string(records[i].value.shape()) + " does not match '" + arrays_[i].name +
                          "' " + shape_string(arrays_[i].value.shape()));
      }
      arrays_[i].value = records[i].value;
    }
  }

  // One tape variable per array, in array order.
  std::vector<Var> bind(Tape& tape) const {
    std::vector<Var> vars;
    vars.reserve(arrays_.size());
    for (const auto& a : arrays_) vars.push_back(tape.variable(a.value));
    return vars;
  }

 private:
  std::size_t add(std::string name, Array value) {
    arrays_.push_back({std::move(name), std::move(value)});
    return arrays_.size() - 1;
  }

  static Array uniform(Shape shape, real bound, Rng& rng) {
    Array a(std::move(shape));
    for (real& x : a.data()) x = static_cast<real>(rng.uniform(-bound, bound));
    return a;
  }

  static Array glorot(std::size_t rows, std::size_t cols, std::size_t fan_out, std::size_t fan_in, Rng& rng) {
    return uniform(Shape{rows, cols}, std::sqrt(real(6) / static_cast<real>(fan_in + fan_out)), rng);
  }

  ModelConfig config_;
  std::vector<NamedArray> arrays_;
  std::size_t user_embedding_ = 0;
  std::size_t item_embedding_ = 0;
  std::vector<LayerParams> layers_;
  FusionParams fusion_;
};

}  // namespace mbrec
