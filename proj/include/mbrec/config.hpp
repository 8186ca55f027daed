#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mbrec/evaluator.hpp"
#include "mbrec/graph.hpp"
#include "mbrec/model.hpp"
#include "mbrec/trainer.hpp"

namespace mbrec {

// Every tunable of a run. Each key has a matching command-line flag with
// underscores written as hyphens.
struct RunConfig {
  // model
  std::size_t dim = 16;
  std::size_t channels = 8;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t agg_hidden = 0;  // 0: same as dim
  bool share_sides = false;
  bool mean_pool = false;
  // training
  std::size_t epochs = 200;
  std::size_t samples_per_user = 1;
  double weight_decay = 0.01;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  std::size_t sample_depth = 2;
  std::size_t sample_per_step = 5000;
  std::size_t seed_count = 1000;
  std::string init = "random";
  // data
  std::string behaviors = "view,cart,buy";
  std::string target_behavior = "buy";
  // evaluation
  std::string topn = "10";
  std::size_t negatives = 99;
  std::size_t eval_node_cap = 60000;
  std::size_t threads = 0;  // 0: all available cores

  BehaviorVocab vocab() const;
  ModelConfig model(std::size_t users, std::size_t items) const;
  TrainConfig training() const;
  EvalConfig evaluation() const;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + text + "' for " + key);
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

template <typename T>
std::string format_value(const T& v) {
  std::ostringstream out;
  out.precision(17);
  if constexpr (std::is_same_v<T, bool>) {
    out << (v ? "true" : "false");
  } else {
    out << v;
  }
  return out.str();
}

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
ConfigKey make_key(std::string name, T RunConfig::*member) {
  ConfigKey key;
  key.name = name;
  key.set = [member, name](RunConfig& c, const std::string& text) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*member = text;
    } else if constexpr (std::is_same_v<T, bool>) {
      c.*member = parse_bool(name, text);
    } else {
      c.*member = parse_number<T>(name, text);
    }
  };
  key.get = [member](const RunConfig& c) { return format_value(c.*member); };
  return key;
}

}  // namespace detail

inline const std::vector<detail::ConfigKey>& config_keys() {
  using detail::make_key;
  static const std::vector<detail::ConfigKey> keys = {
      make_key("dim", &RunConfig::dim),
      make_key("channels", &RunConfig::channels),
      make_key("heads", &RunConfig::heads),
      make_key("layers", &RunConfig::layers),
      make_key("agg_hidden", &RunConfig::agg_hidden),
      make_key("share_sides", &RunConfig::share_sides),
      make_key("mean_pool", &RunConfig::mean_pool),
      make_key("epochs", &RunConfig::epochs),
      make_key("samples_per_user", &RunConfig::samples_per_user),
      make_key("weight_decay", &RunConfig::weight_decay),
      make_key("learning_rate", &RunConfig::learning_rate),
      make_key("batch_size", &RunConfig::batch_size),
      make_key("seed", &RunConfig::seed),
      make_key("sample_depth", &RunConfig::sample_depth),
      make_key("sample_per_step", &RunConfig::sample_per_step),
      make_key("seed_count", &RunConfig::seed_count),
      make_key("init", &RunConfig::init),
      make_key("behaviors", &RunConfig::behaviors),
      make_key("target_behavior", &RunConfig::target_behavior),
      make_key("topn", &RunConfig::topn),
      make_key("negatives", &RunConfig::negatives),
      make_key("eval_node_cap", &RunConfig::eval_node_cap),
      make_key("threads", &RunConfig::threads),
  };
  return keys;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) {
  for (const auto& k : config_keys())
    if (k.name == key) return k.get(c);
  throw ConfigError("unknown configuration key '" + key + "'");
}

// `key = value` lines; '#' starts a comment.
inline void read_config(std::istream& in, RunConfig& c) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    try {
      set_config_value(c, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
}

inline void read_config_file(const std::string& path, RunConfig& c) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  read_config(in, c);
}

inline void write_config(std::ostream& out, const RunConfig& c) {
  for (const auto& k : config_keys()) out << k.name << " = " << k.get(c) << '\n';
}

inline BehaviorVocab RunConfig::vocab() const { return BehaviorVocab::make(detail::split_list(behaviors), target_behavior); }

inline ModelConfig RunConfig::model(std::size_t users, std::size_t items) const {
  ModelConfig m;
  m.num_users = users;
  m.num_items = items;
  m.behaviors = detail::split_list(behaviors).size();
  m.dim = dim;
  m.channels = channels;
  m.heads = heads;
  m.layers = layers;
  m.agg_hidden = agg_hidden;
  m.share_sides = share_sides;
  m.mean_pool = mean_pool;
  m.validate();
  return m;
}

inline TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.epochs = epochs;
  t.samples_per_user = samples_per_user;
  t.weight_decay = static_cast<real>(weight_decay);
  t.learning_rate = static_cast<real>(learning_rate);
  t.batch_size = batch_size;
  t.seed = seed;
  t.sample_depth = sample_depth;
  t.sample_per_step = sample_per_step;
  t.seed_count = seed_count;
  if (init == "random") {
    t.init = InitMode::random;
  } else if (init == "autoencoder") {
    t.init = InitMode::autoencoder;
  } else {
    throw ConfigError("init must be 'random' or 'autoencoder', got '" + init + "'");
  }
  t.target_behavior = vocab().target_index;
  t.validate();
  return t;
}

inline EvalConfig RunConfig::evaluation() const {
  EvalConfig e;
  e.negatives = negatives;
  e.topn.clear();
  for (const auto& n : detail::split_list(topn)) {
    const auto v = detail::parse_number<std::size_t>("topn", n);
    if (v == 0) throw ConfigError("topn values must be positive");
    e.topn.push_back(v);
  }
  if (e.topn.empty()) throw ConfigError("topn must list at least one value");
  e.seed = seed;
  e.node_cap = eval_node_cap;
  e.sample_depth = sample_depth;
  e.sample_per_step = sample_per_step;
  return e;
}

}  // namespace mbrec
