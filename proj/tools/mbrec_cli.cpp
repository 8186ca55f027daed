// mbrec: ingest, train, evaluate, recommend, export-attention, selftest.

#include <openssl/evp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "mbrec/mbrec.hpp"
#include "mbrec/testing/gradcheck.hpp"
#include "mbrec/testing/reference_model.hpp"
#include "mbrec/testing/synthetic.hpp"

namespace {

using namespace mbrec;
using Clock = std::chrono::steady_clock;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

// key = value file written next to each checkpoint.
using Manifest = std::map<std::string, std::string>;

std::string manifest_path(const std::string& checkpoint) { return checkpoint + ".manifest"; }

Manifest read_manifest(const std::string& path) {
  Manifest m;
  std::ifstream in(path);
  if (!in) return m;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    m[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return m;
}

void write_manifest(const std::string& path, const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
}

struct Options {
  std::string data;
  std::string config;
  std::string checkpoint;
  std::string output;
  std::string report;
  std::string summary;
  std::string user;
  std::string item;
  long long topk = 10;
  std::map<std::string, std::string> overrides;  // config keys given as flags
};

void add_config_flags(CLI::App* app, Options& o) {
  for (const auto& key : config_keys()) {
    std::string flag = key.name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    app->add_option_function<std::string>(
        "--" + flag, [&o, name = key.name](const std::string& v) { o.overrides[name] = v; },
        "configuration key " + key.name);
  }
}

// defaults < manifest snapshot < --config file < flags
RunConfig resolve_config(const Options& o, const Manifest* manifest) {
  RunConfig c;
  if (manifest) {
    for (const auto& [k, v] : *manifest)
      if (k.rfind("config.", 0) == 0) set_config_value(c, k.substr(7), v);
  }
  if (!o.config.empty()) read_config_file(o.config, c);
  for (const auto& [k, v] : o.overrides) set_config_value(c, k, v);
  set_threads(c.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : c.threads);
  return c;
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError("missing required flag " + flag);
}

Dataset load_data(const Options& o, const RunConfig& c) {
  require(o.data, "--data");
  if (!std::filesystem::exists(o.data)) throw std::runtime_error("data file not found: " + o.data);
  const BehaviorVocab vocab = c.vocab();
  Dataset ds = load_dataset(o.data, vocab);
  if (!(ds.vocab == vocab)) {
    std::string names;
    for (const auto& n : ds.vocab.names) names += (names.empty() ? "" : ",") + n;
    throw std::runtime_error("vocabulary mismatch: graph file has behaviors " + names + " (target " +
                             ds.vocab.target() + "), configuration has " + c.behaviors + " (target " +
                             c.target_behavior + ")");
  }
  spdlog::info("loaded {}: {} users, {} items, {} edges", o.data, ds.users.size(), ds.items.size(),
               ds.tensor.edge_count());
  return ds;
}

ModelParams load_model(const Options& o, const RunConfig& c, const Dataset& ds) {
  require(o.checkpoint, "--checkpoint");
  if (!std::filesystem::exists(o.checkpoint)) throw std::runtime_error("checkpoint not found: " + o.checkpoint);
  ModelParams params = ModelParams::create(c.model(ds.users.size(), ds.items.size()), 0);
  params.load(load_checkpoint(o.checkpoint));
  return params;
}

const Manifest* manifest_for(const Options& o, Manifest& storage) {
  if (o.checkpoint.empty()) return nullptr;
  storage = read_manifest(manifest_path(o.checkpoint));
  return storage.empty() ? nullptr : &storage;
}

index_t lookup(const IdMap& ids, const std::string& id, const char* what) {
  const auto idx = ids.find(id);
  if (!idx) throw std::runtime_error(std::string("unknown ") + what + " id '" + id + "'");
  return static_cast<index_t>(*idx);
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Options& o) {
  const RunConfig c = resolve_config(o, nullptr);
  require(o.output, "--output");
  const Dataset ds = load_data(o, c);
  std::ofstream out = open_output(o.output);
  write_dataset(out, ds);
  std::cout << "users\t" << ds.users.size() << "\nitems\t" << ds.items.size() << "\nedges\t"
            << ds.tensor.edge_count() << '\n';
  for (std::size_t k = 0; k < ds.vocab.size(); ++k)
    std::cout << "edges." << ds.vocab.names[k] << '\t' << ds.tensor.edge_count(k) << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const auto start = Clock::now();
  const RunConfig c = resolve_config(o, nullptr);
  require(o.checkpoint, "--checkpoint");
  const Dataset ds = load_data(o, c);
  const std::string checksum = sha256_file(o.data);
  const double load_time = seconds_since(start);

  const TrainConfig tc = c.training();
  const LeaveOneOutSplit split = leave_one_out_split(ds.tensor, tc.target_behavior);
  const auto train_start = Clock::now();
  TrainResult result = train(split.train, c.model(ds.users.size(), ds.items.size()), tc, [&](const EpochStats& s) {
    spdlog::debug("epoch {} pairs {} mean hinge {:.6f} loss {:.6f} sub-graph {}+{}", s.epoch, s.pairs,
                  s.mean_hinge, s.loss, s.subgraph_users, s.subgraph_items);
    if ((s.epoch + 1) % 10 == 0 || s.epoch + 1 == tc.epochs)
      spdlog::info("epoch {}/{} mean hinge {:.6f}", s.epoch + 1, tc.epochs, s.mean_hinge);
  });
  const double train_time = seconds_since(train_start);
  save_checkpoint(o.checkpoint, result.params.arrays());

  std::vector<std::pair<std::string, std::string>> m;
  m.emplace_back("command", "train");
  m.emplace_back("data", o.data);
  m.emplace_back("data_sha256", checksum);
  m.emplace_back("checkpoint", o.checkpoint);
  m.emplace_back("seed.train", std::to_string(tc.seed));
  m.emplace_back("seed.evaluate", std::to_string(c.seed));
  for (const auto& key : config_keys()) m.emplace_back("config." + key.name, key.get(c));
  m.emplace_back("users", std::to_string(ds.users.size()));
  m.emplace_back("items", std::to_string(ds.items.size()));
  m.emplace_back("test_users", std::to_string(split.test.size()));
  if (!result.history.empty()) {
    std::ostringstream h;
    h.precision(17);
    h << result.history.front().mean_hinge << ' ' << result.history.back().mean_hinge;
    m.emplace_back("mean_hinge.first_last", h.str());
  }
  m.emplace_back("time.load_seconds", std::to_string(load_time));
  m.emplace_back("time.train_seconds", std::to_string(train_time));
  m.emplace_back("time.total_seconds", std::to_string(seconds_since(start)));
  write_manifest(manifest_path(o.checkpoint), m);
  std::cout << "checkpoint\t" << o.checkpoint << "\nmanifest\t" << manifest_path(o.checkpoint) << '\n';
  return 0;
}

int cmd_evaluate(const Options& o) {
  Manifest stored;
  const RunConfig c = resolve_config(o, manifest_for(o, stored));
  const Dataset ds = load_data(o, c);
  if (stored.count("data_sha256") && stored["data_sha256"] != sha256_file(o.data))
    spdlog::warn("dataset checksum differs from the one recorded at training time");
  const ModelParams params = load_model(o, c, ds);
  const std::size_t target = c.vocab().target_index;
  const LeaveOneOutSplit split = leave_one_out_split(ds.tensor, target);
  const EvaluationReport report = evaluate(params, split.train, split.test, target, c.evaluation());
  const auto buckets = sparsity_buckets(split.train, report.users, report.topn);
  write_report(std::cout, report, buckets);
  if (!o.report.empty()) {
    std::ofstream out = open_output(o.report);
    write_report(out, report, buckets);
  }
  if (!o.summary.empty()) {
    std::ofstream out = open_output(o.summary);
    write_summary(out, report);
  }
  return 0;
}

int cmd_recommend(const Options& o) {
  Manifest stored;
  const RunConfig c = resolve_config(o, manifest_for(o, stored));
  require(o.user, "--user");
  if (o.topk < 0) throw UsageError("--topk must be non-negative");
  const Dataset ds = load_data(o, c);
  const ModelParams params = load_model(o, c, ds);
  const index_t user = lookup(ds.users, o.user, "user");
  const std::size_t target = c.vocab().target_index;
  if (o.topk == 0) return 0;

  std::vector<index_t> candidates;
  for (std::size_t j = 0; j < ds.items.size(); ++j)
    if (!ds.tensor.contains(user, j, target)) candidates.push_back(static_cast<index_t>(j));
  Rng rng(c.seed);
  const SubGraph sub = evaluation_subgraph(ds.tensor, {user}, candidates, c.evaluation(), rng);
  Tape tape;
  const BoundParams bp = bind(tape, params);
  const NodeStates states = encode_subgraph(bp, sub);
  std::vector<PairIndex> pairs;
  for (index_t j : candidates) pairs.push_back({*sub.local_user(user), *sub.local_item(j)});
  const Array& scores = tape.value(score_pairs(bp, states, pairs));
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : candidates[a] < candidates[b];
  });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(o.topk)));
  std::cout.precision(17);
  for (std::size_t r : order) std::cout << ds.items.id(candidates[r]) << '\t' << scores[r] << '\n';
  return 0;
}

int cmd_export_attention(const Options& o) {
  Manifest stored;
  const RunConfig c = resolve_config(o, manifest_for(o, stored));
  require(o.user, "--user");
  require(o.item, "--item");
  const Dataset ds = load_data(o, c);
  const ModelParams params = load_model(o, c, ds);
  const AttentionRecord rec =
      export_attention(params, ds.tensor, lookup(ds.users, o.user, "user"), lookup(ds.items, o.item, "item"),
                       c.evaluation());
  if (o.output.empty()) {
    write_attention(std::cout, rec, ds.vocab.names);
  } else {
    std::ofstream out = open_output(o.output);
    write_attention(out, rec, ds.vocab.names);
    std::cout << "attention\t" << o.output << '\n';
  }
  return 0;
}

// Small built-in checks: gradients against finite differences, the vectorized
// forward pass against the loop oracle, and metrics against a brute-force rank.
int cmd_selftest(const Options& o) {
  resolve_config(o, nullptr);
  bool ok = true;
  auto line = [&](const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
    ok = ok && pass;
  };

  ModelConfig mc;
  mc.num_users = 5;
  mc.num_items = 6;
  mc.behaviors = 2;
  mc.dim = 4;
  mc.heads = 2;
  mc.channels = 2;
  mc.layers = 1;
  mc.agg_hidden = 3;
  const InteractionTensor t = testing::random_tensor(5, 6, 2, 20, 11);
  const SubGraph sub = full_graph(t);
  ModelParams params = ModelParams::create(mc, 3);
  const std::vector<PairIndex> pos{{0, 1}, {2, 3}}, neg{{0, 4}, {2, 5}};
  const testing::Objective f = [&](Tape&, const BoundParams& bp) {
    const NodeStates st = encode_subgraph(bp, sub);
    return hinge_loss(score_pairs(bp, st, pos), score_pairs(bp, st, neg)) + regularization(bp.vars, 0.01);
  };
  const auto grad = testing::gradient_check(params, f);
  line("gradient", grad.max_relative_error <= 1e-6,
       fmt::format("max relative error {:.3g} ({})", grad.max_relative_error, grad.worst));

  const testing::ReferenceModel ref(params, t);
  Tape tape;
  const BoundParams bp = bind(tape, params);
  const NodeStates st = encode_subgraph(bp, sub);
  std::vector<PairIndex> all;
  for (index_t i = 0; i < 5; ++i)
    for (index_t j = 0; j < 6; ++j) all.push_back({i, j});
  const Array& scores = tape.value(score_pairs(bp, st, all));
  double worst = 0;
  for (std::size_t q = 0; q < all.size(); ++q)
    worst = std::max(worst, std::abs(double(scores[q]) - ref.score(all[q].user, all[q].item)));
  line("forward", worst <= 1e-9, fmt::format("max abs difference {:.3g}", worst));

  Rng rng(5);
  bool metrics_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<real> s(100);
    std::vector<index_t> items(100);
    for (std::size_t i = 0; i < 100; ++i) {
      s[i] = static_cast<real>(rng.below(20));
      items[i] = static_cast<index_t>(i);
    }
    std::vector<std::size_t> order(100);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return s[a] != s[b] ? s[a] > s[b] : a < b; });
    const std::size_t brute = static_cast<std::size_t>(std::find(order.begin(), order.end(), 0) - order.begin()) + 1;
    metrics_ok = metrics_ok && brute == rank_of_positive(s, items, 0);
  }
  line("metrics", metrics_ok, "200 random candidate lists");
  return ok ? 0 : 1;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("mbrec");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("MBREC_LOG");
  const std::string l = level ? level : "error";
  if (l == "debug") spdlog::set_level(spdlog::level::debug);
  else if (l == "info") spdlog::set_level(spdlog::level::info);
  else if (l == "error") spdlog::set_level(spdlog::level::err);
  else throw UsageError("MBREC_LOG must be one of error, info, debug");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-behavior graph recommender"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool model) {
    sub->add_option("--data", o.data, "interaction log (TSV) or graph file");
    sub->add_option("--config", o.config, "key = value configuration file");
    if (model) sub->add_option("--checkpoint", o.checkpoint, "model checkpoint path");
    add_config_flags(sub, o);
  };
  auto* ingest_cmd = app.add_subcommand("ingest", "build and store the binary interaction graph");
  common(ingest_cmd, false);
  ingest_cmd->add_option("--output", o.output, "graph file to write")->required();
  auto* train_cmd = app.add_subcommand("train", "train and write checkpoint + manifest");
  common(train_cmd, true);
  auto* eval_cmd = app.add_subcommand("evaluate", "leave-one-out HR/NDCG report");
  common(eval_cmd, true);
  eval_cmd->add_option("--report", o.report, "also write the report here");
  eval_cmd->add_option("--summary", o.summary, "metric<TAB>N<TAB>value summary file");
  auto* rec_cmd = app.add_subcommand("recommend", "top-k items for a user");
  common(rec_cmd, true);
  rec_cmd->add_option("--user", o.user, "user id");
  rec_cmd->add_option("--topk", o.topk, "number of items");
  auto* att_cmd = app.add_subcommand("export-attention", "write interpretation matrices");
  common(att_cmd, true);
  att_cmd->add_option("--user", o.user, "user id");
  att_cmd->add_option("--item", o.item, "item id");
  att_cmd->add_option("--output", o.output, "output file (default stdout)");
  auto* self_cmd = app.add_subcommand("selftest", "gradient, forward and metric checks");
  add_config_flags(self_cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mbrec: " << e.what() << '\n';
    return 2;
  }

  try {
    configure_logging();
    if (*ingest_cmd) return cmd_ingest(o);
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_evaluate(o);
    if (*rec_cmd) return cmd_recommend(o);
    if (*att_cmd) return cmd_export_attention(o);
    if (*self_cmd) return cmd_selftest(o);
  } catch (const UsageError& e) {
    std::cerr << "mbrec: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "mbrec: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mbrec: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
