// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mbrec/mbrec.hpp"
#include "mbrec/testing/gradcheck.hpp"
#include "mbrec/testing/reference_model.hpp"
#include "mbrec/testing/synthetic.hpp"
#include "support.hpp"

using namespace mbrec;
namespace fx = mbrec::testing;
using Clock = std::chrono::steady_clock;

namespace {

bool all_passed = true;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  all_passed = all_passed && pass;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

// ---------------------------------------------------------------------------

void gradient_suite() {
  const auto start = Clock::now();
  ModelConfig c;
  c.num_users = 8;
  c.num_items = 12;
  c.behaviors = 3;
  c.dim = 8;
  c.heads = 2;
  c.channels = 2;
  c.layers = 2;
  c.agg_hidden = 8;
  const auto t = fx::random_tensor(8, 12, 3, 40, 1);
  ModelParams params = ModelParams::create(c, 2);
  std::vector<PairIndex> pos, neg;
  for (std::size_t u = 0; u < 8; ++u)
    for (const auto& s : sample_pairs(t, u, 2, 1, 3 + u)) {
      pos.push_back({static_cast<index_t>(u), s.positive});
      neg.push_back({static_cast<index_t>(u), s.negative});
    }
  const SubGraph sub = full_graph(t);
  const auto result = fx::gradient_check(params, [&](Tape&, const BoundParams& bp) {
    const NodeStates st = encode_subgraph(bp, sub);
    return hinge_loss(score_pairs(bp, st, pos), score_pairs(bp, st, neg)) + regularization(bp.vars, 0.01);
  });
  const double secs = seconds_since(start);
  report(1, "gradient suite", result.max_relative_error <= 1e-6 && secs < 60 && !pos.empty(),
         std::to_string(params.size()) + " arrays, " + std::to_string(pos.size()) +
             " pairs, max relative error " + fmt(result.max_relative_error) + " (" + result.worst + "), " +
             fmt(secs) + " s");
}

void forward_oracle() {
  const auto t = fx::random_tensor(6, 8, 3, 24, 4);
  double worst = 0;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    ModelConfig c;
    c.num_users = 6;
    c.num_items = 8;
    c.behaviors = 3;
    c.dim = 8;
    c.channels = 2;
    c.heads = 2;
    c.layers = 2;
    const ModelParams p = ModelParams::create(c, 100 + draw);
    const fx::ReferenceModel ref(p, t);
    Tape tape;
    const BoundParams bp = bind(tape, p);
    const NodeStates st = encode(bp, t, bp[p.user_embedding()], bp[p.item_embedding()]);
    std::vector<PairIndex> pairs;
    for (index_t i = 0; i < 6; ++i)
      for (index_t j = 0; j < 8; ++j) pairs.push_back({i, j});
    const Array& s = tape.value(score_pairs(bp, st, pairs));
    for (std::size_t n = 0; n < pairs.size(); ++n)
      worst = std::max(worst, std::abs(double(s[n]) - ref.score(pairs[n].user, pairs[n].item)));
  }
  report(2, "forward oracle", worst <= 1e-9, "20 draws x 48 pairs, max abs difference " + fmt(worst));
}

void metric_oracle() {
  Rng rng(5);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<real> s(100);
    std::vector<index_t> items(100);
    const auto ids = rng.sample_without_replacement(500, 100);
    for (std::size_t i = 0; i < 100; ++i) {
      s[i] = trial % 2 ? static_cast<real>(rng.below(30)) : static_cast<real>(rng.uniform(-1, 1));
      items[i] = static_cast<index_t>(ids[i]);
    }
    std::vector<std::size_t> order(100);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return s[a] != s[b] ? s[a] > s[b] : items[a] < items[b]; });
    const std::size_t pos = rng.below(100);
    const std::size_t rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), pos) - order.begin()) + 1;
    const std::size_t got = rank_of_positive(s, items, pos);
    for (std::size_t n : {1, 5, 10, 20, 50}) {
      const double hr = rank <= n ? 1.0 : 0.0;
      const double nd = rank <= n ? 1.0 / std::log2(rank + 1.0) : 0.0;
      if (hit_ratio(got, n) != hr || ndcg(got, n) != nd) ++mismatches;
    }
  }
  const bool spots = ndcg(1, 10) == 1 && ndcg(3, 10) == 0.5 && hit_ratio(11, 10) == 0;
  report(3, "metric oracle", mismatches == 0 && spots,
         "1000 vectors x 5 cutoffs, " + std::to_string(mismatches) + " mismatches; ndcg(1)=" + fmt(ndcg(1, 10)) +
             ", ndcg@10(3)=" + fmt(ndcg(3, 10)));
}

void sampler_suite() {
  std::size_t violations = 0;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    Rng rng(seed);
    const std::size_t I = 2 + rng.below(24), J = 2 + rng.below(24);
    const std::size_t K = 1 + rng.below(3);
    const auto t = fx::random_tensor(I, J, K, 2 * (I + J), seed);
    const auto adj = build_normalized_adjacency(t);
    const SeedSet seeds = select_seeds(t, 1 + rng.below(4), rng);
    const SubGraph sub = sample_subgraph(t, adj, seeds, rng.below(4), 1 + rng.below(5), rng);
    for (index_t u : seeds.users) violations += !sub.local_user(u);
    for (index_t v : seeds.items) violations += !sub.local_item(v);
    violations += std::set<index_t>(sub.users.begin(), sub.users.end()).size() != sub.users.size();
    violations += std::set<index_t>(sub.items.begin(), sub.items.end()).size() != sub.items.size();
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t r = 0; r < sub.users.size(); ++r)
        for (std::size_t c = 0; c < sub.items.size(); ++c)
          violations += sub.tensor.contains(r, c, k) != t.contains(sub.users[r], sub.items[c], k);
  }

  // 3 x 3 graph seeded with user 0: one item draw follows the squared weights.
  const auto t = InteractionTensor::from_interactions(
      3, 3, 2,
      {{0, 0, 0, 0, 0}, {0, 0, 1, 1, 1}, {0, 1, 0, 2, 2}, {0, 2, 1, 3, 3}, {1, 0, 0, 4, 4}, {2, 0, 1, 5, 5}, {2, 2, 0, 6, 6}});
  const auto adj = build_normalized_adjacency(t);
  const std::vector<double> xbar{2 / std::sqrt(16.0), 1 / std::sqrt(4.0), 1 / std::sqrt(8.0)};
  double norm = 0;
  for (double x : xbar) norm += x * x;
  Rng rng(99);
  std::vector<double> freq(3, 0);
  for (int n = 0; n < 10000; ++n) {
    SubgraphSampler s(t, adj, SeedSet{{0}, {}});
    s.step(1, rng);
    freq[s.items().at(0)] += 1e-4;
  }
  double tv = 0;
  for (std::size_t j = 0; j < 3; ++j) tv += std::abs(freq[j] - xbar[j] * xbar[j] / norm) / 2;
  report(4, "sampler suite", violations == 0 && tv < 0.05,
         "200 random graphs, " + std::to_string(violations) + " invariant violations; TV " + fmt(tv) +
             " over 10000 draws");
}

// ---------------------------------------------------------------------------

struct OverfitRun {
  double first_hinge = 0, last_hinge = 0, hr = 0, baseline = 0;
};

ModelConfig default_model() {
  ModelConfig c;
  c.dim = 16;
  c.channels = 8;
  c.heads = 2;
  c.layers = 2;
  return c;
}

OverfitRun overfit_run(const InteractionTensor& data, std::size_t target, const ModelConfig& mc, std::uint64_t seed,
                       std::size_t epochs = 200) {
  const auto split = leave_one_out_split(data, target);
  TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = seed;
  tc.target_behavior = target;
  const TrainResult r = train(split.train, mc, tc);
  EvalConfig ec;
  ec.seed = seed;
  const auto rep = evaluate(r.params, split.train, split.test, target, ec);
  OverfitRun out;
  out.first_hinge = r.history.front().mean_hinge;
  out.last_hinge = r.history.back().mean_hinge;
  out.hr = rep.metrics.front().hr;
  for (const auto& u : rep.users) {
    const double n = static_cast<double>(u.candidates.size());
    out.baseline += std::min(10.0, n) / n / static_cast<double>(rep.users.size());
  }
  return out;
}

std::vector<double> full_model_hr;

void overfit_check() {
  const auto start = Clock::now();
  int good = 0;
  double baseline = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto data = fx::planted_dataset(fx::PlantedOptions{.seed = seed});
    const OverfitRun r = overfit_run(data.tensor, data.vocab.target_index, default_model(), seed);
    const bool ok = r.last_hinge < 0.3 * r.first_hinge && r.hr >= 0.2;
    good += ok;
    baseline += r.baseline / 5;
    full_model_hr.push_back(r.hr);
    detail += " [seed " + std::to_string(seed) + ": hinge " + fmt(r.first_hinge) + "->" + fmt(r.last_hinge) +
              ", HR@10 " + fmt(r.hr) + "]";
  }
  const double secs = seconds_since(start);
  report(5, "overfit check", good >= 4 && secs < 300,
         std::to_string(good) + "/5 seeds pass, random baseline HR@10 " + fmt(baseline) + ", " + fmt(secs) + " s;" +
             detail);
}

void multi_behavior_benefit() {
  std::vector<double> buy_only;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto data = fx::planted_dataset(fx::PlantedOptions{.seed = seed});
    const std::vector<std::size_t> kept{data.vocab.target_index};
    const OverfitRun r = overfit_run(select_behaviors(data.tensor, kept), 0, default_model(), seed);
    buy_only.push_back(r.hr);
  }
  const double full = median(full_model_hr), ablated = median(buy_only);
  report(6, "multi-behavior benefit", full_model_hr.size() == 5 && full >= ablated,
         "median HR@10 full " + fmt(full) + " vs buy-only " + fmt(ablated));
}

void layer_configurability() {
  const auto data = fx::planted_dataset(fx::PlantedOptions{.seed = 11});
  std::string detail;
  bool ok = ModelConfig{}.layers == 2 && RunConfig{}.layers == 2;
  for (std::size_t L : {1, 2, 3}) {
    ModelConfig mc = default_model();
    mc.layers = L;
    try {
      const OverfitRun r = overfit_run(data.tensor, data.vocab.target_index, mc, 1, 20);
      const bool finite = std::isfinite(r.last_hinge) && r.hr >= 0 && r.hr <= 1;
      ok = ok && finite;
      detail += " L=" + std::to_string(L) + " HR@10 " + fmt(r.hr) + ";";
    } catch (const std::exception& e) {
      ok = false;
      detail += " L=" + std::to_string(L) + " error: " + e.what() + ";";
    }
  }
  report(7, "layer configurability", ok, "20 epochs each, default L=2;" + detail);
}

double encoder_seconds(std::size_t users, std::size_t items, std::size_t edges) {
  const auto t = fx::random_tensor(users, items, 3, edges, 7);
  ModelConfig c = default_model();
  c.num_users = users;
  c.num_items = items;
  c.behaviors = 3;
  const ModelParams p = ModelParams::create(c, 8);
  double best = 1e300;
  for (int rep = 0; rep < 5; ++rep) {
    const auto start = Clock::now();
    Tape tape;
    const BoundParams bp = bind(tape, p);
    const NodeStates st = encode(bp, t, bp[p.user_embedding()], bp[p.item_embedding()]);
    tape.backward(sum(st.users.back()) + sum(st.items.back()));
    best = std::min(best, seconds_since(start));
  }
  return best;
}

void complexity_sanity() {
  const double small = encoder_seconds(1000, 1000, 20000);
  const double large = encoder_seconds(2000, 2000, 40000);
  const double ratio = large / small;
  report(8, "complexity sanity", ratio <= 2.5,
         "encoder forward+backward " + fmt(small) + " s -> " + fmt(large) + " s when doubling |X| (ratio " +
             fmt(ratio) + ")");
}

// ---------------------------------------------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int shell(const std::string& cmd) {
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

void determinism() {
  support::TempDir dir;
  const auto data = fx::planted_dataset(fx::PlantedOptions{.users = 40, .items = 30, .seed = 3});
  {
    std::ofstream out(dir.file("log.tsv"));
    for (const auto& e : data.tensor.interactions())
      out << 'u' << e.user << "\ti" << e.item << '\t' << data.vocab.names[e.behavior] << '\t' << e.timestamp << '\n';
    std::ofstream conf(dir.file("run.conf"));
    conf << "dim = 8\nchannels = 2\nepochs = 10\nbatch_size = 8\n";
  }
  const std::string cli = "'" + std::string(MBREC_CLI_PATH) + "'";
  const std::string data_flag = " --data '" + dir.file("log.tsv") + "'";
  bool ok = shell(cli + " train" + data_flag + " --config '" + dir.file("run.conf") + "' --checkpoint '" +
                  dir.file("a.ckpt") + "' > /dev/null") == 0;
  // The second run takes its whole configuration from the first run's manifest.
  {
    std::ifstream in(dir.file("a.ckpt.manifest"));
    std::ofstream conf(dir.file("from_manifest.conf"));
    std::string line;
    while (std::getline(in, line))
      if (line.rfind("config.", 0) == 0) conf << line.substr(7) << '\n';
  }
  ok = ok && shell(cli + " train" + data_flag + " --config '" + dir.file("from_manifest.conf") +
                   "' --checkpoint '" + dir.file("b.ckpt") + "' > /dev/null") == 0;
  for (const char* run : {"a", "b"}) {
    const std::string r(run);
    ok = ok && shell(cli + " evaluate" + data_flag + " --checkpoint '" + dir.file(r + ".ckpt") + "' --report '" +
                     dir.file(r + ".report") + "' --summary '" + dir.file(r + ".summary") + "' > /dev/null") == 0;
  }
  const std::string ca = slurp(dir.file("a.ckpt")), cb = slurp(dir.file("b.ckpt"));
  const bool same_ckpt = !ca.empty() && ca == cb;
  const bool same_report = slurp(dir.file("a.report")) == slurp(dir.file("b.report")) &&
                           slurp(dir.file("a.summary")) == slurp(dir.file("b.summary")) &&
                           !slurp(dir.file("a.summary")).empty();
  report(9, "determinism", ok && same_ckpt && same_report,
         std::string("checkpoints ") + (same_ckpt ? "identical" : "differ") + " (" + std::to_string(ca.size()) +
             " bytes), reports " + (same_report ? "identical" : "differ"));
}

}  // namespace

int main() {
  const auto start = Clock::now();
  gradient_suite();
  forward_oracle();
  metric_oracle();
  sampler_suite();
  overfit_check();
  multi_behavior_benefit();
  layer_configurability();
  complexity_sanity();
  determinism();
  std::printf("total %.1f s\n", seconds_since(start));
  return all_passed ? 0 : 1;
}
