#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "mbrec/graph.hpp"
#include "mbrec/testing/synthetic.hpp"
#include "support.hpp"

using namespace mbrec;
namespace fx = mbrec::testing;

namespace {

BehaviorVocab view_buy() { return BehaviorVocab::make({"view", "buy"}, "buy"); }

Dataset from_text(const std::string& text, const BehaviorVocab& vocab) {
  std::istringstream in(text);
  return ingest(in, vocab);
}

std::vector<index_t> list(std::span<const index_t> s) { return {s.begin(), s.end()}; }

const char* kFixture =
    "u1\ti1\tbuy\n"
    "u1\ti2\tview\n"
    "u1\ti3\tview\n"
    "u2\ti1\tview\n"
    "u2\ti3\tbuy\n"
    "u2\ti1\tbuy\n";

}  // namespace

TEST(Vocab, Validation) {
  EXPECT_THROW(BehaviorVocab::make({}, "buy"), std::invalid_argument);
  EXPECT_THROW(BehaviorVocab::make({"buy", "buy"}, "buy"), std::invalid_argument);
  EXPECT_THROW(BehaviorVocab::make({"view"}, "buy"), std::invalid_argument);
  const auto v = BehaviorVocab::make({"view", "cart", "buy"}, "cart");
  EXPECT_EQ(v.target_index, 1u);
  EXPECT_EQ(v.index_of("buy"), 2u);
  EXPECT_FALSE(v.index_of("fav"));
}

TEST(Ingest, SingleRecord) {
  const Dataset ds = from_text("u\ta\tbuy\n", view_buy());
  EXPECT_EQ(ds.tensor.num_users(), 1u);
  EXPECT_EQ(ds.tensor.num_items(), 1u);
  EXPECT_TRUE(ds.tensor.contains(0, 0, 1));
  EXPECT_FALSE(ds.tensor.contains(0, 0, 0));
}

TEST(Ingest, DuplicatesCollapse) {
  const Dataset once = from_text("u\ta\tbuy\n", view_buy());
  const Dataset twice = from_text("u\ta\tbuy\nu\ta\tbuy\n", view_buy());
  EXPECT_TRUE(once.tensor == twice.tensor);
  EXPECT_EQ(twice.tensor.edge_count(), 1u);
}

TEST(Ingest, FixtureMatchesHandTable) {
  const Dataset ds = from_text(kFixture, view_buy());
  const auto& t = ds.tensor;
  ASSERT_EQ(t.num_users(), 2u);
  ASSERT_EQ(t.num_items(), 3u);
  // users u1=0, u2=1; items i1=0, i2=1, i3=2; behaviors view=0, buy=1
  EXPECT_EQ(list(t.neighbors(Side::user, 0, 0)), (std::vector<index_t>{1, 2}));
  EXPECT_EQ(list(t.neighbors(Side::user, 0, 1)), (std::vector<index_t>{0}));
  EXPECT_EQ(list(t.neighbors(Side::user, 1, 0)), (std::vector<index_t>{0}));
  EXPECT_EQ(list(t.neighbors(Side::user, 1, 1)), (std::vector<index_t>{0, 2}));
  EXPECT_EQ(list(t.neighbors(Side::item, 0, 0)), (std::vector<index_t>{1}));
  EXPECT_EQ(list(t.neighbors(Side::item, 0, 1)), (std::vector<index_t>{0, 1}));
  EXPECT_EQ(list(t.neighbors(Side::item, 1, 0)), (std::vector<index_t>{0}));
  EXPECT_EQ(list(t.neighbors(Side::item, 1, 1)), (std::vector<index_t>{}));
  EXPECT_EQ(list(t.neighbors(Side::item, 2, 0)), (std::vector<index_t>{0}));
  EXPECT_EQ(list(t.neighbors(Side::item, 2, 1)), (std::vector<index_t>{1}));
  EXPECT_EQ(t.edge_count(0) + t.edge_count(1), 6u);
}

TEST(Ingest, Errors) {
  try {
    from_text("u\ta\tbuy\n# note\nu\tb\tfav\n", view_buy());
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("fav"), std::string::npos);
  }
  EXPECT_THROW(from_text("", view_buy()), IngestError);
  EXPECT_THROW(from_text("# only a comment\n\n", view_buy()), IngestError);
  EXPECT_THROW(from_text("u\ta\n", view_buy()), IngestError);
  EXPECT_THROW(from_text("u\ta\tbuy\t5\nu\tb\tbuy\n", view_buy()), IngestError);
  EXPECT_THROW(from_text("u\ta\tbuy\tsoon\n", view_buy()), IngestError);
}

TEST(Ingest, CommentsAndCarriageReturns) {
  const Dataset ds = from_text("# header\r\nu\ta\tview\r\n\r\nu\tb\tbuy\r\n", view_buy());
  EXPECT_EQ(ds.tensor.edge_count(), 2u);
  EXPECT_EQ(ds.items.id(1), "b");
}

TEST(Ingest, SerializeRoundTripIsIdempotent) {
  for (const char* text : {kFixture, "a\tx\tbuy\t30\nb\tx\tview\t10\na\ty\tbuy\t20\na\tx\tbuy\t5\n"}) {
    const Dataset first = from_text(text, view_buy());
    std::ostringstream tsv;
    write_tsv(tsv, first);
    const Dataset second = from_text(tsv.str(), view_buy());
    EXPECT_TRUE(first.tensor == second.tensor);
    EXPECT_TRUE(first.users == second.users);
    EXPECT_TRUE(first.items == second.items);

    std::stringstream bin;
    write_dataset(bin, first);
    const Dataset third = read_dataset(bin);
    EXPECT_TRUE(first.tensor == third.tensor);
    EXPECT_TRUE(first.vocab == third.vocab);
    EXPECT_TRUE(first.items == third.items);
    EXPECT_EQ(first.has_timestamps, third.has_timestamps);
  }
}

TEST(Ingest, LoadDatasetDetectsFormat) {
  support::TempDir dir;
  const Dataset ds = from_text(kFixture, view_buy());
  {
    std::ofstream tsv(dir.file("a.tsv"));
    write_tsv(tsv, ds);
    std::ofstream bin(dir.file("a.bin"), std::ios::binary);
    write_dataset(bin, ds);
  }
  EXPECT_TRUE(load_dataset(dir.file("a.tsv"), view_buy()).tensor == ds.tensor);
  EXPECT_TRUE(load_dataset(dir.file("a.bin"), view_buy()).tensor == ds.tensor);
  EXPECT_THROW(load_dataset(dir.file("missing"), view_buy()), std::runtime_error);
}

TEST(Tensor, NeighborsAndTranspose) {
  const auto t = fx::random_tensor(9, 11, 3, 60, 5);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 11; ++j) {
        const auto u = t.neighbors(Side::user, i, k), v = t.neighbors(Side::item, j, k);
        const bool a = std::binary_search(u.begin(), u.end(), static_cast<index_t>(j));
        const bool b = std::binary_search(v.begin(), v.end(), static_cast<index_t>(i));
        EXPECT_EQ(a, b);
      }
  EXPECT_THROW(t.neighbors(Side::user, 9, 0), ContractError);
  EXPECT_THROW(t.neighbors(Side::item, 0, 3), ContractError);
  std::size_t total = 0;
  for (std::size_t k = 0; k < 3; ++k) total += t.edge_count(k);
  EXPECT_EQ(total, t.edge_count());
}

TEST(Tensor, NodeWithoutEdges) {
  const auto t = InteractionTensor::from_interactions(2, 2, 1, {{0, 0, 0, 0, 0}});
  EXPECT_TRUE(t.neighbors(Side::user, 1, 0).empty());
  EXPECT_THROW(InteractionTensor::from_interactions(1, 1, 1, {{0, 1, 0, 0, 0}}), ContractError);
}

TEST(Adjacency, HandValues) {
  const auto single = InteractionTensor::from_interactions(1, 1, 1, {{0, 0, 0, 0, 0}});
  EXPECT_DOUBLE_EQ(build_normalized_adjacency(single).value(0, 0), 1.0);

  // (0,0) linked by two behaviors; user 0 has 4 interactions, item 0 has 9.
  std::vector<Interaction> ev{{0, 0, 0, 0, 0}, {0, 0, 1, 0, 0}, {0, 1, 0, 0, 0}, {0, 2, 0, 0, 0}};
  for (index_t u = 1; u <= 7; ++u) ev.push_back({u, 0, u % 2, 0, 0});
  const auto t = InteractionTensor::from_interactions(8, 3, 2, ev);
  ASSERT_EQ(t.user_degree(0), 4u);
  ASSERT_EQ(t.item_degree(0), 9u);
  EXPECT_NEAR(build_normalized_adjacency(t).value(0, 0), 1.0 / 3.0, 1e-15);
}

TEST(Adjacency, PropertiesOnRandomGraphs) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t K = 1 + seed % 3;
    const auto t = fx::random_tensor(7, 9, K, 40, seed);
    const auto adj = build_normalized_adjacency(t);
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = 0; j < 9; ++j) {
        std::size_t links = 0;
        for (std::size_t k = 0; k < K; ++k) links += t.contains(i, j, k);
        const real v = adj.value(i, j);
        if (links == 0) {
          EXPECT_EQ(v, 0);
          continue;
        }
        EXPECT_GT(v, 0);
        EXPECT_LE(v, std::sqrt(static_cast<real>(K)) + 1e-12);
        EXPECT_NEAR(v, links / std::sqrt(real(t.user_degree(i)) * real(t.item_degree(j))), 1e-14);
      }
    }
    // item-side rows are the transpose of user-side rows
    for (std::size_t j = 0; j < 9; ++j) {
      const auto idx = adj.indices(Side::item, j);
      const auto val = adj.values(Side::item, j);
      for (std::size_t e = 0; e < idx.size(); ++e) EXPECT_EQ(val[e], adj.value(idx[e], j));
    }
  }
}

TEST(Adjacency, SwappingSidesTransposes) {
  const auto t = fx::random_tensor(5, 6, 2, 20, 9);
  std::vector<Interaction> swapped;
  for (auto e : t.interactions()) {
    std::swap(e.user, e.item);
    swapped.push_back(e);
  }
  const auto ts = InteractionTensor::from_interactions(6, 5, 2, swapped);
  const auto a = build_normalized_adjacency(t), b = build_normalized_adjacency(ts);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(a.value(i, j), b.value(j, i));
}

TEST(Split, SinglePurchase) {
  const Dataset ds = from_text("u\ta\tview\nu\tb\tbuy\n", view_buy());
  const auto split = leave_one_out_split(ds.tensor, 1);
  ASSERT_EQ(split.test.size(), 1u);
  EXPECT_EQ(split.test[0], (TestPair{0, 1}));
  EXPECT_TRUE(split.train.neighbors(Side::user, 0, 1).empty());
  EXPECT_EQ(split.train.neighbors(Side::user, 0, 0).size(), 1u);
}

TEST(Split, ThreePurchasesKeepTwo) {
  const Dataset ds = from_text("u\ta\tbuy\nu\tb\tbuy\nu\tc\tbuy\n", view_buy());
  const auto split = leave_one_out_split(ds.tensor, 1);
  EXPECT_EQ(split.train.neighbors(Side::user, 0, 1).size(), 2u);
  EXPECT_EQ(split.test[0].item, 2u);  // last in input order
}

TEST(Split, FourUserFixtureByHand) {
  // u0: last purchase is x (input order), u1: only views, u2: y then x with
  // timestamps ignored, u3: single purchase z. Items: x=0, y=1, z=2.
  const Dataset ds = from_text(
      "u0\tx\tview\n"
      "u0\ty\tbuy\n"
      "u0\tx\tbuy\n"
      "u1\ty\tview\n"
      "u2\ty\tbuy\n"
      "u2\tx\tbuy\n"
      "u3\tz\tbuy\n"
      "u0\ty\tbuy\n",  // duplicate keeps its first position
      view_buy());
  const auto split = leave_one_out_split(ds.tensor, 1);
  EXPECT_EQ(split.test, (std::vector<TestPair>{{0, 0}, {2, 0}, {3, 2}}));
  EXPECT_EQ(split.users_without_target, 1u);
}

TEST(Split, TimestampsDecideAndTiesGoToHighestItem) {
  const Dataset ds = from_text("u\ta\tbuy\t50\nu\tb\tbuy\t10\nv\ta\tbuy\t7\nv\tc\tbuy\t7\n", view_buy());
  const auto split = leave_one_out_split(ds.tensor, 1);
  EXPECT_EQ(split.test, (std::vector<TestPair>{{0, 0}, {1, 2}}));
}

TEST(Split, PartitionsEdges) {
  const auto t = fx::planted_dataset().tensor;
  const auto split = leave_one_out_split(t, 2);
  std::set<std::tuple<index_t, index_t, std::uint32_t>> all, train;
  for (const auto& e : t.interactions()) all.insert(std::make_tuple(e.user, e.item, e.behavior));
  for (const auto& e : split.train.interactions()) train.insert(std::make_tuple(e.user, e.item, e.behavior));
  for (const auto& p : split.test) {
    EXPECT_FALSE(train.count(std::make_tuple(p.user, p.item, 2u)));
    train.insert(std::make_tuple(p.user, p.item, 2u));
  }
  EXPECT_EQ(train, all);
  EXPECT_EQ(split.train.edge_count() + split.test.size(), t.edge_count());
}

TEST(SelectBehaviors, KeepsAndRenumbers) {
  const Dataset ds = from_text(kFixture, view_buy());
  const std::vector<std::size_t> kept{1};
  const auto only_buy = select_behaviors(ds.tensor, kept);
  EXPECT_EQ(only_buy.num_behaviors(), 1u);
  EXPECT_EQ(only_buy.edge_count(), 3u);
  EXPECT_TRUE(only_buy.contains(1, 2, 0));
}
