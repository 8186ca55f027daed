#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mbrec/ndcore/array.hpp"
#include "mbrec/ndcore/checkpoint.hpp"
#include "mbrec/ndcore/sparse.hpp"

namespace mbrec {

enum class Side { user, item };

// ---------------------------------------------------------------------------
// Behavior vocabulary

struct BehaviorVocab {
  std::vector<std::string> names;
  std::size_t target_index = 0;

  static BehaviorVocab make(std::vector<std::string> names, const std::string& target) {
    if (names.empty()) throw std::invalid_argument("behavior vocabulary is empty");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i].empty()) throw std::invalid_argument("empty behavior label");
      for (std::size_t j = 0; j < i; ++j)
        if (names[i] == names[j]) throw std::invalid_argument("duplicate behavior label '" + names[i] + "'");
    }
    auto it = std::find(names.begin(), names.end(), target);
    if (it == names.end()) {
      throw std::invalid_argument("target behavior '" + target + "' is not in the vocabulary");
    }
    BehaviorVocab v;
    v.target_index = static_cast<std::size_t>(it - names.begin());
    v.names = std::move(names);
    return v;
  }

  std::size_t size() const { return names.size(); }
  const std::string& target() const { return names[target_index]; }

  std::optional<std::size_t> index_of(std::string_view label) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == label) return i;
    return std::nullopt;
  }

  friend bool operator==(const BehaviorVocab&, const BehaviorVocab&) = default;
};

// ---------------------------------------------------------------------------
// Interaction tensor

// One deduplicated (user, item, behavior) event. `sequence` is the dense rank
// of its first occurrence in the input; `timestamp` equals `sequence` when the
// input carries no timestamps.
struct Interaction {
  index_t user = 0;
  index_t item = 0;
  std::uint32_t behavior = 0;
  std::int64_t sequence = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Binary user x item x behavior tensor with per-behavior adjacency in both
/// directions (sorted, deduplicated). Immutable once built.
class InteractionTensor {
 public:
  InteractionTensor() = default;

  static InteractionTensor from_interactions(std::size_t num_users, std::size_t num_items,
                                             std::size_t num_behaviors,
                                             std::vector<Interaction> events) {
    for (const auto& e : events) {
      if (e.user >= num_users || e.item >= num_items || e.behavior >= num_behaviors) {
        throw ContractError("interaction (" + std::to_string(e.user) + ", " + std::to_string(e.item) +
                            ", " + std::to_string(e.behavior) + ") outside tensor extents");
      }
    }
    std::sort(events.begin(), events.end(), [](const Interaction& a, const Interaction& b) {
      if (a.behavior != b.behavior) return a.behavior < b.behavior;
      if (a.user != b.user) return a.user < b.user;
      if (a.item != b.item) return a.item < b.item;
      return a.sequence < b.sequence;
    });
    // Keep the first occurrence of every (behavior, user, item).
    auto last = std::unique(events.begin(), events.end(), [](const Interaction& a, const Interaction& b) {
      return a.behavior == b.behavior && a.user == b.user && a.item == b.item;
    });
    events.erase(last, events.end());

    InteractionTensor t;
    t.num_users_ = num_users;
    t.num_items_ = num_items;
    t.num_behaviors_ = num_behaviors;
    t.events_ = std::move(events);
    t.user_degree_.assign(num_users, 0);
    t.item_degree_.assign(num_items, 0);
    for (std::size_t k = 0; k < num_behaviors; ++k) {
      auto by_user = std::make_shared<SparsePattern>();
      auto by_item = std::make_shared<SparsePattern>();
      by_user->num_cols = num_items;
      by_item->num_cols = num_users;
      by_user->offsets.assign(num_users + 1, 0);
      by_item->offsets.assign(num_items + 1, 0);
      for (const auto& e : t.events_) {
        if (e.behavior != k) continue;
        ++by_user->offsets[e.user + 1];
        ++by_item->offsets[e.item + 1];
        ++t.user_degree_[e.user];
        ++t.item_degree_[e.item];
      }
      for (std::size_t i = 0; i < num_users; ++i) by_user->offsets[i + 1] += by_user->offsets[i];
      for (std::size_t j = 0; j < num_items; ++j) by_item->offsets[j + 1] += by_item->offsets[j];
      by_user->indices.resize(by_user->offsets.back());
      by_item->indices.resize(by_item->offsets.back());
      std::vector<std::size_t> fill_u(by_user->offsets.begin(), by_user->offsets.end() - 1);
      std::vector<std::size_t> fill_i(by_item->offsets.begin(), by_item->offsets.end() - 1);
      // events_ are sorted by (behavior, user, item): user rows come out sorted,
      // and item rows receive users in increasing order.
      for (const auto& e : t.events_) {
        if (e.behavior != k) continue;
        by_user->indices[fill_u[e.user]++] = e.item;
        by_item->indices[fill_i[e.item]++] = e.user;
      }
      t.by_user_.push_back(std::move(by_user));
      t.by_item_.push_back(std::move(by_item));
    }
    return t;
  }

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_behaviors() const { return num_behaviors_; }

  /// Neighbors of `node` under behavior k, sorted ascending.
  std::span<const index_t> neighbors(Side side, std::size_t node, std::size_t k) const {
    if (k >= num_behaviors_) throw ContractError("behavior index " + std::to_string(k) + " out of range");
    const std::size_t limit = side == Side::user ? num_users_ : num_items_;
    if (node >= limit) {
      throw ContractError(std::string(side == Side::user ? "user" : "item") + " index " +
                          std::to_string(node) + " out of range (" + std::to_string(limit) + ")");
    }
    return pattern(side, k)->row(node);
  }

  // Rows indexed by `side` nodes, columns by the opposite side.
  const std::shared_ptr<const SparsePattern>& pattern(Side side, std::size_t k) const {
    return side == Side::user ? by_user_[k] : by_item_[k];
  }

  bool contains(std::size_t user, std::size_t item, std::size_t k) const {
    const auto row = neighbors(Side::user, user, k);
    return std::binary_search(row.begin(), row.end(), static_cast<index_t>(item));
  }

  std::size_t edge_count(std::size_t k) const { return by_user_.at(k)->nnz(); }
  std::size_t edge_count() const { return events_.size(); }

  // Total interactions across all items and behaviors.
  std::size_t user_degree(std::size_t user) const { return user_degree_.at(user); }
  std::size_t item_degree(std::size_t item) const { return item_degree_.at(item); }

  // Deduplicated events sorted by (behavior, user, item).
  const std::vector<Interaction>& interactions() const { return events_; }

  bool same_edges(const InteractionTensor& other) const {
    if (num_users_ != other.num_users_ || num_items_ != other.num_items_ ||
        num_behaviors_ != other.num_behaviors_)
      return false;
    for (std::size_t k = 0; k < num_behaviors_; ++k) {
      if (by_user_[k]->offsets != other.by_user_[k]->offsets ||
          by_user_[k]->indices != other.by_user_[k]->indices)
        return false;
    }
    return true;
  }

  friend bool operator==(const InteractionTensor& a, const InteractionTensor& b) {
    return a.same_edges(b) && a.events_ == b.events_;
  }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::size_t num_behaviors_ = 0;
  std::vector<Interaction> events_;
  std::vector<std::shared_ptr<const SparsePattern>> by_user_;
  std::vector<std::shared_ptr<const SparsePattern>> by_item_;
  std::vector<std::size_t> user_degree_;
  std::vector<std::size_t> item_degree_;
};

// Keeps only the listed behaviors, renumbered in the given order.
inline InteractionTensor select_behaviors(const InteractionTensor& t, std::span<const std::size_t> kept) {
  std::vector<Interaction> events;
  for (const auto& e : t.interactions()) {
    auto it = std::find(kept.begin(), kept.end(), e.behavior);
    if (it == kept.end()) continue;
    Interaction copy = e;
    copy.behavior = static_cast<std::uint32_t>(it - kept.begin());
    events.push_back(copy);
  }
  return InteractionTensor::from_interactions(t.num_users(), t.num_items(), kept.size(), std::move(events));
}

// ---------------------------------------------------------------------------
// Normalized adjacency

/// x̄(i,j) = (#behaviors linking i and j) / sqrt(deg(i) * deg(j)), where the
/// degrees count interactions over all behaviors. Stored from both sides.
class NormalizedAdjacency {
 public:
  NormalizedAdjacency() = default;

  explicit NormalizedAdjacency(const InteractionTensor& t) {
    by_user_ = collapse(t, Side::user);
    by_item_ = collapse(t, Side::item);
    auto weight = [&](std::size_t user, std::size_t item, std::size_t links) {
      return static_cast<real>(links) /
             std::sqrt(static_cast<real>(t.user_degree(user)) * static_cast<real>(t.item_degree(item)));
    };
    for (std::size_t i = 0; i < by_user_.pattern.num_rows(); ++i) {
      const auto row = by_user_.pattern.row(i);
      for (std::size_t e = 0; e < row.size(); ++e) {
        const std::size_t pos = by_user_.pattern.offsets[i] + e;
        by_user_.values[pos] = weight(i, row[e], by_user_.counts[pos]);
      }
    }
    for (std::size_t j = 0; j < by_item_.pattern.num_rows(); ++j) {
      const auto row = by_item_.pattern.row(j);
      for (std::size_t e = 0; e < row.size(); ++e) {
        const std::size_t pos = by_item_.pattern.offsets[j] + e;
        by_item_.values[pos] = weight(row[e], j, by_item_.counts[pos]);
      }
    }
  }

  std::size_t num_users() const { return by_user_.pattern.num_rows(); }
  std::size_t num_items() const { return by_item_.pattern.num_rows(); }

  // Non-zero entries of row `node` on `side` (a user row lists items).
  std::span<const index_t> indices(Side side, std::size_t node) const { return part(side).pattern.row(node); }
  std::span<const real> values(Side side, std::size_t node) const {
    const auto& p = part(side);
    return std::span<const real>(p.values).subspan(p.pattern.offsets[node],
                                                   p.pattern.offsets[node + 1] - p.pattern.offsets[node]);
  }

  real value(std::size_t user, std::size_t item) const {
    const auto row = indices(Side::user, user);
    auto it = std::lower_bound(row.begin(), row.end(), static_cast<index_t>(item));
    if (it == row.end() || *it != item) return 0;
    return values(Side::user, user)[static_cast<std::size_t>(it - row.begin())];
  }

  std::size_t nnz() const { return by_user_.pattern.nnz(); }

 private:
  struct Part {
    SparsePattern pattern;
    std::vector<std::size_t> counts;
    std::vector<real> values;
  };

  static Part collapse(const InteractionTensor& t, Side side) {
    const std::size_t rows = side == Side::user ? t.num_users() : t.num_items();
    Part p;
    p.pattern.num_cols = side == Side::user ? t.num_items() : t.num_users();
    p.pattern.offsets.assign(1, 0);
    std::vector<index_t> merged;
    for (std::size_t r = 0; r < rows; ++r) {
      merged.clear();
      for (std::size_t k = 0; k < t.num_behaviors(); ++k) {
        const auto nb = t.neighbors(side, r, k);
        merged.insert(merged.end(), nb.begin(), nb.end());
      }
      std::sort(merged.begin(), merged.end());
      for (std::size_t a = 0; a < merged.size();) {
        std::size_t b = a;
        while (b < merged.size() && merged[b] == merged[a]) ++b;
        p.pattern.indices.push_back(merged[a]);
        p.counts.push_back(b - a);
        a = b;
      }
      p.pattern.offsets.push_back(p.pattern.indices.size());
    }
    p.values.assign(p.pattern.indices.size(), 0);
    return p;
  }

  const Part& part(Side side) const { return side == Side::user ? by_user_ : by_item_; }

  Part by_user_;
  Part by_item_;
};

inline NormalizedAdjacency build_normalized_adjacency(const InteractionTensor& t) {
  return NormalizedAdjacency(t);
}

// ---------------------------------------------------------------------------
// Ingest

class IngestError : public std::runtime_error {
 public:
  IngestError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// External id <-> contiguous index, in first-seen order.
class IdMap {
 public:
  index_t intern(std::string_view id) {
    auto it = index_.find(std::string(id));
    if (it != index_.end()) return it->second;
    const auto idx = static_cast<index_t>(ids_.size());
    ids_.emplace_back(id);
    index_.emplace(ids_.back(), idx);
    return idx;
  }

  std::optional<index_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& id(std::size_t index) const { return ids_.at(index); }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  friend bool operator==(const IdMap& a, const IdMap& b) { return a.ids_ == b.ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, index_t> index_;
};

struct Dataset {
  InteractionTensor tensor;
  BehaviorVocab vocab;
  IdMap users;
  IdMap items;
  bool has_timestamps = false;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

// Re-rank sequences densely so equal edge sets give equal tensors.
inline void densify_sequences(std::vector<Interaction>& events) {
  std::vector<std::size_t> order(events.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return events[a].sequence < events[b].sequence; });
  for (std::size_t r = 0; r < order.size(); ++r) events[order[r]].sequence = static_cast<std::int64_t>(r);
}

}  // namespace detail

/// Reads `user<TAB>item<TAB>behavior[<TAB>timestamp]` lines. Users and items
/// are numbered in first-seen order; repeated events collapse to one edge.
inline Dataset ingest(std::istream& in, const BehaviorVocab& vocab) {
  Dataset ds;
  ds.vocab = vocab;
  std::vector<Interaction> events;
  std::optional<bool> timestamps;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3 && fields.size() != 4) {
      throw IngestError(line_no, "expected 3 or 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw IngestError(line_no, "empty user or item id");
    const auto k = vocab.index_of(fields[2]);
    if (!k) throw IngestError(line_no, "unknown behavior label '" + std::string(fields[2]) + "'");
    const bool has_ts = fields.size() == 4;
    if (timestamps && *timestamps != has_ts) {
      throw IngestError(line_no, "timestamp column present on some lines but not others");
    }
    timestamps = has_ts;
    Interaction e;
    e.user = ds.users.intern(fields[0]);
    e.item = ds.items.intern(fields[1]);
    e.behavior = static_cast<std::uint32_t>(*k);
    e.sequence = static_cast<std::int64_t>(events.size());
    e.timestamp = e.sequence;
    if (has_ts) {
      const auto f = fields[3];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), e.timestamp);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw IngestError(line_no, "timestamp '" + std::string(f) + "' is not an integer");
      }
    }
    events.push_back(e);
  }
  if (events.empty()) throw IngestError(0, "no interaction records in input");
  ds.has_timestamps = timestamps.value_or(false);
  ds.tensor = InteractionTensor::from_interactions(ds.users.size(), ds.items.size(), vocab.size(),
                                                   std::move(events));
  auto dedup = ds.tensor.interactions();
  detail::densify_sequences(dedup);
  if (!ds.has_timestamps)
    for (auto& e : dedup) e.timestamp = e.sequence;
  ds.tensor = InteractionTensor::from_interactions(ds.users.size(), ds.items.size(), vocab.size(),
                                                   std::move(dedup));
  return ds;
}

inline Dataset ingest_file(const std::string& path, const BehaviorVocab& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file: " + path);
  return ingest(in, vocab);
}

// Writes events in first-occurrence order, so re-ingesting reproduces the
// same id maps and tensor.
inline void write_tsv(std::ostream& out, const Dataset& ds) {
  auto events = ds.tensor.interactions();
  std::sort(events.begin(), events.end(),
            [](const Interaction& a, const Interaction& b) { return a.sequence < b.sequence; });
  out << "# user\titem\tbehavior" << (ds.has_timestamps ? "\ttimestamp" : "") << '\n';
  for (const auto& e : events) {
    out << ds.users.id(e.user) << '\t' << ds.items.id(e.item) << '\t' << ds.vocab.names[e.behavior];
    if (ds.has_timestamps) out << '\t' << e.timestamp;
    out << '\n';
  }
}

inline constexpr std::array<char, 8> kGraphMagic = {'M', 'B', 'R', 'G', 'R', 'A', 'F', '1'};

inline void write_dataset(std::ostream& out, const Dataset& ds) {
  out.write(kGraphMagic.data(), kGraphMagic.size());
  io::write_u64(out, ds.vocab.size());
  for (const auto& n : ds.vocab.names) io::write_string(out, n);
  io::write_u64(out, ds.vocab.target_index);
  io::write_u64(out, ds.has_timestamps ? 1 : 0);
  io::write_u64(out, ds.users.size());
  for (const auto& id : ds.users.ids()) io::write_string(out, id);
  io::write_u64(out, ds.items.size());
  for (const auto& id : ds.items.ids()) io::write_string(out, id);
  const auto& events = ds.tensor.interactions();
  io::write_u64(out, events.size());
  for (const auto& e : events) {
    io::write_u64(out, e.user);
    io::write_u64(out, e.item);
    io::write_u64(out, e.behavior);
    io::write_u64(out, static_cast<std::uint64_t>(e.sequence));
    io::write_u64(out, static_cast<std::uint64_t>(e.timestamp));
  }
}

inline Dataset read_dataset(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 8 || magic != kGraphMagic) throw FormatError("not a graph file (bad magic)");
  std::vector<std::string> names(io::read_u64(in));
  for (auto& n : names) n = io::read_string(in);
  const std::uint64_t target = io::read_u64(in);
  if (target >= names.size()) throw FormatError("target behavior index out of range");
  Dataset ds;
  ds.vocab = BehaviorVocab::make(names, names[target]);
  ds.has_timestamps = io::read_u64(in) != 0;
  const std::uint64_t nu = io::read_u64(in);
  for (std::uint64_t i = 0; i < nu; ++i) ds.users.intern(io::read_string(in));
  const std::uint64_t ni = io::read_u64(in);
  for (std::uint64_t i = 0; i < ni; ++i) ds.items.intern(io::read_string(in));
  if (ds.users.size() != nu || ds.items.size() != ni) throw FormatError("duplicate ids in graph file");
  std::vector<Interaction> events(io::read_u64(in));
  for (auto& e : events) {
    e.user = static_cast<index_t>(io::read_u64(in));
    e.item = static_cast<index_t>(io::read_u64(in));
    e.behavior = static_cast<std::uint32_t>(io::read_u64(in));
    e.sequence = static_cast<std::int64_t>(io::read_u64(in));
    e.timestamp = static_cast<std::int64_t>(io::read_u64(in));
    if (e.user >= nu || e.item >= ni || e.behavior >= names.size()) throw FormatError("edge out of range");
  }
  ds.tensor = InteractionTensor::from_interactions(nu, ni, names.size(), std::move(events));
  return ds;
}

// Loads either a binary graph file or a TSV event log (detected by magic).
inline Dataset load_dataset(const std::string& path, const BehaviorVocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open data file: " + path);
  std::array<char, 8> head{};
  in.read(head.data(), head.size());
  const bool binary = in.gcount() == 8 && head == kGraphMagic;
  in.clear();
  in.seekg(0);
  if (binary) return read_dataset(in);
  return ingest(in, vocab);
}

// ---------------------------------------------------------------------------
// Leave-one-out split

struct TestPair {
  index_t user = 0;
  index_t item = 0;
  friend bool operator==(const TestPair&, const TestPair&) = default;
};

struct LeaveOneOutSplit {
  InteractionTensor train;
  std::vector<TestPair> test;  // sorted by user
  std::size_t users_without_target = 0;
};

/// Holds out, per user, the latest target-behavior interaction (by timestamp
/// or input order; ties go to the highest item index).
inline LeaveOneOutSplit leave_one_out_split(const InteractionTensor& t, std::size_t target) {
  if (target >= t.num_behaviors()) throw ContractError("target behavior index out of range");
  std::vector<std::optional<Interaction>> latest(t.num_users());
  for (const auto& e : t.interactions()) {
    if (e.behavior != target) continue;
    auto& cur = latest[e.user];
    if (!cur || e.timestamp > cur->timestamp || (e.timestamp == cur->timestamp && e.item > cur->item)) cur = e;
  }
  LeaveOneOutSplit split;
  std::vector<Interaction> kept;
  for (const auto& e : t.interactions()) {
    const auto& held = latest[e.user];
    if (held && e.behavior == target && e.item == held->item) continue;
    kept.push_back(e);
  }
  for (std::size_t u = 0; u < latest.size(); ++u) {
    if (latest[u]) split.test.push_back({static_cast<index_t>(u), latest[u]->item});
    else ++split.users_without_target;
  }
  split.train = InteractionTensor::from_interactions(t.num_users(), t.num_items(), t.num_behaviors(),
                                                     std::move(kept));
  return split;
}

}  // namespace mbrec
