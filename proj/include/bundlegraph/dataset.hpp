#ifndef BUNDLEGRAPH_DATASET_HPP
#define BUNDLEGRAPH_DATASET_HPP

// Relation files, validated binary interaction matrices and BI sparsification.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <compare>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bundlegraph/common.hpp"

namespace bundlegraph {

enum class RelationKind { UB, UI, BI };

inline const char* to_string(RelationKind k) {
  switch (k) {
    case RelationKind::UB: return "UB";
    case RelationKind::UI: return "UI";
    case RelationKind::BI: return "BI";
  }
  return "?";
}

struct Edge {
  Index left = 0;
  Index right = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Sparse binary relation between `rows` left entities and `cols` right entities.
/// Edges are kept sorted and unique; absent pairs are zeros.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;

  InteractionMatrix(Index rows, Index cols, RelationKind kind, std::vector<Edge> edges)
      : rows_(rows), cols_(cols), kind_(kind), edges_(std::move(edges)) {
    for (const auto& e : edges_) {
      if (e.left >= rows_ || e.right >= cols_) {
        throw DataError(std::string(to_string(kind_)) + " edge (" + std::to_string(e.left) +
                        "," + std::to_string(e.right) + ") outside " + std::to_string(rows_) +
                        "x" + std::to_string(cols_));
      }
    }
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  RelationKind kind() const { return kind_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t nnz() const { return edges_.size(); }

  bool contains(Index l, Index r) const {
    return std::binary_search(edges_.begin(), edges_.end(), Edge{l, r});
  }

  std::vector<Index> left_degrees() const {
    std::vector<Index> deg(rows_, 0);
    for (const auto& e : edges_) ++deg[e.left];
    return deg;
  }

  std::vector<Index> right_degrees() const {
    std::vector<Index> deg(cols_, 0);
    for (const auto& e : edges_) ++deg[e.right];
    return deg;
  }

  /// Row offsets into edges(); edges of row r are [offsets[r], offsets[r+1]).
  std::vector<std::size_t> row_offsets() const {
    std::vector<std::size_t> off(static_cast<std::size_t>(rows_) + 1, 0);
    for (const auto& e : edges_) ++off[e.left + 1];
    for (std::size_t r = 0; r < rows_; ++r) off[r + 1] += off[r];
    return off;
  }

  InteractionMatrix transposed() const {
    std::vector<Edge> t;
    t.reserve(edges_.size());
    for (const auto& e : edges_) t.push_back({e.right, e.left});
    return InteractionMatrix(cols_, rows_, kind_, std::move(t));
  }

  friend bool operator==(const InteractionMatrix&, const InteractionMatrix&) = default;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  RelationKind kind_ = RelationKind::UB;
  std::vector<Edge> edges_;
};

/// One bundle-recommendation dataset. Only the user-bundle relation is split.
struct Dataset {
  Index num_users = 0;
  Index num_bundles = 0;
  Index num_items = 0;
  InteractionMatrix ub_train;
  InteractionMatrix ub_valid;
  InteractionMatrix ub_test;
  InteractionMatrix ui;
  InteractionMatrix bi;

  InteractionMatrix ub_all() const {
    std::vector<Edge> all = ub_train.edges();
    all.insert(all.end(), ub_valid.edges().begin(), ub_valid.edges().end());
    all.insert(all.end(), ub_test.edges().begin(), ub_test.edges().end());
    return InteractionMatrix(num_users, num_bundles, RelationKind::UB, std::move(all));
  }
};

struct DatasetFiles {
  static constexpr const char* train = "user_bundle_train.txt";
  static constexpr const char* valid = "user_bundle_tune.txt";
  static constexpr const char* test = "user_bundle_test.txt";
  static constexpr const char* user_item = "user_item.txt";
  static constexpr const char* bundle_item = "bundle_item.txt";
  static constexpr const char* size_header = "data_size.txt";
};

namespace detail {

inline bool parse_u64(std::string_view tok, std::uint64_t& out) {
  if (tok.empty()) return false;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out, 10);
  return ec == std::errc() && p == tok.data() + tok.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) toks.push_back(line.substr(i, j - i));
    i = j;
  }
  return toks;
}

struct RawPairs {
  std::vector<Edge> edges;
  std::uint64_t max_left = 0;
  std::uint64_t max_right = 0;
  bool any = false;
};

inline RawPairs read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open required file " + path.string());
  RawPairs out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto toks = split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    if (toks.size() != 2) {
      throw ParseError(path.string(), lineno, "expected two integer ids, got " +
                                                  std::to_string(toks.size()) + " fields");
    }
    std::uint64_t a = 0, b = 0;
    if (!parse_u64(toks[0], a) || !parse_u64(toks[1], b)) {
      throw ParseError(path.string(), lineno, "non-integer id in '" + line + "'");
    }
    if (a >= 0xffffffffull || b >= 0xffffffffull) {
      throw ParseError(path.string(), lineno, "id too large");
    }
    out.edges.push_back({static_cast<Index>(a), static_cast<Index>(b)});
    out.max_left = std::max(out.max_left, a);
    out.max_right = std::max(out.max_right, b);
    out.any = true;
  }
  return out;
}

inline void check_range(const std::filesystem::path& path, Index rows, Index cols) {
  // Re-scan to report the first offending line number.
  std::ifstream in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    std::uint64_t a = 0, b = 0;
    parse_u64(toks[0], a);
    parse_u64(toks[1], b);
    if (a >= rows || b >= cols) {
      throw ParseError(path.string(), lineno,
                       "id out of range: (" + std::to_string(a) + "," + std::to_string(b) +
                           ") with declared size " + std::to_string(rows) + "x" +
                           std::to_string(cols));
    }
  }
}

inline std::optional<std::array<std::uint64_t, 3>> read_size_header(
    const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> candidates = {dir / DatasetFiles::size_header};
  const auto name = dir.filename().empty() ? dir.parent_path().filename() : dir.filename();
  candidates.push_back(dir / (name.string() + "_data_size.txt"));
  for (const auto& p : candidates) {
    std::ifstream in(p);
    if (!in) continue;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto toks = split_ws(line);
      if (toks.empty() || toks.front().front() == '#') continue;
      std::array<std::uint64_t, 3> dims{};
      if (toks.size() != 3 || !parse_u64(toks[0], dims[0]) || !parse_u64(toks[1], dims[1]) ||
          !parse_u64(toks[2], dims[2])) {
        throw ParseError(p.string(), lineno, "expected 'users bundles items'");
      }
      return dims;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Loads the five relation files from `dir`. Entity counts come from an optional
/// size header (`data_size.txt` or `<dirname>_data_size.txt`), otherwise from the
/// largest id seen in any file.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path files[5] = {dir / DatasetFiles::train, dir / DatasetFiles::valid,
                             dir / DatasetFiles::test, dir / DatasetFiles::user_item,
                             dir / DatasetFiles::bundle_item};
  for (const auto& f : files) {
    if (!fs::exists(f)) throw DataError("missing dataset file: " + f.string());
  }
  detail::RawPairs raw[5];
  for (int i = 0; i < 5; ++i) raw[i] = detail::read_pairs(files[i]);

  std::uint64_t users = 0, bundles = 0, items = 0;
  auto bump = [](std::uint64_t& n, const detail::RawPairs& r, bool left) {
    if (r.any) n = std::max(n, (left ? r.max_left : r.max_right) + 1);
  };
  for (int i = 0; i < 3; ++i) {
    bump(users, raw[i], true);
    bump(bundles, raw[i], false);
  }
  bump(users, raw[3], true);
  bump(items, raw[3], false);
  bump(bundles, raw[4], true);
  bump(items, raw[4], false);

  if (auto dims = detail::read_size_header(dir)) {
    users = (*dims)[0];
    bundles = (*dims)[1];
    items = (*dims)[2];
    for (int i = 0; i < 3; ++i)
      detail::check_range(files[i], static_cast<Index>(users), static_cast<Index>(bundles));
    detail::check_range(files[3], static_cast<Index>(users), static_cast<Index>(items));
    detail::check_range(files[4], static_cast<Index>(bundles), static_cast<Index>(items));
  }

  Dataset d;
  d.num_users = static_cast<Index>(users);
  d.num_bundles = static_cast<Index>(bundles);
  d.num_items = static_cast<Index>(items);
  d.ub_train = InteractionMatrix(d.num_users, d.num_bundles, RelationKind::UB, raw[0].edges);
  d.ub_valid = InteractionMatrix(d.num_users, d.num_bundles, RelationKind::UB, raw[1].edges);
  d.ub_test = InteractionMatrix(d.num_users, d.num_bundles, RelationKind::UB, raw[2].edges);
  d.ui = InteractionMatrix(d.num_users, d.num_items, RelationKind::UI, raw[3].edges);
  d.bi = InteractionMatrix(d.num_bundles, d.num_items, RelationKind::BI, raw[4].edges);

  if (d.ub_train.nnz() == 0) throw DataError("empty training split: " + files[0].string());
  auto overlap = [](const InteractionMatrix& a, const InteractionMatrix& b) {
    std::vector<Edge> common;
    std::set_intersection(a.edges().begin(), a.edges().end(), b.edges().begin(),
                          b.edges().end(), std::back_inserter(common));
    return common.size();
  };
  if (overlap(d.ub_train, d.ub_valid) || overlap(d.ub_train, d.ub_test) ||
      overlap(d.ub_valid, d.ub_test)) {
    throw DataError("user-bundle train/validation/test splits are not disjoint in " +
                    dir.string());
  }
  return d;
}

inline void write_relation(const std::filesystem::path& path, const InteractionMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& e : m.edges()) out << e.left << '\t' << e.right << '\n';
}

/// Writes all relation files plus a size header so that reloading reproduces the
/// same entity counts even when trailing entities have no edges.
inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_relation(dir / DatasetFiles::train, d.ub_train);
  write_relation(dir / DatasetFiles::valid, d.ub_valid);
  write_relation(dir / DatasetFiles::test, d.ub_test);
  write_relation(dir / DatasetFiles::user_item, d.ui);
  write_relation(dir / DatasetFiles::bundle_item, d.bi);
  std::ofstream out(dir / DatasetFiles::size_header);
  out << d.num_users << '\t' << d.num_bundles << '\t' << d.num_items << '\n';
}

/// Per bundle, the fraction of its items that have no user-item interaction.
/// Bundles without items get rate 0.
inline std::vector<double> biu_sparsity_rates(const Dataset& d) {
  const auto item_deg = d.ui.right_degrees();
  std::vector<std::size_t> total(d.num_bundles, 0), cold(d.num_bundles, 0);
  for (const auto& e : d.bi.edges()) {
    ++total[e.left];
    if (item_deg[e.right] == 0) ++cold[e.left];
  }
  std::vector<double> rates(d.num_bundles, 0.0);
  for (Index b = 0; b < d.num_bundles; ++b) {
    if (total[b] > 0) rates[b] = static_cast<double>(cold[b]) / static_cast<double>(total[b]);
  }
  return rates;
}

struct StatisticsRecord {
  Index users = 0;
  Index bundles = 0;
  Index items = 0;
  std::size_t ub_train = 0;
  std::size_t ub_valid = 0;
  std::size_t ub_test = 0;
  std::size_t ub_total = 0;
  std::size_t ui = 0;
  std::size_t bi = 0;
  double avg_items_per_bundle = 0.0;
  std::vector<double> biu_sparsity;  // one entry per bundle
};

inline StatisticsRecord dataset_stats(const Dataset& d) {
  StatisticsRecord s;
  s.users = d.num_users;
  s.bundles = d.num_bundles;
  s.items = d.num_items;
  s.ub_train = d.ub_train.nnz();
  s.ub_valid = d.ub_valid.nnz();
  s.ub_test = d.ub_test.nnz();
  s.ub_total = s.ub_train + s.ub_valid + s.ub_test;
  s.ui = d.ui.nnz();
  s.bi = d.bi.nnz();
  s.avg_items_per_bundle =
      d.num_bundles ? static_cast<double>(s.bi) / static_cast<double>(d.num_bundles) : 0.0;
  s.biu_sparsity = biu_sparsity_rates(d);
  return s;
}

/// key=value summary lines.
inline void write_stats(std::ostream& os, const StatisticsRecord& s) {
  double mean_rate = 0.0;
  std::size_t fully_cold = 0;
  for (double r : s.biu_sparsity) {
    mean_rate += r;
    if (r >= 1.0) ++fully_cold;
  }
  if (!s.biu_sparsity.empty()) mean_rate /= static_cast<double>(s.biu_sparsity.size());
  os << "users=" << s.users << '\n'
     << "bundles=" << s.bundles << '\n'
     << "items=" << s.items << '\n'
     << "ub_train=" << s.ub_train << '\n'
     << "ub_valid=" << s.ub_valid << '\n'
     << "ub_test=" << s.ub_test << '\n'
     << "ub_total=" << s.ub_total << '\n'
     << "ui=" << s.ui << '\n'
     << "bi=" << s.bi << '\n'
     << "avg_items_per_bundle=" << s.avg_items_per_bundle << '\n'
     << "mean_biu_sparsity=" << mean_rate << '\n'
     << "bundles_all_items_cold=" << fully_cold << '\n';
}

/// Summary followed by one `bundle<TAB>rate` row per bundle.
inline void write_stats_report(std::ostream& os, const StatisticsRecord& s) {
  os << "# dataset statistics\n";
  write_stats(os, s);
  os << "# bundle\tbiu_sparsity\n";
  for (std::size_t b = 0; b < s.biu_sparsity.size(); ++b) {
    os << b << '\t' << s.biu_sparsity[b] << '\n';
  }
}

/// Copy of `d` keeping round((1 - drop_rate) * |BI|) bundle-item edges chosen
/// uniformly at random. Bundles left without items are kept.
inline Dataset sparsify_bi(const Dataset& d, double drop_rate, std::uint64_t seed) {
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) {
    throw std::invalid_argument("drop_rate must lie in [0, 1), got " + std::to_string(drop_rate));
  }
  const auto& edges = d.bi.edges();
  const auto keep = static_cast<std::size_t>(
      std::llround((1.0 - drop_rate) * static_cast<double>(edges.size())));
  std::vector<Edge> kept;
  kept.reserve(keep);
  Rng rng = make_stream(seed, "sparsify_bi");
  std::sample(edges.begin(), edges.end(), std::back_inserter(kept), keep, rng);
  Dataset out = d;
  out.bi = InteractionMatrix(d.num_bundles, d.num_items, RelationKind::BI, std::move(kept));
  return out;
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_DATASET_HPP
