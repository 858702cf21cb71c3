#ifndef BUNDLEGRAPH_TESTS_FIXTURES_HPP
#define BUNDLEGRAPH_TESTS_FIXTURES_HPP

// Shared test data builders and dense reference implementations. The dense
// routines recompute everything from edge lists with plain loops and never call
// the sparse kernels they are compared against.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "bundlegraph/bundlegraph.hpp"

namespace fixtures {

namespace bg = bundlegraph;
using Dense = std::vector<std::vector<double>>;

inline Dense zeros(std::size_t r, std::size_t c) { return Dense(r, std::vector<double>(c, 0.0)); }

inline Dense matmul(const Dense& a, const Dense& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Dense out = zeros(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t j = 0; j < m; ++j) out[i][j] += a[i][t] * b[t][j];
  return out;
}

inline Dense transpose(const Dense& a) {
  if (a.empty()) return {};
  Dense t = zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Dense add(const Dense& a, const Dense& b, double scale_b = 1.0) {
  Dense out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += scale_b * b[i][j];
  return out;
}

inline Dense scaled(const Dense& a, double s) {
  Dense out = a;
  for (auto& r : out)
    for (auto& v : r) v *= s;
  return out;
}

/// Binary matrix from an edge list.
inline Dense binary(std::size_t rows, std::size_t cols, const std::vector<bg::Edge>& edges) {
  Dense m = zeros(rows, cols);
  for (const auto& e : edges) m[e.left][e.right] = 1.0;
  return m;
}

/// D_L^{-1/2} M D_R^{-1/2} computed from row and column sums.
inline Dense dense_normalized(const Dense& m) {
  const std::size_t r = m.size(), c = r ? m[0].size() : 0;
  std::vector<double> dl(r, 0.0), dr(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      dl[i] += m[i][j];
      dr[j] += m[i][j];
    }
  Dense out = zeros(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (m[i][j] != 0) out[i][j] = m[i][j] / std::sqrt(dl[i]) / std::sqrt(dr[j]);
  return out;
}

/// Row-mean operator: out[i][j] = m[i][j] / rowsum(i), zero rows stay zero.
inline Dense dense_row_mean(const Dense& m) {
  Dense out = m;
  for (auto& row : out) {
    double s = 0;
    for (double v : row) s += v;
    if (s > 0)
      for (auto& v : row) v /= s;
  }
  return out;
}

template <class T>
Dense to_dense(const bg::EmbeddingBlock<T>& b) {
  Dense out = zeros(b.count(), b.dim());
  for (std::size_t i = 0; i < b.count(); ++i)
    for (std::size_t j = 0; j < b.dim(); ++j) out[i][j] = static_cast<double>(b(i, j));
  return out;
}

template <class T>
double max_abs_diff(const bg::EmbeddingBlock<T>& b, const Dense& ref) {
  double m = 0;
  for (std::size_t i = 0; i < b.count(); ++i)
    for (std::size_t j = 0; j < b.dim(); ++j)
      m = std::max(m, std::abs(static_cast<double>(b(i, j)) - ref[i][j]));
  return m;
}

/// Pooled two-sided propagation via the full symmetric adjacency
/// [[0, A], [A^T, 0]] raised to successive powers.
inline std::pair<Dense, Dense> dense_propagate_pool(const Dense& a_norm, const Dense& left0,
                                                    const Dense& right0, std::size_t K,
                                                    double divisor) {
  const std::size_t r = a_norm.size(), c = r ? a_norm[0].size() : 0, d = left0.empty() ? 0 : left0[0].size();
  Dense big = zeros(r + c, r + c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      big[i][r + j] = a_norm[i][j];
      big[r + j][i] = a_norm[i][j];
    }
  Dense x = zeros(r + c, d);
  for (std::size_t i = 0; i < r; ++i) x[i] = left0[i];
  for (std::size_t j = 0; j < c; ++j) x[r + j] = right0[j];
  Dense sum = x, cur = x;
  for (std::size_t k = 1; k <= K; ++k) {
    cur = matmul(big, cur);
    sum = add(sum, cur);
  }
  sum = scaled(sum, 1.0 / divisor);
  Dense l(sum.begin(), sum.begin() + static_cast<std::ptrdiff_t>(r));
  Dense rr(sum.begin() + static_cast<std::ptrdiff_t>(r), sum.end());
  return {l, rr};
}

inline std::vector<bg::Edge> random_edges(std::size_t rows, std::size_t cols, std::size_t count,
                                          std::mt19937_64& rng) {
  std::set<bg::Edge> s;
  std::uniform_int_distribution<bg::Index> r(0, static_cast<bg::Index>(rows - 1));
  std::uniform_int_distribution<bg::Index> c(0, static_cast<bg::Index>(cols - 1));
  const std::size_t cap = std::min(count, rows * cols);
  while (s.size() < cap) s.insert({r(rng), c(rng)});
  return {s.begin(), s.end()};
}

template <class T>
bg::EmbeddingBlock<T> random_block(std::size_t n, std::size_t d, std::mt19937_64& rng,
                                   double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  bg::EmbeddingBlock<T> b(n, d);
  for (auto& v : b.values()) v = static_cast<T>(g(rng));
  return b;
}

template <class T>
bg::EmbeddingTable<T> random_table(const bg::Dataset& d, std::size_t dim, std::mt19937_64& rng,
                                   double scale = 1.0) {
  bg::EmbeddingTable<T> t;
  t.users = random_block<T>(d.num_users, dim, rng, scale);
  t.bundles = random_block<T>(d.num_bundles, dim, rng, scale);
  t.items = random_block<T>(d.num_items, dim, rng, scale);
  return t;
}

/// Random dataset; UB edges are split roughly 70/15/15 and each user keeps at
/// least one training edge when possible.
inline bg::Dataset random_dataset(bg::Index m, bg::Index n, bg::Index o, std::size_t ub_edges,
                                  std::size_t ui_edges, std::size_t bi_edges,
                                  std::mt19937_64& rng) {
  bg::Dataset d;
  d.num_users = m;
  d.num_bundles = n;
  d.num_items = o;
  auto ub = random_edges(m, n, ub_edges, rng);
  std::shuffle(ub.begin(), ub.end(), rng);
  std::vector<bg::Edge> tr, va, te;
  std::set<bg::Index> seen;
  std::uniform_real_distribution<double> u01(0, 1);
  for (const auto& e : ub) {
    const double x = u01(rng);
    if (!seen.count(e.left) || x < 0.7) {
      tr.push_back(e);
      seen.insert(e.left);
    } else if (x < 0.85) {
      va.push_back(e);
    } else {
      te.push_back(e);
    }
  }
  d.ub_train = bg::InteractionMatrix(m, n, bg::RelationKind::UB, tr);
  d.ub_valid = bg::InteractionMatrix(m, n, bg::RelationKind::UB, va);
  d.ub_test = bg::InteractionMatrix(m, n, bg::RelationKind::UB, te);
  d.ui = bg::InteractionMatrix(m, o, bg::RelationKind::UI, random_edges(m, o, ui_edges, rng));
  d.bi = bg::InteractionMatrix(n, o, bg::RelationKind::BI, random_edges(n, o, bi_edges, rng));
  return d;
}

/// 20 users, 10 bundles, 30 items in five disjoint communities. Community g owns
/// users 4g..4g+3, bundles 2g and 2g+1, and items 6g..6g+5; bundle 2g holds
/// items 6g..6g+2 and bundle 2g+1 holds 6g+3..6g+5. Every user interacts with
/// both community bundles (training split) and all six community items.
inline bg::Dataset planted_dataset() {
  bg::Dataset d;
  d.num_users = 20;
  d.num_bundles = 10;
  d.num_items = 30;
  std::vector<bg::Edge> ub, ui, bi;
  for (bg::Index g = 0; g < 5; ++g) {
    for (bg::Index u = 4 * g; u < 4 * g + 4; ++u) {
      ub.push_back({u, 2 * g});
      ub.push_back({u, 2 * g + 1});
      for (bg::Index i = 6 * g; i < 6 * g + 6; ++i) ui.push_back({u, i});
    }
    for (bg::Index i = 0; i < 3; ++i) {
      bi.push_back({2 * g, 6 * g + i});
      bi.push_back({2 * g + 1, 6 * g + 3 + i});
    }
  }
  d.ub_train = bg::InteractionMatrix(20, 10, bg::RelationKind::UB, ub);
  d.ub_valid = bg::InteractionMatrix(20, 10, bg::RelationKind::UB, {});
  d.ub_test = bg::InteractionMatrix(20, 10, bg::RelationKind::UB, {});
  d.ui = bg::InteractionMatrix(20, 30, bg::RelationKind::UI, ui);
  d.bi = bg::InteractionMatrix(10, 30, bg::RelationKind::BI, bi);
  return d;
}

/// Default configuration with the embedding size scaled down to 16.
inline bg::TrainConfig planted_config() {
  bg::TrainConfig cfg = bg::parse_run_config({}).train;
  cfg.dim = 16;
  cfg.epochs = 500;
  return cfg;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng{std::random_device{}()};
    path_ = std::filesystem::temp_directory_path() /
            ("bundlegraph_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& body) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << body;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Brute-force top-K: full sort of unmasked bundles, descending score, ascending id.
inline std::vector<bg::Index> brute_topk(const std::vector<double>& scores,
                                         const std::set<bg::Index>& masked, std::size_t K) {
  std::vector<std::pair<double, bg::Index>> all;
  for (bg::Index b = 0; b < scores.size(); ++b)
    if (!masked.count(b)) all.push_back({scores[b], b});
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<bg::Index> out;
  for (std::size_t k = 0; k < std::min(K, all.size()); ++k) out.push_back(all[k].second);
  return out;
}

}  // namespace fixtures

#endif  // BUNDLEGRAPH_TESTS_FIXTURES_HPP
