#ifndef BUNDLEGRAPH_EVALUATION_HPP
#define BUNDLEGRAPH_EVALUATION_HPP

// All-ranking top-K evaluation and representation diagnostics.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bundlegraph/dataset.hpp"
#include "bundlegraph/fusion.hpp"
#include "bundlegraph/objective.hpp"
#include "bundlegraph/views.hpp"

namespace bundlegraph {

enum class MaskPolicy { none, train, train_and_valid };
enum class Split { train, valid, test };

/// Per-row sorted neighbour lists of an InteractionMatrix.
class Adjacency {
 public:
  Adjacency() = default;
  explicit Adjacency(const InteractionMatrix& m) : off_(m.row_offsets()) {
    ids_.reserve(m.nnz());
    for (const auto& e : m.edges()) ids_.push_back(e.right);
  }
  std::span<const Index> of(std::size_t row) const {
    if (row + 1 >= off_.size()) return {};
    return {ids_.data() + off_[row], off_[row + 1] - off_[row]};
  }
  bool contains(std::size_t row, Index col) const {
    auto r = of(row);
    return std::binary_search(r.begin(), r.end(), col);
  }
  std::size_t rows() const { return off_.empty() ? 0 : off_.size() - 1; }

 private:
  std::vector<std::size_t> off_;
  std::vector<Index> ids_;
};

struct RankingResult {
  std::size_t k = 0;
  std::vector<Index> users;               // users that were ranked
  std::vector<std::vector<Index>> lists;  // top-k bundle ids per user, best first
};

inline const InteractionMatrix& split_matrix(const Dataset& d, Split s) {
  return s == Split::train ? d.ub_train : s == Split::valid ? d.ub_valid : d.ub_test;
}

/// Users with at least one edge in `gt`.
inline std::vector<Index> users_with_edges(const InteractionMatrix& gt) {
  std::vector<Index> users;
  for (const auto& e : gt.edges())
    if (users.empty() || users.back() != e.left) users.push_back(e.left);
  return users;
}

/// Masks to apply for a policy: train edges, optionally validation edges too.
inline std::vector<Adjacency> masks_for(const Dataset& d, MaskPolicy p) {
  std::vector<Adjacency> out;
  if (p == MaskPolicy::train || p == MaskPolicy::train_and_valid) out.emplace_back(d.ub_train);
  if (p == MaskPolicy::train_and_valid) out.emplace_back(d.ub_valid);
  return out;
}

/// Generic all-ranking: `fill(u, scores)` writes one score per bundle. Masked
/// bundles are excluded; ties go to the smaller bundle id.
template <class ScoreFill>
RankingResult rank_all(ScoreFill&& fill, std::size_t num_bundles, std::span<const Index> users,
                       std::size_t K, std::span<const Adjacency> masks) {
  RankingResult r;
  r.k = K;
  r.users.assign(users.begin(), users.end());
  r.lists.resize(users.size());
  parallel_for(users.size(), [&](std::size_t lo, std::size_t hi) {
    std::vector<double> scores(num_bundles);
    std::vector<Index> cand;
    cand.reserve(num_bundles);
    for (std::size_t n = lo; n < hi; ++n) {
      const Index u = users[n];
      fill(u, std::span<double>(scores));
      cand.clear();
      for (Index b = 0; b < num_bundles; ++b) {
        bool masked = false;
        for (const auto& m : masks) masked = masked || m.contains(u, b);
        if (!masked) cand.push_back(b);
      }
      for (auto& s : scores)
        if (std::isnan(s)) s = -std::numeric_limits<double>::infinity();
      const std::size_t k = std::min(K, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                        [&](Index a, Index b) {
                          return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                        });
      r.lists[n].assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }, 8);
  return r;
}

template <class T>
auto fused_scorer(const FusedRepresentations<T>& f) {
  return [&f](Index u, std::span<double> out) {
    auto ur = f.users.row(u);
    for (std::size_t b = 0; b < out.size(); ++b)
      out[b] = static_cast<double>(dot(ur, f.bundles.row(b)));
  };
}

template <class T>
auto per_view_sum_scorer(const ViewRepresentations<T>& v, const ViewSet& views) {
  return [&v, views](Index u, std::span<double> out) {
    const auto en = views.enabled();
    for (std::size_t b = 0; b < out.size(); ++b) {
      double s = 0;
      for (View x : en) s += static_cast<double>(dot(v.users(x).row(u), v.bundles(x).row(b)));
      out[b] = s;
    }
  };
}

enum class ScoreComponent { total, ego, cross };

/// Scores from one component of the lambda-weighted decomposition. cross is
/// computed as total - ego.
template <class T>
auto decomposed_scorer(const ViewRepresentations<T>& v, const FusedRepresentations<T>& f,
                       const FusionCoefficients& lambda, ScoreComponent which) {
  return [&v, &f, lambda, which](Index u, std::span<double> out) {
    for (std::size_t b = 0; b < out.size(); ++b) {
      const double total = static_cast<double>(dot(f.users.row(u), f.bundles.row(b)));
      if (which == ScoreComponent::total) {
        out[b] = total;
        continue;
      }
      double ego = 0;
      for (View x : kAllViews) {
        const double l = lambda[x];
        if (l != 0)
          ego += l * l * static_cast<double>(dot(v.users(x).row(u), v.bundles(x).row(b)));
      }
      out[b] = which == ScoreComponent::ego ? ego : total - ego;
    }
  };
}

/// Ranks every user with a ground-truth edge in `target` by fused scores.
template <class T>
RankingResult rank_all(const FusedRepresentations<T>& f, const Dataset& d, std::size_t K,
                       MaskPolicy mask, Split target = Split::test) {
  const auto users = users_with_edges(split_matrix(d, target));
  const auto masks = masks_for(d, mask);
  return rank_all(fused_scorer(f), d.num_bundles, users, K, masks);
}

/// Mean over ranked users with ground truth of |top-K ∩ gt| / |gt|.
inline double recall_at_k(const RankingResult& r, const InteractionMatrix& gt, std::size_t K) {
  const Adjacency adj(gt);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < r.users.size(); ++i) {
    auto truth = adj.of(r.users[i]);
    if (truth.empty()) continue;
    const auto& list = r.lists[i];
    std::size_t hits = 0;
    for (std::size_t p = 0; p < std::min(K, list.size()); ++p)
      hits += std::binary_search(truth.begin(), truth.end(), list[p]);
    sum += static_cast<double>(hits) / static_cast<double>(truth.size());
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// Binary-gain NDCG@K averaged over ranked users with ground truth.
inline double ndcg_at_k(const RankingResult& r, const InteractionMatrix& gt, std::size_t K) {
  const Adjacency adj(gt);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < r.users.size(); ++i) {
    auto truth = adj.of(r.users[i]);
    if (truth.empty()) continue;
    const auto& list = r.lists[i];
    double dcg = 0, idcg = 0;
    for (std::size_t p = 0; p < std::min(K, list.size()); ++p)
      if (std::binary_search(truth.begin(), truth.end(), list[p]))
        dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    for (std::size_t p = 0; p < std::min(K, truth.size()); ++p)
      idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    sum += dcg / idcg;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

struct GroupHit {
  double lo = 0;
  double hi = 0;
  bool closed_hi = false;  // last bucket includes its upper edge
  double hit = 0;
  std::size_t n_pairs = 0;
};

/// Buckets ground-truth (u, b) pairs by the bundle's B-I-U sparsity rate and
/// reports, per bucket, the fraction of pairs whose bundle is in u's top-K.
/// Buckets are [e_i, e_{i+1}) with the last one closed; empty buckets are omitted.
inline std::vector<GroupHit> group_hit_analysis(const RankingResult& r,
                                                const InteractionMatrix& gt,
                                                std::span<const double> bundle_rates,
                                                std::size_t K,
                                                std::span<const double> group_edges) {
  if (group_edges.size() < 2) throw std::invalid_argument("groups: need at least two edges");
  for (std::size_t i = 1; i < group_edges.size(); ++i)
    if (!(group_edges[i] > group_edges[i - 1]))
      throw std::invalid_argument("groups: edges must be strictly increasing");
  if (group_edges.front() != 0.0 || group_edges.back() != 1.0)
    throw std::invalid_argument("groups: edges must start at 0 and end at 1");
  const std::size_t nb = group_edges.size() - 1;
  auto bucket_of = [&](double rate) {
    for (std::size_t g = 0; g + 1 < nb; ++g)
      if (rate < group_edges[g + 1]) return g;
    return nb - 1;
  };
  std::vector<std::size_t> pairs(nb, 0), hits(nb, 0);
  std::vector<std::size_t> row_of(gt.rows(), r.users.size());
  for (std::size_t i = 0; i < r.users.size(); ++i) row_of[r.users[i]] = i;
  for (const auto& e : gt.edges()) {
    const std::size_t g = bucket_of(bundle_rates[e.right]);
    ++pairs[g];
    const std::size_t i = row_of[e.left];
    if (i == r.users.size()) continue;
    const auto& list = r.lists[i];
    const auto end = list.begin() + static_cast<std::ptrdiff_t>(std::min(K, list.size()));
    if (std::find(list.begin(), end, e.right) != end) ++hits[g];
  }
  std::vector<GroupHit> out;
  for (std::size_t g = 0; g < nb; ++g) {
    if (pairs[g] == 0) continue;
    out.push_back({group_edges[g], group_edges[g + 1], g + 1 == nb,
                   static_cast<double>(hits[g]) / static_cast<double>(pairs[g]), pairs[g]});
  }
  return out;
}

struct RankMetrics {
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
};

inline RankMetrics metrics_for(const RankingResult& r, const InteractionMatrix& gt,
                               std::span<const std::size_t> ks) {
  RankMetrics m;
  for (auto k : ks) {
    m.recall[k] = recall_at_k(r, gt, k);
    m.ndcg[k] = ndcg_at_k(r, gt, k);
  }
  return m;
}

struct DecomposedMetrics {
  RankMetrics total, ego, cross;
};

/// Ranks three times with total, ego-only and cross-only scores.
template <class T>
DecomposedMetrics decomposed_eval(const ViewRepresentations<T>& v,
                                  const FusionCoefficients& lambda, const Dataset& d,
                                  std::span<const std::size_t> ks,
                                  MaskPolicy mask = MaskPolicy::train,
                                  Split target = Split::test) {
  const auto f = fuse(v, lambda);
  const auto& gt = split_matrix(d, target);
  const auto users = users_with_edges(gt);
  const auto masks = masks_for(d, mask);
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  DecomposedMetrics out;
  auto run = [&](ScoreComponent c) {
    auto r = rank_all(decomposed_scorer(v, f, lambda, c), d.num_bundles, users, kmax, masks);
    return metrics_for(r, gt, ks);
  };
  out.total = run(ScoreComponent::total);
  out.ego = run(ScoreComponent::ego);
  out.cross = run(ScoreComponent::cross);
  return out;
}

struct AlignmentDispersion {
  std::map<std::string, double> alignment;   // "U:UB,UI" -> mean cosine
  std::map<std::string, double> dispersion;  // "U" / "B" -> mean pairwise cosine
  std::size_t skipped = 0;                   // zero-norm pairs left out
};

namespace detail {
template <class T>
bool cosine(std::span<const T> a, std::span<const T> b, double& out) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ab += static_cast<double>(a[j]) * b[j];
    aa += static_cast<double>(a[j]) * a[j];
    bb += static_cast<double>(b[j]) * b[j];
  }
  if (aa == 0 || bb == 0) return false;
  out = ab / (std::sqrt(aa) * std::sqrt(bb));
  return true;
}
}  // namespace detail

/// Cross-view alignment (same entity, two views) and dispersion (sampled pairs
/// of distinct entities in the fused space).
template <class T>
AlignmentDispersion alignment_dispersion(const ViewRepresentations<T>& v,
                                         const FusedRepresentations<T>& fused,
                                         const ViewSet& views, std::size_t sample_pairs,
                                         Rng& rng) {
  AlignmentDispersion out;
  auto align = [&](const char* kind, const EmbeddingBlock<T>& a, const EmbeddingBlock<T>& b,
                   const std::string& pair) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.count(); ++i) {
      double c = 0;
      if (detail::cosine(a.row(i), b.row(i), c)) {
        sum += c;
        ++n;
      } else {
        ++out.skipped;
      }
    }
    if (n) out.alignment[std::string(kind) + ":" + pair] = sum / static_cast<double>(n);
  };
  for (auto [x, y] : views.pairs()) {
    const std::string pair = std::string(to_string(x)) + "," + to_string(y);
    align("U", v.users(x), v.users(y), pair);
    align("B", v.bundles(x), v.bundles(y), pair);
  }
  auto disperse = [&](const char* kind, const EmbeddingBlock<T>& e) {
    if (e.count() < 2 || sample_pairs == 0) return;
    std::uniform_int_distribution<std::size_t> pick(0, e.count() - 1);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < sample_pairs; ++s) {
      std::size_t i = pick(rng), j = pick(rng);
      while (j == i) j = pick(rng);
      double c = 0;
      if (detail::cosine(e.row(i), e.row(j), c)) {
        sum += c;
        ++n;
      } else {
        ++out.skipped;
      }
    }
    if (n) out.dispersion[kind] = sum / static_cast<double>(n);
  };
  disperse("U", fused.users);
  disperse("B", fused.bundles);
  return out;
}

struct MetricsReport {
  RankMetrics metrics;
  std::size_t evaluated_users = 0;
  std::size_t group_k = 20;
  std::vector<GroupHit> groups;
  std::optional<DecomposedMetrics> decomposition;
  std::optional<AlignmentDispersion> diagnostics;
};

inline std::string format_group(const GroupHit& g) {
  std::ostringstream os;
  os << "[" << g.lo << "," << g.hi << (g.closed_hi ? "]" : ")");
  return os.str();
}

/// key=value lines, e.g. `recall@20=0.0907`.
inline void write_report(std::ostream& os, const MetricsReport& r) {
  const auto old = os.precision(6);
  os << std::fixed;
  os << "users=" << r.evaluated_users << '\n';
  for (auto [k, v] : r.metrics.recall) os << "recall@" << k << '=' << v << '\n';
  for (auto [k, v] : r.metrics.ndcg) os << "ndcg@" << k << '=' << v << '\n';
  if (r.decomposition) {
    auto emit = [&](const char* name, const RankMetrics& m) {
      for (auto [k, v] : m.recall) os << name << ".recall@" << k << '=' << v << '\n';
      for (auto [k, v] : m.ndcg) os << name << ".ndcg@" << k << '=' << v << '\n';
    };
    emit("total", r.decomposition->total);
    emit("ego", r.decomposition->ego);
    emit("cross", r.decomposition->cross);
  }
  for (const auto& g : r.groups)
    os << "group=" << format_group(g) << " hit@" << r.group_k << '=' << g.hit
       << " n_pairs=" << g.n_pairs << '\n';
  if (r.diagnostics) {
    for (auto& [k, v] : r.diagnostics->alignment) os << "alignment." << k << '=' << v << '\n';
    for (auto& [k, v] : r.diagnostics->dispersion) os << "dispersion." << k << '=' << v << '\n';
    os << "diagnostics.skipped_zero_norm=" << r.diagnostics->skipped << '\n';
  }
  os.unsetf(std::ios::floatfield);
  os.precision(old);
}

/// Tab-separated table: one row per (scoring, metric, k).
inline void write_report_tsv(std::ostream& os, const MetricsReport& r) {
  os << "scoring\tmetric\tk\tvalue\n";
  auto emit = [&](const char* name, const RankMetrics& m) {
    for (auto [k, v] : m.recall) os << name << "\trecall\t" << k << '\t' << v << '\n';
    for (auto [k, v] : m.ndcg) os << name << "\tndcg\t" << k << '\t' << v << '\n';
  };
  emit("model", r.metrics);
  if (r.decomposition) {
    emit("total", r.decomposition->total);
    emit("ego", r.decomposition->ego);
    emit("cross", r.decomposition->cross);
  }
  for (const auto& g : r.groups)
    os << "group" << format_group(g) << "\thit\t" << r.group_k << '\t' << g.hit << '\n';
}

/// Recall/NDCG of a trained table under the configured scoring mode.
template <class T>
MetricsReport evaluate_model(const EmbeddingTable<T>& theta, const ModelGraphs<T>& g,
                             const TrainConfig& cfg, const Dataset& d,
                             std::span<const std::size_t> ks, Split target, MaskPolicy mask,
                             RankingResult* ranking_out = nullptr) {
  const auto views = compute_views(theta, g, PassPlan<T>::clean(g), cfg.view_options());
  const auto& gt = split_matrix(d, target);
  const auto users = users_with_edges(gt);
  const auto masks = masks_for(d, mask);
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  RankingResult r;
  if (cfg.scoring == ScoringMode::fused) {
    const auto f = fuse(views, cfg.lambda);
    r = rank_all(fused_scorer(f), d.num_bundles, users, kmax, masks);
  } else {
    r = rank_all(per_view_sum_scorer(views, cfg.views), d.num_bundles, users, kmax, masks);
  }
  MetricsReport rep;
  rep.metrics = metrics_for(r, gt, ks);
  rep.evaluated_users = users.size();
  if (ranking_out) *ranking_out = std::move(r);
  return rep;
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_EVALUATION_HPP
