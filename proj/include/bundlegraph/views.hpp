#ifndef BUNDLEGRAPH_VIEWS_HPP
#define BUNDLEGRAPH_VIEWS_HPP

// The three relation-specific views. Each view propagates over its own graph and
// reads out the missing entity type by mean aggregation:
//   UB: users, bundles from the user-bundle graph
//   UI: users, items from the user-item graph; bundles = mean of their items
//   BI: bundles, items from the bundle-item graph; users = mean of their items

#include <array>
#include <memory>
#include <string>
#include <tuple>

#include "bundlegraph/dataset.hpp"
#include "bundlegraph/embedding.hpp"
#include "bundlegraph/sparse_graph.hpp"

namespace bundlegraph {

enum class View { UB = 0, UI = 1, BI = 2 };
inline constexpr std::array<View, 3> kAllViews = {View::UB, View::UI, View::BI};

inline const char* to_string(View v) {
  switch (v) {
    case View::UB: return "UB";
    case View::UI: return "UI";
    case View::BI: return "BI";
  }
  return "?";
}

struct ViewSet {
  bool ub = true;
  bool ui = true;
  bool bi = true;

  bool has(View v) const { return v == View::UB ? ub : v == View::UI ? ui : bi; }
  std::size_t count() const { return std::size_t(ub) + std::size_t(ui) + std::size_t(bi); }

  std::vector<View> enabled() const {
    std::vector<View> out;
    for (View v : kAllViews)
      if (has(v)) out.push_back(v);
    return out;
  }

  /// Unordered pairs of enabled views in (UB,UI), (UB,BI), (UI,BI) order.
  std::vector<std::pair<View, View>> pairs() const {
    std::vector<std::pair<View, View>> out;
    auto e = enabled();
    for (std::size_t a = 0; a < e.size(); ++a)
      for (std::size_t b = a + 1; b < e.size(); ++b) out.emplace_back(e[a], e[b]);
    return out;
  }

  std::string to_string() const {
    std::string s;
    for (View v : enabled()) {
      if (!s.empty()) s += ',';
      s += bundlegraph::to_string(v);
    }
    return s;
  }

  friend bool operator==(const ViewSet&, const ViewSet&) = default;
};

template <class T>
struct ViewRepresentations {
  EmbeddingBlock<T> user_ub, user_ui, user_bi;
  EmbeddingBlock<T> bundle_ub, bundle_ui, bundle_bi;
  EmbeddingBlock<T> item_ui, item_bi;  // diagnostics only, never fused

  ViewRepresentations() = default;
  ViewRepresentations(std::size_t m, std::size_t n, std::size_t o, std::size_t d)
      : user_ub(m, d), user_ui(m, d), user_bi(m, d),
        bundle_ub(n, d), bundle_ui(n, d), bundle_bi(n, d),
        item_ui(o, d), item_bi(o, d) {}

  EmbeddingBlock<T>& users(View v) {
    return v == View::UB ? user_ub : v == View::UI ? user_ui : user_bi;
  }
  const EmbeddingBlock<T>& users(View v) const {
    return v == View::UB ? user_ub : v == View::UI ? user_ui : user_bi;
  }
  EmbeddingBlock<T>& bundles(View v) {
    return v == View::UB ? bundle_ub : v == View::UI ? bundle_ui : bundle_bi;
  }
  const EmbeddingBlock<T>& bundles(View v) const {
    return v == View::UB ? bundle_ub : v == View::UI ? bundle_ui : bundle_bi;
  }

  std::size_t num_users() const { return user_ub.count(); }
  std::size_t num_bundles() const { return bundle_ub.count(); }
  std::size_t dim() const { return user_ub.dim(); }
};

struct ViewOptions {
  std::size_t layers = 2;
  PoolDivisor pool = PoolDivisor::k_plus_one;
  ViewSet views;
};

/// Immutable per-dataset graph structures shared by every forward pass.
template <class T>
struct ModelGraphs {
  Index num_users = 0, num_bundles = 0, num_items = 0;
  InteractionMatrix ub_matrix;  // training split only
  InteractionMatrix ui_matrix;
  InteractionMatrix bi_matrix;
  std::shared_ptr<const NormalizedBipartite<T>> ub, ui, bi;
  MeanAggregator<T> bundle_from_items;  // over the full BI relation
  MeanAggregator<T> user_from_items;    // over the full UI relation

  static ModelGraphs build(const Dataset& d) {
    ModelGraphs g;
    g.num_users = d.num_users;
    g.num_bundles = d.num_bundles;
    g.num_items = d.num_items;
    g.ub_matrix = d.ub_train;
    g.ui_matrix = d.ui;
    g.bi_matrix = d.bi;
    g.ub = std::make_shared<const NormalizedBipartite<T>>(normalize<T>(d.ub_train));
    g.ui = std::make_shared<const NormalizedBipartite<T>>(normalize<T>(d.ui));
    g.bi = std::make_shared<const NormalizedBipartite<T>>(normalize<T>(d.bi));
    g.bundle_from_items = MeanAggregator<T>(d.bi, AggregateDirection::cols_to_rows);
    g.user_from_items = MeanAggregator<T>(d.ui, AggregateDirection::cols_to_rows);
    return g;
  }
};

/// Graphs and frozen per-layer perturbations for one forward pass. The clean
/// pass uses the shared unperturbed graphs and empty perturbation lists.
template <class T>
struct PassPlan {
  std::shared_ptr<const NormalizedBipartite<T>> ub, ui, bi;
  PropagationPerturbations<T> ub_perturb, ui_perturb, bi_perturb;

  static PassPlan clean(const ModelGraphs<T>& g) { return PassPlan{g.ub, g.ui, g.bi, {}, {}, {}}; }
};

template <class T>
std::pair<EmbeddingBlock<T>, EmbeddingBlock<T>> compute_ub_view(
    const EmbeddingTable<T>& theta, const NormalizedBipartite<T>& ub_graph, std::size_t K,
    PoolDivisor pool = PoolDivisor::k_plus_one,
    const PropagationPerturbations<T>* perturb = nullptr) {
  auto layers = propagate(ub_graph, theta.users, theta.bundles, K, perturb);
  return {layer_pool(layers.left, pool), layer_pool(layers.right, pool)};
}

/// Returns (user_ui, bundle_ui, item_ui).
template <class T>
std::tuple<EmbeddingBlock<T>, EmbeddingBlock<T>, EmbeddingBlock<T>> compute_ui_view(
    const EmbeddingTable<T>& theta, const NormalizedBipartite<T>& ui_graph,
    const MeanAggregator<T>& bundle_from_items, std::size_t K,
    PoolDivisor pool = PoolDivisor::k_plus_one,
    const PropagationPerturbations<T>* perturb = nullptr) {
  auto layers = propagate(ui_graph, theta.users, theta.items, K, perturb);
  auto users = layer_pool(layers.left, pool);
  auto items = layer_pool(layers.right, pool);
  auto bundles = bundle_from_items.apply(items);
  return {std::move(users), std::move(bundles), std::move(items)};
}

template <class T>
std::tuple<EmbeddingBlock<T>, EmbeddingBlock<T>, EmbeddingBlock<T>> compute_ui_view(
    const EmbeddingTable<T>& theta, const NormalizedBipartite<T>& ui_graph,
    const InteractionMatrix& bi_matrix, std::size_t K,
    PoolDivisor pool = PoolDivisor::k_plus_one) {
  if (bi_matrix.rows() != theta.bundles.count() || bi_matrix.cols() != theta.items.count()) {
    throw std::invalid_argument("compute_ui_view: BI matrix shape mismatch");
  }
  return compute_ui_view(theta, ui_graph,
                         MeanAggregator<T>(bi_matrix, AggregateDirection::cols_to_rows), K, pool);
}

/// Returns (user_bi, bundle_bi, item_bi).
template <class T>
std::tuple<EmbeddingBlock<T>, EmbeddingBlock<T>, EmbeddingBlock<T>> compute_bi_view(
    const EmbeddingTable<T>& theta, const NormalizedBipartite<T>& bi_graph,
    const MeanAggregator<T>& user_from_items, std::size_t K,
    PoolDivisor pool = PoolDivisor::k_plus_one,
    const PropagationPerturbations<T>* perturb = nullptr) {
  auto layers = propagate(bi_graph, theta.bundles, theta.items, K, perturb);
  auto bundles = layer_pool(layers.left, pool);
  auto items = layer_pool(layers.right, pool);
  auto users = user_from_items.apply(items);
  return {std::move(users), std::move(bundles), std::move(items)};
}

template <class T>
std::tuple<EmbeddingBlock<T>, EmbeddingBlock<T>, EmbeddingBlock<T>> compute_bi_view(
    const EmbeddingTable<T>& theta, const NormalizedBipartite<T>& bi_graph,
    const InteractionMatrix& ui_matrix, std::size_t K,
    PoolDivisor pool = PoolDivisor::k_plus_one) {
  if (ui_matrix.rows() != theta.users.count() || ui_matrix.cols() != theta.items.count()) {
    throw std::invalid_argument("compute_bi_view: UI matrix shape mismatch");
  }
  return compute_bi_view(theta, bi_graph,
                         MeanAggregator<T>(ui_matrix, AggregateDirection::cols_to_rows), K, pool);
}

/// All enabled views for one pass; disabled views are left as zero blocks.
template <class T>
ViewRepresentations<T> compute_views(const EmbeddingTable<T>& theta, const ModelGraphs<T>& g,
                                     const PassPlan<T>& plan, const ViewOptions& opt) {
  const std::size_t d = theta.dim();
  ViewRepresentations<T> v(g.num_users, g.num_bundles, g.num_items, d);
  if (opt.views.ub) {
    std::tie(v.user_ub, v.bundle_ub) =
        compute_ub_view(theta, *plan.ub, opt.layers, opt.pool, &plan.ub_perturb);
  }
  if (opt.views.ui) {
    std::tie(v.user_ui, v.bundle_ui, v.item_ui) = compute_ui_view(
        theta, *plan.ui, g.bundle_from_items, opt.layers, opt.pool, &plan.ui_perturb);
  }
  if (opt.views.bi) {
    std::tie(v.user_bi, v.bundle_bi, v.item_bi) = compute_bi_view(
        theta, *plan.bi, g.user_from_items, opt.layers, opt.pool, &plan.bi_perturb);
  }
  return v;
}

/// Transpose of compute_views: maps gradients on view blocks to gradients on the
/// layer-0 embedding table.
template <class T>
EmbeddingTable<T> views_adjoint(const ModelGraphs<T>& g, const PassPlan<T>& plan,
                                const ViewOptions& opt, const ViewRepresentations<T>& grad) {
  EmbeddingTable<T> out(g.num_users, g.num_bundles, g.num_items, grad.dim());
  if (opt.views.ub) {
    auto [gu, gb] = propagate_pool_adjoint(*plan.ub, opt.layers, opt.pool, grad.user_ub,
                                           grad.bundle_ub, &plan.ub_perturb);
    out.users += gu;
    out.bundles += gb;
  }
  if (opt.views.ui) {
    EmbeddingBlock<T> g_items = grad.item_ui;
    g_items += g.bundle_from_items.apply_adjoint(grad.bundle_ui);
    auto [gu, gi] = propagate_pool_adjoint(*plan.ui, opt.layers, opt.pool, grad.user_ui, g_items,
                                           &plan.ui_perturb);
    out.users += gu;
    out.items += gi;
  }
  if (opt.views.bi) {
    EmbeddingBlock<T> g_items = grad.item_bi;
    g_items += g.user_from_items.apply_adjoint(grad.user_bi);
    auto [gb, gi] = propagate_pool_adjoint(*plan.bi, opt.layers, opt.pool, grad.bundle_bi,
                                           g_items, &plan.bi_perturb);
    out.bundles += gb;
    out.items += gi;
  }
  return out;
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_VIEWS_HPP
