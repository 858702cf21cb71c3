#ifndef BUNDLEGRAPH_AUGMENTATION_HPP
#define BUNDLEGRAPH_AUGMENTATION_HPP

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "bundlegraph/sparse_graph.hpp"
#include "bundlegraph/views.hpp"

namespace bundlegraph {

enum class AugmentationKind { none, edge_dropout, message_dropout, noise };
enum class ResamplePolicy { per_batch, per_epoch };

inline const char* to_string(AugmentationKind k) {
  switch (k) {
    case AugmentationKind::none: return "none";
    case AugmentationKind::edge_dropout: return "edge_dropout";
    case AugmentationKind::message_dropout: return "message_dropout";
    case AugmentationKind::noise: return "noise";
  }
  return "?";
}

inline const char* to_string(ResamplePolicy p) {
  return p == ResamplePolicy::per_batch ? "per_batch" : "per_epoch";
}

struct AugmentationSpec {
  AugmentationKind kind = AugmentationKind::noise;
  double edge_drop_rate = 0.2;
  double message_drop_rate = 0.2;
  double noise_eps = 0.1;
  ResamplePolicy resample = ResamplePolicy::per_batch;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (!(edge_drop_rate >= 0 && edge_drop_rate < 1))
      errs.push_back("aug.edge_drop_rate must lie in [0,1)");
    if (!(message_drop_rate >= 0 && message_drop_rate < 1))
      errs.push_back("aug.message_drop_rate must lie in [0,1)");
    if (kind == AugmentationKind::noise && !(noise_eps > 0))
      errs.push_back("aug.noise_eps must be > 0 for noise augmentation");
    return errs;
  }
};

/// Keeps each edge independently with probability 1 - rate and renormalises the
/// survivors with their post-drop degrees.
template <class T>
NormalizedBipartite<T> drop_edges(const NormalizedBipartite<T>& g, double rate, Rng& rng) {
  if (!(rate >= 0 && rate < 1)) throw std::invalid_argument("drop_edges: rate must be in [0,1)");
  auto edges = g.edges();
  if (rate > 0) {
    std::bernoulli_distribution keep(1.0 - rate);
    std::vector<Edge> kept;
    kept.reserve(edges.size());
    for (const auto& e : edges)
      if (keep(rng)) kept.push_back(e);
    edges.swap(kept);
  }
  return normalize_edges<T>(g.rows(), g.cols(), edges);
}

/// Inverted-dropout mask: entries are 0 with probability rho, else 1/(1-rho).
template <class T>
LayerPerturbation<T> dropout_mask(std::size_t count, std::size_t dim, double rho, Rng& rng) {
  if (!(rho >= 0 && rho < 1)) throw std::invalid_argument("message_dropout: rho must be in [0,1)");
  LayerPerturbation<T> p;
  p.kind = LayerPerturbation<T>::Kind::scale;
  p.values.assign(count * dim, T(1));
  if (rho > 0) {
    std::bernoulli_distribution drop(rho);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rho));
    for (auto& v : p.values) v = drop(rng) ? T(0) : keep_scale;
  }
  return p;
}

/// One random direction per row, scaled to L2 norm eps.
template <class T>
LayerPerturbation<T> noise_offsets(std::size_t count, std::size_t dim, double eps, Rng& rng) {
  if (eps < 0) throw std::invalid_argument("add_noise: eps must be >= 0");
  LayerPerturbation<T> p;
  p.kind = LayerPerturbation<T>::Kind::shift;
  p.values.assign(count * dim, T(0));
  if (eps == 0 || dim == 0) return p;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> dir(dim);
  for (std::size_t i = 0; i < count; ++i) {
    double n2 = 0;
    do {
      n2 = 0;
      for (auto& x : dir) {
        x = normal(rng);
        n2 += x * x;
      }
    } while (n2 == 0);
    const double s = eps / std::sqrt(n2);
    for (std::size_t j = 0; j < dim; ++j) p.values[i * dim + j] = static_cast<T>(dir[j] * s);
  }
  return p;
}

template <class T>
EmbeddingBlock<T> message_dropout(const EmbeddingBlock<T>& layer_output, double rho, Rng& rng) {
  EmbeddingBlock<T> out = layer_output;
  dropout_mask<T>(out.count(), out.dim(), rho, rng).apply(out);
  return out;
}

template <class T>
EmbeddingBlock<T> add_noise(const EmbeddingBlock<T>& layer_output, double eps, Rng& rng) {
  EmbeddingBlock<T> out = layer_output;
  noise_offsets<T>(out.count(), out.dim(), eps, rng).apply(out);
  return out;
}

/// A sampled perturbation for one augmented forward pass. `rng_stamp` is the
/// generator output drawn right before sampling and identifies the draw.
template <class T>
struct AugmentedPass {
  PassPlan<T> plan;
  std::uint64_t rng_stamp = 0;
};

namespace detail {
template <class T>
PropagationPerturbations<T> layer_perturbations(const AugmentationSpec& spec, std::size_t K,
                                                std::size_t left_count, std::size_t right_count,
                                                std::size_t dim, Rng& rng) {
  PropagationPerturbations<T> out;
  if (spec.kind != AugmentationKind::message_dropout && spec.kind != AugmentationKind::noise)
    return out;
  out.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    if (spec.kind == AugmentationKind::message_dropout) {
      out[k].left = dropout_mask<T>(left_count, dim, spec.message_drop_rate, rng);
      out[k].right = dropout_mask<T>(right_count, dim, spec.message_drop_rate, rng);
    } else {
      out[k].left = noise_offsets<T>(left_count, dim, spec.noise_eps, rng);
      out[k].right = noise_offsets<T>(right_count, dim, spec.noise_eps, rng);
    }
  }
  return out;
}
}  // namespace detail

/// Samples graphs and layer perturbations for every enabled view. Readout
/// aggregations always use the full relations held by ModelGraphs.
template <class T>
AugmentedPass<T> draw_augmented_pass(const ModelGraphs<T>& g, const AugmentationSpec& spec,
                                     const ViewOptions& opt, std::size_t dim, Rng& rng) {
  AugmentedPass<T> pass;
  pass.rng_stamp = rng();
  pass.plan = PassPlan<T>::clean(g);
  if (spec.kind == AugmentationKind::none) return pass;
  auto& p = pass.plan;
  const std::size_t K = opt.layers;
  if (spec.kind == AugmentationKind::edge_dropout) {
    if (opt.views.ub)
      p.ub = std::make_shared<const NormalizedBipartite<T>>(drop_edges(*g.ub, spec.edge_drop_rate, rng));
    if (opt.views.ui)
      p.ui = std::make_shared<const NormalizedBipartite<T>>(drop_edges(*g.ui, spec.edge_drop_rate, rng));
    if (opt.views.bi)
      p.bi = std::make_shared<const NormalizedBipartite<T>>(drop_edges(*g.bi, spec.edge_drop_rate, rng));
    return pass;
  }
  if (opt.views.ub)
    p.ub_perturb = detail::layer_perturbations<T>(spec, K, g.num_users, g.num_bundles, dim, rng);
  if (opt.views.ui)
    p.ui_perturb = detail::layer_perturbations<T>(spec, K, g.num_users, g.num_items, dim, rng);
  if (opt.views.bi)
    p.bi_perturb = detail::layer_perturbations<T>(spec, K, g.num_bundles, g.num_items, dim, rng);
  return pass;
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_AUGMENTATION_HPP
