#ifndef BUNDLEGRAPH_OBJECTIVE_HPP
#define BUNDLEGRAPH_OBJECTIVE_HPP

// Joint objective: BPR on the clean pass, InfoNCE between two augmented passes,
// and L2 on the layer-0 rows touched by the batch. All representation maps are
// linear in the embedding table once augmentation draws are fixed, so gradients
// flow back through the transposed kernels in views_adjoint().

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bundlegraph/augmentation.hpp"
#include "bundlegraph/dataset.hpp"
#include "bundlegraph/fusion.hpp"
#include "bundlegraph/views.hpp"

namespace bundlegraph {

enum class ContrastMode { fused_self, pairwise_cross, off };
enum class BprReduction { mean, sum };

inline const char* to_string(ContrastMode m) {
  switch (m) {
    case ContrastMode::fused_self: return "fused_self";
    case ContrastMode::pairwise_cross: return "pairwise_cross";
    case ContrastMode::off: return "off";
  }
  return "?";
}

inline const char* to_string(BprReduction r) { return r == BprReduction::mean ? "mean" : "sum"; }

struct TrainConfig {
  std::size_t dim = 64;
  std::size_t layers = 2;
  FusionCoefficients lambda;
  ScoringMode scoring = ScoringMode::fused;
  PoolDivisor pool = PoolDivisor::k_plus_one;
  ViewSet views;
  double tau = 0.2;
  double beta1 = 0.1;
  double beta2 = 1e-6;
  double lr = 1e-3;
  std::size_t batch_size = 2048;
  std::size_t epochs = 100;
  std::size_t negatives_per_positive = 1;
  AugmentationSpec aug;
  ContrastMode contrast = ContrastMode::fused_self;
  BprReduction bpr_reduction = BprReduction::mean;
  std::uint64_t seed = 2023;
  std::size_t eval_every = 1;
  std::size_t patience = 0;  // epochs without validation gain before stopping; 0 = never

  ViewOptions view_options() const { return ViewOptions{layers, pool, views}; }

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (dim == 0) errs.push_back("model.dim must be >= 1");
    if (layers == 0) errs.push_back("model.layers must be >= 1");
    if (views.count() == 0) errs.push_back("model.views must enable at least one view");
    for (auto& e : lambda.validate()) errs.push_back(e);
    for (View v : kAllViews)
      if (!views.has(v) && lambda[v] != 0)
        errs.push_back(std::string("lambda for disabled view ") + to_string(v) + " must be 0");
    if (!(tau > 0)) errs.push_back("train.tau must be > 0");
    if (!(beta1 >= 0)) errs.push_back("train.beta1 must be >= 0");
    if (!(beta2 >= 0)) errs.push_back("train.beta2 must be >= 0");
    if (!(lr > 0)) errs.push_back("train.lr must be > 0");
    if (batch_size == 0) errs.push_back("train.batch_size must be >= 1");
    if (negatives_per_positive == 0) errs.push_back("train.negatives_per_positive must be >= 1");
    if (eval_every == 0) errs.push_back("train.eval_every must be >= 1");
    for (auto& e : aug.validate()) errs.push_back(e);
    return errs;
  }
};

struct TrainingTriple {
  Index user = 0;
  Index pos = 0;
  Index neg = 0;
  friend bool operator==(const TrainingTriple&, const TrainingTriple&) = default;
};

struct LossBreakdown {
  double bpr = 0;
  double contrast_user = 0;
  double contrast_bundle = 0;
  double reg = 0;
  double total = 0;
  std::size_t contrast_terms = 0;   // InfoNCE terms constructed this step
  std::size_t zero_norm_pairs = 0;  // cosine pairs involving a zero row
};

/// -ln sigmoid(x), stable for large |x|.
inline double neg_log_sigmoid(double x) {
  return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Sum (or mean) over pairs of -ln sigmoid(pos - neg).
inline double bpr_loss(std::span<const double> scores_pos, std::span<const double> scores_neg,
                       BprReduction reduction = BprReduction::sum) {
  if (scores_pos.size() != scores_neg.size() || scores_pos.empty())
    throw std::invalid_argument("bpr_loss: need equal, non-empty score lists");
  double s = 0;
  for (std::size_t i = 0; i < scores_pos.size(); ++i)
    s += neg_log_sigmoid(scores_pos[i] - scores_neg[i]);
  return reduction == BprReduction::mean ? s / static_cast<double>(scores_pos.size()) : s;
}

struct InfoNceResult {
  double loss = 0;
  std::size_t zero_norm_pairs = 0;
};

/// Mean over anchors i of -log softmax_j(cos(a_i, b_j) / tau)[i] with in-batch
/// negatives j drawn from the same id list. When grad_a/grad_b are given, adds
/// weight * dloss/d(row) into the rows named by `ids`.
template <class T>
InfoNceResult info_nce(const EmbeddingBlock<T>& a, const EmbeddingBlock<T>& b,
                       std::span<const Index> ids, double tau,
                       EmbeddingBlock<T>* grad_a = nullptr, EmbeddingBlock<T>* grad_b = nullptr,
                       double weight = 1.0) {
  if (ids.empty()) throw std::invalid_argument("info_nce: empty id list");
  if (!(tau > 0)) throw std::invalid_argument("info_nce: tau must be > 0");
  const std::size_t n = ids.size(), d = a.dim();
  std::vector<double> ah(n * d), bh(n * d), an(n), bn(n);
  auto normalise = [&](const EmbeddingBlock<T>& src, std::vector<double>& out,
                       std::vector<double>& norms) {
    for (std::size_t i = 0; i < n; ++i) {
      auto r = src.row(ids[i]);
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(r[j]) * r[j];
      norms[i] = std::sqrt(s);
      const double inv = norms[i] > 0 ? 1.0 / norms[i] : 0.0;
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = r[j] * inv;
    }
  };
  normalise(a, ah, an);
  normalise(b, bh, bn);

  InfoNceResult res;
  std::size_t zero_a = 0, zero_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    zero_a += an[i] == 0;
    zero_b += bn[i] == 0;
  }
  res.zero_norm_pairs = zero_a * n + zero_b * n - zero_a * zero_b;

  // logits[i][j] = cos(a_i, b_j) / tau; rows become softmax probabilities.
  std::vector<double> p(n * n);
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double* ai = &ah[i * d];
      for (std::size_t k = 0; k < n; ++k) {
        const double* bk = &bh[k * d];
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += ai[j] * bk[j];
        p[i * n + k] = s / tau;
      }
    }
  }, 16);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &p[i * n];
    const double mx = *std::max_element(row, row + n);
    double z = 0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[i];
    for (std::size_t k = 0; k < n; ++k) row[k] = std::exp(row[k] - lse);
  }
  res.loss = total / static_cast<double>(n);
  if (!grad_a && !grad_b) return res;

  // dL/dlogit_ik = (p_ik - [i==k]) / n, and dlogit/dcos = 1/tau.
  const double c = weight / (tau * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) p[i * n + i] -= 1.0;

  // Gradient on the unit vector x_hat maps to x through (g - (g.x_hat) x_hat) / |x|.
  auto project = [&](std::vector<double>& g, const std::vector<double>& hat,
                     const std::vector<double>& norms, EmbeddingBlock<T>& dst) {
    for (std::size_t i = 0; i < n; ++i) {
      if (norms[i] == 0) continue;
      double gx = 0;
      for (std::size_t j = 0; j < d; ++j) gx += g[i * d + j] * hat[i * d + j];
      auto out = dst.row(ids[i]);
      for (std::size_t j = 0; j < d; ++j)
        out[j] += static_cast<T>((g[i * d + j] - gx * hat[i * d + j]) / norms[i]);
    }
  };
  if (grad_a) {
    std::vector<double> ga(n * d, 0.0);
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          const double w = c * p[i * n + k];
          for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += w * bh[k * d + j];
        }
    }, 16);
    project(ga, ah, an, *grad_a);
  }
  if (grad_b) {
    std::vector<double> gb(n * d, 0.0);
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t k = lo; k < hi; ++k)
        for (std::size_t i = 0; i < n; ++i) {
          const double w = c * p[i * n + k];
          for (std::size_t j = 0; j < d; ++j) gb[k * d + j] += w * ah[i * d + j];
        }
    }, 16);
    project(gb, bh, bn, *grad_b);
  }
  return res;
}

/// Sum of squared layer-0 rows of each triple's user, positive and negative
/// bundle, divided by the number of triples.
template <class T>
double l2_reg(const EmbeddingTable<T>& theta, std::span<const TrainingTriple> batch) {
  if (batch.empty()) return 0.0;
  double s = 0;
  for (const auto& t : batch) {
    s += static_cast<double>(squared_norm(theta.users.row(t.user)));
    s += static_cast<double>(squared_norm(theta.bundles.row(t.pos)));
    s += static_cast<double>(squared_norm(theta.bundles.row(t.neg)));
  }
  return s / static_cast<double>(batch.size());
}

template <class T>
void l2_reg_gradient(const EmbeddingTable<T>& theta, std::span<const TrainingTriple> batch,
                     double weight, EmbeddingTable<T>& grad) {
  if (batch.empty()) return;
  const T c = static_cast<T>(2.0 * weight / static_cast<double>(batch.size()));
  auto add = [c](std::span<T> g, std::span<const T> x) {
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += c * x[j];
  };
  for (const auto& t : batch) {
    add(grad.users.row(t.user), theta.users.row(t.user));
    add(grad.bundles.row(t.pos), theta.bundles.row(t.pos));
    add(grad.bundles.row(t.neg), theta.bundles.row(t.neg));
  }
}

/// Deduplicated anchor lists for the contrastive terms.
inline std::vector<Index> unique_users(std::span<const TrainingTriple> batch) {
  std::vector<Index> ids;
  ids.reserve(batch.size());
  for (const auto& t : batch) ids.push_back(t.user);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

inline std::vector<Index> unique_positive_bundles(std::span<const TrainingTriple> batch) {
  std::vector<Index> ids;
  ids.reserve(batch.size());
  for (const auto& t : batch) ids.push_back(t.pos);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

struct PairwiseContrast {
  double user = 0;    // mean over view pairs of user terms
  double bundle = 0;  // mean over view pairs of bundle terms
  std::size_t terms = 0;
  std::size_t zero_norm_pairs = 0;

  double combined() const { return 0.5 * (user + bundle); }
};

/// InfoNCE between different views of the same entity for every unordered pair
/// of enabled views: view X from the first pass against view Y from the second.
/// Gradients (if requested) are scaled by `weight / #pairs` per user/bundle term.
template <class T>
PairwiseContrast pairwise_cross_contrast(const ViewRepresentations<T>& v1,
                                         const ViewRepresentations<T>& v2, const ViewSet& views,
                                         std::span<const Index> user_ids,
                                         std::span<const Index> bundle_ids, double tau,
                                         ViewRepresentations<T>* g1 = nullptr,
                                         ViewRepresentations<T>* g2 = nullptr,
                                         double weight = 1.0) {
  PairwiseContrast out;
  const auto pairs = views.pairs();
  if (pairs.empty()) return out;
  const double w = weight / static_cast<double>(pairs.size());
  for (auto [x, y] : pairs) {
    auto ru = info_nce(v1.users(x), v2.users(y), user_ids, tau, g1 ? &g1->users(x) : nullptr,
                       g2 ? &g2->users(y) : nullptr, w);
    auto rb = info_nce(v1.bundles(x), v2.bundles(y), bundle_ids, tau,
                       g1 ? &g1->bundles(x) : nullptr, g2 ? &g2->bundles(y) : nullptr, w);
    out.user += ru.loss;
    out.bundle += rb.loss;
    out.zero_norm_pairs += ru.zero_norm_pairs + rb.zero_norm_pairs;
    out.terms += 2;
  }
  out.user /= static_cast<double>(pairs.size());
  out.bundle /= static_cast<double>(pairs.size());
  return out;
}

/// Forward-pass plans for one optimisation step.
template <class T>
struct StepPlans {
  PassPlan<T> clean;
  std::optional<AugmentedPass<T>> first;   // absent when contrast is off
  std::optional<AugmentedPass<T>> second;
  bool augmented = false;  // false when the contrastive passes equal the clean pass
};

template <class T>
StepPlans<T> draw_step_plans(const ModelGraphs<T>& g, const TrainConfig& cfg, Rng& rng) {
  StepPlans<T> s;
  s.clean = PassPlan<T>::clean(g);
  if (cfg.contrast == ContrastMode::off) return s;
  const auto opt = cfg.view_options();
  s.first = draw_augmented_pass(g, cfg.aug, opt, cfg.dim, rng);
  s.second = draw_augmented_pass(g, cfg.aug, opt, cfg.dim, rng);
  s.augmented = cfg.aug.kind != AugmentationKind::none;
  return s;
}

namespace detail {

template <class T>
void check_finite(const EmbeddingTable<T>& g, const char* term) {
  bool ok = true;
  g.for_each_block([&](const EmbeddingBlock<T>& b) { ok = ok && b.all_finite(); });
  if (!ok) throw NumericError(std::string("non-finite gradient from ") + term + " term");
}

template <class T>
void check_finite(const ViewRepresentations<T>& g, const char* term) {
  bool ok = true;
  for (View v : kAllViews) ok = ok && g.users(v).all_finite() && g.bundles(v).all_finite();
  if (!ok) throw NumericError(std::string("non-finite gradient from ") + term + " term");
}

inline void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + term + " loss");
}

template <class T>
ViewRepresentations<T> zero_views_like(const ViewRepresentations<T>& v) {
  return ViewRepresentations<T>(v.num_users(), v.num_bundles(), v.item_ui.count(), v.dim());
}

}  // namespace detail

/// Loss for one batch under fixed plans; when `grad` is non-null it receives the
/// exact gradient of LossBreakdown::total with respect to every layer-0 row.
template <class T>
LossBreakdown evaluate_objective(const ModelGraphs<T>& g, const EmbeddingTable<T>& theta,
                                 const TrainConfig& cfg, std::span<const TrainingTriple> batch,
                                 const StepPlans<T>& plans, EmbeddingTable<T>* grad = nullptr) {
  if (batch.empty()) throw std::invalid_argument("evaluate_objective: empty batch");
  const auto opt = cfg.view_options();
  LossBreakdown lb;

  const auto clean = compute_views(theta, g, plans.clean, opt);
  auto g_clean = detail::zero_views_like(clean);

  // BPR on the clean pass.
  {
    const double w = cfg.bpr_reduction == BprReduction::mean ? 1.0 / static_cast<double>(batch.size()) : 1.0;
    std::optional<FusedRepresentations<T>> fused;
    FusedRepresentations<T> g_fused;
    if (cfg.scoring == ScoringMode::fused) {
      fused = fuse(clean, cfg.lambda);
      g_fused = {EmbeddingBlock<T>(clean.num_users(), clean.dim()),
                 EmbeddingBlock<T>(clean.num_bundles(), clean.dim())};
    }
    const auto enabled = cfg.views.enabled();
    double sum = 0;
    for (const auto& t : batch) {
      double delta = 0;
      if (fused) {
        delta = static_cast<double>(dot(fused->users.row(t.user), fused->bundles.row(t.pos))) -
                static_cast<double>(dot(fused->users.row(t.user), fused->bundles.row(t.neg)));
      } else {
        delta = static_cast<double>(per_view_sum_score(clean, cfg.views, t.user, t.pos)) -
                static_cast<double>(per_view_sum_score(clean, cfg.views, t.user, t.neg));
      }
      sum += neg_log_sigmoid(delta);
      if (!grad) continue;
      // d(-ln sigmoid(delta))/d delta = -sigmoid(-delta)
      const T c = static_cast<T>(-w * sigmoid(-delta));
      auto accumulate = [c, &t](const EmbeddingBlock<T>& u, const EmbeddingBlock<T>& b,
                                EmbeddingBlock<T>& gu, EmbeddingBlock<T>& gb) {
        auto ur = u.row(t.user), bp = b.row(t.pos), bn = b.row(t.neg);
        auto gur = gu.row(t.user), gbp = gb.row(t.pos), gbn = gb.row(t.neg);
        for (std::size_t j = 0; j < ur.size(); ++j) {
          gur[j] += c * (bp[j] - bn[j]);
          gbp[j] += c * ur[j];
          gbn[j] -= c * ur[j];
        }
      };
      if (fused) {
        accumulate(fused->users, fused->bundles, g_fused.users, g_fused.bundles);
      } else {
        for (View x : enabled)
          accumulate(clean.users(x), clean.bundles(x), g_clean.users(x), g_clean.bundles(x));
      }
    }
    lb.bpr = sum * w;
    detail::check_finite(lb.bpr, "bpr");
    if (grad && fused) fuse_adjoint(g_fused, cfg.lambda, g_clean);
    if (grad) detail::check_finite(g_clean, "bpr");
  }

  // Contrastive terms on two augmented passes.
  std::optional<ViewRepresentations<T>> v1, v2, g1, g2;
  if (cfg.contrast != ContrastMode::off) {
    if (!plans.first || !plans.second)
      throw std::invalid_argument("evaluate_objective: contrast enabled but passes missing");
    if (plans.augmented) {
      v1 = compute_views(theta, g, plans.first->plan, opt);
      v2 = compute_views(theta, g, plans.second->plan, opt);
    }
    const auto& r1 = v1 ? *v1 : clean;
    const auto& r2 = v2 ? *v2 : clean;
    g1 = detail::zero_views_like(clean);
    g2 = detail::zero_views_like(clean);
    const auto users = unique_users(batch);
    const auto bundles = unique_positive_bundles(batch);
    const double w = 0.5 * cfg.beta1;
    if (cfg.contrast == ContrastMode::fused_self) {
      const auto f1 = fuse(r1, cfg.lambda);
      const auto f2 = fuse(r2, cfg.lambda);
      FusedRepresentations<T> gf1{EmbeddingBlock<T>(f1.users.count(), f1.users.dim()),
                                  EmbeddingBlock<T>(f1.bundles.count(), f1.bundles.dim())};
      FusedRepresentations<T> gf2 = gf1;
      auto ru = info_nce(f1.users, f2.users, users, cfg.tau, grad ? &gf1.users : nullptr,
                         grad ? &gf2.users : nullptr, w);
      auto rb = info_nce(f1.bundles, f2.bundles, bundles, cfg.tau,
                         grad ? &gf1.bundles : nullptr, grad ? &gf2.bundles : nullptr, w);
      lb.contrast_user = ru.loss;
      lb.contrast_bundle = rb.loss;
      lb.contrast_terms = 2;
      lb.zero_norm_pairs = ru.zero_norm_pairs + rb.zero_norm_pairs;
      if (grad) {
        fuse_adjoint(gf1, cfg.lambda, *g1);
        fuse_adjoint(gf2, cfg.lambda, *g2);
      }
    } else {
      auto pc = pairwise_cross_contrast(r1, r2, cfg.views, users, bundles, cfg.tau,
                                        grad ? &*g1 : nullptr, grad ? &*g2 : nullptr, w);
      lb.contrast_user = pc.user;
      lb.contrast_bundle = pc.bundle;
      lb.contrast_terms = pc.terms;
      lb.zero_norm_pairs = pc.zero_norm_pairs;
    }
    detail::check_finite(lb.contrast_user, "contrast_user");
    detail::check_finite(lb.contrast_bundle, "contrast_bundle");
    if (grad) {
      detail::check_finite(*g1, "contrast");
      detail::check_finite(*g2, "contrast");
    }
  }

  lb.reg = l2_reg(theta, batch);
  detail::check_finite(lb.reg, "reg");
  lb.total = lb.bpr + cfg.beta1 * 0.5 * (lb.contrast_user + lb.contrast_bundle) + cfg.beta2 * lb.reg;

  if (grad) {
    if (g1 && !plans.augmented) {
      // All passes share the clean linear map: merge before one transpose.
      auto merge = [](ViewRepresentations<T>& dst, const ViewRepresentations<T>& src) {
        for (View x : kAllViews) {
          dst.users(x) += src.users(x);
          dst.bundles(x) += src.bundles(x);
        }
      };
      merge(g_clean, *g1);
      merge(g_clean, *g2);
      g1.reset();
      g2.reset();
    }
    *grad = views_adjoint(g, plans.clean, opt, g_clean);
    if (g1) {
      *grad += views_adjoint(g, plans.first->plan, opt, *g1);
      *grad += views_adjoint(g, plans.second->plan, opt, *g2);
    }
    EmbeddingTable<T> greg = theta.zeros_like();
    l2_reg_gradient(theta, batch, cfg.beta2, greg);
    detail::check_finite(greg, "reg");
    *grad += greg;
    detail::check_finite(*grad, "joint");
  }
  return lb;
}

/// Draws fresh augmentation passes from `rng` and returns loss and gradient.
template <class T>
std::pair<LossBreakdown, EmbeddingTable<T>> compute_gradients(
    const ModelGraphs<T>& g, const EmbeddingTable<T>& theta, const TrainConfig& cfg,
    std::span<const TrainingTriple> batch, Rng& rng) {
  const auto plans = draw_step_plans(g, cfg, rng);
  EmbeddingTable<T> grad;
  auto lb = evaluate_objective(g, theta, cfg, batch, plans, &grad);
  return {lb, std::move(grad)};
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_OBJECTIVE_HPP
