#ifndef BUNDLEGRAPH_FUSION_HPP
#define BUNDLEGRAPH_FUSION_HPP

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bundlegraph/views.hpp"

namespace bundlegraph {

/// Convex view weights (lambda_UB, lambda_UI, lambda_BI).
struct FusionCoefficients {
  std::array<double, 3> lambda{1.0 / 3, 1.0 / 3, 1.0 / 3};

  double operator[](View v) const { return lambda[static_cast<int>(v)]; }

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    double sum = 0;
    for (double l : lambda) {
      if (!(l >= 0) || !std::isfinite(l)) errs.push_back("model.lambda values must be finite and >= 0");
      sum += l;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      errs.push_back("model.lambda1 + lambda2 + lambda3 must equal 1 (got " + std::to_string(sum) + ")");
    return errs;
  }

  /// Forces disabled views to 0 and rescales the remaining weights to sum to 1.
  static FusionCoefficients for_views(std::array<double, 3> raw, const ViewSet& views) {
    FusionCoefficients f;
    double sum = 0;
    for (View v : kAllViews) {
      auto i = static_cast<int>(v);
      f.lambda[i] = views.has(v) ? raw[i] : 0.0;
      sum += f.lambda[i];
    }
    if (sum > 0 && views.count() < 3)
      for (auto& l : f.lambda) l /= sum;
    return f;
  }
};

enum class ScoringMode { fused, per_view_sum };

inline const char* to_string(ScoringMode m) {
  return m == ScoringMode::fused ? "fused" : "per_view_sum";
}

template <class T>
struct FusedRepresentations {
  EmbeddingBlock<T> users;
  EmbeddingBlock<T> bundles;
};

template <class T>
FusedRepresentations<T> fuse(const ViewRepresentations<T>& v, const FusionCoefficients& lambda) {
  if (auto errs = lambda.validate(); !errs.empty()) throw ConfigError(errs.front(), errs);
  FusedRepresentations<T> f{EmbeddingBlock<T>(v.num_users(), v.dim()),
                            EmbeddingBlock<T>(v.num_bundles(), v.dim())};
  for (View x : kAllViews) {
    const T l = static_cast<T>(lambda[x]);
    if (l == T(0)) continue;
    f.users.axpy(l, v.users(x));
    f.bundles.axpy(l, v.bundles(x));
  }
  return f;
}

/// Accumulates the gradient of fuse() into `grad_views`.
template <class T>
void fuse_adjoint(const FusedRepresentations<T>& grad, const FusionCoefficients& lambda,
                  ViewRepresentations<T>& grad_views) {
  for (View x : kAllViews) {
    const T l = static_cast<T>(lambda[x]);
    if (l == T(0)) continue;
    grad_views.users(x).axpy(l, grad.users);
    grad_views.bundles(x).axpy(l, grad.bundles);
  }
}

template <class T>
T score(const FusedRepresentations<T>& f, std::size_t u, std::size_t b) {
  if (u >= f.users.count() || b >= f.bundles.count())
    throw std::out_of_range("score: user or bundle id out of range");
  return dot(f.users.row(u), f.bundles.row(b));
}

/// Late-fusion score: sum of same-view inner products over the enabled views.
template <class T>
T per_view_sum_score(const ViewRepresentations<T>& v, const ViewSet& views, std::size_t u,
                     std::size_t b) {
  if (u >= v.num_users() || b >= v.num_bundles())
    throw std::out_of_range("per_view_sum_score: user or bundle id out of range");
  T s = 0;
  for (View x : views.enabled()) s += dot(v.users(x).row(u), v.bundles(x).row(b));
  return s;
}

struct ScoreDecomposition {
  double total = 0;
  double ego = 0;    // same-view terms
  double cross = 0;  // different-view terms
};

/// Splits the fused inner product into lambda-weighted same-view and
/// cross-view parts; total is computed independently from the fused rows.
template <class T>
ScoreDecomposition decompose_score(const ViewRepresentations<T>& v,
                                   const FusionCoefficients& lambda, std::size_t u,
                                   std::size_t b) {
  if (u >= v.num_users() || b >= v.num_bundles())
    throw std::out_of_range("decompose_score: user or bundle id out of range");
  ScoreDecomposition s;
  for (View x : kAllViews) {
    for (View y : kAllViews) {
      const double w = lambda[x] * lambda[y];
      if (w == 0) continue;
      const double term = w * static_cast<double>(dot(v.users(x).row(u), v.bundles(y).row(b)));
      (x == y ? s.ego : s.cross) += term;
    }
  }
  const std::size_t d = v.dim();
  double total = 0;
  for (std::size_t j = 0; j < d; ++j) {
    double eu = 0, eb = 0;
    for (View x : kAllViews) {
      eu += lambda[x] * static_cast<double>(v.users(x)(u, j));
      eb += lambda[x] * static_cast<double>(v.bundles(x)(b, j));
    }
    total += eu * eb;
  }
  s.total = total;
  return s;
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_FUSION_HPP
