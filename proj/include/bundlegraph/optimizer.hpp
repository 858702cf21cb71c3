#ifndef BUNDLEGRAPH_OPTIMIZER_HPP
#define BUNDLEGRAPH_OPTIMIZER_HPP

#include <cmath>
#include <stdexcept>

#include "bundlegraph/embedding.hpp"

namespace bundlegraph {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments for an EmbeddingTable. Rows whose gradient is entirely zero are
/// skipped: their parameters and moments stay untouched for that step.
template <class T>
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const EmbeddingTable<T>& shape, AdamOptions opt = {})
      : m_(shape.zeros_like()), v_(shape.zeros_like()), opt_(opt) {}

  std::size_t steps() const { return t_; }

  void step(EmbeddingTable<T>& theta, const EmbeddingTable<T>& grad, double lr) {
    if (!(grad.users.same_shape(theta.users) && grad.bundles.same_shape(theta.bundles) &&
          grad.items.same_shape(theta.items) && m_.users.same_shape(theta.users))) {
      throw std::invalid_argument("adam_step: parameter/gradient shapes differ");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    update(theta.users, grad.users, m_.users, v_.users, lr, bc1, bc2);
    update(theta.bundles, grad.bundles, m_.bundles, v_.bundles, lr, bc1, bc2);
    update(theta.items, grad.items, m_.items, v_.items, lr, bc1, bc2);
  }

 private:
  void update(EmbeddingBlock<T>& p, const EmbeddingBlock<T>& g, EmbeddingBlock<T>& m,
              EmbeddingBlock<T>& v, double lr, double bc1, double bc2) const {
    const std::size_t d = p.dim();
    parallel_for(p.count(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        auto gr = g.row(i);
        bool any = false;
        for (auto x : gr) any = any || x != T(0);
        if (!any) continue;
        auto pr = p.row(i), mr = m.row(i), vr = v.row(i);
        for (std::size_t j = 0; j < d; ++j) {
          const double gj = gr[j];
          const double mj = opt_.beta1 * mr[j] + (1.0 - opt_.beta1) * gj;
          const double vj = opt_.beta2 * vr[j] + (1.0 - opt_.beta2) * gj * gj;
          mr[j] = static_cast<T>(mj);
          vr[j] = static_cast<T>(vj);
          pr[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + opt_.eps));
        }
      }
    });
  }

  EmbeddingTable<T> m_, v_;
  AdamOptions opt_;
  std::size_t t_ = 0;
};

template <class T>
void adam_step(EmbeddingTable<T>& theta, const EmbeddingTable<T>& grad, AdamState<T>& state,
               double lr) {
  state.step(theta, grad, lr);
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_OPTIMIZER_HPP
