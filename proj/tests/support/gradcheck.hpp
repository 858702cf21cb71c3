#ifndef BUNDLEGRAPH_TESTS_GRADCHECK_HPP
#define BUNDLEGRAPH_TESTS_GRADCHECK_HPP

// Central finite-difference check of a scalar function of an EmbeddingTable.

#include <cmath>
#include <functional>
#include <string>

#include "bundlegraph/embedding.hpp"

namespace fixtures {

struct GradCheckResult {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::string worst;  // "users[3][1] analytic=.. numeric=.."
  std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries whose
/// true gradient is zero (rows the loss never reads) from dividing rounding
/// noise by zero.
inline GradCheckResult finite_difference_check(
    bundlegraph::EmbeddingTable<double> theta, const bundlegraph::EmbeddingTable<double>& analytic,
    const std::function<double(const bundlegraph::EmbeddingTable<double>&)>& f, double h = 1e-5,
    double floor = 1e-6) {
  GradCheckResult res;
  const char* names[] = {"users", "bundles", "items"};
  bundlegraph::EmbeddingBlock<double>* blocks[] = {&theta.users, &theta.bundles, &theta.items};
  const bundlegraph::EmbeddingBlock<double>* grads[] = {&analytic.users, &analytic.bundles,
                                                        &analytic.items};
  for (int b = 0; b < 3; ++b) {
    auto& blk = *blocks[b];
    for (std::size_t i = 0; i < blk.count(); ++i)
      for (std::size_t j = 0; j < blk.dim(); ++j) {
        const double x = blk(i, j);
        blk(i, j) = x + h;
        const double fp = f(theta);
        blk(i, j) = x - h;
        const double fm = f(theta);
        blk(i, j) = x;
        const double num = (fp - fm) / (2 * h);
        const double ana = (*grads[b])(i, j);
        const double abs_err = std::abs(num - ana);
        const double rel = abs_err / std::max({std::abs(num), std::abs(ana), floor});
        ++res.checked;
        res.max_abs_error = std::max(res.max_abs_error, abs_err);
        if (rel > res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst = std::string(names[b]) + "[" + std::to_string(i) + "][" + std::to_string(j) +
                      "] analytic=" + std::to_string(ana) + " numeric=" + std::to_string(num);
        }
      }
  }
  return res;
}

}  // namespace fixtures

#endif  // BUNDLEGRAPH_TESTS_GRADCHECK_HPP
