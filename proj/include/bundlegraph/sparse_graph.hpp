#ifndef BUNDLEGRAPH_SPARSE_GRAPH_HPP
#define BUNDLEGRAPH_SPARSE_GRAPH_HPP

// Degree-normalised bipartite adjacencies and the parameter-free propagation
// kernel: alternating weighted neighbour sums, layer pooling and mean readout.
// Every kernel is linear in its embedding inputs; the *_adjoint functions apply
// the transposed map and are what the trainer uses for backpropagation.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bundlegraph/common.hpp"
#include "bundlegraph/dataset.hpp"
#include "bundlegraph/embedding.hpp"

namespace bundlegraph {

/// Compressed-row sparse matrix with real weights.
template <class T>
struct SparseMatrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<Index> col_idx;
  std::vector<T> weights;

  std::size_t nnz() const { return col_idx.size(); }

  /// out = this * src, row-parallel (each output row has exactly one writer).
  void multiply(const EmbeddingBlock<T>& src, EmbeddingBlock<T>& out) const {
    if (src.count() != cols) throw std::invalid_argument("SparseMatrix::multiply: shape mismatch");
    if (out.count() != rows || out.dim() != src.dim()) out = EmbeddingBlock<T>(rows, src.dim());
    const std::size_t d = src.dim();
    parallel_for(rows, [&](std::size_t b, std::size_t e) {
      for (std::size_t r = b; r < e; ++r) {
        auto o = out.row(r);
        std::fill(o.begin(), o.end(), T(0));
        for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
          const T w = weights[k];
          auto s = src.row(col_idx[k]);
          for (std::size_t j = 0; j < d; ++j) o[j] += w * s[j];
        }
      }
    });
  }

  EmbeddingBlock<T> operator*(const EmbeddingBlock<T>& src) const {
    EmbeddingBlock<T> out(rows, src.dim());
    multiply(src, out);
    return out;
  }

  SparseMatrix transposed() const {
    SparseMatrix t;
    t.rows = cols;
    t.cols = rows;
    t.row_ptr.assign(static_cast<std::size_t>(cols) + 1, 0);
    for (Index c : col_idx) ++t.row_ptr[c + 1];
    for (std::size_t c = 0; c < cols; ++c) t.row_ptr[c + 1] += t.row_ptr[c];
    t.col_idx.resize(nnz());
    t.weights.resize(nnz());
    auto fill = t.row_ptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
        const std::size_t pos = fill[col_idx[k]]++;
        t.col_idx[pos] = static_cast<Index>(r);
        t.weights[pos] = weights[k];
      }
    }
    return t;
  }

  /// Builds from sorted unique edges with a weight per edge.
  template <class WeightFn>
  static SparseMatrix from_edges(Index rows, Index cols, const std::vector<Edge>& edges,
                                 WeightFn&& weight) {
    SparseMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.row_ptr.assign(static_cast<std::size_t>(rows) + 1, 0);
    for (const auto& e : edges) ++m.row_ptr[e.left + 1];
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
    m.col_idx.reserve(edges.size());
    m.weights.reserve(edges.size());
    for (const auto& e : edges) {
      m.col_idx.push_back(e.right);
      m.weights.push_back(weight(e));
    }
    return m;
  }
};

/// Bipartite adjacency with weight 1/(sqrt(deg_left) sqrt(deg_right)) per edge,
/// stored in both orientations.
template <class T>
struct NormalizedBipartite {
  SparseMatrix<T> forward;   // rows -> cols: left_k = forward * right_{k-1}
  SparseMatrix<T> backward;  // transpose of forward

  Index rows() const { return forward.rows; }
  Index cols() const { return forward.cols; }
  std::size_t nnz() const { return forward.nnz(); }

  /// Edge list of the underlying binary relation.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(nnz());
    for (Index r = 0; r < forward.rows; ++r)
      for (std::size_t k = forward.row_ptr[r]; k < forward.row_ptr[r + 1]; ++k)
        out.push_back({r, forward.col_idx[k]});
    return out;
  }
};

/// `edges` must be sorted and unique. Zero-degree entities simply have no weights.
template <class T>
NormalizedBipartite<T> normalize_edges(Index rows, Index cols, const std::vector<Edge>& edges) {
  std::vector<double> dl(rows, 0.0), dr(cols, 0.0);
  for (const auto& e : edges) {
    dl[e.left] += 1.0;
    dr[e.right] += 1.0;
  }
  NormalizedBipartite<T> g;
  g.forward = SparseMatrix<T>::from_edges(rows, cols, edges, [&](const Edge& e) {
    return static_cast<T>(1.0 / (std::sqrt(dl[e.left]) * std::sqrt(dr[e.right])));
  });
  g.backward = g.forward.transposed();
  return g;
}

template <class T>
NormalizedBipartite<T> normalize(const InteractionMatrix& m) {
  return normalize_edges<T>(m.rows(), m.cols(), m.edges());
}

/// Per-layer elementwise perturbation of a propagated block: either a
/// multiplicative mask (message dropout) or an additive offset (noise).
template <class T>
struct LayerPerturbation {
  enum class Kind { none, scale, shift };
  Kind kind = Kind::none;
  std::vector<T> values;  // count*dim, row-major

  void apply(EmbeddingBlock<T>& b) const {
    auto& v = b.values();
    if (kind == Kind::scale) {
      for (std::size_t k = 0; k < v.size(); ++k) v[k] *= values[k];
    } else if (kind == Kind::shift) {
      for (std::size_t k = 0; k < v.size(); ++k) v[k] += values[k];
    }
  }

  /// Transpose of the linear part: masks scale gradients, shifts pass them through.
  void apply_adjoint(EmbeddingBlock<T>& g) const {
    if (kind != Kind::scale) return;
    auto& v = g.values();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] *= values[k];
  }
};

template <class T>
struct LayerPerturbationPair {
  LayerPerturbation<T> left;
  LayerPerturbation<T> right;
};

/// Entry k-1 applies to layer k (k = 1..K). Empty means unperturbed.
template <class T>
using PropagationPerturbations = std::vector<LayerPerturbationPair<T>>;

template <class T>
struct PropagationLayers {
  std::vector<EmbeddingBlock<T>> left;   // K+1 blocks, index 0 is the input
  std::vector<EmbeddingBlock<T>> right;  // K+1 blocks
};

/// K rounds of left_k = A right_{k-1}, right_k = A^T left_{k-1}.
template <class T>
PropagationLayers<T> propagate(const NormalizedBipartite<T>& g, const EmbeddingBlock<T>& left0,
                               const EmbeddingBlock<T>& right0, std::size_t K,
                               const PropagationPerturbations<T>* perturb = nullptr) {
  if (left0.count() != g.rows() || right0.count() != g.cols() || left0.dim() != right0.dim()) {
    throw std::invalid_argument("propagate: embedding shapes " + std::to_string(left0.count()) +
                                "/" + std::to_string(right0.count()) + " do not match graph " +
                                std::to_string(g.rows()) + "x" + std::to_string(g.cols()));
  }
  if (K < 1) throw std::invalid_argument("propagate: K must be >= 1");
  if (perturb && !perturb->empty() && perturb->size() != K) {
    throw std::invalid_argument("propagate: perturbation count != K");
  }
  PropagationLayers<T> out;
  out.left.reserve(K + 1);
  out.right.reserve(K + 1);
  out.left.push_back(left0);
  out.right.push_back(right0);
  for (std::size_t k = 1; k <= K; ++k) {
    EmbeddingBlock<T> l = g.forward * out.right[k - 1];
    EmbeddingBlock<T> r = g.backward * out.left[k - 1];
    if (perturb && !perturb->empty()) {
      (*perturb)[k - 1].left.apply(l);
      (*perturb)[k - 1].right.apply(r);
    }
    out.left.push_back(std::move(l));
    out.right.push_back(std::move(r));
  }
  return out;
}

enum class PoolDivisor { k_plus_one, k };

/// Multiplier applied to the layer sum for `num_layers` = K+1 layers.
inline double pool_scale(std::size_t num_layers, PoolDivisor mode) {
  if (num_layers == 0) throw std::invalid_argument("layer_pool: empty layer list");
  if (mode == PoolDivisor::k) {
    if (num_layers < 2) throw std::invalid_argument("layer_pool: divisor K needs K >= 1");
    return 1.0 / static_cast<double>(num_layers - 1);
  }
  return 1.0 / static_cast<double>(num_layers);
}

template <class T>
EmbeddingBlock<T> layer_pool(const std::vector<EmbeddingBlock<T>>& layers,
                             PoolDivisor mode = PoolDivisor::k_plus_one) {
  const T scale = static_cast<T>(pool_scale(layers.size(), mode));
  EmbeddingBlock<T> out(layers.front().count(), layers.front().dim());
  for (const auto& l : layers) {
    if (!l.same_shape(out)) throw std::invalid_argument("layer_pool: non-uniform layer shapes");
    out += l;
  }
  out *= scale;
  return out;
}

/// Gradient of (pooled_left, pooled_right) with respect to (left0, right0), given
/// gradients of the pooled outputs. Uses the same frozen perturbations as the
/// forward pass.
template <class T>
std::pair<EmbeddingBlock<T>, EmbeddingBlock<T>> propagate_pool_adjoint(
    const NormalizedBipartite<T>& g, std::size_t K, PoolDivisor mode,
    const EmbeddingBlock<T>& grad_left, const EmbeddingBlock<T>& grad_right,
    const PropagationPerturbations<T>* perturb = nullptr) {
  const T c = static_cast<T>(pool_scale(K + 1, mode));
  EmbeddingBlock<T> gl = grad_left;
  EmbeddingBlock<T> gr = grad_right;
  gl *= c;
  gr *= c;
  for (std::size_t k = K; k >= 1; --k) {
    if (perturb && !perturb->empty()) {
      (*perturb)[k - 1].left.apply_adjoint(gl);
      (*perturb)[k - 1].right.apply_adjoint(gr);
    }
    // left_k = A right_{k-1}  =>  d right_{k-1} += A^T d left_k, and symmetrically.
    EmbeddingBlock<T> next_gr = g.backward * gl;
    EmbeddingBlock<T> next_gl = g.forward * gr;
    next_gl.axpy(c, grad_left);
    next_gr.axpy(c, grad_right);
    gl = std::move(next_gl);
    gr = std::move(next_gr);
  }
  return {std::move(gl), std::move(gr)};
}

enum class AggregateDirection { cols_to_rows, rows_to_cols };

/// Unweighted neighbour mean along one side of a relation; targets without
/// neighbours read zero.
template <class T>
struct MeanAggregator {
  SparseMatrix<T> forward;  // target x source, weight 1/deg(target)
  SparseMatrix<T> adjoint;  // transpose

  MeanAggregator() = default;
  MeanAggregator(const InteractionMatrix& m, AggregateDirection dir) {
    const InteractionMatrix oriented = dir == AggregateDirection::cols_to_rows ? m : m.transposed();
    const auto deg = oriented.left_degrees();
    forward = SparseMatrix<T>::from_edges(oriented.rows(), oriented.cols(), oriented.edges(),
                                          [&](const Edge& e) { return T(1) / T(deg[e.left]); });
    adjoint = forward.transposed();
  }

  std::size_t source_count() const { return forward.cols; }
  std::size_t target_count() const { return forward.rows; }

  EmbeddingBlock<T> apply(const EmbeddingBlock<T>& source) const {
    if (source.count() != forward.cols) {
      throw std::invalid_argument("mean_aggregate: source has " + std::to_string(source.count()) +
                                  " rows, relation expects " + std::to_string(forward.cols));
    }
    return forward * source;
  }

  EmbeddingBlock<T> apply_adjoint(const EmbeddingBlock<T>& grad_target) const {
    return adjoint * grad_target;
  }
};

template <class T>
EmbeddingBlock<T> mean_aggregate(const InteractionMatrix& m, const EmbeddingBlock<T>& source,
                                 AggregateDirection dir) {
  return MeanAggregator<T>(m, dir).apply(source);
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_SPARSE_GRAPH_HPP
