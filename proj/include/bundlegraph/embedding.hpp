#ifndef BUNDLEGRAPH_EMBEDDING_HPP
#define BUNDLEGRAPH_EMBEDDING_HPP

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bundlegraph/common.hpp"

namespace bundlegraph {

/// Dense row-major count x dim matrix of embeddings.
template <class T>
class EmbeddingBlock {
 public:
  using value_type = T;

  EmbeddingBlock() = default;
  EmbeddingBlock(std::size_t count, std::size_t dim)
      : count_(count), dim_(dim), values_(count * dim, T(0)) {}

  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }

  std::span<T> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }
  std::span<const T> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }

  T& operator()(std::size_t i, std::size_t j) { return values_[i * dim_ + j]; }
  T operator()(std::size_t i, std::size_t j) const { return values_[i * dim_ + j]; }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }

  bool same_shape(const EmbeddingBlock& o) const { return count_ == o.count_ && dim_ == o.dim_; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  EmbeddingBlock& operator+=(const EmbeddingBlock& o) {
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += o.values_[k];
    return *this;
  }

  /// this += alpha * o
  void axpy(T alpha, const EmbeddingBlock& o) {
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += alpha * o.values_[k];
  }

  EmbeddingBlock& operator*=(T s) {
    for (auto& v : values_) v *= s;
    return *this;
  }

  bool all_finite() const {
    for (auto v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const EmbeddingBlock&, const EmbeddingBlock&) = default;

 private:
  std::size_t count_ = 0;
  std::size_t dim_ = 0;
  std::vector<T> values_;
};

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

template <class T>
T dot(std::span<T> a, std::span<T> b) {
  return dot(std::span<const T>(a), std::span<const T>(b));
}

template <class T>
T squared_norm(std::span<const T> a) {
  return dot(a, a);
}

template <class T>
T squared_norm(std::span<T> a) {
  return squared_norm(std::span<const T>(a));
}

/// The learnable parameters: layer-0 embeddings of users, bundles and items.
template <class T>
struct EmbeddingTable {
  EmbeddingBlock<T> users;
  EmbeddingBlock<T> bundles;
  EmbeddingBlock<T> items;

  EmbeddingTable() = default;
  EmbeddingTable(std::size_t m, std::size_t n, std::size_t o, std::size_t d)
      : users(m, d), bundles(n, d), items(o, d) {}

  std::size_t dim() const { return users.dim(); }

  EmbeddingTable zeros_like() const {
    return EmbeddingTable(users.count(), bundles.count(), items.count(), dim());
  }

  template <class Fn>
  void for_each_block(Fn&& fn) {
    fn(users);
    fn(bundles);
    fn(items);
  }
  template <class Fn>
  void for_each_block(Fn&& fn) const {
    fn(users);
    fn(bundles);
    fn(items);
  }

  EmbeddingTable& operator+=(const EmbeddingTable& o) {
    users += o.users;
    bundles += o.bundles;
    items += o.items;
    return *this;
  }

  EmbeddingTable& operator*=(T s) {
    users *= s;
    bundles *= s;
    items *= s;
    return *this;
  }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

/// Xavier-uniform initialisation with fan_in = fan_out = dim.
template <class T>
EmbeddingTable<T> xavier_init(std::size_t m, std::size_t n, std::size_t o, std::size_t d,
                              Rng& rng) {
  EmbeddingTable<T> t(m, n, o, d);
  const double bound = std::sqrt(6.0 / static_cast<double>(d + d));
  std::uniform_real_distribution<double> dist(-bound, bound);
  t.for_each_block([&](EmbeddingBlock<T>& b) {
    for (auto& v : b.values()) v = static_cast<T>(dist(rng));
  });
  return t;
}

// Checkpoint text format: header "M N O d seed", then M user rows, N bundle rows
// and O item rows of d space-separated decimals in shortest round-trip form.

template <class T>
void write_checkpoint(const std::filesystem::path& path, const EmbeddingTable<T>& t,
                      std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << t.users.count() << ' ' << t.bundles.count() << ' ' << t.items.count() << ' '
      << t.dim() << ' ' << seed << '\n';
  char buf[64];
  t.for_each_block([&](const EmbeddingBlock<T>& b) {
    for (std::size_t i = 0; i < b.count(); ++i) {
      auto row = b.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), row[j]);
        if (j) out.put(' ');
        out.write(buf, p - buf);
      }
      out.put('\n');
    }
  });
}

struct CheckpointHeader {
  std::size_t users = 0, bundles = 0, items = 0, dim = 0;
  std::uint64_t seed = 0;
};

template <class T>
EmbeddingTable<T> read_checkpoint(const std::filesystem::path& path,
                                  CheckpointHeader* header_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  CheckpointHeader h;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "missing header");
  {
    std::istringstream hs(line);
    if (!(hs >> h.users >> h.bundles >> h.items >> h.dim >> h.seed) || h.dim == 0) {
      throw ParseError(path.string(), 1, "header must be 'M N O d seed'");
    }
  }
  EmbeddingTable<T> t(h.users, h.bundles, h.items, h.dim);
  std::size_t lineno = 1;
  t.for_each_block([&](EmbeddingBlock<T>& b) {
    for (std::size_t i = 0; i < b.count(); ++i) {
      ++lineno;
      if (!std::getline(in, line)) throw ParseError(path.string(), lineno, "truncated checkpoint");
      const char* p = line.data();
      const char* end = line.data() + line.size();
      for (std::size_t j = 0; j < h.dim; ++j) {
        while (p < end && *p == ' ') ++p;
        T v{};
        auto [q, ec] = std::from_chars(p, end, v);
        if (ec != std::errc()) {
          throw ParseError(path.string(), lineno, "expected " + std::to_string(h.dim) + " values");
        }
        b(i, j) = v;
        p = q;
      }
      while (p < end && *p == ' ') ++p;
      if (p != end) throw ParseError(path.string(), lineno, "trailing data in row");
    }
  });
  if (header_out) *header_out = h;
  return t;
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_EMBEDDING_HPP
