#ifndef BUNDLEGRAPH_COMMON_HPP
#define BUNDLEGRAPH_COMMON_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace bundlegraph {

using Index = std::uint32_t;

/// Raised for malformed or inconsistent configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
  ConfigError(const std::string& what, std::vector<std::string> problems)
      : std::runtime_error(what), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Raised for missing files, unparsable lines and shape mismatches. Exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// A DataError carrying the offending file and 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(std::string file, std::size_t line, const std::string& msg)
      : DataError(file + ":" + std::to_string(line) + ": " + msg),
        file_(std::move(file)),
        line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

/// NaN/inf in a loss term or gradient. Exit code 4.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline std::atomic<unsigned>& thread_count_ref() {
  static std::atomic<unsigned> n{std::max(1u, std::thread::hardware_concurrency())};
  return n;
}
}  // namespace detail

/// 0 selects all hardware threads.
inline void set_num_threads(unsigned n) {
  detail::thread_count_ref() = n ? n : std::max(1u, std::thread::hardware_concurrency());
}
inline unsigned num_threads() { return detail::thread_count_ref(); }

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is visited by
/// exactly one chunk, so kernels that write disjoint rows stay deterministic for
/// any thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 256) {
  const std::size_t threads =
      std::min<std::size_t>(num_threads(), std::max<std::size_t>(1, n / min_chunk));
  if (threads <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& th : pool) th.join();
}

using Rng = std::mt19937_64;

/// Independent named random stream derived from one run seed.
inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_COMMON_HPP
