#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace cliplab {

/// SplitMix64 finalizer. Used to decorrelate seeds and to hash small keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Order-sensitive combination of two 64-bit keys.
constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept {
  return mix64(seed ^ (mix64(value) + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

/**
 * Reproducible random stream identified by (seed, stream_id).
 *
 * The engine is std::mt19937_64, whose output sequence is fixed by the
 * standard. Its initial state is derived from mix64 of the seed and stream,
 * so distinct streams start from unrelated states. All derived draws
 * (uniform reals, indices, categorical samples) are computed here from raw
 * 64-bit outputs rather than through std:: distributions, whose algorithms
 * are implementation-defined.
 *
 * Instances are single-owner; copy one to fork an identical sequence.
 */
class SeededRng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64/splitmix64-stream-v1";

  SeededRng(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// A fresh generator on the child stream `sub` of this generator's stream.
  /// Does not consume draws from *this.
  SeededRng derive(std::uint64_t sub) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform on {0, ..., n-1}; unbiased (rejection sampling). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  /// Index drawn with probability proportional to `weights` (non-negative, positive sum).
  std::size_t categorical(std::span<const double> weights);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

/// A probability distribution over a finite action vocabulary.
struct ProbDist {
  std::vector<double> p;

  std::size_t size() const noexcept { return p.size(); }
  double operator[](std::size_t i) const { return p[i]; }
  double entropy() const;
};

/// Max-subtracted softmax. Throws InvalidInput on empty or non-finite logits.
ProbDist softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
double logsumexp(std::span<const double> values);

// Dense vector helpers. Sizes must match; checked with assertions only.
double dot(std::span<const double> a, std::span<const double> b);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(double alpha, std::span<double> x);
double norm2(std::span<const double> x);
double norm_inf(std::span<const double> x);
bool all_finite(std::span<const double> x);

/// Row-major dense matrix view over externally owned storage.
template <typename T>
struct MatrixView {
  T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) const { return {data + r * cols, cols}; }
};

/// out = m * x
void matvec(MatrixView<const double> m, std::span<const double> x, std::span<double> out);
/// out = m^T * x
void matvec_transposed(MatrixView<const double> m, std::span<const double> x,
                       std::span<double> out);

using ScalarFn = std::function<double(std::span<const double>)>;

/**
 * Central-difference gradient: (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
 * Throws OracleFailure naming the coordinate if any probe is non-finite,
 * InvalidInput if h <= 0.
 */
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x,
                                     double h = 1e-5);

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf); zero when both vectors vanish.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace cliplab
