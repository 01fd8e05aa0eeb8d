#include "cliplab/numerics.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <string>

#include "cliplab/error.hpp"

namespace cliplab {

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(hash_combine(mix64(seed), stream_id)) {}

SeededRng SeededRng::derive(std::uint64_t sub) const {
  return SeededRng(seed_, hash_combine(stream_id_, sub));
}

std::uint64_t SeededRng::next_u64() { return engine_(); }

double SeededRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t SeededRng::uniform_index(std::size_t n) {
  if (n == 0) throw InvalidInput("uniform_index: n must be positive");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Reject the incomplete top bucket so every residue is equally likely.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<std::size_t>(x % bound);
}

std::size_t SeededRng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidInput("categorical: bad weight");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidInput("categorical: weights sum to zero");
  const double u = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

double ProbDist::entropy() const {
  double h = 0.0;
  for (double q : p) {
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

namespace {

void require_finite(std::span<const double> logits, const char* who) {
  if (logits.empty()) throw InvalidInput(std::string(who) + ": empty input");
  for (double v : logits) {
    if (!std::isfinite(v)) throw InvalidInput(std::string(who) + ": non-finite input");
  }
}

}  // namespace

ProbDist softmax(std::span<const double> logits) {
  require_finite(logits, "softmax");
  const double m = *std::max_element(logits.begin(), logits.end());
  ProbDist out;
  out.p.resize(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.p[i] = std::exp(logits[i] - m);
    z += out.p[i];
  }
  for (double& q : out.p) q /= z;
  return out;
}

double logsumexp(std::span<const double> values) {
  require_finite(values, "logsumexp");
  const double m = *std::max_element(values.begin(), values.end());
  double z = 0.0;
  for (double v : values) z += std::exp(v - m);
  return m + std::log(z);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) v -= lse;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(double alpha, std::span<double> x) {
  for (double& v : x) v *= alpha;
}

double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double norm_inf(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

void matvec(MatrixView<const double> m, std::span<const double> x, std::span<double> out) {
  assert(x.size() == m.cols && out.size() == m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) out[r] = dot(m.row(r), x);
}

void matvec_transposed(MatrixView<const double> m, std::span<const double> x,
                       std::span<double> out) {
  assert(x.size() == m.rows && out.size() == m.cols);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) axpy(x[r], m.row(r), out);
}

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw InvalidInput("finite_diff_grad: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw OracleFailure(i, "finite_diff_grad: non-finite value probing coordinate " +
                                 std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  const double denom = std::max(norm_inf(a), norm_inf(b));
  if (denom == 0.0) return 0.0;
  return diff / denom;
}

}  // namespace cliplab
