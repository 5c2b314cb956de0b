#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace optalloc::numerics {

inline constexpr int kDefaultQuadratureOrder = 64;

double normal_pdf(double x);
double normal_cdf(double x);
// Inverse of normal_cdf. Throws DomainError unless 0 < p < 1.
double normal_quantile(double p);

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  double lower = -1.0;
  double upper = 1.0;

  template <typename F>
  double integrate(F&& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) sum += weights[i] * f(nodes[i]);
    return sum;
  }
};

// Gauss-Legendre rule with `order` nodes on [lower, upper]; exact for
// polynomials of degree <= 2*order - 1.
QuadratureRule gauss_legendre(int order, double lower, double upper);

// Integral of f over [lower, upper], split at every breakpoint that falls
// strictly inside the interval so piecewise-smooth integrands stay accurate.
double integrate(const std::function<double(double)>& f, double lower, double upper,
                 std::span<const double> breakpoints = {},
                 int order = kDefaultQuadratureOrder);

// Reproducible random stream identified by (master_seed, stream_index).
// Streams are derived through std::seed_seq so that neighbouring indices
// give decorrelated engine states.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_index);

  double uniform();  // [0, 1)
  double normal();   // standard normal
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t stream_index() const { return stream_index_; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t master_seed_;
  std::uint64_t stream_index_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> norm_{0.0, 1.0};
};

// N(mu, sigma^2) conditioned on [lower, upper].
class TruncatedNormal {
 public:
  TruncatedNormal(double mu, double sigma, double lower, double upper);

  double mu() const { return mu_; }
  double sigma() const { return sigma_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  // Normal probability mass of [lower, upper] before renormalisation.
  double mass() const { return mass_; }

  double pdf(double x) const;
  double log_pdf(double x) const;
  double cdf(double x) const;
  double mean() const;
  double variance() const;

  // Rejection from the untruncated normal; inverse-cdf when mass < 0.1.
  double sample(RngStream& rng) const;

 private:
  double mu_, sigma_, lower_, upper_;
  double alpha_, beta_;
  double cdf_alpha_;
  double mass_;
  double log_norm_;
};

}  // namespace optalloc::numerics
