#include "optalloc/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "optalloc/errors.hpp"

namespace optalloc::numerics {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;

// Acklam's rational approximation, relative error ~1.15e-9; refined below.
double acklam_quantile(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Nodes and weights on [-1, 1].
QuadratureRule legendre_reference(int order) {
  QuadratureRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const int half = (order + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= order; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = order * (x * p1 - p0) / (x * x - 1.0);
      const double step = p1 / dp;
      x -= step;
      if (std::abs(step) < 1e-16) break;
    }
    // recompute derivative at the converged node
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= order; ++k) {
      const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = pk;
    }
    dp = order == 1 ? 1.0 : order * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[order - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[order - 1 - i] = w;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
  return rule;
}

const QuadratureRule& cached_reference(int order) {
  static std::mutex mutex;
  static std::map<int, QuadratureRule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, legendre_reference(order)).first;
  return it->second;
}

}  // namespace

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal_quantile: p must lie in (0, 1), got " + std::to_string(p));
  }
  double x = acklam_quantile(p);
  for (int i = 0; i < 3; ++i) {
    const double dens = normal_pdf(x);
    if (dens <= 0.0) break;
    // Halley step on Phi(x) - p.
    const double err = p < 0.5 ? normal_cdf(x) - p : (1.0 - p) - normal_cdf(-x);
    const double u = err / dens;
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

QuadratureRule gauss_legendre(int order, double lower, double upper) {
  if (order < 1) throw DomainError("gauss_legendre: order must be >= 1");
  if (!(lower < upper)) throw DomainError("gauss_legendre: lower must be < upper");
  const QuadratureRule& ref = cached_reference(order);
  QuadratureRule rule;
  rule.lower = lower;
  rule.upper = upper;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const double half = 0.5 * (upper - lower);
  const double mid = 0.5 * (upper + lower);
  for (int i = 0; i < order; ++i) {
    rule.nodes[i] = mid + half * ref.nodes[i];
    rule.weights[i] = half * ref.weights[i];
  }
  return rule;
}

double integrate(const std::function<double(double)>& f, double lower, double upper,
                 std::span<const double> breakpoints, int order) {
  if (!(lower < upper)) throw DomainError("integrate: lower must be < upper");
  std::vector<double> cuts{lower};
  for (double b : breakpoints) {
    if (b > lower && b < upper) cuts.push_back(b);
  }
  cuts.push_back(upper);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const QuadratureRule& ref = cached_reference(order);
  double total = 0.0;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double half = 0.5 * (cuts[s + 1] - cuts[s]);
    const double mid = 0.5 * (cuts[s + 1] + cuts[s]);
    double piece = 0.0;
    for (int i = 0; i < order; ++i) piece += ref.weights[i] * f(mid + half * ref.nodes[i]);
    total += half * piece;
  }
  return total;
}

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t stream_index)
    : master_seed_(master_seed), stream_index_(stream_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(stream_index),
                    static_cast<std::uint32_t>(stream_index >> 32), 0x6f707461u};
  engine_.seed(seq);
}

double RngStream::uniform() { return unif_(engine_); }

double RngStream::normal() { return norm_(engine_); }

TruncatedNormal::TruncatedNormal(double mu, double sigma, double lower, double upper)
    : mu_(mu), sigma_(sigma), lower_(lower), upper_(upper) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw DomainError("truncated normal: sigma must be positive");
  }
  if (!(lower < upper)) throw DomainError("truncated normal: lower must be < upper");
  alpha_ = (lower - mu) / sigma;
  beta_ = (upper - mu) / sigma;
  cdf_alpha_ = normal_cdf(alpha_);
  // Use the upper tail when both bounds sit far right to keep digits.
  mass_ = alpha_ > 0.0 ? normal_cdf(-alpha_) - normal_cdf(-beta_) : normal_cdf(beta_) - cdf_alpha_;
  if (!(mass_ > 0.0)) throw DomainError("truncated normal: interval has zero normal mass");
  log_norm_ = std::log(sigma_ * mass_);
}

double TruncatedNormal::pdf(double x) const {
  if (x < lower_ || x > upper_) return 0.0;
  return normal_pdf((x - mu_) / sigma_) / (sigma_ * mass_);
}

double TruncatedNormal::log_pdf(double x) const {
  if (x < lower_ || x > upper_) return -std::numeric_limits<double>::infinity();
  const double z = (x - mu_) / sigma_;
  return std::log(kInvSqrt2Pi) - 0.5 * z * z - log_norm_;
}

double TruncatedNormal::cdf(double x) const {
  if (x <= lower_) return 0.0;
  if (x >= upper_) return 1.0;
  return (normal_cdf((x - mu_) / sigma_) - cdf_alpha_) / mass_;
}

double TruncatedNormal::mean() const {
  return mu_ + sigma_ * (normal_pdf(alpha_) - normal_pdf(beta_)) / mass_;
}

double TruncatedNormal::variance() const {
  const double pa = normal_pdf(alpha_), pb = normal_pdf(beta_);
  const double ta = std::isfinite(alpha_) ? alpha_ * pa : 0.0;
  const double tb = std::isfinite(beta_) ? beta_ * pb : 0.0;
  const double ratio = (pa - pb) / mass_;
  return sigma_ * sigma_ * (1.0 + (ta - tb) / mass_ - ratio * ratio);
}

double TruncatedNormal::sample(RngStream& rng) const {
  if (mass_ >= 0.1) {
    for (;;) {
      const double x = mu_ + sigma_ * rng.normal();
      if (x >= lower_ && x <= upper_) return x;
    }
  }
  const double u = rng.uniform();
  const double p = std::clamp(cdf_alpha_ + u * mass_, 1e-300, 1.0 - 1e-16);
  return std::clamp(mu_ + sigma_ * normal_quantile(p), lower_, upper_);
}

}  // namespace optalloc::numerics
