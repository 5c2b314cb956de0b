#pragma once

// Reference computations kept apart from the library: series erf, adaptive
// Simpson integration and hand-written densities for the reference setting.
// Values frozen below were produced offline with scipy (quad, truncnorm) and
// agree with these routines.

#include <cmath>
#include <functional>
#include <numbers>

namespace oracle {

using real = long double;

// erf by its Maclaurin series; accurate to long double precision for |x| <= 4.
inline real erf_series(real x) {
  real term = x, sum = x;
  for (int n = 1; n < 200; ++n) {
    term *= -x * x / n;
    const real add = term / (2 * n + 1);
    sum += add;
    if (std::fabs(add) < 1e-22L * std::fabs(sum)) break;
  }
  return 2.0L / std::sqrt(std::numbers::pi_v<real>) * sum;
}

inline real phi_cdf(real x) { return 0.5L * (1.0L + erf_series(x / std::numbers::sqrt2_v<real>)); }
inline real phi_pdf(real x) { return std::exp(-0.5L * x * x) / std::sqrt(2.0L * std::numbers::pi_v<real>); }

inline real simpson_step(const std::function<real(real)>& f, real a, real b, real fa, real fm, real fb,
                         real whole, real tol, int depth) {
  const real m = 0.5L * (a + b);
  const real lm = 0.5L * (a + m), rm = 0.5L * (m + b);
  const real flm = f(lm), frm = f(rm);
  const real left = (m - a) / 6 * (fa + 4 * flm + fm);
  const real right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::fabs(left + right - whole) <= 15 * tol) return left + right + (left + right - whole) / 15;
  return simpson_step(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

inline real simpson(const std::function<real(real)>& f, real a, real b, real tol = 1e-13L) {
  const real fa = f(a), fb = f(b), fm = f(0.5L * (a + b));
  return simpson_step(f, a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), tol, 50);
}

// Truncated normal density on [lo, hi].
inline real tn_pdf(real x, real mu, real sd, real lo, real hi) {
  if (x < lo || x > hi) return 0;
  return phi_pdf((x - mu) / sd) / sd / (phi_cdf((hi - mu) / sd) - phi_cdf((lo - mu) / sd));
}

// Reference setting densities and moments, written out directly.
inline real f_trial(real w1, int w2) { return tn_pdf(w1, 0, 0.75L, -2, 2) * (w2 ? 0.2L : 0.8L); }
inline real f_transport(real w1, int) { return tn_pdf(w1, 0.5L, 1, -2, 2) * 0.5L; }
inline real f_general(real w1, int w2) { return 0.5L * f_trial(w1, w2) + 0.5L * f_transport(w1, w2); }
inline real m0(real w1, int w2) { return w1 + w2; }
inline real m1(real, int w2) { return 1 + w2; }
inline real v0(real w1, int w2) { return std::exp(-2 + w1 + 2.0L * w2); }
inline real v1(real w1, int w2) { return std::exp(1 - w1 - 2.0L * w2); }

// Integral over [-2, 2] x {0, 1} of g(w1, w2), split at 0.5.
inline real integrate_w(const std::function<real(real, int)>& g) {
  real total = 0;
  for (int w2 = 0; w2 <= 1; ++w2) {
    const auto h = [&](real x) { return g(x, w2); };
    total += simpson(h, -2, 0.5L) + simpson(h, 0.5L, 2);
  }
  return total;
}

// Frozen scipy values.
inline constexpr double kPiTrial = 0.729770352097376;
inline constexpr double kPiTransport = 0.291420928143221;
inline constexpr double kPiGeneralize = 0.460186397213792;
inline constexpr double kPiPoststrat = 0.260415587194889;
inline constexpr double kDeltaTransport = 0.620810499281599;
inline constexpr double kDeltaGeneralize = 0.810405249640799;
inline constexpr double kDeltaPoststrat = 0.566791558772396;
inline constexpr double kBoundHalf[4] = {7.163052448184863, 35.34486015784136, 17.841127614382913,
                                         21.174601413038406};
inline constexpr double kBoundCdr[4] = {5.058611600648352, 24.484310959341638, 12.593111119681808,
                                        15.728102868949392};
inline constexpr double kTau[4] = {0.5995345565383157, 0.20046544346168435, 0.14988363913457892,
                                   0.05011636086542109};
inline constexpr double kTransportMeanW1 = 0.379189500718401;
inline constexpr double kRestrictedPi = 0.514695940567044;  // region W1 >= 0.5
inline constexpr double kMeanPopt = 0.713894931926618;      // E_F p_opt(W)

}  // namespace oracle
