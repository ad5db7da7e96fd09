// Independent reference implementations used only by tests. These
// deliberately avoid the library's own algorithms: plain Monte Carlo with an
// Eigen LLT factor, Gauss-Legendre quadrature, and a Taylor-series normal
// CDF.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "latproc/orthant.hpp"

namespace oracles {

// Standard normal CDF from the Taylor series
// Phi(x) = 1/2 + phi(x) * sum_k x^(2k+1) / (2k+1)!!, valid for moderate |x|.
inline double phi_series(double x) {
  const double dens = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  double term = x;
  double sum = x;
  for (int k = 1; k < 400; ++k) {
    term *= x * x / (2.0 * k + 1.0);
    sum += term;
    if (std::fabs(term) < 1e-18 * std::fabs(sum)) break;
  }
  return 0.5 + dens * sum;
}

inline void gauss_legendre(int n, std::vector<double>& x,
                           std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 200; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::fabs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
  }
}

// P(a1 < X <= b1, a2 < Y <= b2) for standard bivariate normals, by
// Gauss-Legendre quadrature of phi(x) * [Phi2(x,b2) - Phi2(x,a2)] over x,
// where Phi2 is the conditional normal CDF given X = x.
inline double rect2d_quadrature(double a1, double b1, double a2, double b2,
                                double rho) {
  const double clip = 8.5;
  const double lo = std::max(a1, -clip);
  const double hi = std::min(b1, clip);
  if (lo >= hi) return 0.0;
  const double s = std::sqrt(1.0 - rho * rho);
  std::vector<double> gx, gw;
  gauss_legendre(240, gx, gw);
  const double mid = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);
  auto cdf = [](double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); };
  double total = 0.0;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double xv = mid + half * gx[i];
    const double dens = std::exp(-0.5 * xv * xv) / std::sqrt(2.0 * M_PI);
    const double zb =
        (b2 >= clip * 2) ? 1.0 : cdf((b2 - rho * xv) / s);
    const double za =
        (a2 <= -clip * 2) ? 0.0 : cdf((a2 - rho * xv) / s);
    total += gw[i] * dens * (zb - za);
  }
  return total * half;
}

struct McEstimate {
  double p = 0.0;
  double se = 0.0;
};

// Plain Monte Carlo orthant probability using Eigen's unpivoted LLT and a
// Box-Muller normal generator.
inline McEstimate mc_orthant(const Eigen::VectorXd& mean,
                             const Eigen::MatrixXd& cov,
                             const latproc::OrthantBox& box, std::int64_t n,
                             std::uint64_t seed) {
  const int d = box.dim();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd l = llt.matrixL();
  std::mt19937_64 rng(seed);
  bool have_spare = false;
  double spare = 0.0;
  auto normal = [&]() {
    if (have_spare) {
      have_spare = false;
      return spare;
    }
    double u1 = 0.0;
    do {
      u1 = latproc::to_unit_interval(rng());
    } while (u1 <= 0.0);
    const double u2 = latproc::to_unit_interval(rng());
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare = r * std::sin(2.0 * M_PI * u2);
    have_spare = true;
    return r * std::cos(2.0 * M_PI * u2);
  };

  Eigen::VectorXd z(d);
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) z[j] = normal();
    Eigen::VectorXd xv = mean + l * z;
    bool in = true;
    for (int j = 0; j < d; ++j) {
      if (!(xv[j] > box.lower[j] && xv[j] <= box.upper[j])) {
        in = false;
        break;
      }
    }
    if (in) ++hits;
  }
  McEstimate out;
  out.p = static_cast<double>(hits) / static_cast<double>(n);
  out.se = std::sqrt(std::max(out.p * (1.0 - out.p), 1e-12) /
                     static_cast<double>(n));
  return out;
}

}  // namespace oracles
