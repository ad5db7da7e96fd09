#include "latproc/orthant.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace latproc {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kTwoPi = 6.2831853071795864769;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double normal_cdf(double x) {
  if (std::isnan(x)) throw DomainError("normal_cdf: NaN argument");
  if (x == kNegInf) return 0.0;
  if (x == kPosInf) return 1.0;
  return 0.5 * std::erfc(-x / kSqrt2);
}

double normal_ccdf(double x) {
  if (std::isnan(x)) throw DomainError("normal_ccdf: NaN argument");
  if (x == kNegInf) return 1.0;
  if (x == kPosInf) return 0.0;
  return 0.5 * std::erfc(x / kSqrt2);
}

double normal_pdf(double x) {
  if (!std::isfinite(x)) return 0.0;
  return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Wichura's algorithm AS 241, routine PPND16 (double precision, ~1e-16
// relative accuracy).
double normal_quantile(double p) {
  if (std::isnan(p) || p < 0.0 || p > 1.0)
    throw DomainError("normal_quantile: p outside [0,1]");
  if (p == 0.0) return kNegInf;
  if (p == 1.0) return kPosInf;

  const double q = p - 0.5;
  double r;
  if (std::fabs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) *
                    r +
                4.5921953931549871457e4) *
                   r +
               1.3731693765509461125e4) *
                  r +
              1.9715909503065514427e3) *
                 r +
             1.3314166789178437745e2) *
                r +
            3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) *
                    r +
                2.1213794301586595867e4) *
                   r +
               5.3941960214247511077e3) *
                  r +
              6.8718700749205790830e2) *
                 r +
             4.2313330701600911252e1) *
                r +
            1.0);
  }
  r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) *
                    r +
                2.41780725177450611770e-1) *
                   r +
               1.27045825245236838258e0) *
                  r +
              3.64784832476320460504e0) *
                 r +
             5.76949722146069140550e0) *
                r +
            4.63033784615654529590e0) *
               r +
           1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) *
                    r +
                1.51986665636164571966e-2) *
                   r +
               1.48103976427480074590e-1) *
                  r +
              6.89767334985100004550e-1) *
                 r +
             1.67638483018380384940e0) *
                r +
            2.05319162663775882187e0) *
               r +
           1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) *
                    r +
                1.24266094738807843860e-3) *
                   r +
               2.65321895265761230930e-2) *
                  r +
              2.96560571828504891230e-1) *
                 r +
             1.78482653991729133580e0) *
                r +
            5.46378491116411436990e0) *
               r +
           6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) *
                    r +
                1.84631831751005468180e-6) *
                   r +
               7.86869131145613259100e-4) *
                  r +
              1.48753612908506148525e-2) *
                 r +
             1.36929880922735805310e-1) *
                r +
            5.99832206555887937690e-1) *
               r +
           1.0);
  }
  return (q < 0.0) ? -val : val;
}

double normal_interval_prob(double a, double b) {
  if (std::isnan(a) || std::isnan(b))
    throw DomainError("normal_interval_prob: NaN bound");
  if (a > b) throw DomainError("normal_interval_prob: a > b");
  if (a == b) return 0.0;
  if (a == kNegInf && b == kPosInf) return 1.0;
  if (a == kNegInf) return normal_cdf(b);
  if (b == kPosInf) return normal_ccdf(a);
  double p;
  if (a >= 0.0) {
    p = 0.5 * (std::erfc(a / kSqrt2) - std::erfc(b / kSqrt2));
  } else if (b <= 0.0) {
    p = 0.5 * (std::erfc(-b / kSqrt2) - std::erfc(-a / kSqrt2));
  } else {
    p = normal_cdf(b) - normal_cdf(a);
  }
  return std::max(p, 0.0);
}

namespace {

// Gauss-Legendre abscissae/weights (negative half; the positive half follows
// by symmetry), as used in Genz's bivariate routine.
constexpr double kGL6x[3] = {-0.9324695142031522, -0.6612093864662647,
                             -0.2386191860831970};
constexpr double kGL6w[3] = {0.1713244923791705, 0.3607615730481384,
                             0.4679139345726904};
constexpr double kGL12x[6] = {-0.9815606342467191, -0.9041172563704750,
                              -0.7699026741943050, -0.5873179542866171,
                              -0.3678314989981802, -0.1252334085114692};
constexpr double kGL12w[6] = {0.04717533638651177, 0.1069393259953183,
                              0.1600783285433464,  0.2031674267230659,
                              0.2334925365383547,  0.2491470458134029};
constexpr double kGL20x[10] = {-0.9931285991850949, -0.9639719272779138,
                               -0.9122344282513259, -0.8391169718222188,
                               -0.7463319064601508, -0.6360536807265150,
                               -0.5108670019508271, -0.3737060887154196,
                               -0.2277858511416451, -0.07652652113349733};
constexpr double kGL20w[10] = {0.01761400713915212, 0.04060142980038694,
                               0.06267204833410906, 0.08327674157670475,
                               0.1019301198172404,  0.1181945319615184,
                               0.1316886384491766,  0.1420961093183821,
                               0.1491729864726037,  0.1527533871307259};

// Upper-quadrant probability P(X > dh, Y > dk) for standard bivariate
// normals with correlation r. Port of the Drezner-Wesolowsky scheme in
// Genz's refined form: the moderate-|r| branch integrates the Plackett
// identity over the correlation path; the high-|r| branch integrates a
// tail expansion over sqrt(1-r^2).
double bvnu(double dh, double dk, double r) {
  if (dh == kPosInf || dk == kPosInf) return 0.0;
  if (dh == kNegInf) return (dk == kNegInf) ? 1.0 : normal_ccdf(dk);
  if (dk == kNegInf) return normal_ccdf(dh);

  const double* gx;
  const double* gw;
  int lg;
  const double ar = std::fabs(r);
  if (ar < 0.3) {
    gx = kGL6x;
    gw = kGL6w;
    lg = 3;
  } else if (ar < 0.75) {
    gx = kGL12x;
    gw = kGL12w;
    lg = 6;
  } else {
    gx = kGL20x;
    gw = kGL20w;
    lg = 10;
  }

  double h = dh;
  double k = dk;
  double hk = h * k;
  double bvn = 0.0;
  if (ar < 0.925) {
    if (ar > 0.0) {
      const double hs = (h * h + k * k) / 2.0;
      const double asr = std::asin(r);
      for (int i = 0; i < lg; ++i) {
        for (int is = -1; is <= 1; is += 2) {
          const double sn = std::sin(asr * (is * gx[i] + 1.0) / 2.0);
          bvn += gw[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
        }
      }
      bvn = bvn * asr / (2.0 * kTwoPi);
    }
    bvn += normal_cdf(-h) * normal_cdf(-k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (ar < 1.0) {
      const double as = (1.0 - r) * (1.0 + r);
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 16.0;
      double asr = -(bs / as + hk) / 2.0;
      if (asr > -100.0) {
        bvn = a * std::exp(asr) *
              (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 +
               c * d * as * as / 5.0);
      }
      if (-hk < 100.0) {
        const double b = std::sqrt(bs);
        bvn -= std::exp(-hk / 2.0) * std::sqrt(kTwoPi) * normal_cdf(-b / a) *
               b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
      }
      a /= 2.0;
      for (int i = 0; i < lg; ++i) {
        for (int is = -1; is <= 1; is += 2) {
          const double x = a * (is * gx[i] + 1.0);
          const double xs = x * x;
          const double rs = std::sqrt(1.0 - xs);
          asr = -(bs / xs + hk) / 2.0;
          if (asr > -100.0) {
            bvn += a * gw[i] * std::exp(asr) *
                   (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs -
                    (1.0 + c * xs * (1.0 + d * xs)));
          }
        }
      }
      bvn = -bvn / kTwoPi;
    }
    if (r > 0.0) {
      bvn += normal_cdf(-std::max(h, k));
    } else {
      bvn = -bvn;
      if (k > h) bvn += normal_cdf(k) - normal_cdf(h);
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

}  // namespace

double std_bivariate_cdf(double h, double k, double rho) {
  if (std::isnan(h) || std::isnan(k) || std::isnan(rho))
    throw DomainError("std_bivariate_cdf: NaN argument");
  if (std::fabs(rho) > 1.0)
    throw DomainError("std_bivariate_cdf: |rho| > 1");
  if (h == kNegInf || k == kNegInf) return 0.0;
  if (h == kPosInf) return normal_cdf(k);
  if (k == kPosInf) return normal_cdf(h);
  if (rho == 1.0) return normal_cdf(std::min(h, k));
  if (rho == -1.0) return std::max(0.0, normal_cdf(h) - normal_cdf(-k));
  return bvnu(-h, -k, rho);
}

double bivariate_rectangle_prob(double a1, double b1, double a2, double b2,
                                double rho) {
  if (a1 > b1 || a2 > b2)
    throw DomainError("bivariate_rectangle_prob: empty rectangle");
  double p = std_bivariate_cdf(b1, b2, rho);
  if (a1 != kNegInf) p -= std_bivariate_cdf(a1, b2, rho);
  if (a2 != kNegInf) p -= std_bivariate_cdf(b1, a2, rho);
  if (a1 != kNegInf && a2 != kNegInf) p += std_bivariate_cdf(a1, a2, rho);
  return std::clamp(p, 0.0, 1.0);
}

void OrthantBox::validate() const {
  if (lower.size() != upper.size())
    throw DomainError("OrthantBox: lower/upper length mismatch");
  if (lower.size() < 1) throw DomainError("OrthantBox: dim must be >= 1");
  for (int j = 0; j < dim(); ++j) {
    if (std::isnan(lower[j]) || std::isnan(upper[j]))
      throw DomainError("OrthantBox: NaN bound");
    if (!(lower[j] < upper[j]))
      throw DomainError("OrthantBox: lower must be strictly below upper");
  }
}

namespace {

// Conditional expected value of a standard normal truncated to (a, b).
double truncated_mean(double a, double b, double mass) {
  if (mass > 1e-300) return (normal_pdf(a) - normal_pdf(b)) / mass;
  if (a == kNegInf && b == kPosInf) return 0.0;
  if (a == kNegInf) return b;
  if (b == kPosInf) return a;
  return 0.5 * (a + b);
}

void check_square_symmetric(const Eigen::MatrixXd& cov, int dim) {
  if (cov.rows() != dim || cov.cols() != dim)
    throw DomainError("covariance dimension mismatch");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw DomainError("covariance is not symmetric");
}

}  // namespace

OrderedFactor reorder_and_factor(const Eigen::MatrixXd& cov,
                                 const OrthantBox& box) {
  box.validate();
  const int n = box.dim();
  check_square_symmetric(cov, n);

  Eigen::MatrixXd c = cov;
  Eigen::VectorXd a = box.lower;
  Eigen::VectorXd b = box.upper;
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int k = 0; k < n; ++k) {
    // Pick the remaining variable with the smallest conditional mass.
    int best = -1;
    double best_mass = kPosInf;
    for (int i = k; i < n; ++i) {
      double s = c(i, i);
      for (int j = 0; j < k; ++j) s -= l(i, j) * l(i, j);
      if (s <= 0.0) continue;
      const double sd = std::sqrt(s);
      double mu = 0.0;
      for (int j = 0; j < k; ++j) mu += l(i, j) * y[j];
      const double at = (a[i] == kNegInf) ? kNegInf : (a[i] - mu) / sd;
      const double bt = (b[i] == kPosInf) ? kPosInf : (b[i] - mu) / sd;
      const double mass = normal_interval_prob(at, bt);
      if (mass < best_mass) {
        best_mass = mass;
        best = i;
      }
    }
    if (best < 0)
      throw FactorizationError(
          "covariance not positive definite at pivot " +
              std::to_string(order[k]),
          order[k]);
    if (best != k) {
      c.row(k).swap(c.row(best));
      c.col(k).swap(c.col(best));
      std::swap(a[k], a[best]);
      std::swap(b[k], b[best]);
      std::swap(order[k], order[best]);
      for (int j = 0; j < k; ++j) std::swap(l(k, j), l(best, j));
    }

    double s = c(k, k);
    for (int j = 0; j < k; ++j) s -= l(k, j) * l(k, j);
    if (s <= 0.0)
      throw FactorizationError(
          "covariance not positive definite at pivot " +
              std::to_string(order[k]),
          order[k]);
    l(k, k) = std::sqrt(s);
    for (int i = k + 1; i < n; ++i) {
      double v = c(i, k);
      for (int j = 0; j < k; ++j) v -= l(i, j) * l(k, j);
      l(i, k) = v / l(k, k);
    }

    double mu = 0.0;
    for (int j = 0; j < k; ++j) mu += l(k, j) * y[j];
    const double at = (a[k] == kNegInf) ? kNegInf : (a[k] - mu) / l(k, k);
    const double bt = (b[k] == kPosInf) ? kPosInf : (b[k] - mu) / l(k, k);
    y[k] = truncated_mean(at, bt, normal_interval_prob(at, bt));
  }

  OrderedFactor out;
  out.chol = std::move(l);
  out.lower = std::move(a);
  out.upper = std::move(b);
  out.order = std::move(order);
  return out;
}

namespace {

// Square roots of the first primes give a well-distributed Richtmyer
// generator vector for the rank-1 lattice.
std::vector<double> richtmyer_generators(int count) {
  std::vector<double> alpha;
  alpha.reserve(count);
  int candidate = 1;
  while (static_cast<int>(alpha.size()) < count) {
    ++candidate;
    bool prime = true;
    for (int d = 2; d * d <= candidate; ++d) {
      if (candidate % d == 0) {
        prime = false;
        break;
      }
    }
    if (prime) {
      double frac = std::sqrt(static_cast<double>(candidate));
      alpha.push_back(frac - std::floor(frac));
    }
  }
  return alpha;
}

// Genz separation-of-variables integrand over the unit cube [0,1]^(n-1).
// Bounds must already be permuted to match the Cholesky factor.
double sov_integrand(const OrderedFactor& f, const double* w) {
  const int n = static_cast<int>(f.order.size());
  const auto& l = f.chol;
  double lo = (f.lower[0] == kNegInf) ? kNegInf : f.lower[0] / l(0, 0);
  double hi = (f.upper[0] == kPosInf) ? kPosInf : f.upper[0] / l(0, 0);
  double d = normal_cdf(lo);
  double fi = normal_interval_prob(lo, hi);
  double prod = fi;
  double y[64];
  for (int i = 1; i < n; ++i) {
    if (prod <= 0.0) return 0.0;
    double t = std::clamp(d + w[i - 1] * fi, 1e-300, 1.0 - 1.1e-16);
    y[i - 1] = normal_quantile(t);
    double mu = 0.0;
    for (int j = 0; j < i; ++j) mu += l(i, j) * y[j];
    lo = (f.lower[i] == kNegInf) ? kNegInf : (f.lower[i] - mu) / l(i, i);
    hi = (f.upper[i] == kPosInf) ? kPosInf : (f.upper[i] - mu) / l(i, i);
    d = normal_cdf(lo);
    fi = normal_interval_prob(lo, hi);
    prod *= fi;
  }
  return prod;
}

}  // namespace

IntegrationResult orthant_prob(const Eigen::VectorXd& mean,
                               const Eigen::MatrixXd& cov,
                               const OrthantBox& box,
                               const IntegratorOptions& options) {
  box.validate();
  const int n = box.dim();
  if (mean.size() != n) throw DomainError("mean dimension mismatch");
  check_square_symmetric(cov, n);
  if (!(options.target_abs_error > 0.0))
    throw DomainError("target_abs_error must be positive");
  if (options.max_samples < 1 || options.shifts < 2)
    throw DomainError("invalid sampling budget");
  if (n > 64) throw DomainError("orthant_prob: dimension above 64 unsupported");

  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov,
                                                      Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (lo <= 0.0)
      throw FactorizationError("covariance not positive definite", -1);
    if (hi / lo > 1e12)
      throw FactorizationError(
          "covariance numerically singular (condition number above 1e12)",
          -1);
  }

  // Shift the box so the distribution is centered.
  Eigen::VectorXd lower = box.lower - mean;
  Eigen::VectorXd upper = box.upper - mean;
  for (int j = 0; j < n; ++j) {
    if (box.lower[j] == kNegInf) lower[j] = kNegInf;
    if (box.upper[j] == kPosInf) upper[j] = kPosInf;
  }

  IntegrationResult res;
  if (n == 1) {
    const double sd = std::sqrt(cov(0, 0));
    const double lo = (lower[0] == kNegInf) ? kNegInf : lower[0] / sd;
    const double hi = (upper[0] == kPosInf) ? kPosInf : upper[0] / sd;
    res.value = normal_interval_prob(lo, hi);
    res.error_estimate = 1e-15;
    res.samples = 0;
    return res;
  }
  if (n == 2) {
    const double s1 = std::sqrt(cov(0, 0));
    const double s2 = std::sqrt(cov(1, 1));
    double rho = cov(0, 1) / (s1 * s2);
    rho = std::clamp(rho, -1.0, 1.0);
    const double a1 = (lower[0] == kNegInf) ? kNegInf : lower[0] / s1;
    const double b1 = (upper[0] == kPosInf) ? kPosInf : upper[0] / s1;
    const double a2 = (lower[1] == kNegInf) ? kNegInf : lower[1] / s2;
    const double b2 = (upper[1] == kPosInf) ? kPosInf : upper[1] / s2;
    res.value = bivariate_rectangle_prob(a1, b1, a2, b2, rho);
    res.error_estimate = 5e-15;
    res.samples = 0;
    return res;
  }

  OrthantBox centered{std::move(lower), std::move(upper)};
  const OrderedFactor factor = reorder_and_factor(cov, centered);

  const int r = options.shifts;
  const int ndim = n - 1;
  const std::vector<double> alpha = richtmyer_generators(ndim);

  // Offsets are drawn once, in a fixed order, so results do not depend on
  // how the sample budget is scheduled.
  std::mt19937_64 rng(options.seed);
  std::vector<double> delta(static_cast<std::size_t>(r) * ndim);
  for (double& v : delta) v = to_unit_interval(rng());

  std::vector<double> shift_sum(r, 0.0);
  std::int64_t done = 0;  // points evaluated per shift so far
  std::int64_t batch = 64;
  double w[64];

  double value = 0.0;
  double err = kPosInf;
  while (done < options.max_samples) {
    const std::int64_t next =
        std::min<std::int64_t>(done + batch, options.max_samples);
    for (int s = 0; s < r; ++s) {
      const double* off = delta.data() + static_cast<std::size_t>(s) * ndim;
      double acc = 0.0;
      for (std::int64_t j = done + 1; j <= next; ++j) {
        for (int i = 0; i < ndim; ++i) {
          const double u =
              std::fmod(static_cast<double>(j) * alpha[i] + off[i], 1.0);
          w[i] = std::fabs(2.0 * u - 1.0);
        }
        acc += sov_integrand(factor, w);
      }
      shift_sum[s] += acc;
    }
    done = next;
    batch *= 2;

    double m = 0.0;
    for (int s = 0; s < r; ++s) m += shift_sum[s] / static_cast<double>(done);
    m /= r;
    double v = 0.0;
    for (int s = 0; s < r; ++s) {
      const double d = shift_sum[s] / static_cast<double>(done) - m;
      v += d * d;
    }
    v /= static_cast<double>(r) * (r - 1);
    value = m;
    err = std::sqrt(v);
    if (err <= options.target_abs_error) break;
  }

  res.value = std::clamp(value, 0.0, 1.0);
  res.error_estimate = err;
  res.samples = done * r;
  return res;
}

}  // namespace latproc
