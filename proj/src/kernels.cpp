#include "uniwetok/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace uniwetok::kernels {
namespace {

struct ProbAndSlope {
  double p;
  double dp_du;
};

inline ProbAndSlope bit_probability(double u, const BitProbability& prob) {
  if (prob.siglu) {
    const double p = 0.5 * (1.0 + u);
    if (p <= 0.0) return {0.0, 0.0};
    if (p >= 1.0) return {1.0, 0.0};
    return {p, 0.5};
  }
  const double s = 2.0 / prob.temperature;
  const double p = 1.0 / (1.0 + std::exp(-s * u));
  return {p, s * p * (1.0 - p)};
}

inline double clamped_log(double x) { return std::log(std::max(x, kLogEpsilon)); }

inline double bernoulli_entropy(double p) {
  return -p * clamped_log(p) - (1.0 - p) * clamped_log(1.0 - p);
}

// d/dp of bernoulli_entropy, consistent with the clamped logs.
inline double bernoulli_entropy_slope(double p) {
  const double a = -clamped_log(p) - (p > kLogEpsilon ? 1.0 : 0.0);
  const double b = -clamped_log(1.0 - p) - ((1.0 - p) > kLogEpsilon ? 1.0 : 0.0);
  return a - b;
}

// Q log Q with the clamp, and its derivative.
inline double neg_entropy_term(double q) { return q * clamped_log(q); }
inline double neg_entropy_slope(double q) {
  return clamped_log(q) + (q > kLogEpsilon ? 1.0 : 0.0);
}

int thread_count() { return omp_get_max_threads(); }

std::vector<double> gaussian_window(const SsimParams& p) {
  std::vector<double> w(static_cast<size_t>(p.window) * p.window);
  const double c = (p.window - 1) / 2.0;
  double total = 0.0;
  for (int y = 0; y < p.window; ++y) {
    for (int x = 0; x < p.window; ++x) {
      const double v = std::exp(-((y - c) * (y - c) + (x - c) * (x - c)) / (2 * p.sigma * p.sigma));
      w[y * p.window + x] = v;
      total += v;
    }
  }
  for (double& v : w) v /= total;
  return w;
}

// SSIM of the window whose top-left corner is (y0, x0).
double ssim_at(const double* a, const double* b, int width, int y0, int x0,
               const std::vector<double>& w, const SsimParams& p) {
  double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
  for (int y = 0; y < p.window; ++y) {
    const double* ra = a + static_cast<size_t>(y0 + y) * width + x0;
    const double* rb = b + static_cast<size_t>(y0 + y) * width + x0;
    const double* rw = w.data() + y * p.window;
    for (int x = 0; x < p.window; ++x) {
      ma += rw[x] * ra[x];
      mb += rw[x] * rb[x];
      saa += rw[x] * ra[x] * ra[x];
      sbb += rw[x] * rb[x] * rb[x];
      sab += rw[x] * ra[x] * rb[x];
    }
  }
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
  return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

// ---------------------------------------------------------------------------
// reference
// ---------------------------------------------------------------------------
namespace reference {

template <typename T>
double token_entropy_forward(std::span<const T> u, int d_prime, BitProbability prob) {
  const int64_t rows = static_cast<int64_t>(u.size()) / d_prime;
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    for (int l = 0; l < d_prime; ++l) {
      total += bernoulli_entropy(bit_probability(u[r * d_prime + l], prob).p);
    }
  }
  return rows > 0 ? total / static_cast<double>(rows) : 0.0;
}

template <typename T>
void token_entropy_backward(std::span<const T> u, int d_prime, BitProbability prob,
                            double grad_out, std::span<T> grad_u) {
  const int64_t rows = static_cast<int64_t>(u.size()) / d_prime;
  const double scale = rows > 0 ? grad_out / static_cast<double>(rows) : 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    const auto [p, dp] = bit_probability(u[i], prob);
    grad_u[i] = static_cast<T>(scale * bernoulli_entropy_slope(p) * dp);
  }
}

// Direct enumeration: every code, every bit, no incremental products.
template <typename T>
double codebook_entropy_forward(std::span<const T> u, int groups, int d_prime,
                                BitProbability prob) {
  const int64_t codes = int64_t{1} << d_prime;
  const int64_t positions = static_cast<int64_t>(u.size()) / (groups * d_prime);
  double total = 0.0;
  for (int k = 0; k < groups; ++k) {
    for (int64_t c = 0; c < codes; ++c) {
      double mean_q = 0.0;
      for (int64_t n = 0; n < positions; ++n) {
        double q = 1.0;
        for (int l = 0; l < d_prime; ++l) {
          const double p = bit_probability(u[(n * groups + k) * d_prime + l], prob).p;
          q *= ((c >> l) & 1) ? p : 1.0 - p;
        }
        mean_q += q;
      }
      mean_q /= static_cast<double>(positions);
      total += neg_entropy_term(mean_q);
    }
  }
  return total / static_cast<double>(groups);
}

template <typename T>
void codebook_entropy_backward(std::span<const T> u, int groups, int d_prime,
                               BitProbability prob, double grad_out, std::span<T> grad_u) {
  const int64_t codes = int64_t{1} << d_prime;
  const int64_t positions = static_cast<int64_t>(u.size()) / (groups * d_prime);
  const double scale = grad_out / (static_cast<double>(groups) * static_cast<double>(positions));
  for (int k = 0; k < groups; ++k) {
    std::vector<double> slope(codes);
    for (int64_t c = 0; c < codes; ++c) {
      double mean_q = 0.0;
      for (int64_t n = 0; n < positions; ++n) {
        double q = 1.0;
        for (int l = 0; l < d_prime; ++l) {
          const double p = bit_probability(u[(n * groups + k) * d_prime + l], prob).p;
          q *= ((c >> l) & 1) ? p : 1.0 - p;
        }
        mean_q += q;
      }
      slope[c] = neg_entropy_slope(mean_q / static_cast<double>(positions));
    }
    for (int64_t n = 0; n < positions; ++n) {
      for (int l = 0; l < d_prime; ++l) {
        double acc = 0.0;
        for (int64_t c = 0; c < codes; ++c) {
          double others = 1.0;
          for (int m = 0; m < d_prime; ++m) {
            if (m == l) continue;
            const double p = bit_probability(u[(n * groups + k) * d_prime + m], prob).p;
            others *= ((c >> m) & 1) ? p : 1.0 - p;
          }
          acc += slope[c] * others * (((c >> l) & 1) ? 1.0 : -1.0);
        }
        const int64_t idx = (n * groups + k) * d_prime + l;
        grad_u[idx] = static_cast<T>(scale * acc * bit_probability(u[idx], prob).dp_du);
      }
    }
  }
}

template <typename T>
void sign_pack(std::span<const T> u, int d_prime, std::span<T> signs, std::span<int64_t> ids) {
  const int64_t rows = static_cast<int64_t>(u.size()) / d_prime;
  for (int64_t r = 0; r < rows; ++r) {
    int64_t id = 0;
    for (int l = 0; l < d_prime; ++l) {
      const bool positive = u[r * d_prime + l] >= T(0);
      signs[r * d_prime + l] = positive ? T(1) : T(-1);
      if (positive) id |= int64_t{1} << l;
    }
    ids[r] = id;
  }
}

void mark_usage(std::span<const int64_t> ids, int groups, int d_prime, std::span<uint8_t> seen) {
  const int64_t codes = int64_t{1} << d_prime;
  for (size_t i = 0; i < ids.size(); ++i) {
    const int k = static_cast<int>(i % groups);
    seen[k * codes + ids[i]] = 1;
  }
}

double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 const SsimParams& params) {
  const auto w = gaussian_window(params);
  const int oh = height - params.window + 1, ow = width - params.window + 1;
  double total = 0.0;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) total += ssim_at(a.data(), b.data(), width, y, x, w, params);
  }
  return total / (static_cast<double>(oh) * ow);
}

}  // namespace reference

// ---------------------------------------------------------------------------
// parallel
// ---------------------------------------------------------------------------
namespace parallel {

template <typename T>
double token_entropy_forward(std::span<const T> u, int d_prime, BitProbability prob) {
  const int64_t rows = static_cast<int64_t>(u.size()) / d_prime;
  // Per-thread partials summed in thread order keep the result reproducible.
  std::vector<double> partial(thread_count(), 0.0);
#pragma omp parallel
  {
    double local = 0.0;
#pragma omp for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = u.data() + r * d_prime;
      for (int l = 0; l < d_prime; ++l) local += bernoulli_entropy(bit_probability(row[l], prob).p);
    }
    partial[omp_get_thread_num()] = local;
  }
  double total = 0.0;
  for (double v : partial) total += v;
  return rows > 0 ? total / static_cast<double>(rows) : 0.0;
}

template <typename T>
void token_entropy_backward(std::span<const T> u, int d_prime, BitProbability prob,
                            double grad_out, std::span<T> grad_u) {
  const int64_t n = static_cast<int64_t>(u.size());
  const int64_t rows = n / d_prime;
  const double scale = rows > 0 ? grad_out / static_cast<double>(rows) : 0.0;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const auto [p, dp] = bit_probability(u[i], prob);
    grad_u[i] = static_cast<T>(scale * bernoulli_entropy_slope(p) * dp);
  }
}

namespace {

// Fills q[c] = prod_l (bit_l(c) ? p_l : 1 - p_l) by doubling over bits.
inline void code_distribution(const double* p, int d_prime, double* q) {
  q[0] = 1.0;
  for (int l = 0; l < d_prime; ++l) {
    const int64_t half = int64_t{1} << l;
    for (int64_t c = 0; c < half; ++c) {
      q[c | half] = q[c] * p[l];
      q[c] *= 1.0 - p[l];
    }
  }
}

template <typename T>
std::vector<double> batch_mean_distribution(std::span<const T> u, int groups, int d_prime,
                                            BitProbability prob) {
  const int64_t codes = int64_t{1} << d_prime;
  const int64_t positions = static_cast<int64_t>(u.size()) / (groups * d_prime);
  const int threads = thread_count();
  std::vector<double> partial(static_cast<size_t>(threads) * groups * codes, 0.0);
#pragma omp parallel
  {
    double* acc = partial.data() + static_cast<size_t>(omp_get_thread_num()) * groups * codes;
    std::vector<double> p(d_prime), q(codes);
#pragma omp for schedule(static)
    for (int64_t n = 0; n < positions; ++n) {
      for (int k = 0; k < groups; ++k) {
        const T* row = u.data() + (n * groups + k) * d_prime;
        for (int l = 0; l < d_prime; ++l) p[l] = bit_probability(row[l], prob).p;
        code_distribution(p.data(), d_prime, q.data());
        double* dst = acc + k * codes;
        for (int64_t c = 0; c < codes; ++c) dst[c] += q[c];
      }
    }
  }
  std::vector<double> mean(static_cast<size_t>(groups) * codes, 0.0);
  for (int t = 0; t < threads; ++t) {
    const double* src = partial.data() + static_cast<size_t>(t) * groups * codes;
    for (size_t i = 0; i < mean.size(); ++i) mean[i] += src[i];
  }
  for (double& v : mean) v /= static_cast<double>(positions);
  return mean;
}

}  // namespace

template <typename T>
double codebook_entropy_forward(std::span<const T> u, int groups, int d_prime,
                                BitProbability prob) {
  const auto mean = batch_mean_distribution(u, groups, d_prime, prob);
  double total = 0.0;
  for (double q : mean) total += neg_entropy_term(q);
  return total / static_cast<double>(groups);
}

template <typename T>
void codebook_entropy_backward(std::span<const T> u, int groups, int d_prime,
                               BitProbability prob, double grad_out, std::span<T> grad_u) {
  const int64_t codes = int64_t{1} << d_prime;
  const int64_t half = codes / 2;
  const int64_t positions = static_cast<int64_t>(u.size()) / (groups * d_prime);
  const double scale = grad_out / (static_cast<double>(groups) * static_cast<double>(positions));
  auto slope = batch_mean_distribution(u, groups, d_prime, prob);
  for (double& v : slope) v = neg_entropy_slope(v);

#pragma omp parallel
  {
    std::vector<double> p(d_prime), others(d_prime > 1 ? d_prime - 1 : 1), q(half);
#pragma omp for schedule(static)
    for (int64_t n = 0; n < positions; ++n) {
      for (int k = 0; k < groups; ++k) {
        const int64_t base = (n * groups + k) * d_prime;
        for (int l = 0; l < d_prime; ++l) p[l] = bit_probability(u[base + l], prob).p;
        const double* s = slope.data() + k * codes;
        for (int l = 0; l < d_prime; ++l) {
          // Distribution over the remaining d'-1 bits, then split on bit l.
          int j = 0;
          for (int m = 0; m < d_prime; ++m)
            if (m != l) others[j++] = p[m];
          code_distribution(others.data(), d_prime - 1, q.data());
          const int64_t low_mask = (int64_t{1} << l) - 1;
          double acc = 0.0;
          for (int64_t r = 0; r < half; ++r) {
            const int64_t c0 = (r & low_mask) | ((r & ~low_mask) << 1);
            acc += q[r] * (s[c0 | (int64_t{1} << l)] - s[c0]);
          }
          grad_u[base + l] =
              static_cast<T>(scale * acc * bit_probability(u[base + l], prob).dp_du);
        }
      }
    }
  }
}

template <typename T>
void sign_pack(std::span<const T> u, int d_prime, std::span<T> signs, std::span<int64_t> ids) {
  const int64_t rows = static_cast<int64_t>(u.size()) / d_prime;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    int64_t id = 0;
    for (int l = 0; l < d_prime; ++l) {
      const bool positive = u[r * d_prime + l] >= T(0);
      signs[r * d_prime + l] = positive ? T(1) : T(-1);
      id |= static_cast<int64_t>(positive) << l;
    }
    ids[r] = id;
  }
}

void mark_usage(std::span<const int64_t> ids, int groups, int d_prime, std::span<uint8_t> seen) {
  const int64_t codes = int64_t{1} << d_prime;
  const int64_t positions = static_cast<int64_t>(ids.size()) / groups;
  // One group per iteration: no two threads write the same flag row.
#pragma omp parallel for schedule(static)
  for (int k = 0; k < groups; ++k) {
    uint8_t* row = seen.data() + k * codes;
    for (int64_t n = 0; n < positions; ++n) row[ids[n * groups + k]] = 1;
  }
}

double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 const SsimParams& params) {
  const auto w = gaussian_window(params);
  const int oh = height - params.window + 1, ow = width - params.window + 1;
  // Row sums are reduced serially so the result does not depend on thread count.
  std::vector<double> rows(oh, 0.0);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < oh; ++y) {
    double local = 0.0;
    for (int x = 0; x < ow; ++x) local += ssim_at(a.data(), b.data(), width, y, x, w, params);
    rows[y] = local;
  }
  double total = 0.0;
  for (double r : rows) total += r;
  return total / (static_cast<double>(oh) * ow);
}

}  // namespace parallel

#define UNIWETOK_INSTANTIATE(NS, T)                                                            \
  template double NS::token_entropy_forward<T>(std::span<const T>, int, BitProbability);       \
  template void NS::token_entropy_backward<T>(std::span<const T>, int, BitProbability, double, \
                                              std::span<T>);                                   \
  template double NS::codebook_entropy_forward<T>(std::span<const T>, int, int,                \
                                                  BitProbability);                             \
  template void NS::codebook_entropy_backward<T>(std::span<const T>, int, int, BitProbability, \
                                                 double, std::span<T>);                        \
  template void NS::sign_pack<T>(std::span<const T>, int, std::span<T>, std::span<int64_t>);

UNIWETOK_INSTANTIATE(reference, float)
UNIWETOK_INSTANTIATE(reference, double)
UNIWETOK_INSTANTIATE(parallel, float)
UNIWETOK_INSTANTIATE(parallel, double)

#undef UNIWETOK_INSTANTIATE

}  // namespace uniwetok::kernels
