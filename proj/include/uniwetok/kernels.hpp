#pragma once

// Raw data-parallel kernels behind the quantizer losses and metrics.
//
// Each kernel exists twice: `reference::` is a plain serial loop kept as the
// test oracle, `parallel::` is the OpenMP version used by the library. Both
// must agree to rounding (tests/unit/kernels_test.cpp) and are compared for
// speed in bench/kernels_bench.cpp.
//
// Latent layout is row-major [rows][d_prime] for the token entropy and
// [positions][groups][d_prime] for the codebook entropy, matching a
// contiguous grouped LatentGrid.

#include <cstdint>
#include <span>
#include <vector>

namespace uniwetok::kernels {

// How a latent entry u maps to the probability of the +1 bit.
struct BitProbability {
  bool siglu = true;         // p = (1 + u) / 2
  double temperature = 1.0;  // otherwise p = sigmoid(2u / temperature)
};

inline constexpr double kLogEpsilon = 1e-8;

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double dynamic_range = 2.0;  // images in [-1, 1]
  double k1 = 0.01;
  double k2 = 0.03;
};

namespace reference {

template <typename T>
double token_entropy_forward(std::span<const T> u, int d_prime, BitProbability prob);

template <typename T>
void token_entropy_backward(std::span<const T> u, int d_prime, BitProbability prob,
                            double grad_out, std::span<T> grad_u);

template <typename T>
double codebook_entropy_forward(std::span<const T> u, int groups, int d_prime,
                                BitProbability prob);

template <typename T>
void codebook_entropy_backward(std::span<const T> u, int groups, int d_prime,
                               BitProbability prob, double grad_out, std::span<T> grad_u);

// Signs in {-1,+1} (sign(0) = +1) and packed per-group ids, bit l least significant.
template <typename T>
void sign_pack(std::span<const T> u, int d_prime, std::span<T> signs, std::span<int64_t> ids);

// Marks every id seen; `seen` is [groups][2^d_prime] flags, ids are [positions][groups].
void mark_usage(std::span<const int64_t> ids, int groups, int d_prime, std::span<uint8_t> seen);

// Mean SSIM over all valid window placements of two [height][width] gray
// images, using a separable-free direct Gaussian window.
double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 const SsimParams& params);

}  // namespace reference

namespace parallel {

template <typename T>
double token_entropy_forward(std::span<const T> u, int d_prime, BitProbability prob);

template <typename T>
void token_entropy_backward(std::span<const T> u, int d_prime, BitProbability prob,
                            double grad_out, std::span<T> grad_u);

template <typename T>
double codebook_entropy_forward(std::span<const T> u, int groups, int d_prime,
                                BitProbability prob);

template <typename T>
void codebook_entropy_backward(std::span<const T> u, int groups, int d_prime,
                               BitProbability prob, double grad_out, std::span<T> grad_u);

template <typename T>
void sign_pack(std::span<const T> u, int d_prime, std::span<T> signs, std::span<int64_t> ids);

void mark_usage(std::span<const int64_t> ids, int groups, int d_prime, std::span<uint8_t> seen);

double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 const SsimParams& params);

}  // namespace parallel

// Largest d_prime the codebook entropy will enumerate (2^10 codes per group).
inline constexpr int kMaxEnumeratedBits = 10;

}  // namespace uniwetok::kernels
