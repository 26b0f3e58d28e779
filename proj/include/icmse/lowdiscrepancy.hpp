#pragma once

// Low-discrepancy point sets: a 32-bit Sobol' sequence (Joe-Kuo direction
// numbers, up to 16 dimensions, optional random digital shift) and randomly
// shifted Richtmyer lattices for quasi-Monte Carlo integration in arbitrary
// dimension.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "icmse/errors.hpp"

namespace icmse {

/// Uniform double in [0, 1) from a 64-bit engine; bit-reproducible across
/// standard libraries (unlike std::uniform_real_distribution).
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline constexpr int kSobolMaxDim = 16;

namespace detail {

struct SobolPoly {
  int degree;
  std::uint32_t a;
  std::array<std::uint32_t, 6> m;
};

// new-joe-kuo-6.21201, dimensions 2..16
inline constexpr std::array<SobolPoly, kSobolMaxDim - 1> kSobolPolys{{
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
    {5, 11, {1, 1, 5, 1, 1}},
    {5, 13, {1, 1, 1, 3, 11}},
    {5, 14, {1, 3, 5, 5, 31}},
    {6, 1, {1, 3, 3, 9, 7, 49}},
    {6, 13, {1, 1, 1, 15, 21, 21}},
    {6, 16, {1, 3, 1, 13, 27, 49}},
}};

inline std::array<std::uint32_t, 32> sobol_directions(int dim) {
  std::array<std::uint32_t, 32> v{};
  if (dim == 0) {
    for (int k = 0; k < 32; ++k) v[k] = 1u << (31 - k);
    return v;
  }
  const SobolPoly& poly = kSobolPolys[dim - 1];
  const int s = poly.degree;
  for (int k = 0; k < s; ++k) v[k] = poly.m[k] << (31 - k);
  for (int k = s; k < 32; ++k) {
    std::uint32_t x = v[k - s] ^ (v[k - s] >> s);
    for (int i = 1; i < s; ++i) {
      if ((poly.a >> (s - 1 - i)) & 1u) x ^= v[k - i];
    }
    v[k] = x;
  }
  return v;
}

}  // namespace detail

/// Streaming Sobol' generator in Gray-code order.
class SobolSequence {
 public:
  SobolSequence(int dim, std::uint64_t seed) : dim_(dim), state_(dim, 0u), shift_(dim, 0u) {
    if (dim < 1 || dim > kSobolMaxDim) {
      throw ArgumentError("Sobol sequence supports 1.." + std::to_string(kSobolMaxDim) +
                          " dimensions, got " + std::to_string(dim));
    }
    for (int j = 0; j < dim; ++j) directions_.push_back(detail::sobol_directions(j));
    if (seed != 0) {
      std::mt19937_64 rng(seed);
      for (int j = 0; j < dim; ++j) shift_[j] = static_cast<std::uint32_t>(rng() >> 32);
    }
  }

  /// Writes the next point (the first call returns the point at index 0).
  void next(double* out) {
    for (int j = 0; j < dim_; ++j) {
      out[j] = static_cast<double>(state_[j] ^ shift_[j]) * 0x1.0p-32 + 0x1.0p-33;
    }
    // advance: flip the direction number of the lowest zero bit of the index
    int c = 0;
    std::uint64_t i = index_;
    while (i & 1u) {
      i >>= 1;
      ++c;
    }
    for (int j = 0; j < dim_; ++j) state_[j] ^= directions_[j][c];
    ++index_;
  }

  void skip(std::uint64_t count) {
    std::vector<double> scratch(dim_);
    for (std::uint64_t k = 0; k < count; ++k) next(scratch.data());
  }

 private:
  int dim_;
  std::uint64_t index_ = 0;
  std::vector<std::uint32_t> state_;
  std::vector<std::uint32_t> shift_;
  std::vector<std::array<std::uint32_t, 32>> directions_;
};

/// Fractional parts of sqrt(prime_k): generating vector of a Richtmyer lattice.
inline std::vector<double> richtmyer_vector(int dim) {
  std::vector<double> z;
  z.reserve(dim);
  for (int cand = 2; static_cast<int>(z.size()) < dim; ++cand) {
    bool prime = true;
    for (int q = 2; q * q <= cand; ++q) {
      if (cand % q == 0) {
        prime = false;
        break;
      }
    }
    if (prime) {
      const double r = std::sqrt(static_cast<double>(cand));
      z.push_back(r - std::floor(r));
    }
  }
  return z;
}

}  // namespace icmse
