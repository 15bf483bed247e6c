#pragma once

// Diagonal-Gaussian vocabulary shared by the latent and predictive paths.

#include "npgrid/autodiff.hpp"

namespace npgrid {

inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kHalfLogTwoPi = 0.91893853320467274178;

/// Mean and standard deviation as graph values; sigma is strictly positive.
struct DiagGaussian {
  Var mu;
  Var sigma;

  DiagGaussian() = default;
  /// Throws ContractError if shapes differ or any sigma <= 0.
  DiagGaussian(Var mu, Var sigma);

  std::size_t dim() const { return mu.size(); }
};

/// Per-coordinate log N(y_i; mu_i, sigma_i^2).
Var diag_gaussian_log_prob(Var y, const DiagGaussian& dist);

/// KL(q || p) summed over dimensions, shape {1}.
Var kl_divergence(const DiagGaussian& q, const DiagGaussian& p);

/// mu + sigma * noise with caller-supplied standard-normal noise.
Var reparam_sample(const DiagGaussian& dist, const NdArray& noise);

/// sigma_min + softplus(raw).
Var sigma_from_raw(Var raw, double sigma_min = kSigmaFloor);

}  // namespace npgrid
