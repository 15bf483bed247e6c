#include "npgrid/distributions.hpp"

#include "npgrid/errors.hpp"

namespace npgrid {

DiagGaussian::DiagGaussian(Var mu_, Var sigma_) : mu(mu_), sigma(sigma_) {
  if (mu.shape() != sigma.shape()) {
    throw ContractError("DiagGaussian: mu " + shape_string(mu.shape()) + " and sigma " +
                        shape_string(sigma.shape()) + " differ");
  }
  for (double s : sigma.value().data()) {
    if (!(s > 0.0)) throw ContractError("DiagGaussian: sigma must be strictly positive");
  }
}

Var diag_gaussian_log_prob(Var y, const DiagGaussian& dist) {
  if (y.shape() != dist.mu.shape()) {
    throw ContractError("diag_gaussian_log_prob: y " + shape_string(y.shape()) +
                        " does not match distribution " + shape_string(dist.mu.shape()));
  }
  for (double s : dist.sigma.value().data()) {
    if (!(s > 0.0)) throw ContractError("diag_gaussian_log_prob: sigma must be positive");
  }
  Var z = (y - dist.mu) / dist.sigma;
  Var quad = ad::mul(z * z, -0.5);
  return ad::add(quad - ad::log(dist.sigma), -kHalfLogTwoPi);
}

Var kl_divergence(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mu.shape() != p.mu.shape()) {
    throw ContractError("kl_divergence: dimension mismatch " + shape_string(q.mu.shape()) +
                        " vs " + shape_string(p.mu.shape()));
  }
  Var log_ratio = ad::log(p.sigma) - ad::log(q.sigma);
  Var diff = q.mu - p.mu;
  Var numer = q.sigma * q.sigma + diff * diff;
  Var denom = ad::mul(p.sigma * p.sigma, 2.0);
  return ad::sum(ad::add(log_ratio + numer / denom, -0.5));
}

Var reparam_sample(const DiagGaussian& dist, const NdArray& noise) {
  if (noise.shape() != dist.mu.shape()) {
    throw ContractError("reparam_sample: noise " + shape_string(noise.shape()) +
                        " does not match distribution " + shape_string(dist.mu.shape()));
  }
  Graph& g = *dist.mu.graph();
  return dist.mu + dist.sigma * g.constant(noise);
}

Var sigma_from_raw(Var raw, double sigma_min) {
  return ad::add(ad::softplus(raw), sigma_min);
}

}  // namespace npgrid
