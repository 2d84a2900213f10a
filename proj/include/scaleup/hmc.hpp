#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "scaleup/rng.hpp"

namespace scaleup {

struct SamplerConfig {
  int chains = 4;
  int warmup = 500;
  int draws_per_chain = 500;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  double init_jitter = 1.0;
  int threads = 1;    // chains run in parallel up to this many workers
  int bias_thin = 1;  // thinning factor for the n x K bias block in exports

  void validate() const;  // throws std::invalid_argument on bad settings
};

// Log-density with gradient on unconstrained space: fills `grad` (resized by
// the caller to dim) and returns log p(q). Must be finite at initialization.
using LogpGrad = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

// Per-chain initial position; `chain` is the 0-based chain index.
using ChainInit = std::function<Eigen::VectorXd(int chain, Rng& rng)>;

struct NutsResult {
  Eigen::MatrixXd draws;  // (chains * draws_per_chain) x dim, chain-major blocks
  int chains = 0;
  int draws_per_chain = 0;
  long divergences = 0;  // post-warmup, summed over chains
  std::vector<long> chain_divergences;
  std::vector<double> step_sizes;        // adapted step size per chain
  std::vector<Eigen::VectorXd> inv_mass;  // adapted diagonal inverse mass per chain
  double mean_accept = 0.0;              // post-warmup average acceptance statistic
  long total_transitions = 0;            // chains * draws_per_chain
};

// Multinomial no-U-turn sampler with dual-averaging step-size adaptation and
// windowed diagonal mass-matrix estimation. Deterministic given config.seed;
// the result is identical whatever `threads` is, because every chain owns an
// independent RNG stream derived from the seed and chains are merged in order.
NutsResult nuts_sample(int dim, const LogpGrad& logp_grad, const SamplerConfig& config,
                       const ChainInit& init);

}  // namespace scaleup
