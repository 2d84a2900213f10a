#pragma once

#include <atomic>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "scaleup/data.hpp"
#include "scaleup/diagnostics.hpp"
#include "scaleup/hmc.hpp"

namespace scaleup {

// Mean-one lognormal bias transforms:
//   mu  = log(1/sqrt(1 + tau_N^2)) = -tau^2/2,
//   tau = sqrt(log(1 + tau_N^2)),
// so that E[exp(b)] = 1 for b ~ Normal(mu, tau^2). tau_N = 0 gives (0, 0).
std::pair<double, double> bias_lognormal_params(double tau_N);

// Constrained parameters of the joint count model
//   y_{i,k} ~ Poisson(exp{delta_i + rho_{g(i),k} + beta_k' z_i + b_{i,k}}).
struct NsumParams {
  Eigen::VectorXd delta;       // n
  double sigma_delta = 1.0;
  Eigen::MatrixXd rho;         // G x K
  Eigen::VectorXd mu_rho;      // K
  Eigen::VectorXd sigma_rho;   // K
  double mu_rho_base = 0.0;
  double sigma_rho_base = 1.0;
  Eigen::MatrixXd beta;        // P x K
  Eigen::VectorXd tau_N;       // K
  Eigen::MatrixXd omega_chol;  // K x K lower triangular
  Eigen::MatrixXd bias;        // n x K
};

// Arrays the likelihood consumes, prepared once from a validated dataset.
// Requires imputed ages and computed weights (unless the dataset is empty,
// which supports prior-only runs).
struct NsumData {
  Eigen::MatrixXd y;       // n x K observed (truncated) counts
  Eigen::MatrixXd z;       // n x P design rows
  Eigen::VectorXd w;       // n sampling weights (normalized per governorate by default)
  std::vector<int> gov;    // n, 0-based governorate index
  double age_center = 0;   // mean respondent age used for the design rows
  int n = 0, K = 0, G = 0, P = 0;

  std::vector<int> respondent_ids;
  std::vector<int> group_ids;
  std::vector<std::string> group_labels;
  std::vector<int> gov_ids;
  std::vector<std::string> gov_names;
  std::vector<std::string> covariate_names;

  static NsumData prepare(const SurveyDataset& dataset, bool normalize_weights = true);
};

struct NsumModelOptions {
  bool normalize_weights = true;
  double prior_loc_var = 100.0;  // Normal(., 100) location priors, read as variance
  double hc_scale = 2.5;         // half-Cauchy scale for sigma_delta, sigma_rho_base, tau_N
  double lkj_eta = 2.0;
  double eta_clamp = 30.0;       // linear-predictor ceiling (overflow guard)
};

// Log posterior and analytic gradient on the unconstrained vector
//   [delta~ (n), log sigma_delta, rho~ (G*K), mu_rho (K), log sigma_rho (K),
//    mu_rho_base, log sigma_rho_base, beta (P*K), log tau_N (K),
//    omega unconstrained (K(K-1)/2), eps (n*K)]
// with non-centered parameterizations delta = sigma_delta * delta~,
// rho = mu_rho + sigma_rho * rho~, b_i = mu + diag(tau) L eps_i.
class NsumModel {
 public:
  explicit NsumModel(const SurveyDataset& dataset, NsumModelOptions options = {});

  int dim() const { return dim_; }
  const NsumData& data() const { return data_; }
  const NsumModelOptions& options() const { return opt_; }

  // Non-throwing evaluation for the sampler: returns -inf on numeric failure.
  double logp_grad(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const;

  // Throwing evaluation: names the offending parameter block when the
  // result is not finite.
  double log_posterior(const Eigen::VectorXd& q) const;

  // Weighted Poisson log-likelihood alone, on constrained parameters.
  double weighted_loglik(const NsumParams& params) const;

  NsumParams unpack(const Eigen::VectorXd& q) const;

  // Unconstrained block offsets (exposed for tests and exports).
  int off_delta() const { return 0; }
  int off_sdelta() const { return data_.n; }
  int off_rho() const { return data_.n + 1; }
  int off_mu_rho() const { return off_rho() + data_.G * data_.K; }
  int off_srho() const { return off_mu_rho() + data_.K; }
  int off_mubase() const { return off_srho() + data_.K; }
  int off_sbase() const { return off_mubase() + 1; }
  int off_beta() const { return off_sbase() + 1; }
  int off_ttau() const { return off_beta() + data_.P * data_.K; }
  int off_uomega() const { return off_ttau() + data_.K; }
  int off_eps() const { return off_uomega() + data_.K * (data_.K - 1) / 2; }

  long clamp_events() const { return clamp_events_.load(); }
  void reset_clamp_events() const { clamp_events_.store(0); }

 private:
  double eval(const Eigen::VectorXd& q, Eigen::VectorXd* grad, std::string* bad_block) const;

  NsumData data_;
  NsumModelOptions opt_;
  int dim_ = 0;
  mutable std::atomic<long> clamp_events_{0};
};

// Posterior draws on the constrained scale, chain-major, with one named
// column per scalar parameter. The n x K bias block is stored thinned by
// config.bias_thin; all other blocks are stored in full.
struct NsumPosterior {
  Eigen::MatrixXd values;            // M x C constrained draws
  std::vector<std::string> names;    // C column names
  Eigen::MatrixXd bias;              // (M / thin rounded) x (n*K)
  std::vector<std::string> bias_names;
  int bias_thin = 1;

  int n = 0, K = 0, G = 0, P = 0;
  int chains = 0, draws_per_chain = 0;
  std::vector<int> respondent_ids, group_ids, gov_ids;
  std::vector<std::string> group_labels, gov_names, covariate_names;
  double age_center = 0;
  std::vector<int> resp_gov;       // 0-based governorate index per respondent
  Eigen::VectorXd resp_weights;    // likelihood weights, for degree averaging

  DiagnosticsTable diagnostics;  // covers every column of `values` and `bias`
  long divergences = 0;
  long clamp_events = 0;
  bool divergence_warning = false;
  bool rhat_warning = false;
  std::vector<double> step_sizes;

  int draws() const { return static_cast<int>(values.rows()); }

  // Column accessors into `values`.
  int delta_col(int i) const { return i; }
  int sigma_delta_col() const { return n; }
  int rho_col(int g, int k) const { return n + 1 + k * G + g; }
  int mu_rho_col(int k) const { return n + 1 + G * K + k; }
  int sigma_rho_col(int k) const { return n + 1 + G * K + K + k; }
  int mu_rho_base_col() const { return n + 1 + G * K + 2 * K; }
  int sigma_rho_base_col() const { return n + 1 + G * K + 2 * K + 1; }
  int beta_col(int p, int k) const { return n + 1 + G * K + 2 * K + 2 + k * P + p; }
  int tau_col(int k) const { return n + 1 + G * K + 2 * K + 2 + P * K + k; }
  int omega_col(int idx) const { return n + 1 + G * K + 2 * K + 2 + P * K + K + idx; }
  int total_cols() const {
    return n + 1 + G * K + 2 * K + 2 + P * K + K + K * (K - 1) / 2;
  }
};

// Runs NUTS on the model and assembles the constrained posterior with
// diagnostics. Deterministic given config.seed.
NsumPosterior sample_nsum(const NsumModel& model, const SamplerConfig& config);

}  // namespace scaleup
