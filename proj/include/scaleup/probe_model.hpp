#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scaleup/data.hpp"
#include "scaleup/diagnostics.hpp"
#include "scaleup/hmc.hpp"

namespace scaleup {

// Per-group membership indicators for the logistic mixed-effects prevalence
// model. One row per respondent who was asked the membership question.
struct MembershipData {
  int group_id = 0;
  std::string group_label;
  std::vector<int> indicators;  // 0/1 membership answers
  std::vector<int> gov;         // 0-based governorate index per answer
  Eigen::VectorXd weights;      // per-answer likelihood weights (all 1 when unweighted)
  int G = 0;                    // number of governorates in the survey
  std::vector<int> gov_ids;
  std::vector<std::string> gov_names;

  int size() const { return static_cast<int>(indicators.size()); }
  int members() const;

  // Pulls the asked/member rows for `group_id` out of the dataset. When
  // `weighted` is set the per-respondent post-stratification weights (mean-one
  // per governorate when `normalize_weights`) multiply the log-likelihood.
  static MembershipData extract(const SurveyDataset& dataset, int group_id,
                                bool weighted = false, bool normalize_weights = true);
};

struct ProbeModelOptions {
  bool weighted = false;  // default OFF: survey weights not applied here
  bool normalize_weights = true;
  double prior_loc_var = 100.0;  // alpha ~ Normal(0, 100), read as variance
  double hc_scale = 2.5;         // sigma_u ~ half-Cauchy(0, 2.5)
  double fixed_sigma_u = 0.0;    // > 0 pins sigma_u instead of sampling it
};

// Log posterior of logit(gamma_g) = alpha + u_g, u_g = sigma_u * u~_g,
// on the unconstrained vector [alpha, log sigma_u, u~ (G)] (the log sigma_u
// coordinate is dropped when fixed_sigma_u > 0).
class ProbeModel {
 public:
  ProbeModel(MembershipData data, ProbeModelOptions options = {});

  int dim() const { return (fixed() ? 1 : 2) + data_.G; }
  bool fixed() const { return opt_.fixed_sigma_u > 0; }
  const MembershipData& data() const { return data_; }
  const ProbeModelOptions& options() const { return opt_; }

  double logp_grad(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const;
  double log_posterior(const Eigen::VectorXd& q) const;

  int off_alpha() const { return 0; }
  int off_s() const { return 1; }  // meaningful only when !fixed()
  int off_u() const { return fixed() ? 1 : 2; }

 private:
  double eval(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const;

  MembershipData data_;
  ProbeModelOptions opt_;
};

// Posterior draws for one probe group on the constrained scale:
// columns [alpha, sigma_u, u_1..u_G] with u the centered offsets.
struct LogisticPosterior {
  Eigen::MatrixXd values;  // M x (2 + G), chain-major
  std::vector<std::string> names;
  int group_id = 0;
  std::string group_label;
  std::vector<int> gov_ids;
  std::vector<std::string> gov_names;
  int chains = 0, draws_per_chain = 0;

  DiagnosticsTable diagnostics;
  long divergences = 0;
  bool divergence_warning = false;
  bool rhat_warning = false;
  std::vector<double> step_sizes;

  int draws() const { return static_cast<int>(values.rows()); }
  int n_governorates() const { return static_cast<int>(values.cols()) - 2; }
  int alpha_col() const { return 0; }
  int sigma_col() const { return 1; }
  int u_col(int g) const { return 2 + g; }
};

// Fits the logistic mixed-effects model for one probe group. Throws
// std::invalid_argument when every indicator is zero (use the group's known
// size records instead) or when the data are empty.
LogisticPosterior fit_probe_model(const MembershipData& data, const SamplerConfig& config,
                                  const ProbeModelOptions& options = {});

// Fits every group that carries a membership question, in group order, each
// with an RNG stream derived from (config.seed, group id) so a group's
// posterior does not depend on which other groups are fitted.
std::vector<LogisticPosterior> fit_all_probe_models(const SurveyDataset& dataset,
                                                    const SamplerConfig& config,
                                                    const ProbeModelOptions& options = {});

// Prevalence and size draws per probe group: gamma[j] is R x G with
// gamma_{g}^{(r)} = inverse-logit(alpha^(r) + u_g^(r)), clamped into
// (0, 1) at the floating-point boundary; sizes[j] = gamma[j] * N_g columnwise.
struct PrevalenceDraws {
  std::vector<int> group_ids;
  std::vector<std::string> group_labels;
  std::vector<int> gov_ids;
  std::vector<std::string> gov_names;
  std::vector<double> gov_populations;
  std::vector<Eigen::MatrixXd> gamma;  // per group: R x G in (0,1)
  std::vector<Eigen::MatrixXd> sizes;  // per group: R x G

  int draws() const { return gamma.empty() ? 0 : static_cast<int>(gamma[0].rows()); }
  int n_groups() const { return static_cast<int>(group_ids.size()); }
};

PrevalenceDraws prevalence_draws(const std::vector<LogisticPosterior>& posteriors,
                                 const std::vector<Governorate>& governorates);

// Columnar export: header `draw,group,governorate,gamma`, draw-major rows,
// 1-based draw index, external group and governorate ids.
void write_prevalence_csv(const PrevalenceDraws& draws, const std::string& path);

}  // namespace scaleup
