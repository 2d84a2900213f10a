#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scaleup/data.hpp"
#include "scaleup/hmc.hpp"
#include "scaleup/scaling.hpp"

namespace scaleup {

// Synthetic-survey scenario. Group counts are explicit per kind; prevalence
// bases are drawn log-uniformly from the kind's range and then spread across
// governorates on the logit scale with sd gov_logit_sd, which keeps the
// membership model well specified.
struct ScenarioConfig {
  int n = 200;  // respondents, assigned to governorates round-robin
  int G = 3;
  int n_probe_both = 2;    // membership question + known sizes
  int n_probe_direct = 2;  // membership question only
  int n_probe_known = 1;   // known sizes only
  int n_target = 3;        // the hidden groups

  double probe_prev_lo = 0.01, probe_prev_hi = 0.06;
  double target_prev_lo = 0.003, target_prev_hi = 0.02;
  double gov_logit_sd = 0.3;

  double degree_log_mean = 4.605170185988092;  // log(100)
  double degree_log_sd = 0.5;
  // Covariate effects; the age column's sd is beta_sd / 25 because centered
  // age spans tens of years while the other columns are indicators.
  double beta_sd = 0.1;
  double tau_N = 0.5;   // multiplicative-bias scale, every group
  double lkj_eta = 2.0;
  double membership_coverage = 1.0;  // fraction of respondents asked
  int truncation_cap = 100;
  std::int64_t gov_population_base = 500000;
  std::int64_t gov_population_step = 300000;

  int n_probes() const { return n_probe_both + n_probe_direct + n_probe_known; }
  int K() const { return n_probes() + n_target; }
  void validate() const;  // throws std::invalid_argument
};

// Everything the generator drew, serialized alongside every dataset. The
// membership probability of a probe group equals its prevalence.
struct GroundTruth {
  Eigen::MatrixXd prevalence;  // G x K, p_{g,k}
  Eigen::VectorXd delta;       // n, log degrees
  Eigen::MatrixXd beta;        // P x K
  Eigen::VectorXd tau_N;       // K
  Eigen::MatrixXd omega;       // K x K bias correlation
  Eigen::MatrixXd bias;        // n x K, the drawn b_{i,k}
  double age_center = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;  // e.g. truncation-dominated scenarios
};

struct Simulated {
  SurveyDataset dataset;
  GroundTruth truth;
};

// Draws hyperparameters, then degrees, covariates, biases, counts, and
// memberships from the generative count model; truncation is applied last.
// Deterministic given (config, seed). Respondent weights are set to 1 (the
// sample is a simple random draw from its own population).
Simulated generate(const ScenarioConfig& config, std::uint64_t seed);

// truth.csv: columns parameter,index1,index2,value.
void write_truth_csv(const Simulated& sim, const std::string& path);

// Calibration experiment: per replicate, generate -> fit membership models ->
// fit the count model -> scale -> record whether the true prevalence lies in
// the central interval of the scaled draws.
struct SbcOptions {
  int replicates = 20;
  double lower = 0.05, upper = 0.95;  // central-interval quantile levels
  std::uint64_t seed = 1;
  SamplerConfig nsum{.chains = 2, .warmup = 300, .draws_per_chain = 250};
  SamplerConfig probe{.chains = 2, .warmup = 300, .draws_per_chain = 250};
  ProbeMode policy_mode = ProbeMode::direct_first_known_otherwise;
  ScalingMode scaling = ScalingMode::full_bootstrap;
  // Scales the known sizes handed to the scaling step (1 = faithful). Values
  // other than 1 deliberately misspecify the reference prevalences.
  double known_size_scale = 1.0;
  double max_failure_fraction = 0.2;
  int threads = 1;  // replicates run in parallel, each on a derived seed
  std::function<void(int, const std::string&)> on_replicate;  // progress sink
};

struct SbcCellResult {
  int replicate = 0;
  int gov_id = 0;
  int group_id = 0;
  GroupKind kind = GroupKind::target;
  double true_prevalence = 0, q_lo = 0, q_hi = 0, post_mean = 0;
  bool hit = false;
};

struct SbcKindCoverage {
  GroupKind kind = GroupKind::target;
  long cells = 0;
  long hits = 0;
  double coverage = 0;
  double mc_error = 0;  // binomial, cells treated as independent
};

struct SbcFailure {
  int replicate = 0;
  std::string message;
};

struct SbcReport {
  std::vector<SbcCellResult> cells;      // replicate-major, then gov, group
  std::vector<SbcKindCoverage> coverage; // one row per kind present
  std::vector<SbcFailure> failures;
  int replicates = 0;
  double lower = 0.05, upper = 0.95;
  ScalingMode scaling = ScalingMode::full_bootstrap;

  long total_cells() const { return static_cast<long>(cells.size()); }
  double overall_coverage() const;
};

// Throws std::runtime_error when more than max_failure_fraction of the
// replicates fail; individual failures are recorded, not fatal.
SbcReport sbc_experiment(const ScenarioConfig& scenario, const SbcOptions& options);

// Cell table: replicate,governorate,group,kind,true_prevalence,q_lo,q_hi,
// post_mean,hit.
void write_sbc_csv(const SbcReport& report, const std::string& path);

// Human-readable coverage summary, including the anti-conservative caveat
// whenever the averaged-gamma scaling variant produced the intervals.
std::string sbc_text_summary(const SbcReport& report);

}  // namespace scaleup
