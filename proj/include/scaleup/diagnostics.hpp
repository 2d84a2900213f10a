#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace scaleup {

struct ParamDiagnostics {
  double rhat = 1.0;
  double ess_bulk = 0.0;
  double ess_tail = 0.0;
};

// Scalar-parameter convergence diagnostics in the rank-normalized split
// formulation. `draws` holds every chain stacked chain-major: the first
// draws_per_chain entries belong to chain 0, the next to chain 1, and so on.
//
// rhat:     max of the split potential-scale-reduction factors computed on
//           rank-normalized draws and on rank-normalized folded draws.
// ess_bulk: effective sample size of the rank-normalized split chains
//           (Geyer's initial monotone sequence estimator).
// ess_tail: minimum effective sample size of the {x <= q05} and {x <= q95}
//           indicator sequences.
ParamDiagnostics diagnose_scalar(const Eigen::VectorXd& draws, int chains);

double split_rhat(const Eigen::VectorXd& draws, int chains);
double ess_bulk(const Eigen::VectorXd& draws, int chains);
double ess_tail(const Eigen::VectorXd& draws, int chains);

// Fractional-rank normal transform: Phi^-1((rank - 3/8) / (S + 1/4)), ties
// sharing their average rank.
Eigen::VectorXd rank_normalize(const Eigen::VectorXd& x);

struct DiagnosticsTable {
  std::vector<std::string> names;
  std::vector<ParamDiagnostics> params;
  long divergences = 0;
  long total_transitions = 0;  // post-warmup transitions, for the divergence rate
  long clamp_events = 0;       // linear-predictor clamp hits during sampling

  double max_rhat() const;
  double min_ess_bulk() const;
  double min_ess_tail() const;
  bool rhat_flag(double threshold = 1.05) const;
  bool divergence_flag(double rate_threshold = 0.05) const;
};

// Diagnoses every column of a chain-major draw matrix.
DiagnosticsTable diagnose_matrix(const Eigen::MatrixXd& draws, int chains,
                                 const std::vector<std::string>& names);

}  // namespace scaleup
