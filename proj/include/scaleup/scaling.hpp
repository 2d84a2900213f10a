#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scaleup/data.hpp"
#include "scaleup/nsum_model.hpp"
#include "scaleup/probe_model.hpp"

namespace scaleup {

// Which source supplies the probe prevalence gamma_{g,k} used for scaling.
enum class ProbeMode {
  direct_first_known_otherwise,
  known_first_direct_otherwise,
  direct_only,
  known_only,
};

enum class ScalingMode { full_bootstrap, averaged_gamma };

std::string to_string(ProbeMode mode);
std::string to_string(ScalingMode mode);
ProbeMode probe_mode_from_string(const std::string& s);
ScalingMode scaling_mode_from_string(const std::string& s);

// The probe set K used for the shift constant. Group order inside probe_set
// is irrelevant: scaling canonicalizes to ascending group id, so permuting
// the set changes nothing, bit for bit.
struct ProbePolicy {
  ProbeMode mode = ProbeMode::direct_first_known_otherwise;
  std::vector<int> probe_set;  // external group ids, nonempty
};

// Selects every non-target group that resolves under `mode` (direct draws
// and/or known sizes in every governorate). Throws if none qualifies.
ProbePolicy make_policy(ProbeMode mode, const std::vector<Group>& groups,
                        const std::vector<Governorate>& governorates,
                        const PrevalenceDraws& prevalence);

// Shift constant for one governorate and one (m, r) pair:
//   c = log[(1/|K|) * sum_k exp(rho_k) / gamma_k].
// `rho` and `gamma` are aligned with `probe_group_ids`; the sum is taken in
// ascending group-id order regardless of input order. Throws when a gamma is
// not strictly positive, naming the group.
double shift_constant(const Eigen::VectorXd& rho, const Eigen::VectorXd& gamma,
                      const std::vector<int>& probe_group_ids);

// Algorithm 1 applied to every governorate and every (m, r) pair of NSUM and
// probe-prevalence draws. The M x R fan-out is never stored: accessors
// materialize one governorate or one (g, k) series at a time.
//
// Draw indexing: pair (m, r) maps to flat index m * R_eff + r, where
// R_eff = R under full_bootstrap and 1 under averaged_gamma (the gammas are
// averaged over r before the shift constant is computed).
class ScaledDraws {
 public:
  ScalingMode mode = ScalingMode::full_bootstrap;
  ProbePolicy policy;

  int M = 0;       // NSUM posterior draws
  int R_eff = 1;   // gamma draws entering the fan-out (1 under averaged_gamma)

  std::vector<int> group_ids;
  std::vector<std::string> group_labels;
  std::vector<GroupKind> group_kinds;
  std::vector<int> gov_ids;
  std::vector<std::string> gov_names;
  std::vector<double> gov_populations;
  std::vector<int> respondent_ids;
  std::vector<int> resp_gov;
  Eigen::VectorXd resp_weights;

  int n_groups() const { return static_cast<int>(group_ids.size()); }
  int n_governorates() const { return static_cast<int>(gov_ids.size()); }
  int n_respondents() const { return static_cast<int>(respondent_ids.size()); }
  long total_draws() const { return static_cast<long>(M) * R_eff; }

  // c_{g}^{(m,r)} as an M x R_eff matrix, computed on demand.
  Eigen::MatrixXd shift_grid(int g) const;

  // rho~_{g,k}^{(m,r)} = rho_{g,k}^{(m)} - c_g^{(m,r)}, length M * R_eff.
  Eigen::VectorXd rho_tilde(int g, int k) const;

  // delta~_i^{(m,r)} = delta_i^{(m)} + c_{g(i)}^{(m,r)}, length M * R_eff.
  Eigen::VectorXd delta_tilde(int i) const;

  // Weighted within-governorate average degree, exp-scale:
  //   D_g^{(m,r)} = exp(c_g^{(m,r)}) * sum_{i in g} w_i exp(delta_i^(m)) / sum w_i.
  Eigen::VectorXd degree_draws(int g, bool weighted = true) const;

  // Raw inputs the fan-out is built from (exposed for summaries and tests).
  const Eigen::MatrixXd& rho_base() const { return rho_; }          // M x (G*K), col k*G+g
  const Eigen::MatrixXd& delta_base() const { return delta_; }      // M x n
  const Eigen::MatrixXd& beta_male() const { return beta_male_; }   // M x K
  const Eigen::MatrixXd& gamma_for_gov(int g) const { return gamma_[g]; }  // R_eff x |K|
  const std::vector<int>& probe_set_sorted() const { return probe_sorted_; }

 private:
  friend ScaledDraws scale_draws(const NsumPosterior&, const PrevalenceDraws&,
                                 const std::vector<Group>&, const std::vector<Governorate>&,
                                 const ProbePolicy&, ScalingMode);
  Eigen::MatrixXd rho_;
  Eigen::MatrixXd delta_;
  Eigen::MatrixXd beta_male_;
  std::vector<Eigen::MatrixXd> gamma_;  // per governorate: R_eff x |probe_set|
  std::vector<int> probe_sorted_;       // probe_set in canonical ascending order
  std::vector<int> probe_k_;            // posterior group index per sorted entry
};

// Pairs every NSUM draw with every prevalence draw and computes the per-
// governorate shift constants. `groups` supplies kinds and known sizes;
// `prevalence` may be empty when the policy resolves everything to known
// sizes. Throws std::invalid_argument when a probe-set group lacks its
// required source in some governorate, naming both.
ScaledDraws scale_draws(const NsumPosterior& nsum, const PrevalenceDraws& prevalence,
                        const std::vector<Group>& groups,
                        const std::vector<Governorate>& governorates,
                        const ProbePolicy& policy,
                        ScalingMode mode = ScalingMode::full_bootstrap);

enum class Estimand { prevalence, size, degree, target_size };
enum class PointStat { mean, median };

std::string to_string(Estimand e);
std::string to_string(PointStat p);
PointStat point_stat_from_string(const std::string& s);

struct SummaryOptions {
  PointStat point = PointStat::mean;
  bool weighted_degrees = true;     // weight exp(delta~) by survey weights
  bool round_degrees_to_5 = false;  // Table-1 style rounding for degree rows
};

struct SummaryRow {
  std::string estimand;
  int governorate_id = 0;
  std::string governorate;
  int group_id = 0;       // 0 for degree rows
  std::string group;      // empty for degree rows
  double point = 0, q025 = 0, q975 = 0;
  std::string mode, policy;
};

struct SummaryTable {
  std::vector<SummaryRow> rows;
};

// Empirical summaries of the scaled fan-out. prevalence/size cover every
// (governorate, group) cell; degree covers governorates with respondents;
// target_size covers target groups only, with the half-male-coefficient
// adjustment exp(rho~ + beta_male/2) * N_g pairing each beta draw with its
// originating m. Quantiles are type-7 at 2.5% / 97.5%.
SummaryTable summarize(const ScaledDraws& scaled, Estimand estimand,
                       const SummaryOptions& options = {});

// Target-size table with the half-male-coefficient adjustment; equals
// summarize(scaled, Estimand::target_size, options).
SummaryTable adjusted_target_size(const ScaledDraws& scaled,
                                  const SummaryOptions& options = {});

// Exact header `estimand,governorate,group,point,q025,q975,mode,policy`.
void write_summary_csv(const SummaryTable& table, const std::string& path);

}  // namespace scaleup
