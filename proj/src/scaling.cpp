#include "scaleup/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

#include "scaleup/stats.hpp"

namespace scaleup {

namespace {

// Ranks of `ids` in ascending order (ties impossible: ids are unique).
std::vector<int> ascending_order(const std::vector<int>& ids) {
  std::vector<int> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return ids[a] < ids[b]; });
  return order;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += "\"\"";
    out += ch;
  }
  out += '"';
  return out;
}

struct SeriesSummary {
  double point = 0, q025 = 0, q975 = 0;
};

// Consumes (sorts) the series.
SeriesSummary summarize_series(std::vector<double>& series, PointStat stat) {
  SeriesSummary s;
  if (stat == PointStat::mean) s.point = stats::mean(series);
  std::sort(series.begin(), series.end());
  if (stat == PointStat::median) s.point = stats::quantile_sorted(series, 0.5);
  s.q025 = stats::quantile_sorted(series, 0.025);
  s.q975 = stats::quantile_sorted(series, 0.975);
  return s;
}

double round_to_5(double x) {
  return static_cast<double>(std::llround(x / 5.0) * 5);
}

}  // namespace

std::string to_string(ProbeMode mode) {
  switch (mode) {
    case ProbeMode::direct_first_known_otherwise: return "direct_first_known_otherwise";
    case ProbeMode::known_first_direct_otherwise: return "known_first_direct_otherwise";
    case ProbeMode::direct_only: return "direct_only";
    case ProbeMode::known_only: return "known_only";
  }
  throw std::invalid_argument("to_string: bad ProbeMode");
}

std::string to_string(ScalingMode mode) {
  switch (mode) {
    case ScalingMode::full_bootstrap: return "full_bootstrap";
    case ScalingMode::averaged_gamma: return "averaged_gamma";
  }
  throw std::invalid_argument("to_string: bad ScalingMode");
}

std::string to_string(Estimand e) {
  switch (e) {
    case Estimand::prevalence: return "prevalence";
    case Estimand::size: return "size";
    case Estimand::degree: return "degree";
    case Estimand::target_size: return "target_size";
  }
  throw std::invalid_argument("to_string: bad Estimand");
}

std::string to_string(PointStat p) {
  switch (p) {
    case PointStat::mean: return "mean";
    case PointStat::median: return "median";
  }
  throw std::invalid_argument("to_string: bad PointStat");
}

ProbeMode probe_mode_from_string(const std::string& s) {
  if (s == "direct_first_known_otherwise") return ProbeMode::direct_first_known_otherwise;
  if (s == "known_first_direct_otherwise") return ProbeMode::known_first_direct_otherwise;
  if (s == "direct_only") return ProbeMode::direct_only;
  if (s == "known_only") return ProbeMode::known_only;
  throw std::invalid_argument(fmt::format("unknown probe policy '{}'", s));
}

ScalingMode scaling_mode_from_string(const std::string& s) {
  if (s == "full_bootstrap") return ScalingMode::full_bootstrap;
  if (s == "averaged_gamma") return ScalingMode::averaged_gamma;
  throw std::invalid_argument(fmt::format("unknown scaling mode '{}'", s));
}

PointStat point_stat_from_string(const std::string& s) {
  if (s == "mean") return PointStat::mean;
  if (s == "median") return PointStat::median;
  throw std::invalid_argument(fmt::format("unknown point statistic '{}'", s));
}

double shift_constant(const Eigen::VectorXd& rho, const Eigen::VectorXd& gamma,
                      const std::vector<int>& probe_group_ids) {
  const auto count = static_cast<Eigen::Index>(probe_group_ids.size());
  if (count == 0) throw std::invalid_argument("shift_constant: empty probe set");
  if (rho.size() != count || gamma.size() != count) {
    throw std::invalid_argument(fmt::format(
        "shift_constant: got {} rho and {} gamma values for {} probe groups",
        rho.size(), gamma.size(), probe_group_ids.size()));
  }
  const std::vector<int> order = ascending_order(probe_group_ids);
  double sum = 0.0;
  for (int idx : order) {
    const double g = gamma[idx];
    if (!(g > 0.0) || !std::isfinite(g)) {
      throw std::invalid_argument(fmt::format(
          "shift_constant: prevalence for group {} is {}; must be positive",
          probe_group_ids[idx], g));
    }
    sum += std::exp(rho[idx]) / g;
  }
  const double c = std::log(sum / static_cast<double>(count));
  if (!std::isfinite(c)) {
    throw std::runtime_error(
        fmt::format("shift_constant: non-finite shift (ratio sum {})", sum));
  }
  return c;
}

ProbePolicy make_policy(ProbeMode mode, const std::vector<Group>& groups,
                        const std::vector<Governorate>& governorates,
                        const PrevalenceDraws& prevalence) {
  ProbePolicy policy;
  policy.mode = mode;
  const bool have_direct = prevalence.draws() > 0;
  for (const auto& group : groups) {
    if (group.kind == GroupKind::target) continue;
    const bool direct_ok =
        have_direct && std::find(prevalence.group_ids.begin(), prevalence.group_ids.end(),
                                 group.id) != prevalence.group_ids.end();
    bool all_govs_ok = true;
    for (const auto& gov : governorates) {
      const bool known_ok =
          group.known_size.count(gov.id) > 0 || group.known_size_national.has_value();
      bool cell_ok = false;
      switch (mode) {
        case ProbeMode::direct_only: cell_ok = direct_ok; break;
        case ProbeMode::known_only: cell_ok = known_ok; break;
        case ProbeMode::direct_first_known_otherwise:
        case ProbeMode::known_first_direct_otherwise:
          cell_ok = direct_ok || known_ok;
          break;
      }
      if (!cell_ok) {
        all_govs_ok = false;
        break;
      }
    }
    if (all_govs_ok) policy.probe_set.push_back(group.id);
  }
  std::sort(policy.probe_set.begin(), policy.probe_set.end());
  if (policy.probe_set.empty()) {
    throw std::invalid_argument(fmt::format(
        "make_policy: no group qualifies as a probe under policy '{}'", to_string(mode)));
  }
  return policy;
}

ScaledDraws scale_draws(const NsumPosterior& nsum, const PrevalenceDraws& prevalence,
                        const std::vector<Group>& groups,
                        const std::vector<Governorate>& governorates,
                        const ProbePolicy& policy, ScalingMode mode) {
  const int M = nsum.draws();
  const int K = nsum.K;
  const int G = nsum.G;
  const int n = nsum.n;
  if (M <= 0) throw std::invalid_argument("scale: posterior has no draws");
  if (K <= 0 || G <= 0) throw std::invalid_argument("scale: posterior has no groups or governorates");
  if (policy.probe_set.empty()) throw std::invalid_argument("scale: probe set is empty");

  std::vector<int> probe_sorted = policy.probe_set;
  std::sort(probe_sorted.begin(), probe_sorted.end());
  if (std::adjacent_find(probe_sorted.begin(), probe_sorted.end()) != probe_sorted.end()) {
    throw std::invalid_argument("scale: probe set contains a duplicate group id");
  }

  std::unordered_map<int, const Group*> group_by_id;
  for (const auto& g : groups) group_by_id.emplace(g.id, &g);
  std::unordered_map<int, const Governorate*> gov_by_id;
  double national_total = 0.0;
  for (const auto& gov : governorates) {
    gov_by_id.emplace(gov.id, &gov);
    national_total += static_cast<double>(gov.adult_population);
  }

  ScaledDraws out;
  out.mode = mode;
  out.policy.mode = policy.mode;
  out.policy.probe_set = probe_sorted;
  out.M = M;
  out.group_ids = nsum.group_ids;
  out.group_labels = nsum.group_labels;
  out.gov_ids = nsum.gov_ids;
  out.gov_names = nsum.gov_names;
  out.respondent_ids = nsum.respondent_ids;
  out.resp_gov = nsum.resp_gov;
  out.resp_weights = nsum.resp_weights;

  out.group_kinds.reserve(nsum.group_ids.size());
  for (int gid : nsum.group_ids) {
    auto it = group_by_id.find(gid);
    if (it == group_by_id.end()) {
      throw std::invalid_argument(
          fmt::format("scale: group {} is missing from the group metadata", gid));
    }
    out.group_kinds.push_back(it->second->kind);
  }
  out.gov_populations.reserve(nsum.gov_ids.size());
  for (int gov_id : nsum.gov_ids) {
    auto it = gov_by_id.find(gov_id);
    if (it == gov_by_id.end()) {
      throw std::invalid_argument(
          fmt::format("scale: governorate {} is missing from the governorate list", gov_id));
    }
    out.gov_populations.push_back(static_cast<double>(it->second->adult_population));
  }

  // Posterior group index for every probe id, in canonical order.
  out.probe_sorted_ = probe_sorted;
  out.probe_k_.reserve(probe_sorted.size());
  for (int gid : probe_sorted) {
    auto it = std::find(nsum.group_ids.begin(), nsum.group_ids.end(), gid);
    if (it == nsum.group_ids.end()) {
      throw std::invalid_argument(
          fmt::format("scale: probe group {} has no draws in the posterior", gid));
    }
    const auto* meta = group_by_id.at(gid);
    if (meta->kind == GroupKind::target) {
      throw std::invalid_argument(fmt::format(
          "scale: group {} ('{}') is a target group and cannot serve as a probe", gid,
          meta->label));
    }
    out.probe_k_.push_back(static_cast<int>(it - nsum.group_ids.begin()));
  }

  // Alignment of prevalence draws with the posterior's governorates, resolved
  // lazily: only policies that actually use direct draws require it.
  const bool have_prev = prevalence.draws() > 0;
  std::vector<int> prev_gov(nsum.gov_ids.size(), -1);
  if (have_prev) {
    for (std::size_t g = 0; g < nsum.gov_ids.size(); ++g) {
      auto it = std::find(prevalence.gov_ids.begin(), prevalence.gov_ids.end(),
                          nsum.gov_ids[g]);
      if (it != prevalence.gov_ids.end()) {
        prev_gov[g] = static_cast<int>(it - prevalence.gov_ids.begin());
      }
    }
  }

  const int J = static_cast<int>(probe_sorted.size());
  const int R_source = have_prev ? prevalence.draws() : 1;

  // Resolve the gamma source for every (probe, governorate) cell up front so
  // the fan-out size is known before any grid is built.
  enum class Source { direct, known };
  std::vector<std::vector<Source>> source(nsum.gov_ids.size(), std::vector<Source>(J));
  std::vector<std::vector<double>> known_value(nsum.gov_ids.size(), std::vector<double>(J, 0.0));
  bool any_direct = false;
  for (std::size_t g = 0; g < nsum.gov_ids.size(); ++g) {
    const int gov_id = nsum.gov_ids[g];
    const double pop = out.gov_populations[g];
    for (int j = 0; j < J; ++j) {
      const int gid = probe_sorted[static_cast<std::size_t>(j)];
      const auto* meta = group_by_id.at(gid);
      int prev_j = -1;
      if (have_prev) {
        auto it = std::find(prevalence.group_ids.begin(), prevalence.group_ids.end(), gid);
        if (it != prevalence.group_ids.end()) {
          prev_j = static_cast<int>(it - prevalence.group_ids.begin());
        }
      }
      const bool direct_ok = prev_j >= 0 && prev_gov[g] >= 0;
      double known_gamma = -1.0;
      if (auto it = meta->known_size.find(gov_id); it != meta->known_size.end()) {
        known_gamma = static_cast<double>(it->second) / pop;
      } else if (meta->known_size_national.has_value()) {
        known_gamma = static_cast<double>(*meta->known_size_national) / national_total;
      }
      const bool known_ok = known_gamma > 0.0;

      bool use_direct = false;
      switch (policy.mode) {
        case ProbeMode::direct_only:
          use_direct = true;
          if (!direct_ok) {
            throw std::invalid_argument(fmt::format(
                "scale: policy direct_only needs prevalence draws for group {} ('{}') in "
                "governorate {}, and none were supplied",
                gid, meta->label, gov_id));
          }
          break;
        case ProbeMode::known_only:
          use_direct = false;
          if (!known_ok) {
            throw std::invalid_argument(fmt::format(
                "scale: policy known_only needs a known size for group {} ('{}') in "
                "governorate {}, and none is recorded",
                gid, meta->label, gov_id));
          }
          break;
        case ProbeMode::direct_first_known_otherwise:
          use_direct = direct_ok;
          if (!direct_ok && !known_ok) {
            throw std::invalid_argument(fmt::format(
                "scale: group {} ('{}') has neither prevalence draws nor a known size "
                "in governorate {}",
                gid, meta->label, gov_id));
          }
          break;
        case ProbeMode::known_first_direct_otherwise:
          use_direct = !known_ok;
          if (!known_ok && !direct_ok) {
            throw std::invalid_argument(fmt::format(
                "scale: group {} ('{}') has neither a known size nor prevalence draws "
                "in governorate {}",
                gid, meta->label, gov_id));
          }
          break;
      }
      source[g][static_cast<std::size_t>(j)] = use_direct ? Source::direct : Source::known;
      if (use_direct) {
        any_direct = true;
      } else {
        if (!(known_gamma > 0.0) || known_gamma > 1.0 || !std::isfinite(known_gamma)) {
          throw std::invalid_argument(fmt::format(
              "scale: known size for group {} ('{}') in governorate {} implies "
              "prevalence {}, outside (0, 1]",
              gid, meta->label, gov_id, known_gamma));
        }
        known_value[g][static_cast<std::size_t>(j)] = known_gamma;
      }
    }
  }

  // Known sizes are point values, so the bootstrap dimension only exists when
  // direct draws enter somewhere.
  const int R_fan = any_direct ? R_source : 1;
  out.R_eff = (mode == ScalingMode::averaged_gamma) ? 1 : R_fan;

  // Per-governorate gamma tables, R_eff x J.
  out.gamma_.resize(nsum.gov_ids.size());
  for (std::size_t g = 0; g < nsum.gov_ids.size(); ++g) {
    Eigen::MatrixXd table(out.R_eff, J);
    for (int j = 0; j < J; ++j) {
      if (source[g][static_cast<std::size_t>(j)] == Source::known) {
        table.col(j).setConstant(known_value[g][static_cast<std::size_t>(j)]);
        continue;
      }
      const int gid = probe_sorted[static_cast<std::size_t>(j)];
      const int prev_j = static_cast<int>(
          std::find(prevalence.group_ids.begin(), prevalence.group_ids.end(), gid) -
          prevalence.group_ids.begin());
      const Eigen::MatrixXd& gm = prevalence.gamma[static_cast<std::size_t>(prev_j)];
      if (gm.rows() != R_source || prev_gov[g] >= gm.cols()) {
        throw std::invalid_argument(fmt::format(
            "scale: prevalence draws for group {} have shape {}x{}; expected {} draws "
            "covering governorate column {}",
            gid, gm.rows(), gm.cols(), R_source, prev_gov[g]));
      }
      if (mode == ScalingMode::averaged_gamma) {
        table(0, j) = gm.col(prev_gov[g]).mean();
      } else {
        table.col(j) = gm.col(prev_gov[g]);
      }
      for (int r = 0; r < out.R_eff; ++r) {
        const double val = table(r, j);
        if (!(val > 0.0) || !std::isfinite(val)) {
          throw std::invalid_argument(fmt::format(
              "scale: prevalence draw for group {} in governorate {} is {}; must be "
              "positive",
              gid, nsum.gov_ids[g], val));
        }
      }
    }
    out.gamma_[g] = std::move(table);
  }

  // Copies of the posterior blocks the fan-out reads.
  out.rho_.resize(M, G * K);
  for (int k = 0; k < K; ++k) {
    for (int g = 0; g < G; ++g) {
      out.rho_.col(k * G + g) = nsum.values.col(nsum.rho_col(g, k));
    }
  }
  out.delta_.resize(M, n);
  for (int i = 0; i < n; ++i) out.delta_.col(i) = nsum.values.col(nsum.delta_col(i));
  out.beta_male_ = Eigen::MatrixXd::Zero(M, K);
  if (nsum.P > 0) {
    auto it = std::find(nsum.covariate_names.begin(), nsum.covariate_names.end(), "male");
    if (it == nsum.covariate_names.end()) {
      throw std::invalid_argument("scale: posterior has covariates but no 'male' column");
    }
    const int p_male = static_cast<int>(it - nsum.covariate_names.begin());
    for (int k = 0; k < K; ++k) {
      out.beta_male_.col(k) = nsum.values.col(nsum.beta_col(p_male, k));
    }
  }
  return out;
}

Eigen::MatrixXd ScaledDraws::shift_grid(int g) const {
  if (g < 0 || g >= n_governorates()) {
    throw std::out_of_range(fmt::format("shift_grid: governorate index {} out of range", g));
  }
  const auto& table = gamma_[static_cast<std::size_t>(g)];
  const int J = static_cast<int>(probe_sorted_.size());
  const int G = n_governorates();
  Eigen::MatrixXd grid(M, R_eff);
  std::vector<double> num(static_cast<std::size_t>(J));
  for (int m = 0; m < M; ++m) {
    for (int j = 0; j < J; ++j) {
      num[static_cast<std::size_t>(j)] =
          std::exp(rho_(m, probe_k_[static_cast<std::size_t>(j)] * G + g));
    }
    for (int r = 0; r < R_eff; ++r) {
      double sum = 0.0;
      for (int j = 0; j < J; ++j) {
        sum += num[static_cast<std::size_t>(j)] / table(r, j);
      }
      const double c = std::log(sum / static_cast<double>(J));
      if (!std::isfinite(c)) {
        throw std::runtime_error(fmt::format(
            "shift_grid: non-finite shift constant for governorate {} at draw ({}, {})",
            gov_ids[static_cast<std::size_t>(g)], m, r));
      }
      grid(m, r) = c;
    }
  }
  return grid;
}

Eigen::VectorXd ScaledDraws::rho_tilde(int g, int k) const {
  if (k < 0 || k >= n_groups()) {
    throw std::out_of_range(fmt::format("rho_tilde: group index {} out of range", k));
  }
  const Eigen::MatrixXd grid = shift_grid(g);
  Eigen::VectorXd out(total_draws());
  const int G = n_governorates();
  for (int m = 0; m < M; ++m) {
    const double rho = rho_(m, k * G + g);
    for (int r = 0; r < R_eff; ++r) {
      out[static_cast<long>(m) * R_eff + r] = rho - grid(m, r);
    }
  }
  return out;
}

Eigen::VectorXd ScaledDraws::delta_tilde(int i) const {
  if (i < 0 || i >= n_respondents()) {
    throw std::out_of_range(fmt::format("delta_tilde: respondent index {} out of range", i));
  }
  const int g = resp_gov[static_cast<std::size_t>(i)];
  const Eigen::MatrixXd grid = shift_grid(g);
  Eigen::VectorXd out(total_draws());
  for (int m = 0; m < M; ++m) {
    const double delta = delta_(m, i);
    for (int r = 0; r < R_eff; ++r) {
      out[static_cast<long>(m) * R_eff + r] = delta + grid(m, r);
    }
  }
  return out;
}

Eigen::VectorXd ScaledDraws::degree_draws(int g, bool weighted) const {
  if (g < 0 || g >= n_governorates()) {
    throw std::out_of_range(fmt::format("degree_draws: governorate index {} out of range", g));
  }
  std::vector<int> members;
  for (int i = 0; i < n_respondents(); ++i) {
    if (resp_gov[static_cast<std::size_t>(i)] == g) members.push_back(i);
  }
  if (members.empty()) {
    throw std::invalid_argument(fmt::format(
        "degree_draws: governorate {} has no respondents", gov_ids[static_cast<std::size_t>(g)]));
  }
  double weight_total = 0.0;
  for (int i : members) weight_total += weighted ? resp_weights[i] : 1.0;

  const Eigen::MatrixXd grid = shift_grid(g);
  Eigen::VectorXd out(total_draws());
  for (int m = 0; m < M; ++m) {
    double s = 0.0;
    for (int i : members) {
      s += (weighted ? resp_weights[i] : 1.0) * std::exp(delta_(m, i));
    }
    s /= weight_total;
    for (int r = 0; r < R_eff; ++r) {
      out[static_cast<long>(m) * R_eff + r] = std::exp(grid(m, r)) * s;
    }
  }
  return out;
}

SummaryTable summarize(const ScaledDraws& scaled, Estimand estimand,
                       const SummaryOptions& options) {
  SummaryTable table;
  const int G = scaled.n_governorates();
  const int K = scaled.n_groups();
  const int R = scaled.R_eff;
  const int M = scaled.M;
  const long total = scaled.total_draws();
  const std::string mode_label = to_string(scaled.mode);
  const std::string policy_label = to_string(scaled.policy.mode);

  auto gov_label = [&](int g) {
    const std::string& name = scaled.gov_names[static_cast<std::size_t>(g)];
    return name.empty() ? fmt::format("{}", scaled.gov_ids[static_cast<std::size_t>(g)]) : name;
  };
  auto group_label = [&](int k) {
    const std::string& label = scaled.group_labels[static_cast<std::size_t>(k)];
    return label.empty() ? fmt::format("{}", scaled.group_ids[static_cast<std::size_t>(k)])
                         : label;
  };

  std::vector<double> series(static_cast<std::size_t>(total));
  for (int g = 0; g < G; ++g) {
    if (estimand == Estimand::degree) {
      bool has_member = false;
      for (int gov : scaled.resp_gov) {
        if (gov == g) {
          has_member = true;
          break;
        }
      }
      if (!has_member) continue;
      const Eigen::VectorXd draws = scaled.degree_draws(g, options.weighted_degrees);
      series.assign(draws.data(), draws.data() + draws.size());
      SeriesSummary s = summarize_series(series, options.point);
      if (options.round_degrees_to_5) {
        s.point = round_to_5(s.point);
        s.q025 = round_to_5(s.q025);
        s.q975 = round_to_5(s.q975);
      }
      table.rows.push_back({to_string(estimand), scaled.gov_ids[static_cast<std::size_t>(g)],
                            gov_label(g), 0, "", s.point, s.q025, s.q975, mode_label,
                            policy_label});
      continue;
    }

    const Eigen::MatrixXd grid = scaled.shift_grid(g);
    const double pop = scaled.gov_populations[static_cast<std::size_t>(g)];
    for (int k = 0; k < K; ++k) {
      if (estimand == Estimand::target_size &&
          scaled.group_kinds[static_cast<std::size_t>(k)] != GroupKind::target) {
        continue;
      }
      const auto& rho = scaled.rho_base();
      const auto& beta = scaled.beta_male();
      for (int m = 0; m < M; ++m) {
        const double rho_mk = rho(m, k * G + g);
        const double half_male =
            estimand == Estimand::target_size ? 0.5 * beta(m, k) : 0.0;
        for (int r = 0; r < R; ++r) {
          const double log_prev = rho_mk - grid(m, r) + half_male;
          double value = std::exp(log_prev);
          if (estimand != Estimand::prevalence) value *= pop;
          series[static_cast<std::size_t>(m) * R + static_cast<std::size_t>(r)] = value;
        }
      }
      const SeriesSummary s = summarize_series(series, options.point);
      table.rows.push_back({to_string(estimand), scaled.gov_ids[static_cast<std::size_t>(g)],
                            gov_label(g), scaled.group_ids[static_cast<std::size_t>(k)],
                            group_label(k), s.point, s.q025, s.q975, mode_label,
                            policy_label});
    }
  }
  return table;
}

SummaryTable adjusted_target_size(const ScaledDraws& scaled, const SummaryOptions& options) {
  return summarize(scaled, Estimand::target_size, options);
}

void write_summary_csv(const SummaryTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error(fmt::format("summary: cannot open '{}' for writing", path));
  }
  out << "estimand,governorate,group,point,q025,q975,mode,policy\n";
  for (const auto& row : table.rows) {
    out << fmt::format("{},{},{},{},{},{},{},{}\n", csv_escape(row.estimand),
                       csv_escape(row.governorate), csv_escape(row.group), row.point,
                       row.q025, row.q975, csv_escape(row.mode), csv_escape(row.policy));
  }
  if (!out) {
    throw std::runtime_error(fmt::format("summary: write to '{}' failed", path));
  }
}

}  // namespace scaleup
