#include "scaleup/probe_model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "scaleup/rng.hpp"
#include "scaleup/stats.hpp"
#include "scaleup/weights.hpp"

namespace scaleup {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

int MembershipData::members() const {
  int total = 0;
  for (int m : indicators) total += (m != 0);
  return total;
}

MembershipData MembershipData::extract(const SurveyDataset& dataset, int group_id,
                                       bool weighted, bool normalize_weights) {
  dataset.validate();
  int k = dataset.group_index(group_id);
  if (k < 0) {
    throw std::invalid_argument(fmt::format("probe: unknown group id {}", group_id));
  }
  const Group& grp = dataset.groups[k];
  if (!grp.has_membership_question()) {
    throw std::invalid_argument(fmt::format(
        "probe: group '{}' ({}) has no membership question", grp.label,
        to_string(grp.kind)));
  }
  if (dataset.memberships.empty()) {
    throw std::invalid_argument("probe: dataset carries no membership answers");
  }

  MembershipData out;
  out.group_id = group_id;
  out.group_label = grp.label;
  out.G = dataset.n_governorates();
  for (const auto& g : dataset.governorates) {
    out.gov_ids.push_back(g.id);
    out.gov_names.push_back(g.name);
  }

  Eigen::VectorXd w;
  if (weighted) w = scaleup::normalized_weights(dataset, normalize_weights);
  std::vector<double> kept_weights;
  for (int i = 0; i < dataset.n(); ++i) {
    if (!dataset.memberships.asked(i, k)) continue;
    out.indicators.push_back(dataset.memberships.member(i, k) ? 1 : 0);
    out.gov.push_back(dataset.governorate_index(dataset.respondents[i].governorate_id));
    kept_weights.push_back(weighted ? w[i] : 1.0);
  }
  if (out.indicators.empty()) {
    throw std::invalid_argument(fmt::format(
        "probe: group '{}' has no recorded membership answers", grp.label));
  }
  out.weights = Eigen::Map<const Eigen::VectorXd>(kept_weights.data(),
                                                  static_cast<Eigen::Index>(kept_weights.size()));
  return out;
}

ProbeModel::ProbeModel(MembershipData data, ProbeModelOptions options)
    : data_(std::move(data)), opt_(options) {
  if (data_.G < 1) throw std::invalid_argument("probe: no governorates");
  if (data_.size() == 0) throw std::invalid_argument("probe: empty membership data");
  if (static_cast<int>(data_.gov.size()) != data_.size() ||
      data_.weights.size() != data_.size()) {
    throw std::invalid_argument("probe: indicator/governorate/weight lengths disagree");
  }
  for (int g : data_.gov) {
    if (g < 0 || g >= data_.G) {
      throw std::invalid_argument("probe: governorate index out of range");
    }
  }
}

double ProbeModel::eval(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const {
  const int G = data_.G;
  const double var_loc = opt_.prior_loc_var;
  const double hc = opt_.hc_scale;
  if (q.size() != dim()) throw std::invalid_argument("probe: parameter vector has wrong size");

  const double alpha = q[off_alpha()];
  const double s = fixed() ? 0.0 : q[off_s()];
  const double sigma_u = fixed() ? opt_.fixed_sigma_u : std::exp(s);
  Eigen::VectorXd ut = q.segment(off_u(), G);
  if (!std::isfinite(sigma_u)) return kNegInf;

  double lp = 0.0;
  double resid_sum = 0.0;
  Eigen::VectorXd resid_by_gov = Eigen::VectorXd::Zero(G);
  for (int i = 0; i < data_.size(); ++i) {
    const double eta = alpha + sigma_u * ut[data_.gov[i]];
    const double wi = data_.weights[i];
    lp += wi * (data_.indicators[i] * eta - stats::log1p_exp(eta));
    const double r = wi * (data_.indicators[i] - stats::inv_logit(eta));
    resid_sum += r;
    resid_by_gov[data_.gov[i]] += r;
  }

  lp += stats::log_normal_pdf(alpha, 0.0, std::sqrt(var_loc));
  if (!fixed()) lp += stats::log_half_cauchy_pdf(sigma_u, hc) + s;
  lp += -0.5 * ut.squaredNorm() - 0.5 * G * stats::kLog2Pi;
  if (!std::isfinite(lp)) return kNegInf;

  if (grad) {
    grad->setZero(dim());
    (*grad)[off_alpha()] = resid_sum - alpha / var_loc;
    if (!fixed()) {
      (*grad)[off_s()] = sigma_u * resid_by_gov.dot(ut) +
                         sigma_u * (-2.0 * sigma_u / (hc * hc + sigma_u * sigma_u)) + 1.0;
    }
    grad->segment(off_u(), G) = sigma_u * resid_by_gov - ut;
    if (!grad->allFinite()) return kNegInf;
  }
  return lp;
}

double ProbeModel::logp_grad(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
  return eval(q, &grad);
}

double ProbeModel::log_posterior(const Eigen::VectorXd& q) const {
  return eval(q, nullptr);
}

LogisticPosterior fit_probe_model(const MembershipData& data, const SamplerConfig& config,
                                  const ProbeModelOptions& options) {
  config.validate();
  if (data.members() == 0) {
    throw std::invalid_argument(fmt::format(
        "probe: group '{}' has zero reported members in every governorate; the "
        "logistic model cannot be fitted — use the group's known size records instead",
        data.group_label.empty() ? std::to_string(data.group_id) : data.group_label));
  }
  ProbeModel model(data, options);
  const int G = data.G;

  LogpGrad target = [&model](const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
    return model.logp_grad(q, grad);
  };
  ChainInit init = [&model, &config, G](int, Rng& rng) {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(model.dim());
    std::uniform_real_distribution<double> u(-config.init_jitter, config.init_jitter);
    for (int g = 0; g < G; ++g) q[model.off_u() + g] = u(rng);
    return q;
  };
  NutsResult res = nuts_sample(model.dim(), target, config, init);

  LogisticPosterior post;
  post.group_id = data.group_id;
  post.group_label = data.group_label;
  post.gov_ids = data.gov_ids;
  post.gov_names = data.gov_names;
  post.chains = config.chains;
  post.draws_per_chain = config.draws_per_chain;
  post.divergences = res.divergences;
  post.step_sizes = res.step_sizes;

  const int M = static_cast<int>(res.draws.rows());
  post.values.resize(M, 2 + G);
  for (int m = 0; m < M; ++m) {
    const double alpha = res.draws(m, model.off_alpha());
    const double sigma_u =
        model.fixed() ? options.fixed_sigma_u : std::exp(res.draws(m, model.off_s()));
    post.values(m, post.alpha_col()) = alpha;
    post.values(m, post.sigma_col()) = sigma_u;
    for (int g = 0; g < G; ++g) {
      post.values(m, post.u_col(g)) = sigma_u * res.draws(m, model.off_u() + g);
    }
  }

  post.names.resize(2 + G);
  post.names[post.alpha_col()] = "alpha";
  post.names[post.sigma_col()] = "sigma_u";
  for (int g = 0; g < G; ++g) {
    post.names[post.u_col(g)] = fmt::format("u[{}]", data.gov_ids.empty() ? g + 1 : data.gov_ids[g]);
  }

  post.diagnostics = diagnose_matrix(post.values, config.chains, post.names);
  post.diagnostics.divergences = res.divergences;
  post.diagnostics.total_transitions = res.total_transitions;
  post.divergence_warning = post.diagnostics.divergence_flag(0.05);
  post.rhat_warning = post.diagnostics.rhat_flag(1.05);
  return post;
}

std::vector<LogisticPosterior> fit_all_probe_models(const SurveyDataset& dataset,
                                                    const SamplerConfig& config,
                                                    const ProbeModelOptions& options) {
  std::vector<LogisticPosterior> fits;
  for (const auto& grp : dataset.groups) {
    if (!grp.has_membership_question()) continue;
    MembershipData data =
        MembershipData::extract(dataset, grp.id, options.weighted, options.normalize_weights);
    SamplerConfig per_group = config;
    per_group.seed = derive_seed(config.seed, static_cast<std::uint64_t>(grp.id));
    fits.push_back(fit_probe_model(data, per_group, options));
  }
  return fits;
}

PrevalenceDraws prevalence_draws(const std::vector<LogisticPosterior>& posteriors,
                                 const std::vector<Governorate>& governorates) {
  if (posteriors.empty()) {
    throw std::invalid_argument("prevalence_draws: no posteriors given");
  }
  const int G = static_cast<int>(governorates.size());
  const int R = posteriors.front().draws();

  PrevalenceDraws out;
  for (const auto& g : governorates) {
    out.gov_ids.push_back(g.id);
    out.gov_names.push_back(g.name);
    out.gov_populations.push_back(static_cast<double>(g.adult_population));
  }

  const double floor = std::numeric_limits<double>::min();
  const double ceiling = std::nextafter(1.0, 0.0);
  for (const auto& post : posteriors) {
    if (post.n_governorates() != G) {
      throw std::invalid_argument(fmt::format(
          "prevalence_draws: posterior for group {} covers {} governorates, dataset has {}",
          post.group_id, post.n_governorates(), G));
    }
    if (post.draws() != R) {
      throw std::invalid_argument(fmt::format(
          "prevalence_draws: posterior for group {} has {} draws, expected {}",
          post.group_id, post.draws(), R));
    }
    Eigen::MatrixXd gamma(R, G), sizes(R, G);
    for (int r = 0; r < R; ++r) {
      const double alpha = post.values(r, post.alpha_col());
      for (int g = 0; g < G; ++g) {
        double v = stats::inv_logit(alpha + post.values(r, post.u_col(g)));
        v = std::clamp(v, floor, ceiling);
        gamma(r, g) = v;
        sizes(r, g) = v * out.gov_populations[g];
      }
    }
    out.group_ids.push_back(post.group_id);
    out.group_labels.push_back(post.group_label);
    out.gamma.push_back(std::move(gamma));
    out.sizes.push_back(std::move(sizes));
  }
  return out;
}

void write_prevalence_csv(const PrevalenceDraws& draws, const std::string& path) {
  std::ofstream file(path, std::ios::binary);
  if (!file) {
    throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
  }
  file << "draw,group,governorate,gamma\n";
  const int G = static_cast<int>(draws.gov_ids.size());
  for (int r = 0; r < draws.draws(); ++r) {
    for (int j = 0; j < draws.n_groups(); ++j) {
      for (int g = 0; g < G; ++g) {
        file << fmt::format("{},{},{},{}\n", r + 1, draws.group_ids[j], draws.gov_ids[g],
                            draws.gamma[j](r, g));
      }
    }
  }
  if (!file.good()) {
    throw std::runtime_error(fmt::format("failed while writing '{}'", path));
  }
}

}  // namespace scaleup
