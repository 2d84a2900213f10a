#include "scaleup/nsum_model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "scaleup/chol_corr.hpp"
#include "scaleup/stats.hpp"
#include "scaleup/weights.hpp"

namespace scaleup {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// d log HalfCauchy(x; s) / dx = -2x / (s^2 + x^2)
double d_log_half_cauchy(double x, double s) { return -2.0 * x / (s * s + x * x); }

// tau_N / tau with tau = sqrt(log1p(tau_N^2)); -> 1 as tau_N -> 0.
double tau_ratio(double tau_n, double tau) {
  if (tau_n < 1e-8) return 1.0;
  return tau_n / tau;
}

}  // namespace

std::pair<double, double> bias_lognormal_params(double tau_N) {
  if (tau_N < 0 || !std::isfinite(tau_N)) {
    throw std::invalid_argument(fmt::format("bias_lognormal_params: tau_N must be >= 0, got {}",
                                            tau_N));
  }
  double tau_sq = std::log1p(tau_N * tau_N);
  return {-0.5 * tau_sq, std::sqrt(tau_sq)};
}

NsumData NsumData::prepare(const SurveyDataset& ds, bool normalize_weights) {
  ds.validate();
  NsumData d;
  d.n = ds.n();
  d.K = ds.n_groups();
  d.G = ds.n_governorates();
  d.P = kDesignDim;
  if (d.K < 1) throw std::invalid_argument("nsum: dataset has no groups");
  if (d.G < 1) throw std::invalid_argument("nsum: dataset has no governorates");

  d.covariate_names = {"male", "age", "syrian", "egyptian", "other"};
  for (const auto& g : ds.groups) {
    d.group_ids.push_back(g.id);
    d.group_labels.push_back(g.label);
  }
  for (const auto& g : ds.governorates) {
    d.gov_ids.push_back(g.id);
    d.gov_names.push_back(g.name);
  }

  if (d.n == 0) {
    d.y.resize(0, d.K);
    d.z.resize(0, d.P);
    d.w.resize(0);
    return d;
  }

  if (ds.responses.n() != d.n || ds.responses.k() != d.K) {
    throw std::invalid_argument("nsum: response matrix does not match the roster");
  }
  for (const auto& r : ds.respondents) {
    if (!r.age_years) {
      throw std::invalid_argument(
          fmt::format("nsum: respondent {} has no age; run age imputation first", r.id));
    }
  }
  d.age_center = mean_age(ds.respondents);
  d.w = scaleup::normalized_weights(ds, normalize_weights);

  d.y = ds.responses.counts.cast<double>();
  d.z.resize(d.n, d.P);
  d.gov.resize(d.n);
  for (int i = 0; i < d.n; ++i) {
    const auto& r = ds.respondents[i];
    d.z.row(i) = build_design_row(r, d.age_center).transpose();
    int gi = ds.governorate_index(r.governorate_id);
    d.gov[i] = gi;
    d.respondent_ids.push_back(r.id);
  }
  return d;
}

NsumModel::NsumModel(const SurveyDataset& dataset, NsumModelOptions options)
    : data_(NsumData::prepare(dataset, options.normalize_weights)), opt_(options) {
  dim_ = off_eps() + data_.n * data_.K;
}

NsumParams NsumModel::unpack(const Eigen::VectorXd& q) const {
  const int n = data_.n, K = data_.K, G = data_.G, P = data_.P;
  NsumParams p;
  Eigen::VectorXd dtil = q.segment(off_delta(), n);
  p.sigma_delta = std::exp(q[off_sdelta()]);
  p.delta = p.sigma_delta * dtil;

  p.mu_rho = q.segment(off_mu_rho(), K);
  p.sigma_rho = q.segment(off_srho(), K).array().exp().matrix();
  p.mu_rho_base = q[off_mubase()];
  p.sigma_rho_base = std::exp(q[off_sbase()]);
  p.rho.resize(G, K);
  for (int k = 0; k < K; ++k) {
    p.rho.col(k) = (p.mu_rho[k] +
                    p.sigma_rho[k] * q.segment(off_rho() + k * G, G).array())
                       .matrix();
  }

  p.beta.resize(P, K);
  for (int k = 0; k < K; ++k) p.beta.col(k) = q.segment(off_beta() + k * P, P);

  p.tau_N = q.segment(off_ttau(), K).array().exp().matrix();
  auto transform = CorrCholTransform::from_unconstrained(
      q.segment(off_uomega(), K * (K - 1) / 2), K);
  p.omega_chol = transform.cholesky;

  p.bias.resize(n, K);
  if (n > 0) {
    Eigen::MatrixXd eps(n, K);
    for (int k = 0; k < K; ++k) eps.col(k) = q.segment(off_eps() + k * n, n);
    Eigen::MatrixXd Q = eps * p.omega_chol.transpose();
    for (int k = 0; k < K; ++k) {
      auto [mu_k, tau_k] = bias_lognormal_params(p.tau_N[k]);
      p.bias.col(k) = (mu_k + tau_k * Q.col(k).array()).matrix();
    }
  }
  return p;
}

double NsumModel::weighted_loglik(const NsumParams& p) const {
  const int n = data_.n, K = data_.K;
  if (n == 0) return 0.0;
  Eigen::MatrixXd eta = p.bias;
  Eigen::MatrixXd zb = data_.z * p.beta;
  for (int i = 0; i < n; ++i) {
    eta.row(i) += zb.row(i) +
                  (p.delta[i] + p.rho.row(data_.gov[i]).array()).matrix();
  }
  double lp = 0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < K; ++k) {
      double e = eta(i, k);
      if (e > opt_.eta_clamp) {
        e = opt_.eta_clamp;
        clamp_events_.fetch_add(1, std::memory_order_relaxed);
      }
      lp += data_.w[i] * (data_.y(i, k) * e - std::exp(e) -
                          std::lgamma(data_.y(i, k) + 1.0));
    }
  }
  return lp;
}

double NsumModel::eval(const Eigen::VectorXd& q, Eigen::VectorXd* grad,
                       std::string* bad_block) const {
  const int n = data_.n, K = data_.K, G = data_.G, P = data_.P;
  const double var_loc = opt_.prior_loc_var;
  const double sd_loc = std::sqrt(var_loc);
  const double hc = opt_.hc_scale;
  if (q.size() != dim_) throw std::invalid_argument("nsum: parameter vector has wrong size");
  auto fail = [&](const char* block) {
    if (bad_block) *bad_block = block;
    return kNegInf;
  };

  // --- Unpack blocks -------------------------------------------------------
  Eigen::VectorXd dtil = q.segment(off_delta(), n);
  const double s_delta = q[off_sdelta()];
  const double sigma_delta = std::exp(s_delta);
  Eigen::MatrixXd rtil(G, K);
  for (int k = 0; k < K; ++k) rtil.col(k) = q.segment(off_rho() + k * G, G);
  Eigen::VectorXd mu_rho = q.segment(off_mu_rho(), K);
  Eigen::VectorXd s_rho = q.segment(off_srho(), K);
  Eigen::VectorXd sigma_rho = s_rho.array().exp().matrix();
  const double mu_base = q[off_mubase()];
  const double s_base = q[off_sbase()];
  const double sigma_base = std::exp(s_base);
  Eigen::MatrixXd beta(P, K);
  for (int k = 0; k < K; ++k) beta.col(k) = q.segment(off_beta() + k * P, P);
  Eigen::VectorXd t_tau = q.segment(off_ttau(), K);
  Eigen::VectorXd tau_n = t_tau.array().exp().matrix();
  Eigen::VectorXd u_omega = q.segment(off_uomega(), K * (K - 1) / 2);
  Eigen::MatrixXd eps(n, K);
  for (int k = 0; k < K; ++k) eps.col(k) = q.segment(off_eps() + k * n, n);

  if (!std::isfinite(sigma_delta)) return fail("sigma_delta");
  if (!sigma_rho.allFinite()) return fail("sigma_rho");
  if (!std::isfinite(sigma_base)) return fail("sigma_rho_base");
  if (!tau_n.allFinite()) return fail("tau_N");

  auto transform = CorrCholTransform::from_unconstrained(u_omega, K);
  if (transform.degenerate) return fail("omega");
  const Eigen::MatrixXd& L = transform.cholesky;

  Eigen::VectorXd tau(K), mu_bias(K), ratio(K);
  for (int k = 0; k < K; ++k) {
    auto [m, t] = bias_lognormal_params(tau_n[k]);
    mu_bias[k] = m;
    tau[k] = t;
    ratio[k] = tau_ratio(tau_n[k], t);
  }

  // --- Linear predictor and likelihood -------------------------------------
  Eigen::VectorXd delta = sigma_delta * dtil;
  Eigen::MatrixXd rho(G, K);
  for (int k = 0; k < K; ++k) {
    rho.col(k) = (mu_rho[k] + sigma_rho[k] * rtil.col(k).array()).matrix();
  }

  Eigen::MatrixXd Q = eps * L.transpose();  // n x K, (L eps_i)_k
  Eigen::MatrixXd eta(n, K);
  if (n > 0) {
    Eigen::MatrixXd zb = data_.z * beta;
    for (int i = 0; i < n; ++i) {
      eta.row(i) = (delta[i] + rho.row(data_.gov[i]).array() + zb.row(i).array() +
                    mu_bias.transpose().array() +
                    (Q.row(i).array() * tau.transpose().array()))
                       .matrix();
    }
  }

  double loglik = 0;
  Eigen::MatrixXd C(n, K);  // adjoint of eta
  long clamped = 0;
  for (int i = 0; i < n; ++i) {
    const double wi = data_.w[i];
    for (int k = 0; k < K; ++k) {
      double e = eta(i, k);
      bool clip = e > opt_.eta_clamp;
      if (clip) {
        e = opt_.eta_clamp;
        ++clamped;
      }
      double lam = std::exp(e);
      loglik += wi * (data_.y(i, k) * e - lam - std::lgamma(data_.y(i, k) + 1.0));
      C(i, k) = clip ? 0.0 : wi * (data_.y(i, k) - lam);
    }
  }
  if (clamped > 0) clamp_events_.fetch_add(clamped, std::memory_order_relaxed);
  if (!std::isfinite(loglik)) return fail("likelihood");

  // --- Priors ---------------------------------------------------------------
  double lp = loglik;
  lp += -0.5 * dtil.squaredNorm() - 0.5 * n * stats::kLog2Pi;
  lp += stats::log_half_cauchy_pdf(sigma_delta, hc) + s_delta;
  lp += -0.5 * rtil.squaredNorm() - 0.5 * G * K * stats::kLog2Pi;
  for (int k = 0; k < K; ++k) {
    lp += stats::log_normal_pdf(mu_rho[k], mu_base, sd_loc);
    lp += stats::log_trunc_normal_pos_pdf(sigma_rho[k], sigma_base, sd_loc) + s_rho[k];
    lp += stats::log_half_cauchy_pdf(tau_n[k], hc) + t_tau[k];
  }
  lp += stats::log_normal_pdf(mu_base, 0.0, sd_loc);
  lp += stats::log_half_cauchy_pdf(sigma_base, hc) + s_base;
  lp += -0.5 * beta.squaredNorm() / var_loc -
        0.5 * P * K * (stats::kLog2Pi + std::log(var_loc));
  lp += lkj_log_density(L, opt_.lkj_eta) + transform.log_jacobian();
  lp += -0.5 * eps.squaredNorm() - 0.5 * n * K * stats::kLog2Pi;
  if (!std::isfinite(lp)) return fail("priors");

  if (!grad) return lp;

  // --- Gradient --------------------------------------------------------------
  grad->setZero(dim_);

  Eigen::VectorXd c_row = C.rowwise().sum();  // n
  // delta~ and log sigma_delta
  grad->segment(off_delta(), n) = sigma_delta * c_row - dtil;
  (*grad)[off_sdelta()] = sigma_delta * dtil.dot(c_row) +
                          sigma_delta * d_log_half_cauchy(sigma_delta, hc) + 1.0;

  // Governorate scatter S_{g,k} = sum_{i in g} C_{i,k}
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(G, K);
  for (int i = 0; i < n; ++i) S.row(data_.gov[i]) += C.row(i);

  for (int k = 0; k < K; ++k) {
    grad->segment(off_rho() + k * G, G) =
        (sigma_rho[k] * S.col(k).array() - rtil.col(k).array()).matrix();
    (*grad)[off_mu_rho() + k] = S.col(k).sum() - (mu_rho[k] - mu_base) / var_loc;
    (*grad)[off_srho() + k] = sigma_rho[k] * rtil.col(k).dot(S.col(k)) -
                              sigma_rho[k] * (sigma_rho[k] - sigma_base) / var_loc + 1.0;
  }

  (*grad)[off_mubase()] =
      (mu_rho.array() - mu_base).sum() / var_loc - mu_base / var_loc;
  {
    // d/d(mean) of the positive-truncated normal includes the normalizer.
    double a = sigma_base / sd_loc;
    double hazard = stats::normal_pdf(a) / (sd_loc * stats::normal_cdf(a));
    double acc = 0;
    for (int k = 0; k < K; ++k) acc += (sigma_rho[k] - sigma_base) / var_loc - hazard;
    (*grad)[off_sbase()] =
        sigma_base * (acc + d_log_half_cauchy(sigma_base, hc)) + 1.0;
  }

  if (n > 0) {
    Eigen::MatrixXd g_beta = data_.z.transpose() * C - beta / var_loc;
    for (int k = 0; k < K; ++k) grad->segment(off_beta() + k * P, P) = g_beta.col(k);
  } else {
    for (int k = 0; k < K; ++k) {
      grad->segment(off_beta() + k * P, P) = -beta.col(k) / var_loc;
    }
  }

  for (int k = 0; k < K; ++k) {
    double lik_part = 0;
    if (n > 0) {
      lik_part = (C.col(k).dot(Q.col(k)) - tau[k] * C.col(k).sum()) * ratio[k] *
                 tau_n[k] / (1.0 + tau_n[k] * tau_n[k]);
    }
    (*grad)[off_ttau() + k] =
        lik_part - 2.0 * tau_n[k] * tau_n[k] / (hc * hc + tau_n[k] * tau_n[k]) + 1.0;
  }

  {
    Eigen::MatrixXd l_adj = Eigen::MatrixXd::Zero(K, K);
    if (n > 0) {
      l_adj = tau.asDiagonal() * (C.transpose() * eps);
      for (int r = 0; r < K; ++r) {
        for (int c = r + 1; c < K; ++c) l_adj(r, c) = 0.0;
      }
    }
    for (int k = 0; k < K; ++k) l_adj(k, k) += 2.0 * (opt_.lkj_eta - 1.0) / L(k, k);
    if (K > 1) {
      grad->segment(off_uomega(), K * (K - 1) / 2) =
          transform.pullback(l_adj) + transform.log_jacobian_grad_u();
    }
  }

  if (n > 0) {
    Eigen::MatrixXd g_eps = (C * tau.asDiagonal()) * L - eps;
    for (int k = 0; k < K; ++k) grad->segment(off_eps() + k * n, n) = g_eps.col(k);
  }

  if (!grad->allFinite()) return fail("gradient");
  return lp;
}

double NsumModel::logp_grad(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
  return eval(q, &grad, nullptr);
}

double NsumModel::log_posterior(const Eigen::VectorXd& q) const {
  std::string bad;
  double lp = eval(q, nullptr, &bad);
  if (!std::isfinite(lp)) {
    throw std::runtime_error(fmt::format(
        "log_posterior: non-finite contribution from parameter block '{}'", bad));
  }
  return lp;
}

NsumPosterior sample_nsum(const NsumModel& model, const SamplerConfig& config) {
  config.validate();
  model.reset_clamp_events();
  const NsumData& d = model.data();
  const int n = d.n, K = d.K, G = d.G, P = d.P;

  LogpGrad target = [&model](const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
    return model.logp_grad(q, grad);
  };
  // Hyper-locations start at zero and scales at one (log-scale zero);
  // innovation blocks are jittered uniformly for overdispersed starts.
  ChainInit init = [&model, &config, n, K, G](int, Rng& rng) {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(model.dim());
    std::uniform_real_distribution<double> u(-config.init_jitter, config.init_jitter);
    for (int i = 0; i < n; ++i) q[model.off_delta() + i] = u(rng);
    for (int j = 0; j < G * K; ++j) q[model.off_rho() + j] = u(rng);
    for (int j = 0; j < n * K; ++j) q[model.off_eps() + j] = u(rng);
    return q;
  };

  NutsResult res = nuts_sample(model.dim(), target, config, init);

  NsumPosterior post;
  post.n = n;
  post.K = K;
  post.G = G;
  post.P = P;
  post.chains = config.chains;
  post.draws_per_chain = config.draws_per_chain;
  post.respondent_ids = d.respondent_ids;
  post.group_ids = d.group_ids;
  post.gov_ids = d.gov_ids;
  post.group_labels = d.group_labels;
  post.gov_names = d.gov_names;
  post.covariate_names = d.covariate_names;
  post.age_center = d.age_center;
  post.resp_gov = d.gov;
  post.resp_weights = d.w;
  post.divergences = res.divergences;
  post.step_sizes = res.step_sizes;
  post.bias_thin = config.bias_thin;

  const int M = static_cast<int>(res.draws.rows());
  post.values.resize(M, post.total_cols());
  const int kept_per_chain =
      (config.draws_per_chain + config.bias_thin - 1) / config.bias_thin;
  post.bias.resize(kept_per_chain * config.chains, n * K);

  int bias_row = 0;
  for (int m = 0; m < M; ++m) {
    NsumParams p = model.unpack(res.draws.row(m).transpose());
    auto& v = post.values;
    for (int i = 0; i < n; ++i) v(m, post.delta_col(i)) = p.delta[i];
    v(m, post.sigma_delta_col()) = p.sigma_delta;
    for (int k = 0; k < K; ++k) {
      for (int g = 0; g < G; ++g) v(m, post.rho_col(g, k)) = p.rho(g, k);
      v(m, post.mu_rho_col(k)) = p.mu_rho[k];
      v(m, post.sigma_rho_col(k)) = p.sigma_rho[k];
      for (int pp = 0; pp < P; ++pp) v(m, post.beta_col(pp, k)) = p.beta(pp, k);
      v(m, post.tau_col(k)) = p.tau_N[k];
    }
    v(m, post.mu_rho_base_col()) = p.mu_rho_base;
    v(m, post.sigma_rho_base_col()) = p.sigma_rho_base;
    Eigen::MatrixXd omega = p.omega_chol * p.omega_chol.transpose();
    int idx = 0;
    for (int r = 1; r < K; ++r) {
      for (int c = 0; c < r; ++c) v(m, post.omega_col(idx++)) = omega(r, c);
    }
    if ((m % config.draws_per_chain) % config.bias_thin == 0) {
      for (int k = 0; k < K; ++k) {
        for (int i = 0; i < n; ++i) post.bias(bias_row, k * n + i) = p.bias(i, k);
      }
      ++bias_row;
    }
  }

  post.names.resize(post.total_cols());
  for (int i = 0; i < n; ++i) {
    post.names[post.delta_col(i)] = fmt::format("delta[{}]", d.respondent_ids[i]);
  }
  post.names[post.sigma_delta_col()] = "sigma_delta";
  for (int k = 0; k < K; ++k) {
    for (int g = 0; g < G; ++g) {
      post.names[post.rho_col(g, k)] =
          fmt::format("rho[{},{}]", d.gov_ids[g], d.group_ids[k]);
    }
    post.names[post.mu_rho_col(k)] = fmt::format("mu_rho[{}]", d.group_ids[k]);
    post.names[post.sigma_rho_col(k)] = fmt::format("sigma_rho[{}]", d.group_ids[k]);
    for (int pp = 0; pp < P; ++pp) {
      post.names[post.beta_col(pp, k)] =
          fmt::format("beta[{},{}]", d.covariate_names[pp], d.group_ids[k]);
    }
    post.names[post.tau_col(k)] = fmt::format("tau_N[{}]", d.group_ids[k]);
  }
  post.names[post.mu_rho_base_col()] = "mu_rho_base";
  post.names[post.sigma_rho_base_col()] = "sigma_rho_base";
  {
    int idx = 0;
    for (int r = 1; r < K; ++r) {
      for (int c = 0; c < r; ++c) {
        post.names[post.omega_col(idx++)] =
            fmt::format("omega[{},{}]", d.group_ids[r], d.group_ids[c]);
      }
    }
  }
  post.bias_names.resize(n * K);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < n; ++i) {
      post.bias_names[k * n + i] =
          fmt::format("bias[{},{}]", d.respondent_ids[i], d.group_ids[k]);
    }
  }

  post.diagnostics = diagnose_matrix(post.values, config.chains, post.names);
  if (post.bias.cols() > 0 && post.bias.rows() > 0) {
    DiagnosticsTable bias_table =
        diagnose_matrix(post.bias, config.chains, post.bias_names);
    post.diagnostics.names.insert(post.diagnostics.names.end(), bias_table.names.begin(),
                                  bias_table.names.end());
    post.diagnostics.params.insert(post.diagnostics.params.end(),
                                   bias_table.params.begin(), bias_table.params.end());
  }
  post.diagnostics.divergences = res.divergences;
  post.diagnostics.total_transitions = res.total_transitions;
  post.clamp_events = model.clamp_events();
  post.diagnostics.clamp_events = post.clamp_events;
  post.divergence_warning = post.diagnostics.divergence_flag(0.05);
  post.rhat_warning = post.diagnostics.rhat_flag(1.05);
  return post;
}

}  // namespace scaleup
