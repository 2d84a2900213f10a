// Acceptance gate for the scale-up pipeline. Runs eleven independent
// criteria, prints exactly one [PASS]/[FAIL] line per criterion with the
// measured numbers and pinned tolerances, and exits 0 only if all pass.
//
// Oracle notes:
//   C1  [DERIVED] central finite differences of the log posterior.
//   C2  [DERIVED] the likelihood depends on delta and rho only through
//       delta_i + rho_{g,k}, so (delta + a, rho - a) leaves it unchanged.
//   C3  [DERIVED] lognormal mean identity E[exp(b)] = exp(mu + tau^2/2).
//   C4  [TRIVIAL/DERIVED] closed-form shift constants and conservation.
//   C5  [DERIVED] three-dimensional trapezoid integration of the exact
//       fixed-sigma posterior.
//   C6, C7, C10, C11 [DERIVED] generative ground truth from the simulator.
//   C8, C9 [PAPER] adult total 6,873,239; (1 - 0.002)^500 ~ 0.367.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "scaleup/cache.hpp"
#include "scaleup/data.hpp"
#include "scaleup/ingest.hpp"
#include "scaleup/nsum_model.hpp"
#include "scaleup/probe_model.hpp"
#include "scaleup/scaling.hpp"
#include "scaleup/simgen.hpp"
#include "scaleup/stats.hpp"
#include "scaleup/weights.hpp"

namespace fs = std::filesystem;
using namespace scaleup;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// C1 + C2: gradient and shift-invariance on a small simulated survey.

ScenarioConfig tiny_scenario_5_3_2() {
  ScenarioConfig sc;
  sc.n = 5;
  sc.G = 2;
  sc.n_probe_both = 1;
  sc.n_probe_direct = 0;
  sc.n_probe_known = 1;
  sc.n_target = 1;
  return sc;
}

Outcome c1_gradient() {
  const auto t0 = std::chrono::steady_clock::now();
  const Simulated sim = generate(tiny_scenario_5_3_2(), 101);
  NsumModel model(sim.dataset);
  const int dim = model.dim();

  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd(0.0, 0.4);
  Eigen::VectorXd g(dim), gp(dim), gm(dim);
  const double h = 1e-5;
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd q(dim);
    for (int j = 0; j < dim; ++j) q[j] = nd(rng);
    const double lp = model.logp_grad(q, g);
    if (!std::isfinite(lp)) return {false, fmt::format("non-finite log posterior at rep {}", rep)};
    for (int j = 0; j < dim; ++j) {
      Eigen::VectorXd qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      const double fd = (model.logp_grad(qp, gp) - model.logp_grad(qm, gm)) / (2.0 * h);
      const double rel = std::abs(fd - g[j]) / std::max({1.0, std::abs(fd), std::abs(g[j])});
      worst = std::max(worst, rel);
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-5 && secs < 10.0;
  return {pass, fmt::format("n=5 K=3 G=2, 20 points x {} coords, max rel err {:.2e} "
                            "(tol 1e-5), {:.1f} s (cap 10 s)",
                            dim, worst, secs)};
}

Outcome c2_shift_invariance() {
  const Simulated sim = generate(tiny_scenario_5_3_2(), 101);
  NsumModel model(sim.dataset);
  std::mt19937_64 rng(202);
  std::normal_distribution<double> nd(0.0, 0.4);
  Eigen::VectorXd q(model.dim());
  for (int j = 0; j < model.dim(); ++j) q[j] = nd(rng);
  const NsumParams base = model.unpack(q);
  const double lik = model.weighted_loglik(base);

  std::normal_distribution<double> shift(0.0, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    const double a = shift(rng);
    NsumParams moved = base;
    moved.delta.array() += a;
    moved.rho.array() -= a;
    const double lik_moved = model.weighted_loglik(moved);
    worst = std::max(worst, std::abs(lik_moved - lik) / std::max(1.0, std::abs(lik)));
  }
  return {worst <= 1e-10,
          fmt::format("likelihood(delta+a, rho-a) vs likelihood(delta, rho), 10 shifts, "
                      "max rel diff {:.2e} (tol 1e-10)",
                      worst)};
}

// ---------------------------------------------------------------------------
// C3: mean-one multiplicative bias.

Outcome c3_mean_one_bias() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> ud(0.01, 5.0);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto [mu, tau] = bias_lognormal_params(ud(rng));
    worst = std::max(worst, std::abs(std::exp(mu + 0.5 * tau * tau) - 1.0));
  }
  if (worst >= 1e-12) {
    return {false, fmt::format("algebraic identity exp(mu + tau^2/2) = 1 violated by {:.2e}", worst)};
  }

  const auto [mu, tau] = bias_lognormal_params(0.5);
  std::normal_distribution<double> nd(mu, tau);
  stats::RunningMoments mom;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) mom.add(std::exp(nd(rng)));
  const double se = std::sqrt(mom.variance() / n);
  const double gap = std::abs(mom.mean - 1.0);
  return {gap < 3.0 * se,
          fmt::format("identity within {:.1e} over 100 tau_N; MC mean exp(b) = {:.5f} at "
                      "tau_N=0.5, |mean-1| = {:.1e} < 3 SE = {:.1e} over 1e6 draws",
                      worst, mom.mean, gap, 3.0 * se)};
}

// ---------------------------------------------------------------------------
// C4: scaling identities on hand-built posteriors.

NsumPosterior c4_posterior(int M, unsigned seed) {
  NsumPosterior post;
  post.n = 3;
  post.K = 3;
  post.G = 2;
  post.P = 1;
  post.chains = 1;
  post.draws_per_chain = M;
  post.respondent_ids = {101, 102, 103};
  post.group_ids = {1, 2, 3};
  post.group_labels = {"Teachers", "Doctors", "Hidden"};
  post.gov_ids = {10, 20};
  post.gov_names = {"Amman", "Zarqa"};
  post.covariate_names = {"male"};
  post.resp_gov = {0, 1, 0};
  post.resp_weights = Eigen::Vector3d(1.0, 2.0, 0.5);
  post.values = Eigen::MatrixXd::Zero(M, post.total_cols());
  if (seed != 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 0.8);
    for (int m = 0; m < M; ++m) {
      for (int i = 0; i < post.n; ++i) post.values(m, post.delta_col(i)) = nd(rng) + 1.0;
      for (int g = 0; g < post.G; ++g) {
        for (int k = 0; k < post.K; ++k) post.values(m, post.rho_col(g, k)) = nd(rng) - 4.0;
      }
    }
  }
  return post;
}

std::vector<Group> c4_groups() {
  Group teachers;
  teachers.id = 1;
  teachers.label = "Teachers";
  teachers.kind = GroupKind::probe_both;
  teachers.known_size = {{10, 20000}, {20, 5000}};
  Group doctors;
  doctors.id = 2;
  doctors.label = "Doctors";
  doctors.kind = GroupKind::probe_direct;
  Group hidden;
  hidden.id = 3;
  hidden.label = "Hidden";
  hidden.kind = GroupKind::target;
  return {teachers, doctors, hidden};
}

std::vector<Governorate> c4_governorates() {
  return {{10, "Amman", 1000000}, {20, "Zarqa", 500000}};
}

PrevalenceDraws c4_prevalence(int R, unsigned seed) {
  PrevalenceDraws prev;
  prev.group_ids = {1, 2};
  prev.group_labels = {"Teachers", "Doctors"};
  prev.gov_ids = {10, 20};
  prev.gov_names = {"Amman", "Zarqa"};
  prev.gov_populations = {1000000.0, 500000.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.004, 0.09);
  for (int j = 0; j < 2; ++j) {
    Eigen::MatrixXd gamma(R, 2);
    for (int r = 0; r < R; ++r) {
      for (int g = 0; g < 2; ++g) gamma(r, g) = ud(rng);
    }
    prev.gamma.push_back(gamma);
    prev.sizes.push_back(gamma);
  }
  return prev;
}

Outcome c4_scaling_identities() {
  // (a) gamma = exp(rho): every shift constant is exactly zero.
  const int M = 4, R = 3;
  NsumPosterior post = c4_posterior(M, 0);
  Eigen::MatrixXd rho_const(2, 3);
  rho_const << -3.0, -4.5, -6.0, -2.5, -5.0, -7.0;
  for (int m = 0; m < M; ++m) {
    for (int g = 0; g < 2; ++g) {
      for (int k = 0; k < 3; ++k) post.values(m, post.rho_col(g, k)) = rho_const(g, k);
    }
    for (int i = 0; i < 3; ++i) post.values(m, post.delta_col(i)) = 0.5 + 0.25 * i + 0.1 * m;
  }
  PrevalenceDraws prev = c4_prevalence(R, 7);
  for (int j = 0; j < 2; ++j) {
    for (int r = 0; r < R; ++r) {
      for (int g = 0; g < 2; ++g) prev.gamma[static_cast<std::size_t>(j)](r, g) = std::exp(rho_const(g, j));
    }
  }
  ProbePolicy policy{ProbeMode::direct_only, {1, 2}};
  ScaledDraws same = scale_draws(post, prev, c4_groups(), c4_governorates(), policy);
  for (int g = 0; g < 2; ++g) {
    if (!(same.shift_grid(g).array() == 0.0).all()) {
      return {false, fmt::format("c != 0 in governorate {} although gamma = exp(rho)", g)};
    }
  }

  // (b) pairwise conservation of rho + delta across the fan-out (tol 1e-12).
  const int M2 = 6, R2 = 4;
  NsumPosterior rnd = c4_posterior(M2, 42);
  PrevalenceDraws rprev = c4_prevalence(R2, 9);
  ProbePolicy pol2{ProbeMode::direct_first_known_otherwise, {1, 2}};
  ScaledDraws scaled = scale_draws(rnd, rprev, c4_groups(), c4_governorates(), pol2);
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    const int g = scaled.resp_gov[static_cast<std::size_t>(i)];
    const Eigen::VectorXd dt = scaled.delta_tilde(i);
    for (int k = 0; k < 3; ++k) {
      const Eigen::VectorXd rt = scaled.rho_tilde(g, k);
      for (int m = 0; m < M2; ++m) {
        const double expected =
            rnd.values(m, rnd.rho_col(g, k)) + rnd.values(m, rnd.delta_col(i));
        for (int r = 0; r < R2; ++r) {
          const long idx = static_cast<long>(m) * R2 + r;
          const double rel =
              std::abs(rt[idx] + dt[idx] - expected) / std::max(1.0, std::abs(expected));
          worst = std::max(worst, rel);
        }
      }
    }
  }
  if (worst > 1e-12) {
    return {false, fmt::format("rho~ + delta~ drifts from rho + delta by {:.2e} (tol 1e-12)", worst)};
  }

  // (c) fan-out length is exactly M * R under full_bootstrap.
  const long want = static_cast<long>(M2) * R2;
  const bool len_ok = scaled.total_draws() == want && scaled.rho_tilde(0, 0).size() == want &&
                      scaled.delta_tilde(0).size() == want;
  return {len_ok, fmt::format("c = 0 bitwise when gamma = exp(rho); conservation within {:.1e} "
                              "(tol 1e-12); fan-out length {} = M*R = {}x{}",
                              worst, scaled.total_draws(), M2, R2)};
}

// ---------------------------------------------------------------------------
// C5: zero-count shrinkage vs exact trapezoid posterior, sigma_u pinned.

MembershipData c5_membership(const std::vector<int>& counts, const std::vector<int>& members) {
  MembershipData d;
  d.group_id = 1;
  d.group_label = "Probe1";
  d.G = static_cast<int>(counts.size());
  for (int g = 0; g < d.G; ++g) {
    d.gov_ids.push_back(g + 1);
    d.gov_names.push_back("Gov" + std::to_string(g + 1));
    for (int i = 0; i < counts[g]; ++i) {
      d.indicators.push_back(i < members[g] ? 1 : 0);
      d.gov.push_back(g);
    }
  }
  d.weights = Eigen::VectorXd::Ones(d.size());
  return d;
}

// Exact posterior mean of inverse-logit(theta_b) when theta = alpha + u is
// trivariate normal with variance V0 + A^2 and covariance V0 (alpha and u
// are the only free parameter blocks once sigma_u is pinned at A), against
// three binomial likelihoods, on a trapezoid grid.
double c5_grid_oracle(const std::vector<int>& n_g, const std::vector<int>& y_g, int b, double A,
                      double var_loc, double lo, double hi, int cells) {
  const double h = (hi - lo) / cells;
  const int pts = cells + 1;
  // Inverse of A^2 I + V0 J for 3 governorates: (1/A^2)(I - V0/(A^2+3V0) J).
  const double ia = 1.0 / (A * A);
  const double jc = var_loc / (A * A + 3.0 * var_loc);

  std::vector<std::array<double, 3>> lik(pts);
  std::vector<double> theta(pts), w(pts), logit_inv(pts);
  for (int i = 0; i < pts; ++i) {
    theta[i] = lo + i * h;
    w[i] = (i == 0 || i == cells) ? 0.5 : 1.0;
    for (int g = 0; g < 3; ++g) {
      lik[i][static_cast<std::size_t>(g)] =
          y_g[g] * theta[i] - n_g[g] * stats::log1p_exp(theta[i]);
    }
    logit_inv[i] = stats::inv_logit(theta[i]);
  }

  double mass = 0.0, moment = 0.0;
  for (int i = 0; i < pts; ++i) {
    for (int j = 0; j < pts; ++j) {
      const double sum_ij = theta[i] + theta[j];
      const double sq_ij = theta[i] * theta[i] + theta[j] * theta[j];
      const double lik_ij = lik[i][0] + lik[j][1];
      const double w_ij = w[i] * w[j];
      for (int k = 0; k < pts; ++k) {
        const double s = sum_ij + theta[k];
        const double quad = -0.5 * ia * (sq_ij + theta[k] * theta[k] - jc * s * s);
        const double f = std::exp(quad + lik_ij + lik[k][2]);
        const double th_b = (b == 0) ? logit_inv[i] : (b == 1) ? logit_inv[j] : logit_inv[k];
        mass += w_ij * w[k] * f;
        moment += w_ij * w[k] * f * th_b;
      }
    }
  }
  return moment / mass;
}

std::pair<double, double> c5_gamma_mean_se(const LogisticPosterior& post, int g) {
  Eigen::VectorXd draws(post.draws());
  for (int m = 0; m < post.draws(); ++m) {
    draws[m] =
        stats::inv_logit(post.values(m, post.alpha_col()) + post.values(m, post.u_col(g)));
  }
  const ParamDiagnostics diag = diagnose_scalar(draws, post.chains);
  const double mean = draws.mean();
  const double sd = std::sqrt((draws.array() - mean).square().sum() / (draws.size() - 1));
  return {mean, sd / std::sqrt(std::max(1.0, diag.ess_bulk))};
}

Outcome c5_zero_count_shrinkage() {
  // Three governorates; the middle one reports zero members out of 40.
  const std::vector<int> n_g = {160, 40, 100};
  const std::vector<int> y_g = {4, 0, 3};
  const double A = 1.5;

  MembershipData d = c5_membership(n_g, y_g);
  ProbeModelOptions opt;
  opt.fixed_sigma_u = A;
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 600;
  cfg.draws_per_chain = 900;
  cfg.seed = 33;
  const LogisticPosterior post = fit_probe_model(d, cfg, opt);
  if (post.rhat_warning) return {false, "sampler did not converge on the shrinkage fixture"};

  const auto [mean_b, se_b] = c5_gamma_mean_se(post, 1);
  const double oracle = c5_grid_oracle(n_g, y_g, 1, A, 100.0, -16.0, 4.0, 250);
  const double pooled = (4.0 + 0.0 + 3.0) / (160.0 + 40.0 + 100.0);

  const bool pass = mean_b > 0.0 && mean_b < pooled && std::abs(mean_b - oracle) < 3.0 * se_b;
  return {pass, fmt::format("posterior mean gamma = {:.5f} vs exact {:.5f} "
                            "(|diff| = {:.1e} < 3 MC SE = {:.1e}); 0 < mean < pooled {:.5f}",
                            mean_b, oracle, std::abs(mean_b - oracle), 3.0 * se_b, pooled)};
}

// ---------------------------------------------------------------------------
// C6 + C11: end-to-end recovery on the default simulated scenario, then the
// probe-policy comparison on the same fit.

struct EndToEnd {
  Simulated sim;
  NsumPosterior nsum;
  PrevalenceDraws prevalence;
};

EndToEnd fit_end_to_end() {
  EndToEnd e;
  e.sim = generate(ScenarioConfig{}, 606);  // n=200, G=3, K=8 (5 probe / 3 target)

  SamplerConfig probe_cfg;
  probe_cfg.chains = 2;
  probe_cfg.warmup = 300;
  probe_cfg.draws_per_chain = 250;
  probe_cfg.seed = 11;
  const std::vector<LogisticPosterior> probes =
      fit_all_probe_models(e.sim.dataset, probe_cfg);
  e.prevalence = prevalence_draws(probes, e.sim.dataset.governorates);

  SamplerConfig nsum_cfg;
  nsum_cfg.chains = 4;
  nsum_cfg.warmup = 500;
  nsum_cfg.draws_per_chain = 500;  // M = 2000 post-warmup
  nsum_cfg.seed = 12;
  NsumModel model(e.sim.dataset);
  e.nsum = sample_nsum(model, nsum_cfg);
  return e;
}

Outcome c6_recovery(const EndToEnd& e, double secs) {
  const ProbePolicy policy = make_policy(ProbeMode::direct_first_known_otherwise,
                                         e.sim.dataset.groups, e.sim.dataset.governorates,
                                         e.prevalence);
  const ScaledDraws scaled =
      scale_draws(e.nsum, e.prevalence, e.sim.dataset.groups, e.sim.dataset.governorates,
                  policy, ScalingMode::full_bootstrap);

  const int G = e.sim.dataset.n_governorates();
  const int K = e.sim.dataset.n_groups();
  int in_interval = 0, within_3sd = 0;
  for (int g = 0; g < G; ++g) {
    for (int k = 0; k < K; ++k) {
      const Eigen::VectorXd rt = scaled.rho_tilde(g, k);
      std::vector<double> p(static_cast<std::size_t>(rt.size()));
      stats::RunningMoments mom;
      for (long idx = 0; idx < rt.size(); ++idx) {
        p[static_cast<std::size_t>(idx)] = std::exp(rt[idx]);
        mom.add(p[static_cast<std::size_t>(idx)]);
      }
      std::sort(p.begin(), p.end());
      const double lo = stats::quantile_sorted(p, 0.025);
      const double hi = stats::quantile_sorted(p, 0.975);
      const double truth = e.sim.truth.prevalence(g, k);
      if (truth >= lo && truth <= hi) ++in_interval;
      if (std::abs(mom.mean - truth) <= 3.0 * std::sqrt(mom.variance())) ++within_3sd;
    }
  }
  const int cells = G * K;
  const double frac_interval = static_cast<double>(in_interval) / cells;
  const double frac_3sd = static_cast<double>(within_3sd) / cells;
  const bool pass = frac_interval >= 0.85 && frac_3sd >= 0.95 && secs < 600.0;
  return {pass, fmt::format("M={} draws; truth in central 95% for {}/{} cells ({:.0f}%, need "
                            ">=85%); within 3 SD for {}/{} ({:.0f}%, need >=95%); fit+scale "
                            "{:.0f} s (cap 600 s)",
                            e.nsum.draws(), in_interval, cells, 100.0 * frac_interval,
                            within_3sd, cells, 100.0 * frac_3sd, secs)};
}

Outcome c11_policy_comparison(const EndToEnd& e) {
  SummaryOptions opts;
  std::vector<SummaryTable> tables;
  for (const ProbeMode mode : {ProbeMode::direct_first_known_otherwise,
                               ProbeMode::known_first_direct_otherwise}) {
    const ProbePolicy policy =
        make_policy(mode, e.sim.dataset.groups, e.sim.dataset.governorates, e.prevalence);
    const ScaledDraws scaled =
        scale_draws(e.nsum, e.prevalence, e.sim.dataset.groups, e.sim.dataset.governorates,
                    policy, ScalingMode::full_bootstrap);
    tables.push_back(adjusted_target_size(scaled, opts));
  }
  const SummaryTable& direct = tables[0];
  const SummaryTable& known = tables[1];
  if (direct.rows.size() != known.rows.size() || direct.rows.empty()) {
    return {false, "policy tables differ in shape"};
  }
  int overlap = 0;
  double width_direct = 0.0, width_known = 0.0;
  for (std::size_t i = 0; i < direct.rows.size(); ++i) {
    const SummaryRow& a = direct.rows[i];
    const SummaryRow& b = known.rows[i];
    if (a.governorate_id != b.governorate_id || a.group_id != b.group_id) {
      return {false, "policy tables are not aligned"};
    }
    if (std::max(a.q025, b.q025) <= std::min(a.q975, b.q975)) ++overlap;
    width_direct += a.q975 - a.q025;
    width_known += b.q975 - b.q025;
  }
  const double frac = static_cast<double>(overlap) / direct.rows.size();
  width_direct /= direct.rows.size();
  width_known /= known.rows.size();
  const bool pass = frac >= 0.90 && width_direct >= width_known;
  return {pass, fmt::format("target-size intervals overlap in {}/{} cells ({:.0f}%, need "
                            ">=90%); mean width direct-first {:.0f} >= known-first {:.0f}",
                            overlap, direct.rows.size(), 100.0 * frac, width_direct,
                            width_known)};
}

// ---------------------------------------------------------------------------
// C7: simulation-based calibration coverage.

Outcome c7_sbc() {
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioConfig sc;
  sc.n = 70;
  sc.G = 2;
  sc.n_probe_both = 1;
  sc.n_probe_direct = 0;
  sc.n_probe_known = 1;
  sc.n_target = 1;
  sc.probe_prev_lo = 0.08;
  sc.probe_prev_hi = 0.2;
  sc.degree_log_sd = 0.3;
  sc.tau_N = 0.3;

  SbcOptions opt;
  opt.replicates = 20;
  opt.seed = 707;
  opt.nsum.chains = 2;
  opt.nsum.warmup = 250;
  opt.nsum.draws_per_chain = 200;
  opt.probe.chains = 2;
  opt.probe.warmup = 250;
  opt.probe.draws_per_chain = 200;

  const SbcReport report = sbc_experiment(sc, opt);
  const double secs = seconds_since(t0);
  const double coverage = report.overall_coverage();
  const bool pass = coverage >= 0.78 && coverage <= 0.98 && secs < 1800.0 &&
                    report.failures.empty();
  return {pass, fmt::format("20 replicates, {} cells, central 90% coverage {:.3f} "
                            "(window [0.78, 0.98]), {} failures, {:.0f} s (cap 1800 s)",
                            report.total_cells(), coverage, report.failures.size(), secs)};
}

// ---------------------------------------------------------------------------
// C8 + C9: paper-anchored numeric checks.

Outcome c8_yearbook() {
  const char* env = std::getenv("SCALEUP_DATA");
  const fs::path dir = env ? fs::path(env) : fs::path("data");
  const fs::path path = dir / "jordan_yearbook_2023.csv";
  if (!fs::exists(path)) return {false, fmt::format("yearbook fixture '{}' not found", path.string())};
  const std::int64_t total = adult_population_from_yearbook(read_yearbook_bands(path.string()));
  return {total == 6873239,
          fmt::format("adult_population_from_yearbook = {} (expect 6873239 exactly)", total)};
}

Outcome c9_zero_membership() {
  const double analytic = std::pow(1.0 - 0.002, 500);
  std::mt19937_64 rng(909);
  std::bernoulli_distribution member(0.002);
  int zero_samples = 0;
  for (int s = 0; s < 1000; ++s) {
    int members = 0;
    for (int i = 0; i < 500; ++i) members += member(rng) ? 1 : 0;
    zero_samples += (members == 0) ? 1 : 0;
  }
  const double freq = zero_samples / 1000.0;
  return {std::abs(freq - analytic) <= 0.04,
          fmt::format("P(no members) at p=0.002, n=500: empirical {:.3f} vs (1-p)^500 = {:.3f} "
                      "(tol 0.04)",
                      freq, analytic)};
}

// ---------------------------------------------------------------------------
// C10: byte-identical reruns.

struct RunArtifacts {
  std::string probe_cache, nsum_cache, prevalence_csv, size_csv, degree_csv, target_csv;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunArtifacts c10_run(const Simulated& sim, const fs::path& dir) {
  fs::create_directories(dir);
  SamplerConfig probe_cfg;
  probe_cfg.chains = 2;
  probe_cfg.warmup = 200;
  probe_cfg.draws_per_chain = 150;
  probe_cfg.seed = 5;
  const std::vector<LogisticPosterior> probes = fit_all_probe_models(sim.dataset, probe_cfg);
  write_probe_cache(probes, (dir / "probe.bin").string());

  SamplerConfig nsum_cfg = probe_cfg;
  nsum_cfg.seed = 6;
  NsumModel model(sim.dataset);
  const NsumPosterior post = sample_nsum(model, nsum_cfg);
  write_nsum_cache(post, (dir / "nsum.bin").string());

  const PrevalenceDraws prev = prevalence_draws(probes, sim.dataset.governorates);
  const ProbePolicy policy = make_policy(ProbeMode::direct_first_known_otherwise,
                                         sim.dataset.groups, sim.dataset.governorates, prev);
  const ScaledDraws scaled = scale_draws(post, prev, sim.dataset.groups,
                                         sim.dataset.governorates, policy);
  const SummaryOptions opts;
  write_summary_csv(summarize(scaled, Estimand::prevalence, opts), (dir / "prev.csv").string());
  write_summary_csv(summarize(scaled, Estimand::size, opts), (dir / "size.csv").string());
  write_summary_csv(summarize(scaled, Estimand::degree, opts), (dir / "degree.csv").string());
  write_summary_csv(adjusted_target_size(scaled, opts), (dir / "target.csv").string());

  RunArtifacts a;
  a.probe_cache = slurp(dir / "probe.bin");
  a.nsum_cache = slurp(dir / "nsum.bin");
  a.prevalence_csv = slurp(dir / "prev.csv");
  a.size_csv = slurp(dir / "size.csv");
  a.degree_csv = slurp(dir / "degree.csv");
  a.target_csv = slurp(dir / "target.csv");
  return a;
}

Outcome c10_determinism() {
  ScenarioConfig sc;
  sc.n = 80;
  sc.G = 2;
  sc.n_probe_both = 1;
  sc.n_probe_direct = 0;
  sc.n_probe_known = 1;
  sc.n_target = 1;
  sc.probe_prev_lo = 0.08;
  sc.probe_prev_hi = 0.2;
  const Simulated sim = generate(sc, 1010);

  const fs::path base = fs::temp_directory_path() / "scaleup_acceptance_c10";
  fs::remove_all(base);
  const RunArtifacts a = c10_run(sim, base / "run_a");
  const RunArtifacts b = c10_run(sim, base / "run_b");

  const bool caches = a.probe_cache == b.probe_cache && a.nsum_cache == b.nsum_cache;
  const bool summaries = a.prevalence_csv == b.prevalence_csv && a.size_csv == b.size_csv &&
                         a.degree_csv == b.degree_csv && a.target_csv == b.target_csv;
  return {caches && summaries,
          fmt::format("two identical runs: posterior caches byte-identical = {}, all four "
                      "summary tables byte-identical = {}",
                      caches, summaries)};
}

}  // namespace

int main() {
  int passed = 0, failed = 0;
  const auto report = [&](int id, const char* name, const Outcome& o) {
    fmt::print("[{}] C{:<2} {}: {}\n", o.pass ? "PASS" : "FAIL", id, name, o.detail);
    std::fflush(stdout);
    (o.pass ? passed : failed) += 1;
  };

  report(1, "gradient vs central differences", c1_gradient());
  report(2, "delta/rho shift invariance", c2_shift_invariance());
  report(3, "mean-one multiplicative bias", c3_mean_one_bias());
  report(4, "scaling identities", c4_scaling_identities());
  report(5, "zero-count shrinkage vs exact posterior", c5_zero_count_shrinkage());

  const auto t6 = std::chrono::steady_clock::now();
  const EndToEnd e = fit_end_to_end();
  report(6, "end-to-end prevalence recovery", c6_recovery(e, seconds_since(t6)));

  report(7, "simulation-based calibration coverage", c7_sbc());
  report(8, "yearbook adult total", c8_yearbook());
  report(9, "zero-membership probability", c9_zero_membership());
  report(10, "byte-identical reruns", c10_determinism());
  report(11, "probe-policy comparison", c11_policy_comparison(e));

  fmt::print("ACCEPTANCE: {}/11 criteria passed\n", passed);
  return failed == 0 ? 0 : 1;
}
