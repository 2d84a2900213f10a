#include "scaleup/simgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "scaleup/chol_corr.hpp"
#include "scaleup/nsum_model.hpp"
#include "scaleup/probe_model.hpp"
#include "scaleup/rng.hpp"
#include "scaleup/stats.hpp"
#include "scaleup/weights.hpp"

namespace scaleup {

namespace {

const char* kind_word(GroupKind kind) {
  switch (kind) {
    case GroupKind::probe_both: return "ProbeBoth";
    case GroupKind::probe_direct: return "ProbeDirect";
    case GroupKind::probe_known_only: return "ProbeKnown";
    case GroupKind::target: return "Target";
  }
  return "Group";
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument(fmt::format("scenario: {}", what));
  };
  if (n < 1) fail("n must be at least 1");
  if (G < 1) fail("G must be at least 1");
  if (n < G) fail("every governorate needs a respondent (n >= G)");
  if (n_probe_both < 0 || n_probe_direct < 0 || n_probe_known < 0 || n_target < 0) {
    fail("group counts must be non-negative");
  }
  if (n_probes() < 1) fail("at least one probe group is required");
  auto check_range = [&](double lo, double hi, const char* which) {
    if (!(lo > 0.0) || !(hi < 1.0) || !(lo <= hi)) {
      fail(fmt::format("{} prevalence range must satisfy 0 < lo <= hi < 1", which));
    }
  };
  check_range(probe_prev_lo, probe_prev_hi, "probe");
  if (n_target > 0) check_range(target_prev_lo, target_prev_hi, "target");
  if (!(gov_logit_sd >= 0.0)) fail("gov_logit_sd must be non-negative");
  if (!std::isfinite(degree_log_mean)) fail("degree_log_mean must be finite");
  if (!(degree_log_sd >= 0.0)) fail("degree_log_sd must be non-negative");
  if (!(beta_sd >= 0.0)) fail("beta_sd must be non-negative");
  if (!(tau_N >= 0.0)) fail("tau_N must be non-negative");
  if (!(lkj_eta > 0.0)) fail("lkj_eta must be positive");
  if (!(membership_coverage > 0.0) || membership_coverage > 1.0) {
    fail("membership_coverage must lie in (0, 1]");
  }
  if (truncation_cap < 1 || truncation_cap > 1000000) {
    fail("truncation_cap must lie in [1, 1000000]");
  }
  if (gov_population_base < 1000 || gov_population_step < 0) {
    fail("governorate populations must be at least 1000");
  }
}

Simulated generate(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> stdnorm(0.0, 1.0);

  const int n = config.n, G = config.G, K = config.K(), P = kDesignDim;

  Simulated sim;
  SurveyDataset& ds = sim.dataset;
  GroundTruth& truth = sim.truth;
  truth.seed = seed;

  for (int g = 0; g < G; ++g) {
    ds.governorates.push_back({g + 1, fmt::format("Region {}", g + 1),
                               config.gov_population_base + config.gov_population_step * g});
  }

  std::vector<GroupKind> kinds;
  kinds.reserve(static_cast<std::size_t>(K));
  for (int j = 0; j < config.n_probe_both; ++j) kinds.push_back(GroupKind::probe_both);
  for (int j = 0; j < config.n_probe_direct; ++j) kinds.push_back(GroupKind::probe_direct);
  for (int j = 0; j < config.n_probe_known; ++j) kinds.push_back(GroupKind::probe_known_only);
  for (int j = 0; j < config.n_target; ++j) kinds.push_back(GroupKind::target);
  for (int k = 0; k < K; ++k) {
    Group grp;
    grp.id = k + 1;
    grp.kind = kinds[static_cast<std::size_t>(k)];
    grp.label = fmt::format("{} {}", kind_word(grp.kind), k + 1);
    ds.groups.push_back(std::move(grp));
  }

  // Group-level truth: log-uniform base prevalence, logit-normal spread over
  // governorates. The group's membership probability equals its prevalence.
  truth.prevalence.resize(G, K);
  for (int k = 0; k < K; ++k) {
    const bool is_target = kinds[static_cast<std::size_t>(k)] == GroupKind::target;
    const double lo = is_target ? config.target_prev_lo : config.probe_prev_lo;
    const double hi = is_target ? config.target_prev_hi : config.probe_prev_hi;
    const double log_base =
        std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng);
    const double alpha = logit(std::exp(log_base));
    for (int g = 0; g < G; ++g) {
      const double u = config.gov_logit_sd * stdnorm(rng);
      truth.prevalence(g, k) = stats::inv_logit(alpha + u);
    }
  }

  truth.beta.resize(P, K);
  for (int k = 0; k < K; ++k) {
    for (int p = 0; p < P; ++p) {
      const double sd = (p == 1) ? config.beta_sd / 25.0 : config.beta_sd;  // age column
      truth.beta(p, k) = sd * stdnorm(rng);
    }
  }

  truth.tau_N = Eigen::VectorXd::Constant(K, config.tau_N);
  Eigen::MatrixXd chol = Eigen::MatrixXd::Ones(1, 1);
  if (K > 1) chol = sample_lkj_cholesky(K, config.lkj_eta, rng);
  truth.omega = chol * chol.transpose();

  truth.delta.resize(n);
  for (int i = 0; i < n; ++i) {
    truth.delta[i] = config.degree_log_mean + config.degree_log_sd * stdnorm(rng);
  }

  // Covariates: sex Bernoulli(1/2), age Normal(42, 12^2) clipped to [18, 85],
  // nationality (0.8, 0.1, 0.05, 0.05). Governorates round-robin.
  ds.respondents.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Respondent r;
    r.id = i + 1;
    r.governorate_id = ds.governorates[static_cast<std::size_t>(i % G)].id;
    r.sex = unif(rng) < 0.5 ? Sex::male : Sex::female;
    double age = 42.0 + 12.0 * stdnorm(rng);
    age = std::clamp(age, 18.0, 85.0);
    r.age_years = age;
    const int band_lo = 18 + 10 * static_cast<int>((age - 18.0) / 10.0);
    r.age_group = fmt::format("{}-{}", band_lo, band_lo + 9);
    const double u = unif(rng);
    r.nationality = u < 0.80   ? Nationality::jordanian
                    : u < 0.90 ? Nationality::syrian
                    : u < 0.95 ? Nationality::egyptian
                               : Nationality::other;
    r.weight = 1.0;  // simple random sample of its own population
    ds.respondents.push_back(std::move(r));
  }
  truth.age_center = mean_age(ds.respondents);
  Eigen::MatrixXd z(n, P);
  for (int i = 0; i < n; ++i) {
    z.row(i) = build_design_row(ds.respondents[static_cast<std::size_t>(i)], truth.age_center)
                   .transpose();
  }

  // Correlated multiplicative bias with mean one on the natural scale.
  const auto [bias_mu, bias_tau] = bias_lognormal_params(config.tau_N);
  truth.bias.resize(n, K);
  Eigen::VectorXd eps(K);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < K; ++k) eps[k] = stdnorm(rng);
    truth.bias.row(i) = (bias_mu + bias_tau * (chol * eps).array()).transpose();
  }

  // Counts from the generative model; truncation applied last.
  ds.responses.counts.resize(n, K);
  ds.responses.truncation_cap = config.truncation_cap;
  long big_cells = 0;
  for (int i = 0; i < n; ++i) {
    const int g = i % G;
    for (int k = 0; k < K; ++k) {
      const double eta0 = truth.delta[i] + std::log(truth.prevalence(g, k)) +
                          z.row(i).dot(truth.beta.col(k));
      if (std::exp(eta0) > config.truncation_cap) ++big_cells;
      const double lambda = std::max(std::exp(eta0 + truth.bias(i, k)), 1e-300);
      int y;
      if (lambda > 1e7) {
        // Truncation swallows the entire upper tail at these rates.
        y = std::numeric_limits<int>::max() / 2;
      } else {
        y = std::poisson_distribution<int>(lambda)(rng);
      }
      ds.responses.counts(i, k) = y;
    }
  }
  ds.responses = truncate_responses(ds.responses, config.truncation_cap);
  if (2 * big_cells > static_cast<long>(n) * K) {
    truth.warnings.push_back(fmt::format(
        "expected counts exceed the truncation cap {} in {} of {} cells; truncation "
        "dominates this scenario",
        config.truncation_cap, big_cells, static_cast<long>(n) * K));
  }

  // Membership indicators for groups that carry the question.
  ds.memberships.asked.setConstant(n, K, false);
  ds.memberships.member.setConstant(n, K, false);
  for (int k = 0; k < K; ++k) {
    if (!ds.groups[static_cast<std::size_t>(k)].has_membership_question()) continue;
    for (int i = 0; i < n; ++i) {
      const bool asked =
          config.membership_coverage >= 1.0 || unif(rng) < config.membership_coverage;
      if (!asked) continue;
      ds.memberships.asked(i, k) = true;
      ds.memberships.member(i, k) = unif(rng) < truth.prevalence(i % G, k);
    }
  }

  // Known sizes for the record-bearing probe kinds, rounded from the truth.
  for (int k = 0; k < K; ++k) {
    Group& grp = ds.groups[static_cast<std::size_t>(k)];
    if (grp.kind != GroupKind::probe_both && grp.kind != GroupKind::probe_known_only) continue;
    for (int g = 0; g < G; ++g) {
      const auto pop = ds.governorates[static_cast<std::size_t>(g)].adult_population;
      const auto size = std::clamp<std::int64_t>(
          std::llround(truth.prevalence(g, k) * static_cast<double>(pop)), 1, pop - 1);
      grp.known_size[ds.governorates[static_cast<std::size_t>(g)].id] = size;
    }
  }

  // National stratum table proportional to the sample's (sex, band) shares.
  std::map<StratumKey, long> observed;
  for (const auto& r : ds.respondents) ++observed[{r.sex, r.age_group}];
  const double total_pop = static_cast<double>(ds.adult_total());
  for (const auto& [key, count] : observed) {
    ds.national_strata[key] = std::max<std::int64_t>(
        1, std::llround(static_cast<double>(count) / n * total_pop));
  }

  ds.validate();
  return sim;
}

void write_truth_csv(const Simulated& sim, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("truth: cannot open '{}' for writing", path));
  const GroundTruth& t = sim.truth;
  const SurveyDataset& ds = sim.dataset;
  out << "parameter,index1,index2,value\n";
  out << fmt::format("seed,,,{}\n", t.seed);
  out << fmt::format("age_center,,,{}\n", t.age_center);
  for (int g = 0; g < t.prevalence.rows(); ++g) {
    for (int k = 0; k < t.prevalence.cols(); ++k) {
      out << fmt::format("prevalence,{},{},{}\n", ds.governorates[static_cast<std::size_t>(g)].id,
                         ds.groups[static_cast<std::size_t>(k)].id, t.prevalence(g, k));
    }
  }
  for (int g = 0; g < t.prevalence.rows(); ++g) {
    for (int k = 0; k < t.prevalence.cols(); ++k) {
      if (!ds.groups[static_cast<std::size_t>(k)].has_membership_question()) continue;
      out << fmt::format("membership_probability,{},{},{}\n",
                         ds.governorates[static_cast<std::size_t>(g)].id,
                         ds.groups[static_cast<std::size_t>(k)].id, t.prevalence(g, k));
    }
  }
  for (int i = 0; i < t.delta.size(); ++i) {
    out << fmt::format("degree,{},,{}\n", ds.respondents[static_cast<std::size_t>(i)].id,
                       std::exp(t.delta[i]));
  }
  const std::vector<std::string> cov_names = {"male", "age", "syrian", "egyptian", "other"};
  for (int k = 0; k < t.beta.cols(); ++k) {
    for (int p = 0; p < t.beta.rows(); ++p) {
      out << fmt::format("beta,{},{},{}\n", cov_names[static_cast<std::size_t>(p)],
                         ds.groups[static_cast<std::size_t>(k)].id, t.beta(p, k));
    }
  }
  for (int k = 0; k < t.tau_N.size(); ++k) {
    out << fmt::format("tau_N,,{},{}\n", ds.groups[static_cast<std::size_t>(k)].id, t.tau_N[k]);
  }
  for (int r = 1; r < t.omega.rows(); ++r) {
    for (int c = 0; c < r; ++c) {
      out << fmt::format("omega,{},{},{}\n", ds.groups[static_cast<std::size_t>(r)].id,
                         ds.groups[static_cast<std::size_t>(c)].id, t.omega(r, c));
    }
  }
  if (!out) throw std::runtime_error(fmt::format("truth: write to '{}' failed", path));
}

namespace {

struct ReplicateOutcome {
  std::vector<SbcCellResult> cells;
  std::string error;
};

ReplicateOutcome run_replicate(const ScenarioConfig& scenario, const SbcOptions& options,
                               int r) {
  ReplicateOutcome out;
  try {
    const std::uint64_t rep_seed = derive_seed(options.seed, static_cast<std::uint64_t>(r) + 1);
    Simulated sim = generate(scenario, rep_seed);

    // Membership-model fits. Groups nobody reported membership in cannot
    // inform a logistic fit and fall back to their known sizes (if any).
    std::vector<LogisticPosterior> posteriors;
    for (const auto& grp : sim.dataset.groups) {
      if (!grp.has_membership_question()) continue;
      MembershipData md = MembershipData::extract(sim.dataset, grp.id);
      if (md.members() == 0) continue;
      SamplerConfig pc = options.probe;
      pc.seed = derive_seed(rep_seed, 100 + static_cast<std::uint64_t>(grp.id));
      posteriors.push_back(fit_probe_model(md, pc));
    }
    PrevalenceDraws prev;
    if (!posteriors.empty()) {
      prev = prevalence_draws(posteriors, sim.dataset.governorates);
    }

    NsumModel model(sim.dataset);
    SamplerConfig nc = options.nsum;
    nc.seed = derive_seed(rep_seed, 7);
    NsumPosterior post = sample_nsum(model, nc);

    // Optionally misreported known sizes, fed only to the scaling step.
    std::vector<Group> groups = sim.dataset.groups;
    if (options.known_size_scale != 1.0) {
      for (auto& grp : groups) {
        for (auto& [gov_id, size] : grp.known_size) {
          const int g = sim.dataset.governorate_index(gov_id);
          const auto pop = sim.dataset.governorates[static_cast<std::size_t>(g)].adult_population;
          size = std::clamp<std::int64_t>(
              std::llround(options.known_size_scale * static_cast<double>(size)), 1, pop - 1);
        }
        if (grp.known_size_national.has_value()) {
          grp.known_size_national = std::max<std::int64_t>(
              1, std::llround(options.known_size_scale *
                              static_cast<double>(*grp.known_size_national)));
        }
      }
    }

    ProbePolicy policy =
        make_policy(options.policy_mode, groups, sim.dataset.governorates, prev);
    ScaledDraws scaled = scale_draws(post, prev, groups, sim.dataset.governorates, policy,
                                     options.scaling);

    const int G = scaled.n_governorates();
    const int K = scaled.n_groups();
    std::vector<double> series;
    for (int g = 0; g < G; ++g) {
      for (int k = 0; k < K; ++k) {
        const Eigen::VectorXd rt = scaled.rho_tilde(g, k);
        series.assign(rt.data(), rt.data() + rt.size());
        for (double& v : series) v = std::exp(v);
        const double post_mean = stats::mean(series);
        std::sort(series.begin(), series.end());
        const double q_lo = stats::quantile_sorted(series, options.lower);
        const double q_hi = stats::quantile_sorted(series, options.upper);
        const double truth_p = sim.truth.prevalence(g, k);
        SbcCellResult cell;
        cell.replicate = r;
        cell.gov_id = scaled.gov_ids[static_cast<std::size_t>(g)];
        cell.group_id = scaled.group_ids[static_cast<std::size_t>(k)];
        cell.kind = scaled.group_kinds[static_cast<std::size_t>(k)];
        cell.true_prevalence = truth_p;
        cell.q_lo = q_lo;
        cell.q_hi = q_hi;
        cell.post_mean = post_mean;
        cell.hit = truth_p >= q_lo && truth_p <= q_hi;
        out.cells.push_back(cell);
      }
    }
  } catch (const std::exception& e) {
    out.cells.clear();
    out.error = e.what();
  }
  return out;
}

}  // namespace

double SbcReport::overall_coverage() const {
  if (cells.empty()) return std::numeric_limits<double>::quiet_NaN();
  long hits = 0;
  for (const auto& c : cells) hits += c.hit ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(cells.size());
}

SbcReport sbc_experiment(const ScenarioConfig& scenario, const SbcOptions& options) {
  scenario.validate();
  if (options.replicates < 1) {
    throw std::invalid_argument("sbc: replicates must be at least 1");
  }
  if (!(options.lower > 0.0) || !(options.lower < options.upper) || !(options.upper < 1.0)) {
    throw std::invalid_argument("sbc: quantile levels must satisfy 0 < lower < upper < 1");
  }
  if (options.threads < 1) throw std::invalid_argument("sbc: threads must be at least 1");
  if (options.max_failure_fraction < 0.0 || options.max_failure_fraction > 1.0) {
    throw std::invalid_argument("sbc: max_failure_fraction must lie in [0, 1]");
  }

  std::vector<ReplicateOutcome> outcomes(static_cast<std::size_t>(options.replicates));
  std::mutex progress_mutex;
  auto report_progress = [&](int r, const ReplicateOutcome& outcome) {
    if (!options.on_replicate) return;
    std::lock_guard<std::mutex> lock(progress_mutex);
    options.on_replicate(r, outcome.error.empty()
                                ? fmt::format("ok ({} cells)", outcome.cells.size())
                                : fmt::format("failed: {}", outcome.error));
  };

  const int workers = std::min(options.threads, options.replicates);
  if (workers <= 1) {
    for (int r = 0; r < options.replicates; ++r) {
      outcomes[static_cast<std::size_t>(r)] = run_replicate(scenario, options, r);
      report_progress(r, outcomes[static_cast<std::size_t>(r)]);
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          const int r = next.fetch_add(1);
          if (r >= options.replicates) break;
          outcomes[static_cast<std::size_t>(r)] = run_replicate(scenario, options, r);
          report_progress(r, outcomes[static_cast<std::size_t>(r)]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  SbcReport report;
  report.replicates = options.replicates;
  report.lower = options.lower;
  report.upper = options.upper;
  report.scaling = options.scaling;
  for (int r = 0; r < options.replicates; ++r) {
    auto& outcome = outcomes[static_cast<std::size_t>(r)];
    if (!outcome.error.empty()) {
      report.failures.push_back({r, outcome.error});
      continue;
    }
    report.cells.insert(report.cells.end(), outcome.cells.begin(), outcome.cells.end());
  }

  const double failure_fraction =
      static_cast<double>(report.failures.size()) / options.replicates;
  if (failure_fraction > options.max_failure_fraction) {
    std::string detail = report.failures.empty() ? "" : report.failures.front().message;
    throw std::runtime_error(fmt::format(
        "sbc: {} of {} replicates failed (more than {:.0f}%); first failure: {}",
        report.failures.size(), options.replicates, 100.0 * options.max_failure_fraction,
        detail));
  }

  for (GroupKind kind : {GroupKind::probe_direct, GroupKind::probe_known_only,
                         GroupKind::probe_both, GroupKind::target}) {
    long cells = 0, hits = 0;
    for (const auto& c : report.cells) {
      if (c.kind != kind) continue;
      ++cells;
      hits += c.hit ? 1 : 0;
    }
    if (cells == 0) continue;
    SbcKindCoverage cov;
    cov.kind = kind;
    cov.cells = cells;
    cov.hits = hits;
    cov.coverage = static_cast<double>(hits) / static_cast<double>(cells);
    cov.mc_error = std::sqrt(std::max(cov.coverage * (1.0 - cov.coverage), 1e-12) /
                             static_cast<double>(cells));
    report.coverage.push_back(cov);
  }
  return report;
}

void write_sbc_csv(const SbcReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("sbc: cannot open '{}' for writing", path));
  out << "replicate,governorate,group,kind,true_prevalence,q_lo,q_hi,post_mean,hit\n";
  for (const auto& c : report.cells) {
    out << fmt::format("{},{},{},{},{},{},{},{},{}\n", c.replicate, c.gov_id, c.group_id,
                       to_string(c.kind), c.true_prevalence, c.q_lo, c.q_hi, c.post_mean,
                       c.hit ? 1 : 0);
  }
  if (!out) throw std::runtime_error(fmt::format("sbc: write to '{}' failed", path));
}

std::string sbc_text_summary(const SbcReport& report) {
  std::string text = "Simulation-based calibration report\n";
  text += fmt::format("  replicates: {} ({} failed)\n", report.replicates,
                      report.failures.size());
  text += fmt::format("  interval: central {:.0f}% ({} to {} quantiles)\n",
                      100.0 * (report.upper - report.lower), report.lower, report.upper);
  text += "  coverage by group kind:\n";
  for (const auto& cov : report.coverage) {
    text += fmt::format("    {:<16} {:.3f}  ({} of {} cells, MC error {:.3f})\n",
                        to_string(cov.kind), cov.coverage, cov.hits, cov.cells, cov.mc_error);
  }
  if (!report.cells.empty()) {
    text += fmt::format("  overall: {:.3f} over {} cells\n", report.overall_coverage(),
                        report.total_cells());
  }
  for (const auto& f : report.failures) {
    text += fmt::format("  replicate {} failed: {}\n", f.replicate, f.message);
  }
  text += "  note: cells within a replicate share one dataset, so they are correlated; "
          "the MC error treats them as independent and is approximate.\n";
  if (report.scaling == ScalingMode::averaged_gamma) {
    text += "  caveat: averaged-gamma scaling ignores reference-prevalence uncertainty; "
            "these intervals are anti-conservative.\n";
  }
  return text;
}

}  // namespace scaleup
