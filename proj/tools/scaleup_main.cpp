// scaleup — command-line front end for the small-area network scale-up
// pipeline. Subcommands: validate, weights, fit-probe, fit-nsum, scale,
// summarize, simulate, sbc. One JSON configuration file drives every
// command; a handful of flags override the common knobs. Every command that
// writes files also writes a manifest with the config hash, input hashes,
// seed, and tool version.
//
// Exit codes: 0 success; 2 input/validation error; 3 success with
// diagnostic warnings (outputs are still written).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "scaleup/cache.hpp"
#include "scaleup/data.hpp"
#include "scaleup/ingest.hpp"
#include "scaleup/manifest.hpp"
#include "scaleup/nsum_model.hpp"
#include "scaleup/probe_model.hpp"
#include "scaleup/scaling.hpp"
#include "scaleup/simgen.hpp"
#include "scaleup/stats.hpp"
#include "scaleup/weights.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace scaleup;

namespace {

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  DatasetPaths inputs;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  int threads = 1;
  int truncation_cap = 100;
  bool lenient_ingest = false;

  SamplerConfig nsum_sampler;
  SamplerConfig probe_sampler;
  bool probe_weighted_likelihood = false;
  bool normalize_weights = true;

  ProbeMode policy = ProbeMode::direct_first_known_otherwise;
  std::vector<ProbeMode> policies = {ProbeMode::direct_first_known_otherwise,
                                     ProbeMode::known_first_direct_otherwise};
  ScalingMode scaling = ScalingMode::full_bootstrap;
  SummaryOptions summary;

  std::string probe_cache;  // defaults to <output_dir>/probe_posterior.bin
  std::string nsum_cache;   // defaults to <output_dir>/nsum_posterior.bin

  ScenarioConfig scenario;
  int sbc_replicates = 20;
  double sbc_lower = 0.05, sbc_upper = 0.95;
  double sbc_known_size_scale = 1.0;
  double sbc_max_failure_fraction = 0.2;

  std::string config_path;  // the file this came from
  std::string config_hash;  // sha256 of its bytes

  std::string probe_cache_path() const {
    return probe_cache.empty() ? (fs::path(output_dir) / "probe_posterior.bin").string()
                               : probe_cache;
  }
  std::string nsum_cache_path() const {
    return nsum_cache.empty() ? (fs::path(output_dir) / "nsum_posterior.bin").string()
                              : nsum_cache;
  }
};

[[noreturn]] void config_error(const std::string& what) {
  throw std::invalid_argument(fmt::format("config: {}", what));
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const char* section) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (allowed.count(key) == 0) {
      config_error(fmt::format("unknown key '{}' in {}", key, section));
    }
  }
}

template <typename T>
T get_scalar(const json& obj, const char* key, T fallback, const char* section) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) config_error(fmt::format("{}.{} must be a boolean", section, key));
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) config_error(fmt::format("{}.{} must be an integer", section, key));
  } else {
    if (!v.is_number()) config_error(fmt::format("{}.{} must be a number", section, key));
  }
  return v.get<T>();
}

std::string get_string(const json& obj, const char* key, const std::string& fallback,
                       const char* section) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) config_error(fmt::format("{}.{} must be a string", section, key));
  return v.get<std::string>();
}

SamplerConfig parse_sampler(const json& obj, const char* section) {
  check_keys(obj,
             {"chains", "warmup", "draws_per_chain", "target_accept", "max_tree_depth",
              "init_jitter", "bias_thin"},
             section);
  SamplerConfig sc;
  sc.chains = get_scalar(obj, "chains", sc.chains, section);
  sc.warmup = get_scalar(obj, "warmup", sc.warmup, section);
  sc.draws_per_chain = get_scalar(obj, "draws_per_chain", sc.draws_per_chain, section);
  sc.target_accept = get_scalar(obj, "target_accept", sc.target_accept, section);
  sc.max_tree_depth = get_scalar(obj, "max_tree_depth", sc.max_tree_depth, section);
  sc.init_jitter = get_scalar(obj, "init_jitter", sc.init_jitter, section);
  sc.bias_thin = get_scalar(obj, "bias_thin", sc.bias_thin, section);
  return sc;
}

ScenarioConfig parse_scenario(const json& obj) {
  const char* s = "scenario";
  check_keys(obj,
             {"n", "G", "n_probe_both", "n_probe_direct", "n_probe_known", "n_target",
              "probe_prev_lo", "probe_prev_hi", "target_prev_lo", "target_prev_hi",
              "gov_logit_sd", "degree_log_mean", "degree_log_sd", "beta_sd", "tau_N",
              "lkj_eta", "membership_coverage", "truncation_cap", "gov_population_base",
              "gov_population_step"},
             s);
  ScenarioConfig c;
  c.n = get_scalar(obj, "n", c.n, s);
  c.G = get_scalar(obj, "G", c.G, s);
  c.n_probe_both = get_scalar(obj, "n_probe_both", c.n_probe_both, s);
  c.n_probe_direct = get_scalar(obj, "n_probe_direct", c.n_probe_direct, s);
  c.n_probe_known = get_scalar(obj, "n_probe_known", c.n_probe_known, s);
  c.n_target = get_scalar(obj, "n_target", c.n_target, s);
  c.probe_prev_lo = get_scalar(obj, "probe_prev_lo", c.probe_prev_lo, s);
  c.probe_prev_hi = get_scalar(obj, "probe_prev_hi", c.probe_prev_hi, s);
  c.target_prev_lo = get_scalar(obj, "target_prev_lo", c.target_prev_lo, s);
  c.target_prev_hi = get_scalar(obj, "target_prev_hi", c.target_prev_hi, s);
  c.gov_logit_sd = get_scalar(obj, "gov_logit_sd", c.gov_logit_sd, s);
  c.degree_log_mean = get_scalar(obj, "degree_log_mean", c.degree_log_mean, s);
  c.degree_log_sd = get_scalar(obj, "degree_log_sd", c.degree_log_sd, s);
  c.beta_sd = get_scalar(obj, "beta_sd", c.beta_sd, s);
  c.tau_N = get_scalar(obj, "tau_N", c.tau_N, s);
  c.lkj_eta = get_scalar(obj, "lkj_eta", c.lkj_eta, s);
  c.membership_coverage = get_scalar(obj, "membership_coverage", c.membership_coverage, s);
  c.truncation_cap = get_scalar(obj, "truncation_cap", c.truncation_cap, s);
  c.gov_population_base =
      get_scalar<std::int64_t>(obj, "gov_population_base", c.gov_population_base, s);
  c.gov_population_step =
      get_scalar<std::int64_t>(obj, "gov_population_step", c.gov_population_step, s);
  return c;
}

std::string resolve_path(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_absolute()) return p;
  return (base / path).lexically_normal().string();
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) config_error(fmt::format("cannot read '{}'", path));
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::parse_error& e) {
    config_error(fmt::format("'{}' is not valid JSON: {}", path, e.what()));
  }
  if (!j.is_object()) config_error(fmt::format("'{}' must hold a JSON object", path));

  check_keys(j,
             {"inputs", "output_dir", "seed", "threads", "truncation_cap", "lenient_ingest",
              "nsum_sampler", "probe_sampler", "probe_weighted_likelihood",
              "normalize_weights", "policy", "policies", "scaling", "point",
              "weighted_degrees", "round_degrees_to_5", "probe_cache", "nsum_cache",
              "scenario", "sbc"},
             "the top level");

  RunConfig cfg;
  cfg.config_path = path;
  cfg.config_hash = sha256_hex(bytes);
  const fs::path base = fs::path(path).parent_path();

  if (j.contains("inputs")) {
    const json& in_obj = j.at("inputs");
    if (!in_obj.is_object()) config_error("inputs must be an object");
    check_keys(in_obj,
               {"governorates", "respondents", "responses", "groups", "strata",
                "known_sizes", "memberships"},
               "inputs");
    cfg.inputs.governorates = resolve_path(base, get_string(in_obj, "governorates", "", "inputs"));
    cfg.inputs.respondents = resolve_path(base, get_string(in_obj, "respondents", "", "inputs"));
    cfg.inputs.responses = resolve_path(base, get_string(in_obj, "responses", "", "inputs"));
    cfg.inputs.groups = resolve_path(base, get_string(in_obj, "groups", "", "inputs"));
    cfg.inputs.strata = resolve_path(base, get_string(in_obj, "strata", "", "inputs"));
    cfg.inputs.known_sizes = resolve_path(base, get_string(in_obj, "known_sizes", "", "inputs"));
    cfg.inputs.memberships = resolve_path(base, get_string(in_obj, "memberships", "", "inputs"));
  }

  cfg.output_dir = resolve_path(base, get_string(j, "output_dir", cfg.output_dir, "config"));
  cfg.seed = get_scalar<std::uint64_t>(j, "seed", cfg.seed, "config");
  cfg.threads = get_scalar(j, "threads", cfg.threads, "config");
  cfg.truncation_cap = get_scalar(j, "truncation_cap", cfg.truncation_cap, "config");
  cfg.lenient_ingest = get_scalar(j, "lenient_ingest", cfg.lenient_ingest, "config");

  if (j.contains("nsum_sampler")) cfg.nsum_sampler = parse_sampler(j.at("nsum_sampler"), "nsum_sampler");
  if (j.contains("probe_sampler")) {
    cfg.probe_sampler = parse_sampler(j.at("probe_sampler"), "probe_sampler");
  }
  cfg.probe_weighted_likelihood =
      get_scalar(j, "probe_weighted_likelihood", cfg.probe_weighted_likelihood, "config");
  cfg.normalize_weights = get_scalar(j, "normalize_weights", cfg.normalize_weights, "config");

  cfg.policy = probe_mode_from_string(
      get_string(j, "policy", to_string(cfg.policy), "config"));
  if (j.contains("policies")) {
    const json& arr = j.at("policies");
    if (!arr.is_array() || arr.empty()) config_error("policies must be a non-empty array");
    cfg.policies.clear();
    for (const auto& item : arr) {
      if (!item.is_string()) config_error("policies entries must be strings");
      cfg.policies.push_back(probe_mode_from_string(item.get<std::string>()));
    }
  }
  cfg.scaling = scaling_mode_from_string(
      get_string(j, "scaling", to_string(cfg.scaling), "config"));
  cfg.summary.point = point_stat_from_string(
      get_string(j, "point", to_string(cfg.summary.point), "config"));
  cfg.summary.weighted_degrees =
      get_scalar(j, "weighted_degrees", cfg.summary.weighted_degrees, "config");
  cfg.summary.round_degrees_to_5 =
      get_scalar(j, "round_degrees_to_5", cfg.summary.round_degrees_to_5, "config");

  cfg.probe_cache = resolve_path(base, get_string(j, "probe_cache", "", "config"));
  cfg.nsum_cache = resolve_path(base, get_string(j, "nsum_cache", "", "config"));

  if (j.contains("scenario")) cfg.scenario = parse_scenario(j.at("scenario"));
  if (j.contains("sbc")) {
    const json& sbc = j.at("sbc");
    check_keys(sbc, {"replicates", "lower", "upper", "known_size_scale", "max_failure_fraction"},
               "sbc");
    cfg.sbc_replicates = get_scalar(sbc, "replicates", cfg.sbc_replicates, "sbc");
    cfg.sbc_lower = get_scalar(sbc, "lower", cfg.sbc_lower, "sbc");
    cfg.sbc_upper = get_scalar(sbc, "upper", cfg.sbc_upper, "sbc");
    cfg.sbc_known_size_scale =
        get_scalar(sbc, "known_size_scale", cfg.sbc_known_size_scale, "sbc");
    cfg.sbc_max_failure_fraction =
        get_scalar(sbc, "max_failure_fraction", cfg.sbc_max_failure_fraction, "sbc");
  }
  return cfg;
}

struct Overrides {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> policy;
  std::optional<std::string> scaling;
  std::optional<int> replicates;
};

void apply(const Overrides& ov, RunConfig& cfg) {
  if (ov.output_dir) cfg.output_dir = *ov.output_dir;
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.threads) cfg.threads = *ov.threads;
  if (ov.policy) cfg.policy = probe_mode_from_string(*ov.policy);
  if (ov.scaling) cfg.scaling = scaling_mode_from_string(*ov.scaling);
  if (ov.replicates) cfg.sbc_replicates = *ov.replicates;
}

// ---------------------------------------------------------------------------
// Shared plumbing

void warn(const std::string& message) { fmt::print(stderr, "warning: {}\n", message); }

SurveyDataset load_dataset(const RunConfig& cfg, bool need_weights) {
  IngestOptions opt;
  opt.lenient = cfg.lenient_ingest;
  opt.truncation_cap = cfg.truncation_cap;
  opt.warn = warn;
  SurveyDataset ds = ingest(cfg.inputs, opt);
  ds.respondents = impute_ages(ds.respondents);
  if (need_weights) {
    bool all_weighted = !ds.respondents.empty();
    for (const auto& r : ds.respondents) all_weighted = all_weighted && r.weight > 0;
    if (!all_weighted) ds = compute_weights(ds);
  }
  return ds;
}

RunManifest base_manifest(const RunConfig& cfg, const std::string& command) {
  RunManifest m;
  m.command = command;
  m.seed = cfg.seed;
  m.config_hash = cfg.config_hash;
  for (const std::string& p :
       {cfg.inputs.governorates, cfg.inputs.respondents, cfg.inputs.responses,
        cfg.inputs.groups, cfg.inputs.strata, cfg.inputs.known_sizes,
        cfg.inputs.memberships}) {
    if (!p.empty() && fs::exists(p)) m.inputs[p] = sha256_file(p);
  }
  return m;
}

void hash_outputs(RunManifest& m, const std::vector<std::string>& paths) {
  for (const auto& p : paths) m.outputs[p] = sha256_file(p);
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

void ensure_output_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) {
    throw std::runtime_error(
        fmt::format("cannot create output directory '{}': {}", cfg.output_dir, ec.message()));
  }
}

std::string format_value(double x) { return fmt::format("{}", x); }

void write_diagnostics_csv(const std::string& path,
                           const std::vector<std::pair<std::string, const DiagnosticsTable*>>&
                               tables) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
  out << "block,parameter,rhat,ess_bulk,ess_tail\n";
  for (const auto& [block, table] : tables) {
    for (std::size_t i = 0; i < table->names.size(); ++i) {
      const ParamDiagnostics& p = table->params[i];
      out << fmt::format("{},{},{},{},{}\n", block, table->names[i], format_value(p.rhat),
                         format_value(p.ess_bulk), format_value(p.ess_tail));
    }
  }
  if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", path));
}

void sampler_settings(RunManifest& m, const char* prefix, const SamplerConfig& sc) {
  m.settings[fmt::format("{}.chains", prefix)] = fmt::format("{}", sc.chains);
  m.settings[fmt::format("{}.warmup", prefix)] = fmt::format("{}", sc.warmup);
  m.settings[fmt::format("{}.draws_per_chain", prefix)] = fmt::format("{}", sc.draws_per_chain);
  m.settings[fmt::format("{}.target_accept", prefix)] = format_value(sc.target_accept);
  m.settings[fmt::format("{}.max_tree_depth", prefix)] = fmt::format("{}", sc.max_tree_depth);
  m.settings[fmt::format("{}.bias_thin", prefix)] = fmt::format("{}", sc.bias_thin);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_validate(const RunConfig& cfg) {
  const SurveyDataset ds = load_dataset(cfg, /*need_weights=*/false);
  int questions = 0, with_sizes = 0, targets = 0;
  for (const auto& g : ds.groups) {
    if (g.has_membership_question()) ++questions;
    if (!g.known_size.empty() || g.known_size_national) ++with_sizes;
    if (g.kind == GroupKind::target) ++targets;
  }
  long truncated = 0;
  for (int i = 0; i < ds.responses.n(); ++i) {
    for (int k = 0; k < ds.responses.k(); ++k)

      truncated += ds.responses.truncated(i, k) ? 1 : 0;
  }
  fmt::print("dataset is valid\n");
  fmt::print("  governorates: {} (adult total {})\n", ds.n_governorates(), ds.adult_total());
  fmt::print("  respondents:  {}\n", ds.n());
  fmt::print("  groups:       {} ({} with membership questions, {} with known sizes, {} targets)\n",
             ds.n_groups(), questions, with_sizes, targets);
  fmt::print("  responses:    {} x {} cells, {} at the cap of {}\n", ds.responses.n(),
             ds.responses.k(), truncated, ds.responses.truncation_cap);
  fmt::print("  strata:       {} (sex, age band) rows\n", ds.national_strata.size());
  return 0;
}

int cmd_weights(const RunConfig& cfg) {
  if (cfg.inputs.strata.empty()) {
    throw std::invalid_argument("weights: the config names no strata file (inputs.strata)");
  }
  SurveyDataset ds = load_dataset(cfg, /*need_weights=*/false);
  ds = compute_weights(ds);
  ensure_output_dir(cfg);
  const std::string out = out_path(cfg, "respondents_weighted.csv");
  write_respondents_csv(ds, out);

  RunManifest m = base_manifest(cfg, "weights");
  m.settings["normalize_weights"] = cfg.normalize_weights ? "true" : "false";
  hash_outputs(m, {out});
  write_manifest(m, out_path(cfg, "weights_manifest.json"));
  fmt::print("wrote {}\n", out);
  return 0;
}

int cmd_fit_probe(const RunConfig& cfg) {
  SurveyDataset ds = load_dataset(cfg, /*need_weights=*/cfg.probe_weighted_likelihood);
  ProbeModelOptions options;
  options.weighted = cfg.probe_weighted_likelihood;
  options.normalize_weights = cfg.normalize_weights;
  SamplerConfig sc = cfg.probe_sampler;
  sc.seed = cfg.seed;
  sc.threads = cfg.threads;
  const std::vector<LogisticPosterior> posteriors = fit_all_probe_models(ds, sc, options);
  if (posteriors.empty()) {
    throw std::invalid_argument("fit-probe: no group carries a membership question");
  }

  ensure_output_dir(cfg);
  const std::string cache = cfg.probe_cache_path();
  write_probe_cache(posteriors, cache);
  std::vector<std::pair<std::string, const DiagnosticsTable*>> tables;
  for (const auto& p : posteriors) tables.emplace_back(p.group_label, &p.diagnostics);
  const std::string diag = out_path(cfg, "probe_diagnostics.csv");
  write_diagnostics_csv(diag, tables);

  bool breach = false;
  RunManifest m = base_manifest(cfg, "fit-probe");
  sampler_settings(m, "probe_sampler", sc);
  m.settings["weighted_likelihood"] = options.weighted ? "true" : "false";
  double max_rhat = 0;
  long divergences = 0;
  for (const auto& p : posteriors) {
    max_rhat = std::max(max_rhat, p.diagnostics.max_rhat());
    divergences += p.divergences;
    if (p.rhat_warning) {
      warn(fmt::format("group '{}': split R-hat above 1.05", p.group_label));
      breach = true;
    }
    if (p.divergence_warning) {
      warn(fmt::format("group '{}': divergence rate above threshold", p.group_label));
      breach = true;
    }
  }
  m.settings["max_rhat"] = format_value(max_rhat);
  m.settings["divergences"] = fmt::format("{}", divergences);
  m.settings["diagnostic_warnings"] = breach ? "true" : "false";
  hash_outputs(m, {cache, diag});
  write_manifest(m, out_path(cfg, "fit_probe_manifest.json"));
  fmt::print("wrote {} ({} groups) and {}\n", cache, posteriors.size(), diag);
  return breach ? 3 : 0;
}

int cmd_fit_nsum(const RunConfig& cfg) {
  SurveyDataset ds = load_dataset(cfg, /*need_weights=*/true);
  NsumModelOptions options;
  options.normalize_weights = cfg.normalize_weights;
  NsumModel model(ds, options);
  SamplerConfig sc = cfg.nsum_sampler;
  sc.seed = cfg.seed;
  sc.threads = cfg.threads;
  const NsumPosterior post = sample_nsum(model, sc);

  ensure_output_dir(cfg);
  const std::string cache = cfg.nsum_cache_path();
  write_nsum_cache(post, cache);
  const std::string diag = out_path(cfg, "nsum_diagnostics.csv");
  write_diagnostics_csv(diag, {{"nsum", &post.diagnostics}});

  bool breach = false;
  if (post.rhat_warning) {
    warn("nsum: split R-hat above 1.05");
    breach = true;
  }
  if (post.divergence_warning) {
    warn("nsum: divergence rate above threshold");
    breach = true;
  }
  RunManifest m = base_manifest(cfg, "fit-nsum");
  sampler_settings(m, "nsum_sampler", sc);
  m.settings["normalize_weights"] = options.normalize_weights ? "true" : "false";
  m.settings["max_rhat"] = format_value(post.diagnostics.max_rhat());
  m.settings["min_ess_bulk"] = format_value(post.diagnostics.min_ess_bulk());
  m.settings["divergences"] = fmt::format("{}", post.divergences);
  m.settings["clamp_events"] = fmt::format("{}", post.clamp_events);
  m.settings["diagnostic_warnings"] = breach ? "true" : "false";
  hash_outputs(m, {cache, diag});
  write_manifest(m, out_path(cfg, "fit_nsum_manifest.json"));
  fmt::print("wrote {} ({} draws) and {}\n", cache, post.draws(), diag);
  return breach ? 3 : 0;
}

struct ScaledInputs {
  SurveyDataset dataset;
  NsumPosterior nsum;
  PrevalenceDraws prevalence;
  bool have_probe = false;
};

ScaledInputs load_scaled_inputs(const RunConfig& cfg) {
  ScaledInputs in;
  in.dataset = ingest(cfg.inputs, IngestOptions{cfg.lenient_ingest, cfg.truncation_cap, warn});
  in.nsum = read_nsum_cache(cfg.nsum_cache_path());
  const std::string probe = cfg.probe_cache_path();
  if (fs::exists(probe)) {
    const std::vector<LogisticPosterior> posteriors = read_probe_cache(probe);
    if (!posteriors.empty()) {
      in.prevalence = prevalence_draws(posteriors, in.dataset.governorates);
      in.have_probe = true;
    }
  }
  return in;
}

std::vector<std::string> write_summaries(const RunConfig& cfg, const ScaledDraws& scaled,
                                         const std::string& suffix) {
  const SummaryTable prevalence = summarize(scaled, Estimand::prevalence, cfg.summary);
  const SummaryTable size = summarize(scaled, Estimand::size, cfg.summary);
  const SummaryTable degree = summarize(scaled, Estimand::degree, cfg.summary);
  const SummaryTable target = adjusted_target_size(scaled, cfg.summary);
  const std::vector<std::pair<std::string, const SummaryTable*>> tables = {
      {fmt::format("prevalence_summary{}.csv", suffix), &prevalence},
      {fmt::format("size_summary{}.csv", suffix), &size},
      {fmt::format("degree_summary{}.csv", suffix), &degree},
      {fmt::format("target_size_summary{}.csv", suffix), &target},
  };
  std::vector<std::string> written;
  for (const auto& [name, table] : tables) {
    const std::string path = out_path(cfg, name);
    write_summary_csv(*table, path);
    written.push_back(path);
  }
  return written;
}

int cmd_scale(const RunConfig& cfg) {
  const ScaledInputs in = load_scaled_inputs(cfg);
  const ProbePolicy policy =
      make_policy(cfg.policy, in.dataset.groups, in.dataset.governorates, in.prevalence);
  const ScaledDraws scaled = scale_draws(in.nsum, in.prevalence, in.dataset.groups,
                                         in.dataset.governorates, policy, cfg.scaling);
  ensure_output_dir(cfg);
  const std::vector<std::string> written = write_summaries(cfg, scaled, "");

  RunManifest m = base_manifest(cfg, "scale");
  m.inputs[cfg.nsum_cache_path()] = sha256_file(cfg.nsum_cache_path());
  if (in.have_probe) m.inputs[cfg.probe_cache_path()] = sha256_file(cfg.probe_cache_path());
  m.settings["policy"] = to_string(cfg.policy);
  m.settings["scaling"] = to_string(cfg.scaling);
  m.settings["point"] = to_string(cfg.summary.point);
  m.settings["weighted_degrees"] = cfg.summary.weighted_degrees ? "true" : "false";
  m.settings["round_degrees_to_5"] = cfg.summary.round_degrees_to_5 ? "true" : "false";
  m.settings["draws"] = fmt::format("{}", scaled.total_draws());
  hash_outputs(m, written);
  write_manifest(m, out_path(cfg, "scale_manifest.json"));
  for (const auto& p : written) fmt::print("wrote {}\n", p);
  return 0;
}

int cmd_summarize(const RunConfig& cfg) {
  const ScaledInputs in = load_scaled_inputs(cfg);
  ensure_output_dir(cfg);
  RunManifest m = base_manifest(cfg, "summarize");
  m.inputs[cfg.nsum_cache_path()] = sha256_file(cfg.nsum_cache_path());
  if (in.have_probe) m.inputs[cfg.probe_cache_path()] = sha256_file(cfg.probe_cache_path());
  std::vector<std::string> written;
  std::string policy_list;
  for (const ProbeMode mode : cfg.policies) {
    const ProbePolicy policy =
        make_policy(mode, in.dataset.groups, in.dataset.governorates, in.prevalence);
    const ScaledDraws scaled = scale_draws(in.nsum, in.prevalence, in.dataset.groups,
                                           in.dataset.governorates, policy, cfg.scaling);
    for (const auto& p : write_summaries(cfg, scaled, fmt::format("_{}", to_string(mode)))) {
      written.push_back(p);
    }
    policy_list += (policy_list.empty() ? "" : ",") + to_string(mode);
  }
  m.settings["policies"] = policy_list;
  m.settings["scaling"] = to_string(cfg.scaling);
  m.settings["point"] = to_string(cfg.summary.point);
  hash_outputs(m, written);
  write_manifest(m, out_path(cfg, "summarize_manifest.json"));
  for (const auto& p : written) fmt::print("wrote {}\n", p);
  return 0;
}

int cmd_simulate(const RunConfig& cfg) {
  const Simulated sim = generate(cfg.scenario, cfg.seed);
  ensure_output_dir(cfg);
  DatasetPaths paths;
  paths.governorates = out_path(cfg, "governorates.csv");
  paths.respondents = out_path(cfg, "respondents.csv");
  paths.responses = out_path(cfg, "responses.csv");
  paths.groups = out_path(cfg, "groups.csv");
  paths.strata = out_path(cfg, "strata.csv");
  paths.known_sizes = out_path(cfg, "known_sizes.csv");
  paths.memberships = out_path(cfg, "memberships.csv");
  write_dataset(sim.dataset, paths);
  const std::string truth = out_path(cfg, "truth.csv");
  write_truth_csv(sim, truth);
  for (const auto& w : sim.truth.warnings) warn(w);

  RunManifest m = base_manifest(cfg, "simulate");
  m.settings["n"] = fmt::format("{}", cfg.scenario.n);
  m.settings["G"] = fmt::format("{}", cfg.scenario.G);
  m.settings["K"] = fmt::format("{}", cfg.scenario.K());
  m.settings["warnings"] = fmt::format("{}", sim.truth.warnings.size());
  hash_outputs(m, {paths.governorates, paths.respondents, paths.responses, paths.groups,
                   paths.strata, paths.known_sizes, paths.memberships, truth});
  write_manifest(m, out_path(cfg, "simulate_manifest.json"));
  fmt::print("wrote a {}-respondent survey across {} governorates to {}\n", cfg.scenario.n,
             cfg.scenario.G, cfg.output_dir);
  return 0;
}

int cmd_sbc(const RunConfig& cfg) {
  if (cfg.sbc_replicates < 20) {
    warn(fmt::format("{} replicates give a coarse coverage estimate; 20 or more are typical",
                     cfg.sbc_replicates));
  }
  SbcOptions opt;
  opt.replicates = cfg.sbc_replicates;
  opt.lower = cfg.sbc_lower;
  opt.upper = cfg.sbc_upper;
  opt.seed = cfg.seed;
  opt.nsum = cfg.nsum_sampler;
  opt.probe = cfg.probe_sampler;
  opt.policy_mode = cfg.policy;
  opt.scaling = cfg.scaling;
  opt.known_size_scale = cfg.sbc_known_size_scale;
  opt.max_failure_fraction = cfg.sbc_max_failure_fraction;
  opt.threads = cfg.threads;
  opt.on_replicate = [&](int r, const std::string& message) {
    fmt::print(stderr, "replicate {}/{}: {}\n", r + 1, cfg.sbc_replicates, message);
  };

  const SbcReport report = sbc_experiment(cfg.scenario, opt);
  ensure_output_dir(cfg);
  const std::string cells = out_path(cfg, "sbc_cells.csv");
  write_sbc_csv(report, cells);
  const std::string text_path = out_path(cfg, "sbc_report.txt");
  const std::string text = sbc_text_summary(report);
  {
    std::ofstream out(text_path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", text_path));
    out << text;
    if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", text_path));
  }
  fmt::print("{}", text);

  RunManifest m = base_manifest(cfg, "sbc");
  m.settings["replicates"] = fmt::format("{}", report.replicates);
  m.settings["lower"] = format_value(report.lower);
  m.settings["upper"] = format_value(report.upper);
  m.settings["policy"] = to_string(cfg.policy);
  m.settings["scaling"] = to_string(cfg.scaling);
  m.settings["known_size_scale"] = format_value(cfg.sbc_known_size_scale);
  m.settings["failures"] = fmt::format("{}", report.failures.size());
  m.settings["overall_coverage"] =
      report.cells.empty() ? "nan" : format_value(report.overall_coverage());
  m.settings["scenario.n"] = fmt::format("{}", cfg.scenario.n);
  m.settings["scenario.G"] = fmt::format("{}", cfg.scenario.G);
  m.settings["scenario.K"] = fmt::format("{}", cfg.scenario.K());
  hash_outputs(m, {cells, text_path});
  write_manifest(m, out_path(cfg, "sbc_manifest.json"));
  return report.failures.empty() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scaleup: small-area network scale-up pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON configuration file")->required();
    sub->add_option("--out", ov.output_dir, "Output directory (overrides output_dir)");
    sub->add_option("--seed", ov.seed, "RNG seed (overrides seed)");
    sub->add_option("--threads", ov.threads, "Worker threads (overrides threads)");
    return sub;
  };

  CLI::App* validate_sub =
      add_common(app.add_subcommand("validate", "Ingest the dataset and report its shape"));
  CLI::App* weights_sub = add_common(
      app.add_subcommand("weights", "Compute post-stratification weights per respondent"));
  CLI::App* fit_probe_sub = add_common(app.add_subcommand(
      "fit-probe", "Fit the membership model for every probe group with a question"));
  CLI::App* fit_nsum_sub =
      add_common(app.add_subcommand("fit-nsum", "Fit the network scale-up count model"));
  CLI::App* scale_sub = add_common(app.add_subcommand(
      "scale", "Scale the posteriors under the configured probe policy and summarize"));
  CLI::App* summarize_sub = add_common(app.add_subcommand(
      "summarize", "Write summary tables under each configured probe policy"));
  CLI::App* simulate_sub = add_common(
      app.add_subcommand("simulate", "Generate a synthetic survey with ground truth"));
  CLI::App* sbc_sub = add_common(
      app.add_subcommand("sbc", "Run the simulation-based calibration experiment"));

  for (CLI::App* sub : {scale_sub, summarize_sub, sbc_sub}) {
    sub->add_option("--policy", ov.policy, "Probe policy (overrides policy)");
    sub->add_option("--scaling", ov.scaling, "Scaling mode (overrides scaling)");
  }
  sbc_sub->add_option("--replicates", ov.replicates, "Replicates (overrides sbc.replicates)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg = load_config(config_path);
    apply(ov, cfg);
    if (*validate_sub) return cmd_validate(cfg);
    if (*weights_sub) return cmd_weights(cfg);
    if (*fit_probe_sub) return cmd_fit_probe(cfg);
    if (*fit_nsum_sub) return cmd_fit_nsum(cfg);
    if (*scale_sub) return cmd_scale(cfg);
    if (*summarize_sub) return cmd_summarize(cfg);
    if (*simulate_sub) return cmd_simulate(cfg);
    if (*sbc_sub) return cmd_sbc(cfg);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  fmt::print(stderr, "error: no subcommand selected\n");
  return 2;
}
