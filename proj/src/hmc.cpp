#include "scaleup/hmc.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "scaleup/stats.hpp"

namespace scaleup {

namespace {

constexpr double kMaxEnergyError = 1000.0;  // divergence threshold

double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

struct Phase {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double logp = 0;
};

struct ChainResult {
  Eigen::MatrixXd draws;
  long divergences = 0;
  double step_size = 0;
  Eigen::VectorXd inv_mass;
  double accept_sum = 0;
  long accept_count = 0;
};

class Chain {
 public:
  Chain(int dim, const LogpGrad& logp_grad, const SamplerConfig& cfg, int chain_index,
        const ChainInit& init)
      : dim_(dim),
        logp_grad_(logp_grad),
        cfg_(cfg),
        rng_(make_rng(cfg.seed, static_cast<std::uint64_t>(chain_index))),
        inv_mass_(Eigen::VectorXd::Ones(dim)) {
    cur_.q = init(chain_index, rng_);
    if (cur_.q.size() != dim) {
      throw std::invalid_argument("nuts: initializer returned a vector of the wrong size");
    }
    cur_.grad.resize(dim);
    cur_.logp = logp_grad_(cur_.q, cur_.grad);
    if (!std::isfinite(cur_.logp)) {
      throw std::runtime_error("nuts: log density not finite at the initial point");
    }
  }

  ChainResult run() {
    ChainResult out;
    out.draws.resize(cfg_.draws_per_chain, dim_);

    step_ = find_reasonable_epsilon();
    da_reset(step_);

    // Warmup layout: an opening step-size phase, expanding variance windows,
    // and a closing step-size phase.
    const int warmup = cfg_.warmup;
    const int open = std::max(1, static_cast<int>(0.15 * warmup));
    const int close = std::max(1, static_cast<int>(0.10 * warmup));
    const int windows_end = std::max(open, warmup - close);
    int window = 25;
    int window_end = std::min(open + window, windows_end);
    stats::RunningMoments welford;
    std::vector<stats::RunningMoments> var(dim_);

    for (int it = 0; it < warmup; ++it) {
      double accept = transition(false, out);
      da_update(accept);
      step_ = da_current();
      bool in_window = it >= open && it < windows_end;
      if (in_window) {
        for (int d = 0; d < dim_; ++d) var[d].add(cur_.q[d]);
      }
      if (in_window && (it + 1 == window_end)) {
        update_mass(var);
        var.assign(dim_, stats::RunningMoments{});
        window *= 2;
        window_end = std::min(window_end + window, windows_end);
        // Next doubling would not fit: extend this one to the end instead.
        if (windows_end - window_end < 2 * window) window_end = windows_end;
        step_ = find_reasonable_epsilon();
        da_reset(step_);
      }
    }
    step_ = cfg_.warmup > 0 ? da_smoothed() : step_;

    for (int it = 0; it < cfg_.draws_per_chain; ++it) {
      double accept = transition(true, out);
      out.accept_sum += accept;
      out.accept_count += 1;
      out.draws.row(it) = cur_.q.transpose();
    }
    out.step_size = step_;
    out.inv_mass = inv_mass_;
    return out;
  }

 private:
  // One NUTS transition; returns the acceptance statistic. Divergences are
  // recorded in `out` only when `record` is true.
  double transition(bool record, ChainResult& out) {
    // Momentum refresh: p ~ N(0, M) with M = diag(1/inv_mass).
    Eigen::VectorXd p(dim_);
    for (int d = 0; d < dim_; ++d) p[d] = normal_(rng_) / std::sqrt(inv_mass_[d]);

    Phase z0 = cur_;
    z0.p = p;
    const double h0 = hamiltonian(z0);

    Phase z_minus = z0, z_plus = z0, sample = z0;
    double log_w_total = 0.0;  // log weight of the whole trajectory, relative to h0
    double accept_sum = 0;
    long  accept_count = 0;
    bool diverged = false;

    for (int depth = 0; depth < cfg_.max_tree_depth; ++depth) {
      int dir = (rng_() & 1) ? 1 : -1;
      BuildResult sub;
      if (dir == 1) {
        sub = build_tree(z_plus, depth, +1, h0);
        z_plus = sub.edge;
      } else {
        sub = build_tree(z_minus, depth, -1, h0);
        z_minus = sub.edge;
      }
      accept_sum += sub.accept_sum;
      accept_count += sub.accept_count;
      if (sub.diverged) diverged = true;
      if (sub.diverged || sub.turned) break;

      // Biased progressive sampling: favor the fresh subtree.
      double ratio = std::exp(std::min(0.0, sub.log_w - log_w_total));
      if (uniform_(rng_) < ratio) sample = sub.proposal;
      log_w_total = log_add_exp(log_w_total, sub.log_w);

      if (u_turn(z_minus, z_plus)) break;
    }

    if (diverged && record) out.divergences += 1;
    cur_ = sample;
    cur_.p.resize(0);
    return accept_count > 0 ? accept_sum / accept_count : 0.0;
  }

  struct BuildResult {
    Phase near;      // subtree point adjacent to the entry state
    Phase edge;      // outermost point in the direction of integration
    Phase proposal;  // multinomial sample from the subtree
    double log_w = -std::numeric_limits<double>::infinity();
    double accept_sum = 0;
    long accept_count = 0;
    bool diverged = false;
    bool turned = false;
  };

  BuildResult build_tree(const Phase& from, int depth, int dir, double h0) {
    if (depth == 0) {
      BuildResult r;
      r.edge = leapfrog(from, dir);
      r.near = r.edge;
      double h = hamiltonian(r.edge);
      double delta = h0 - h;  // log weight of the new point
      if (!std::isfinite(h) || h - h0 > kMaxEnergyError) {
        r.diverged = true;
        r.accept_count = 1;
        return r;
      }
      r.proposal = r.edge;
      r.log_w = delta;
      r.accept_sum = std::min(1.0, std::exp(delta));
      r.accept_count = 1;
      return r;
    }

    BuildResult first = build_tree(from, depth - 1, dir, h0);
    if (first.diverged || first.turned) return first;
    BuildResult second = build_tree(first.edge, depth - 1, dir, h0);

    BuildResult merged;
    merged.near = first.near;
    merged.edge = second.edge;
    merged.accept_sum = first.accept_sum + second.accept_sum;
    merged.accept_count = first.accept_count + second.accept_count;
    merged.diverged = second.diverged;
    merged.turned = second.turned;
    merged.log_w = log_add_exp(first.log_w, second.log_w);
    if (merged.diverged || merged.turned) return merged;

    // Uniform multinomial choice within the subtree.
    double ratio = std::exp(second.log_w - merged.log_w);
    merged.proposal = (uniform_(rng_) < ratio) ? second.proposal : first.proposal;

    // U-turn over this subtree's own span, oriented by trajectory time:
    // integrating forward the earliest point is `near`; backward it is `edge`.
    merged.turned = dir == 1 ? u_turn(merged.near, merged.edge)
                             : u_turn(merged.edge, merged.near);
    return merged;
  }

  Phase leapfrog(const Phase& z, int dir) {
    const double eps = dir * step_;
    Phase out;
    out.p = z.p + 0.5 * eps * z.grad;
    out.q = z.q + eps * (inv_mass_.array() * out.p.array()).matrix();
    out.grad.resize(dim_);
    out.logp = logp_grad_(out.q, out.grad);
    out.p += 0.5 * eps * out.grad;
    return out;
  }

  double hamiltonian(const Phase& z) const {
    double kinetic = 0.5 * (z.p.array().square() * inv_mass_.array()).sum();
    return -z.logp + kinetic;
  }

  bool u_turn(const Phase& lo, const Phase& hi) const {
    Eigen::VectorXd dq = hi.q - lo.q;
    return dq.dot((inv_mass_.array() * lo.p.array()).matrix()) < 0 ||
           dq.dot((inv_mass_.array() * hi.p.array()).matrix()) < 0;
  }

  double find_reasonable_epsilon() {
    double eps = 1.0;
    Phase z = cur_;
    z.p.resize(dim_);
    for (int d = 0; d < dim_; ++d) z.p[d] = normal_(rng_) / std::sqrt(inv_mass_[d]);
    double h0 = hamiltonian(z);

    double saved_step = step_;
    step_ = eps;
    Phase z1 = leapfrog(z, +1);
    double delta = h0 - hamiltonian(z1);
    if (!std::isfinite(delta)) delta = -std::numeric_limits<double>::infinity();
    double dir = delta > std::log(0.5) ? 1.0 : -1.0;
    for (int iter = 0; iter < 100; ++iter) {
      eps *= dir > 0 ? 2.0 : 0.5;
      if (eps > 1e7 || eps < 1e-10) break;
      step_ = eps;
      z1 = leapfrog(z, +1);
      delta = h0 - hamiltonian(z1);
      if (!std::isfinite(delta)) delta = -std::numeric_limits<double>::infinity();
      if (dir > 0 ? delta <= std::log(0.5) : delta > std::log(0.5)) break;
    }
    step_ = saved_step;
    return eps;
  }

  void update_mass(const std::vector<stats::RunningMoments>& var) {
    if (var.empty() || var[0].count < 2) return;
    double n = static_cast<double>(var[0].count);
    for (int d = 0; d < dim_; ++d) {
      // Regularized toward a small diagonal, as a shrinkage-to-unit guard.
      inv_mass_[d] = (n / (n + 5.0)) * var[d].variance() + 1e-3 * (5.0 / (n + 5.0));
      inv_mass_[d] = std::max(inv_mass_[d], 1e-10);
    }
  }

  // Dual averaging (Nesterov-style) of log step size.
  void da_reset(double eps) {
    da_mu_ = std::log(10.0 * eps);
    da_log_eps_ = std::log(eps);
    da_log_eps_bar_ = 0.0;
    da_h_bar_ = 0.0;
    da_count_ = 0;
  }
  void da_update(double accept) {
    constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;
    da_count_ += 1;
    double m = static_cast<double>(da_count_);
    da_h_bar_ = (1.0 - 1.0 / (m + t0)) * da_h_bar_ +
                (cfg_.target_accept - accept) / (m + t0);
    da_log_eps_ = da_mu_ - std::sqrt(m) / gamma * da_h_bar_;
    double w = std::pow(m, -kappa);
    da_log_eps_bar_ = w * da_log_eps_ + (1.0 - w) * da_log_eps_bar_;
  }
  double da_current() const { return std::exp(da_log_eps_); }
  double da_smoothed() const { return std::exp(da_log_eps_bar_); }

  int dim_;
  const LogpGrad& logp_grad_;
  const SamplerConfig& cfg_;
  Rng rng_;
  Eigen::VectorXd inv_mass_;
  Phase cur_;
  double step_ = 1.0;
  double da_mu_ = 0, da_log_eps_ = 0, da_log_eps_bar_ = 0, da_h_bar_ = 0;
  long da_count_ = 0;
  std::normal_distribution<double> normal_;
  std::uniform_real_distribution<double> uniform_;
};

}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1) throw std::invalid_argument("sampler: chains must be >= 1");
  if (warmup < 0) throw std::invalid_argument("sampler: warmup must be >= 0");
  if (draws_per_chain < 1) throw std::invalid_argument("sampler: draws_per_chain must be >= 1");
  if (target_accept < 0.6 || target_accept > 0.99) {
    throw std::invalid_argument("sampler: target_accept must lie in [0.6, 0.99]");
  }
  if (max_tree_depth < 1 || max_tree_depth > 14) {
    throw std::invalid_argument("sampler: max_tree_depth must lie in [1, 14]");
  }
  if (init_jitter < 0) throw std::invalid_argument("sampler: init_jitter must be >= 0");
  if (threads < 1) throw std::invalid_argument("sampler: threads must be >= 1");
  if (bias_thin < 1) throw std::invalid_argument("sampler: bias_thin must be >= 1");
}

NutsResult nuts_sample(int dim, const LogpGrad& logp_grad, const SamplerConfig& config,
                       const ChainInit& init) {
  config.validate();
  if (dim < 1) throw std::invalid_argument("nuts: dimension must be >= 1");

  std::vector<ChainResult> results(config.chains);
  auto run_chain = [&](int c) {
    Chain chain(dim, logp_grad, config, c, init);
    results[c] = chain.run();
  };

  const int workers = std::min(config.threads, config.chains);
  if (workers <= 1) {
    for (int c = 0; c < config.chains; ++c) run_chain(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (int c = next.fetch_add(1); c < config.chains; c = next.fetch_add(1)) run_chain(c);
      });
    }
    for (auto& t : pool) t.join();
  }

  NutsResult out;
  out.chains = config.chains;
  out.draws_per_chain = config.draws_per_chain;
  out.draws.resize(config.chains * config.draws_per_chain, dim);
  double accept_sum = 0;
  long accept_count = 0;
  for (int c = 0; c < config.chains; ++c) {
    out.draws.middleRows(c * config.draws_per_chain, config.draws_per_chain) = results[c].draws;
    out.divergences += results[c].divergences;
    out.chain_divergences.push_back(results[c].divergences);
    out.step_sizes.push_back(results[c].step_size);
    out.inv_mass.push_back(results[c].inv_mass);
    accept_sum += results[c].accept_sum;
    accept_count += results[c].accept_count;
  }
  out.mean_accept = accept_count > 0 ? accept_sum / accept_count : 0.0;
  out.total_transitions = static_cast<long>(config.chains) * config.draws_per_chain;
  return out;
}

}  // namespace scaleup
