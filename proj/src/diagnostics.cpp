#include "scaleup/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "scaleup/stats.hpp"

namespace scaleup {

namespace {

constexpr double kTinyVar = 1e-300;

// Half-chains: each chain is split in two, dropping the middle draw when the
// chain length is odd.
std::vector<Eigen::VectorXd> split_chains(const Eigen::VectorXd& draws, int chains) {
  if (chains < 1) throw std::invalid_argument("diagnostics: chains must be >= 1");
  const int per = static_cast<int>(draws.size()) / chains;
  if (per * chains != draws.size()) {
    throw std::invalid_argument("diagnostics: draw count not divisible by chain count");
  }
  const int half = per / 2;
  std::vector<Eigen::VectorXd> out;
  if (half == 0) return out;
  out.reserve(2 * static_cast<std::size_t>(chains));
  for (int c = 0; c < chains; ++c) {
    out.push_back(draws.segment(c * per, half));
    out.push_back(draws.segment(c * per + per - half, half));
  }
  return out;
}

struct ChainStats {
  int m = 0;       // number of half-chains
  int n = 0;       // length of each half-chain
  double w = 0;    // mean within-chain variance
  double b_n = 0;  // between-chain variance of means (B/n)
  double var_plus = 0;
  std::vector<double> means;
};

ChainStats chain_stats(const std::vector<Eigen::VectorXd>& cs) {
  ChainStats s;
  s.m = static_cast<int>(cs.size());
  s.n = s.m > 0 ? static_cast<int>(cs[0].size()) : 0;
  if (s.m == 0 || s.n < 2) return s;
  s.means.resize(s.m);
  double w = 0;
  for (int c = 0; c < s.m; ++c) {
    s.means[c] = cs[c].mean();
    w += (cs[c].array() - s.means[c]).square().sum() / (s.n - 1);
  }
  s.w = w / s.m;
  double grand = std::accumulate(s.means.begin(), s.means.end(), 0.0) / s.m;
  double b = 0;
  for (double mu : s.means) b += (mu - grand) * (mu - grand);
  s.b_n = s.m > 1 ? b / (s.m - 1) : 0.0;  // = B/n
  s.var_plus = s.w * (s.n - 1) / s.n + s.b_n;
  return s;
}

double rhat_of(const std::vector<Eigen::VectorXd>& cs) {
  ChainStats s = chain_stats(cs);
  if (s.n < 2 || s.w < kTinyVar) return 1.0;
  return std::sqrt(s.var_plus / s.w);
}

// Biased (1/n) autocovariance of one chain at lag t.
double autocov(const Eigen::VectorXd& x, double mean, int t) {
  const int n = static_cast<int>(x.size());
  double acc = 0;
  for (int i = 0; i + t < n; ++i) acc += (x[i] - mean) * (x[i + t] - mean);
  return acc / n;
}

// Effective sample size of the given half-chains via Geyer's initial
// monotone positive sequence, with lags evaluated lazily.
double ess_of(const std::vector<Eigen::VectorXd>& cs) {
  ChainStats s = chain_stats(cs);
  const double total = static_cast<double>(s.m) * s.n;
  if (s.n < 4) return total;
  if (s.var_plus < kTinyVar || s.w < kTinyVar) return total;

  auto rho = [&](int t) {
    double acc = 0;
    for (int c = 0; c < s.m; ++c) acc += autocov(cs[c], s.means[c], t);
    return 1.0 - (s.w - acc / s.m) / s.var_plus;
  };

  // Paired sums P_t = rho_{2t} + rho_{2t+1}, kept positive and monotone.
  double tau = 0;
  double prev_pair = std::numeric_limits<double>::infinity();
  double rho_even = 1.0;  // rho_0 by convention
  double rho_odd = rho(1);
  int t = 1;
  while (rho_even + rho_odd > 0) {
    double pair = std::min(rho_even + rho_odd, prev_pair);
    tau += pair;
    prev_pair = pair;
    if (2 * t >= s.n - 1) break;
    rho_even = rho(2 * t);
    rho_odd = 2 * t + 1 < s.n ? rho(2 * t + 1) : 0.0;
    ++t;
  }
  double tau_hat = std::max(-1.0 + 2.0 * tau, 1.0 / std::log10(total + 10.0));
  return total / tau_hat;
}

std::vector<Eigen::VectorXd> split_transformed(const Eigen::VectorXd& draws, int chains,
                                               bool fold) {
  Eigen::VectorXd x = draws;
  if (fold) {
    std::vector<double> v(draws.data(), draws.data() + draws.size());
    double med = stats::median(std::move(v));
    x = (draws.array() - med).abs();
  }
  return split_chains(rank_normalize(x), chains);
}

bool degenerate(const Eigen::VectorXd& draws) {
  double lo = draws.minCoeff(), hi = draws.maxCoeff();
  return !(hi > lo);
}

}  // namespace

Eigen::VectorXd rank_normalize(const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return x[a] < x[b]; });

  Eigen::VectorXd z(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    // Average rank for the tie block [i, j], 1-based.
    double rank = 0.5 * (i + j) + 1.0;
    double p = (rank - 0.375) / (n + 0.25);
    double value = stats::normal_quantile(p);
    for (int t = i; t <= j; ++t) z[idx[t]] = value;
    i = j + 1;
  }
  return z;
}

double split_rhat(const Eigen::VectorXd& draws, int chains) {
  if (degenerate(draws)) return 1.0;
  double bulk = rhat_of(split_transformed(draws, chains, false));
  double folded = rhat_of(split_transformed(draws, chains, true));
  return std::max(bulk, folded);
}

double ess_bulk(const Eigen::VectorXd& draws, int chains) {
  if (degenerate(draws)) return static_cast<double>(draws.size());
  return ess_of(split_transformed(draws, chains, false));
}

double ess_tail(const Eigen::VectorXd& draws, int chains) {
  if (degenerate(draws)) return static_cast<double>(draws.size());
  std::vector<double> pooled(draws.data(), draws.data() + draws.size());
  std::sort(pooled.begin(), pooled.end());
  double ess_min = std::numeric_limits<double>::infinity();
  for (double p : {0.05, 0.95}) {
    double q = stats::quantile_sorted(pooled, p);
    Eigen::VectorXd ind(draws.size());
    for (int i = 0; i < draws.size(); ++i) ind[i] = draws[i] <= q ? 1.0 : 0.0;
    if (degenerate(ind)) {
      ess_min = std::min(ess_min, static_cast<double>(draws.size()));
      continue;
    }
    ess_min = std::min(ess_min, ess_of(split_chains(ind, chains)));
  }
  return ess_min;
}

ParamDiagnostics diagnose_scalar(const Eigen::VectorXd& draws, int chains) {
  ParamDiagnostics d;
  d.rhat = split_rhat(draws, chains);
  d.ess_bulk = ess_bulk(draws, chains);
  d.ess_tail = ess_tail(draws, chains);
  return d;
}

double DiagnosticsTable::max_rhat() const {
  double v = 0;
  for (const auto& p : params) v = std::max(v, p.rhat);
  return v;
}

double DiagnosticsTable::min_ess_bulk() const {
  double v = std::numeric_limits<double>::infinity();
  for (const auto& p : params) v = std::min(v, p.ess_bulk);
  return params.empty() ? 0.0 : v;
}

double DiagnosticsTable::min_ess_tail() const {
  double v = std::numeric_limits<double>::infinity();
  for (const auto& p : params) v = std::min(v, p.ess_tail);
  return params.empty() ? 0.0 : v;
}

bool DiagnosticsTable::rhat_flag(double threshold) const { return max_rhat() > threshold; }

bool DiagnosticsTable::divergence_flag(double rate_threshold) const {
  if (total_transitions <= 0) return divergences > 0;
  return static_cast<double>(divergences) >
         rate_threshold * static_cast<double>(total_transitions);
}

DiagnosticsTable diagnose_matrix(const Eigen::MatrixXd& draws, int chains,
                                 const std::vector<std::string>& names) {
  if (static_cast<int>(names.size()) != draws.cols()) {
    throw std::invalid_argument("diagnose_matrix: one name per column required");
  }
  DiagnosticsTable table;
  table.names = names;
  table.params.resize(names.size());
  for (int j = 0; j < draws.cols(); ++j) {
    table.params[j] = diagnose_scalar(draws.col(j), chains);
  }
  return table;
}

}  // namespace scaleup
