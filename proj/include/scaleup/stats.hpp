#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace scaleup::stats {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_normal_pdf(double x, double mean, double sd);

// Half-Cauchy on [0, inf) with location 0.
double log_half_cauchy_pdf(double x, double scale);

// Normal(mean, sd^2) truncated to (0, inf), normalizer included.
double log_trunc_normal_pos_pdf(double x, double mean, double sd);

// Poisson log-pmf parameterized by the log rate: y*eta - exp(eta) - lgamma(y+1).
double log_poisson_pmf_lograte(long long y, double eta);

double normal_cdf(double x);
double normal_pdf(double x);
// Inverse standard normal CDF (Acklam's rational approximation + one Halley
// polish step; good to ~1e-15 relative).
double normal_quantile(double p);

double inv_logit(double x);
// log(1 + exp(x)) without overflow.
double log1p_exp(double x);

// Type-7 quantile (linear interpolation between order statistics) on sorted data.
double quantile_sorted(std::span<const double> sorted, double p);
// Convenience: copies, sorts, interpolates.
double quantile(std::vector<double> values, double p);

double mean(std::span<const double> values);
double variance(std::span<const double> values);  // sample variance, n-1
double median(std::vector<double> values);

struct RunningMoments {
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }
  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
};

}  // namespace scaleup::stats
