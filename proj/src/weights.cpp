#include "scaleup/weights.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace scaleup {

SurveyDataset compute_weights(const SurveyDataset& dataset) {
  if (dataset.national_strata.empty()) {
    throw std::runtime_error("compute_weights: national strata table is empty");
  }
  SurveyDataset out = dataset;
  const double n = static_cast<double>(out.n());
  const double total = static_cast<double>(out.adult_total());
  auto observed = out.observed_strata();

  for (auto& r : out.respondents) {
    auto stratum = out.national_strata.find({r.sex, r.age_group});
    if (stratum == out.national_strata.end()) {
      throw std::runtime_error(fmt::format(
          "compute_weights: stratum ({}, {}) missing from national strata", to_string(r.sex),
          r.age_group));
    }
    int gi = out.governorate_index(r.governorate_id);
    auto cell = observed.find({r.sex, r.age_group, r.governorate_id});
    if (cell == observed.end() || cell->second <= 0) {
      // Unreachable: the respondent itself occupies the cell.
      throw std::logic_error("compute_weights: occupied cell with zero observed count");
    }
    const double n_sa = static_cast<double>(stratum->second);
    const double n_g = static_cast<double>(out.governorates[gi].adult_population);
    const double o_sag = static_cast<double>(cell->second);
    r.weight = (n_sa * n * n_g) / (total * o_sag);
  }
  return out;
}

Eigen::VectorXd normalized_weights(const SurveyDataset& dataset, bool normalize) {
  const int n = dataset.n();
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) {
    if (dataset.respondents[i].weight <= 0) {
      throw std::runtime_error(fmt::format("respondent {} has no weight; run compute_weights",
                                           dataset.respondents[i].id));
    }
    w[i] = dataset.respondents[i].weight;
  }
  if (!normalize) return w;
  // Mean-one within each governorate so weights reshape, not inflate, the
  // effective sample size.
  std::map<int, std::pair<double, int>> sums;
  for (int i = 0; i < n; ++i) {
    auto& [sum, count] = sums[dataset.respondents[i].governorate_id];
    sum += w[i];
    ++count;
  }
  for (int i = 0; i < n; ++i) {
    const auto& [sum, count] = sums[dataset.respondents[i].governorate_id];
    w[i] *= count / sum;
  }
  return w;
}

std::int64_t adult_population_from_yearbook(const std::map<std::string, std::int64_t>& bands) {
  auto teen = bands.find("15-19");
  if (teen == bands.end()) {
    throw std::runtime_error("adult_population_from_yearbook: band 15-19 is required");
  }
  double total = 0.4 * static_cast<double>(teen->second);
  for (const auto& [label, count] : bands) {
    if (AgeBand::parse(label).lo >= 20) total += static_cast<double>(count);
  }
  return std::llround(total);
}

ResponseMatrix truncate_responses(const ResponseMatrix& matrix, int cap) {
  if (cap < 1) throw std::invalid_argument("truncation cap must be >= 1");
  ResponseMatrix out;
  out.truncation_cap = cap;
  out.counts = matrix.counts;
  out.truncated = matrix.truncated;
  if (out.truncated.size() == 0 && out.counts.size() > 0) {
    out.truncated.setConstant(matrix.counts.rows(), matrix.counts.cols(), false);
  }
  for (int i = 0; i < out.counts.rows(); ++i) {
    for (int k = 0; k < out.counts.cols(); ++k) {
      if (out.counts(i, k) < 0) {
        throw std::runtime_error(
            fmt::format("truncate_responses: negative count in row {}", i));
      }
      if (out.counts(i, k) > cap) {
        out.counts(i, k) = cap;
        out.truncated(i, k) = true;
      }
    }
  }
  return out;
}

std::vector<Respondent> impute_ages(const std::vector<Respondent>& respondents) {
  std::map<std::string, std::pair<double, int>> sums;
  for (const auto& r : respondents) {
    if (r.age_years) {
      auto& [sum, count] = sums[r.age_group];
      sum += *r.age_years;
      ++count;
    }
  }
  std::vector<Respondent> out = respondents;
  for (auto& r : out) {
    if (r.age_years) continue;
    auto it = sums.find(r.age_group);
    if (it == sums.end() || it->second.second == 0) {
      throw std::runtime_error(fmt::format(
          "impute_ages: no observed exact ages in band {}", r.age_group));
    }
    r.age_years = it->second.first / it->second.second;
  }
  return out;
}

Eigen::VectorXd build_design_row(const Respondent& r, double age_center) {
  if (!r.age_years) {
    throw std::runtime_error(
        fmt::format("build_design_row: respondent {} has no age; impute first", r.id));
  }
  Eigen::VectorXd z(kDesignDim);
  z[0] = r.sex == Sex::male ? 1.0 : 0.0;
  z[1] = *r.age_years - age_center;
  z[2] = r.nationality == Nationality::syrian ? 1.0 : 0.0;
  z[3] = r.nationality == Nationality::egyptian ? 1.0 : 0.0;
  z[4] = r.nationality == Nationality::other ? 1.0 : 0.0;
  return z;
}

double mean_age(const std::vector<Respondent>& respondents) {
  if (respondents.empty()) throw std::runtime_error("mean_age: no respondents");
  double sum = 0;
  for (const auto& r : respondents) {
    if (!r.age_years) throw std::runtime_error("mean_age: missing ages; impute first");
    sum += *r.age_years;
  }
  return sum / static_cast<double>(respondents.size());
}

}  // namespace scaleup
