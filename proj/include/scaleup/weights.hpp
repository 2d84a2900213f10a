#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scaleup/data.hpp"

namespace scaleup {

// Fills post-stratification weights
//   w_i = (N_{s,a} * n * N_g) / (N * O_{s,a,g})
// where N_{s,a} is the national adult count of the respondent's sex/age
// stratum, n the sample size, N_g the governorate adult population, N the
// national adult total, and O_{s,a,g} the observed cell count. Respondents
// sharing a (sex, age band, governorate) cell share a weight.
SurveyDataset compute_weights(const SurveyDataset& dataset);

// Per-governorate weights rescaled to mean one, for use in weighted
// likelihoods. Raw weights stay on the respondents.
Eigen::VectorXd normalized_weights(const SurveyDataset& dataset, bool normalize = true);

// Adults (18+) from 5-year yearbook bands: all bands at 20 and above count in
// full, and 2/5 of the 15-19 band stands in for the 18 and 19 year-olds.
std::int64_t adult_population_from_yearbook(const std::map<std::string, std::int64_t>& bands);

// Clips counts at cap and flags the cells that were clipped. Idempotent.
ResponseMatrix truncate_responses(const ResponseMatrix& matrix, int cap);

// Replaces each missing age with the mean of the exact ages observed in the
// same age band. Observed ages are untouched.
std::vector<Respondent> impute_ages(const std::vector<Respondent>& respondents);

// Covariate row [male, age - center, syrian, egyptian, other]; a Jordanian
// female at the center age maps to the zero vector.
Eigen::VectorXd build_design_row(const Respondent& respondent, double age_center);

inline constexpr int kDesignDim = 5;
inline constexpr int kDesignMaleIndex = 0;

// Mean respondent age (ages must be imputed first).
double mean_age(const std::vector<Respondent>& respondents);

}  // namespace scaleup
