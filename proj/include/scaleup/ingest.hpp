#pragma once

#include <functional>
#include <optional>
#include <string>

#include "scaleup/data.hpp"

namespace scaleup {

// Input file set. strata/known_sizes/memberships are optional depending on
// which pipeline stages will run.
struct DatasetPaths {
  std::string governorates;
  std::string respondents;
  std::string responses;
  std::string groups;
  std::string strata;       // optional
  std::string known_sizes;  // optional
  std::string memberships;  // optional
};

struct IngestOptions {
  // Lenient mode downgrades malformed-row rejections to warnings and drops
  // the offending rows.
  bool lenient = false;
  int truncation_cap = 100;
  std::function<void(const std::string&)> warn;  // sink for lenient-mode warnings
};

SurveyDataset ingest(const DatasetPaths& paths, const IngestOptions& options = {});

// Writes the dataset back out in the same schemas. Weights are included as an
// extra column when present (any respondent weight > 0).
void write_dataset(const SurveyDataset& dataset, const DatasetPaths& paths);

// Just the respondent roster, same schema as write_dataset uses.
void write_respondents_csv(const SurveyDataset& dataset, const std::string& path);

// Reads an age-band count table (columns: age_band,count) for
// adult_population_from_yearbook. Also accepts male/female columns, in which
// case count = male + female.
std::map<std::string, std::int64_t> read_yearbook_bands(const std::string& path);

}  // namespace scaleup
