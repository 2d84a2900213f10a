#include "scaleup/data.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

namespace scaleup {

std::string to_string(Sex s) { return s == Sex::male ? "male" : "female"; }

std::string to_string(Nationality n) {
  switch (n) {
    case Nationality::jordanian: return "jordanian";
    case Nationality::syrian: return "syrian";
    case Nationality::egyptian: return "egyptian";
    case Nationality::other: return "other";
  }
  return "other";
}

std::string to_string(GroupKind k) {
  switch (k) {
    case GroupKind::probe_direct: return "probe_direct";
    case GroupKind::probe_known_only: return "probe_known_only";
    case GroupKind::probe_both: return "probe_both";
    case GroupKind::target: return "target";
  }
  return "target";
}

Sex sex_from_string(const std::string& s) {
  if (s == "male" || s == "m") return Sex::male;
  if (s == "female" || s == "f") return Sex::female;
  throw std::invalid_argument(fmt::format("unknown sex '{}'", s));
}

Nationality nationality_from_string(const std::string& s) {
  if (s == "jordanian") return Nationality::jordanian;
  if (s == "syrian") return Nationality::syrian;
  if (s == "egyptian") return Nationality::egyptian;
  // Anything else collapses to the survey's fourth category.
  return Nationality::other;
}

GroupKind group_kind_from_string(const std::string& s) {
  if (s == "probe_direct") return GroupKind::probe_direct;
  if (s == "probe_known_only") return GroupKind::probe_known_only;
  if (s == "probe_both") return GroupKind::probe_both;
  if (s == "target") return GroupKind::target;
  throw std::invalid_argument(fmt::format("unknown group kind '{}'", s));
}

std::string AgeBand::label() const {
  if (hi < 0) return fmt::format("{}+", lo);
  return fmt::format("{}-{}", lo, hi);
}

AgeBand AgeBand::parse(const std::string& label) {
  AgeBand band;
  auto dash = label.find('-');
  try {
    if (dash != std::string::npos) {
      band.lo = std::stoi(label.substr(0, dash));
      band.hi = std::stoi(label.substr(dash + 1));
    } else if (!label.empty() && label.back() == '+') {
      band.lo = std::stoi(label.substr(0, label.size() - 1));
      band.hi = -1;
    } else {
      throw std::invalid_argument("");
    }
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("malformed age band '{}'", label));
  }
  if (band.hi >= 0 && band.hi < band.lo) {
    throw std::invalid_argument(fmt::format("malformed age band '{}'", label));
  }
  return band;
}

std::int64_t SurveyDataset::adult_total() const {
  std::int64_t total = 0;
  for (const auto& g : governorates) total += g.adult_population;
  return total;
}

int SurveyDataset::governorate_index(int gov_id) const {
  for (std::size_t j = 0; j < governorates.size(); ++j) {
    if (governorates[j].id == gov_id) return static_cast<int>(j);
  }
  return -1;
}

int SurveyDataset::group_index(int group_id) const {
  for (std::size_t j = 0; j < groups.size(); ++j) {
    if (groups[j].id == group_id) return static_cast<int>(j);
  }
  return -1;
}

int SurveyDataset::respondent_index(int respondent_id) const {
  for (std::size_t j = 0; j < respondents.size(); ++j) {
    if (respondents[j].id == respondent_id) return static_cast<int>(j);
  }
  return -1;
}

std::map<std::tuple<Sex, std::string, int>, int> SurveyDataset::observed_strata() const {
  std::map<std::tuple<Sex, std::string, int>, int> counts;
  for (const auto& r : respondents) {
    ++counts[{r.sex, r.age_group, r.governorate_id}];
  }
  return counts;
}

void SurveyDataset::validate() const {
  std::unordered_map<int, int> gov_ids, group_ids, resp_ids;
  for (const auto& g : governorates) {
    if (g.adult_population <= 0) {
      throw std::runtime_error(
          fmt::format("governorate '{}' has non-positive adult population", g.name));
    }
    if (++gov_ids[g.id] > 1) {
      throw std::runtime_error(fmt::format("duplicate governorate id {}", g.id));
    }
  }
  for (const auto& r : respondents) {
    if (++resp_ids[r.id] > 1) {
      throw std::runtime_error(fmt::format("duplicate respondent id {}", r.id));
    }
    if (!gov_ids.count(r.governorate_id)) {
      throw std::runtime_error(fmt::format("respondent {} references unknown governorate {}",
                                           r.id, r.governorate_id));
    }
    AgeBand band = AgeBand::parse(r.age_group);
    if (r.age_years && !band.contains(*r.age_years)) {
      throw std::runtime_error(fmt::format(
          "respondent {}: age {} outside reported band {}", r.id, *r.age_years, r.age_group));
    }
  }
  for (const auto& grp : groups) {
    if (++group_ids[grp.id] > 1) {
      throw std::runtime_error(fmt::format("duplicate group id {}", grp.id));
    }
    if (grp.kind == GroupKind::probe_known_only && grp.known_size.empty() &&
        !grp.known_size_national) {
      throw std::runtime_error(fmt::format(
          "group '{}' is probe_known_only but carries no known size", grp.label));
    }
    for (const auto& [gov_id, size] : grp.known_size) {
      int gi = governorate_index(gov_id);
      if (gi < 0) {
        throw std::runtime_error(fmt::format("group '{}' has known size for unknown governorate {}",
                                             grp.label, gov_id));
      }
      if (size <= 0 || size >= governorates[gi].adult_population) {
        throw std::runtime_error(
            fmt::format("group '{}' known size {} out of (0, N_g) for governorate {}", grp.label,
                        size, gov_id));
      }
    }
  }
  if (responses.counts.size() > 0) {
    if (responses.n() != n() || responses.k() != n_groups()) {
      throw std::runtime_error(fmt::format("response matrix is {}x{} but dataset has {}x{}",
                                           responses.n(), responses.k(), n(), n_groups()));
    }
    if ((responses.counts.array() < 0).any()) {
      throw std::runtime_error("response matrix contains negative counts");
    }
    if ((responses.counts.array() > responses.truncation_cap).any()) {
      throw std::runtime_error("response matrix contains counts above the truncation cap");
    }
  }
  if (!memberships.empty()) {
    if (memberships.asked.rows() != n() || memberships.asked.cols() != n_groups()) {
      throw std::runtime_error("membership matrix dimensions do not match dataset");
    }
    for (int k = 0; k < n_groups(); ++k) {
      if (!groups[k].has_membership_question() && memberships.asked.col(k).any()) {
        throw std::runtime_error(fmt::format(
            "membership answers present for group '{}' which has no membership question",
            groups[k].label));
      }
    }
  }
}

}  // namespace scaleup
