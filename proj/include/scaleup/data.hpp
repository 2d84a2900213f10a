#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scaleup {

enum class Sex { male, female };
enum class Nationality { jordanian, syrian, egyptian, other };

// probe_direct: membership question asked, no external size record.
// probe_known_only: external size record, no membership question possible.
// probe_both: membership question asked and external size record available.
// target: the hidden population; never has a size record.
enum class GroupKind { probe_direct, probe_known_only, probe_both, target };

std::string to_string(Sex s);
std::string to_string(Nationality n);
std::string to_string(GroupKind k);
Sex sex_from_string(const std::string& s);
Nationality nationality_from_string(const std::string& s);
GroupKind group_kind_from_string(const std::string& s);

// 5-year age band such as "20-24", plus "18-19" and the open band "80+".
struct AgeBand {
  int lo = 0;
  int hi = -1;  // -1 means open-ended

  bool contains(double age) const {
    return age >= lo && (hi < 0 || age < hi + 1);
  }
  std::string label() const;
  static AgeBand parse(const std::string& label);
};

struct Governorate {
  int id = 0;  // external id, 1-based in files
  std::string name;
  std::int64_t adult_population = 0;  // persons aged 18+
};

struct Respondent {
  int id = 0;
  int governorate_id = 0;
  Sex sex = Sex::female;
  std::optional<double> age_years;
  std::string age_group;
  Nationality nationality = Nationality::jordanian;
  double weight = 0.0;  // post-stratification weight, filled by compute_weights
};

struct Group {
  int id = 0;
  std::string label;
  GroupKind kind = GroupKind::target;
  std::map<int, std::int64_t> known_size;  // governorate id -> size
  std::optional<std::int64_t> known_size_national;

  bool is_probe() const { return kind != GroupKind::target; }
  bool has_membership_question() const {
    return kind == GroupKind::probe_direct || kind == GroupKind::probe_both;
  }
};

struct ResponseMatrix {
  Eigen::MatrixXi counts;  // n x K
  int truncation_cap = 100;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> truncated;  // n x K

  int n() const { return static_cast<int>(counts.rows()); }
  int k() const { return static_cast<int>(counts.cols()); }
};

struct StratumKey {
  Sex sex;
  std::string age_group;
  auto operator<=>(const StratumKey&) const = default;
};

// Optional own-membership indicators: member(i, k) is meaningful only where
// asked(i, k) is true (the membership question was put to respondent i for
// probe group k).
struct MembershipMatrix {
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> asked;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> member;

  bool empty() const { return asked.size() == 0; }
};

// The single input bundle for the pipeline. Immutable once validated;
// operations that "fill" fields return a modified copy.
struct SurveyDataset {
  std::vector<Governorate> governorates;
  std::vector<Respondent> respondents;
  std::vector<Group> groups;
  ResponseMatrix responses;
  std::map<StratumKey, std::int64_t> national_strata;  // (sex, band) -> N_{s,a}
  MembershipMatrix memberships;

  int n() const { return static_cast<int>(respondents.size()); }
  int n_groups() const { return static_cast<int>(groups.size()); }
  int n_governorates() const { return static_cast<int>(governorates.size()); }

  std::int64_t adult_total() const;  // N = sum of governorate adult populations

  int governorate_index(int gov_id) const;  // position in governorates, -1 if absent
  int group_index(int group_id) const;
  int respondent_index(int respondent_id) const;

  // Observed count O_{s,a,g} for a respondent's cell, recomputed from the roster.
  std::map<std::tuple<Sex, std::string, int>, int> observed_strata() const;

  // Checks all cross-references and invariants; throws on violation.
  void validate() const;
};

}  // namespace scaleup
