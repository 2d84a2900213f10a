// Survey data model: weights, yearbook totals, truncation, imputation,
// design rows, and file ingestion.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "scaleup/data.hpp"
#include "scaleup/ingest.hpp"
#include "scaleup/weights.hpp"

using namespace scaleup;

namespace {

std::string fixture_path(const std::string& rel) {
  const char* root = std::getenv("SCALEUP_FIXTURES");
  REQUIRE_MESSAGE(root != nullptr, "SCALEUP_FIXTURES must point at tests/fixtures");
  return std::string(root) + "/" + rel;
}

std::string data_path(const std::string& rel) {
  const char* root = std::getenv("SCALEUP_DATA");
  REQUIRE_MESSAGE(root != nullptr, "SCALEUP_DATA must point at data/");
  return std::string(root) + "/" + rel;
}

Respondent make_resp(int id, int gov, Sex sex, std::optional<double> age,
                     const std::string& band, Nationality nat = Nationality::jordanian) {
  Respondent r;
  r.id = id;
  r.governorate_id = gov;
  r.sex = sex;
  r.age_years = age;
  r.age_group = band;
  r.nationality = nat;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

DatasetPaths paths_in_dir(const std::filesystem::path& dir) {
  DatasetPaths p;
  p.governorates = (dir / "governorates.csv").string();
  p.respondents = (dir / "respondents.csv").string();
  p.responses = (dir / "responses.csv").string();
  p.groups = (dir / "groups.csv").string();
  p.strata = (dir / "strata.csv").string();
  p.known_sizes = (dir / "known_sizes.csv").string();
  p.memberships = (dir / "memberships.csv").string();
  return p;
}

}  // namespace

TEST_CASE("weight formula: worked single-cell example") {
  // N_{s,a}=100, n=10, N_g=50, N=1000, O=2 -> w = 100*10*50/(1000*2) = 25.
  SurveyDataset ds;
  ds.governorates = {{1, "A", 50}, {2, "B", 950}};
  ds.respondents.push_back(make_resp(1, 1, Sex::male, 22, "20-24"));
  ds.respondents.push_back(make_resp(2, 1, Sex::male, 23, "20-24"));
  for (int i = 3; i <= 10; ++i) {
    ds.respondents.push_back(make_resp(i, 2, Sex::female, 31, "30-34"));
  }
  ds.national_strata[{Sex::male, "20-24"}] = 100;
  ds.national_strata[{Sex::female, "30-34"}] = 640;
  ds.validate();

  SurveyDataset out = compute_weights(ds);
  CHECK(out.respondents[0].weight == 25.0);
  CHECK(out.respondents[1].weight == 25.0);
  // Second cell: 640*10*950/(1000*8) = 760 exactly.
  for (int i = 2; i < 10; ++i) CHECK(out.respondents[i].weight == 760.0);
  // Respondents sharing a (sex, band, governorate) cell share a weight.
  CHECK(out.respondents[0].weight == out.respondents[1].weight);
  // Input dataset is untouched.
  CHECK(ds.respondents[0].weight == 0.0);
}

TEST_CASE("weight formula: self-weighting design gives unit weights") {
  // Cells constructed so O = N_{s,a}*n*N_g/N exactly; per-governorate counts
  // are n*N_g/N (6 and 4 out of 10).
  SurveyDataset ds;
  ds.governorates = {{1, "A", 600}, {2, "B", 400}};
  for (int i = 1; i <= 6; ++i) ds.respondents.push_back(make_resp(i, 1, Sex::male, 22, "20-24"));
  for (int i = 7; i <= 10; ++i) {
    ds.respondents.push_back(make_resp(i, 2, Sex::female, 27, "25-29"));
  }
  ds.national_strata[{Sex::male, "20-24"}] = 1;
  ds.national_strata[{Sex::female, "25-29"}] = 1;
  ds.validate();

  SurveyDataset out = compute_weights(ds);
  for (const auto& r : out.respondents) CHECK(r.weight == 1.0);
}

TEST_CASE("weight formula: cell identity w*O = N_sa*n*N_g/N holds exactly") {
  // Power-of-two populations keep every quotient exactly representable, so
  // the identity can be asserted with == rather than a tolerance.
  SurveyDataset ds;
  ds.governorates = {{1, "A", 512}, {2, "B", 512}};
  ds.respondents = {
      make_resp(1, 1, Sex::male, 22, "20-24"),   make_resp(2, 1, Sex::male, 23, "20-24"),
      make_resp(3, 1, Sex::female, 21, "20-24"), make_resp(4, 1, Sex::female, 31, "30-34"),
      make_resp(5, 2, Sex::male, 24, "20-24"),   make_resp(6, 2, Sex::male, 32, "30-34"),
      make_resp(7, 2, Sex::male, 33, "30-34"),   make_resp(8, 2, Sex::female, 34, "30-34"),
  };
  ds.national_strata[{Sex::male, "20-24"}] = 64;
  ds.national_strata[{Sex::female, "20-24"}] = 32;
  ds.national_strata[{Sex::male, "30-34"}] = 256;
  ds.national_strata[{Sex::female, "30-34"}] = 128;
  ds.validate();

  SurveyDataset out = compute_weights(ds);
  auto observed = out.observed_strata();
  const double n = 8.0, total = 1024.0;
  for (const auto& r : out.respondents) {
    double n_sa = static_cast<double>(out.national_strata.at({r.sex, r.age_group}));
    double n_g = static_cast<double>(
        out.governorates[out.governorate_index(r.governorate_id)].adult_population);
    double o = observed.at({r.sex, r.age_group, r.governorate_id});
    CHECK(r.weight * o == n_sa * n * n_g / total);
  }
}

TEST_CASE("weight formula: missing stratum is rejected by name") {
  SurveyDataset ds;
  ds.governorates = {{1, "A", 100}};
  ds.respondents = {make_resp(1, 1, Sex::female, 31, "30-34")};
  ds.national_strata[{Sex::male, "20-24"}] = 10;
  ds.validate();
  try {
    compute_weights(ds);
    FAIL("expected a rejection");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("female") != std::string::npos);
    CHECK(msg.find("30-34") != std::string::npos);
  }
}

TEST_CASE("normalized weights average one within each governorate") {
  SurveyDataset ds;
  ds.governorates = {{1, "A", 700}, {2, "B", 300}};
  ds.respondents = {
      make_resp(1, 1, Sex::male, 22, "20-24"),   make_resp(2, 1, Sex::female, 23, "20-24"),
      make_resp(3, 1, Sex::female, 31, "30-34"), make_resp(4, 2, Sex::male, 24, "20-24"),
      make_resp(5, 2, Sex::male, 33, "30-34"),   make_resp(6, 2, Sex::female, 34, "30-34"),
  };
  ds.national_strata[{Sex::male, "20-24"}] = 150;
  ds.national_strata[{Sex::female, "20-24"}] = 210;
  ds.national_strata[{Sex::male, "30-34"}] = 330;
  ds.national_strata[{Sex::female, "30-34"}] = 310;
  SurveyDataset weighted = compute_weights(ds);

  Eigen::VectorXd w = normalized_weights(weighted);
  CHECK((w[0] + w[1] + w[2]) / 3.0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((w[3] + w[4] + w[5]) / 3.0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((w.array() > 0).all());

  Eigen::VectorXd raw = normalized_weights(weighted, false);
  for (int i = 0; i < 6; ++i) CHECK(raw[i] == weighted.respondents[i].weight);

  // Weights must exist first.
  CHECK_THROWS_AS(normalized_weights(ds), std::runtime_error);
}

TEST_CASE("yearbook adult totals") {
  CHECK(adult_population_from_yearbook({{"15-19", 100}, {"20-24", 200}}) == 240);
  CHECK(adult_population_from_yearbook({{"15-19", 0}, {"20-24", 50}}) == 50);
  // Bands under 15 never count.
  CHECK(adult_population_from_yearbook(
            {{"0-4", 999}, {"5-9", 999}, {"10-14", 999}, {"15-19", 10}, {"80+", 7}}) == 11);
  CHECK_THROWS_AS(adult_population_from_yearbook({{"20-24", 50}}), std::runtime_error);
}

TEST_CASE("yearbook fixture reproduces the national adult total") {
  auto bands = read_yearbook_bands(data_path("jordan_yearbook_2023.csv"));
  CHECK(adult_population_from_yearbook(bands) == 6'873'239);
}

TEST_CASE("response truncation clips, flags, and is idempotent") {
  ResponseMatrix m;
  m.counts.resize(2, 2);
  m.counts << 150, 100, 0, 37;
  ResponseMatrix t = truncate_responses(m, 100);
  CHECK(t.counts(0, 0) == 100);
  CHECK(t.truncated(0, 0));
  CHECK(t.counts(0, 1) == 100);
  CHECK_FALSE(t.truncated(0, 1));
  CHECK(t.counts(1, 0) == 0);
  CHECK_FALSE(t.truncated(1, 0));
  CHECK(t.counts(1, 1) == 37);
  CHECK_FALSE(t.truncated(1, 1));
  CHECK(t.truncation_cap == 100);

  ResponseMatrix tt = truncate_responses(t, 100);
  CHECK(tt.counts == t.counts);
  CHECK(tt.truncated == t.truncated);

  ResponseMatrix neg;
  neg.counts.resize(2, 1);
  neg.counts << 3, -1;
  CHECK_THROWS_WITH_AS(truncate_responses(neg, 100),
                       doctest::Contains("row 1"), std::runtime_error);
  CHECK_THROWS_AS(truncate_responses(m, 0), std::invalid_argument);
}

TEST_CASE("age imputation fills band means and leaves observed ages alone") {
  std::vector<Respondent> roster = {
      make_resp(1, 1, Sex::male, 30, "30-34"),
      make_resp(2, 1, Sex::female, 34, "30-34"),
      make_resp(3, 1, Sex::female, std::nullopt, "30-34"),
  };
  auto out = impute_ages(roster);
  CHECK(*out[2].age_years == 32.0);
  CHECK(*out[0].age_years == 30.0);
  CHECK(*out[1].age_years == 34.0);

  // Identity when nothing is missing.
  std::vector<Respondent> full = {make_resp(1, 1, Sex::male, 30, "30-34"),
                                  make_resp(2, 1, Sex::female, 34, "30-34")};
  auto same = impute_ages(full);
  for (std::size_t i = 0; i < full.size(); ++i) CHECK(*same[i].age_years == *full[i].age_years);

  std::vector<Respondent> orphan = {make_resp(1, 1, Sex::male, std::nullopt, "55-59")};
  CHECK_THROWS_WITH_AS(impute_ages(orphan), doctest::Contains("55-59"), std::runtime_error);
}

TEST_CASE("age imputation matches a brute-force oracle on a masked roster") {
  std::mt19937_64 rng(20240518);
  std::vector<std::string> bands = {"20-24", "25-29", "30-34", "35-39", "40-44"};
  std::vector<Respondent> roster;
  std::map<std::string, std::pair<double, int>> oracle_sums;
  for (int i = 0; i < 200; ++i) {
    const std::string& band = bands[rng() % bands.size()];
    AgeBand b = AgeBand::parse(band);
    std::uniform_real_distribution<double> age_dist(b.lo, b.hi + 0.999);
    double age = age_dist(rng);
    bool masked = (rng() % 20) == 0;  // ~5%
    roster.push_back(make_resp(i + 1, 1, Sex::male, masked ? std::nullopt : std::optional(age),
                               band));
    if (!masked) {
      oracle_sums[band].first += age;
      oracle_sums[band].second += 1;
    }
  }
  auto out = impute_ages(roster);
  for (std::size_t i = 0; i < roster.size(); ++i) {
    if (roster[i].age_years) {
      CHECK(*out[i].age_years == *roster[i].age_years);
    } else {
      const auto& [sum, count] = oracle_sums.at(roster[i].age_group);
      REQUIRE(count > 0);
      CHECK(*out[i].age_years == doctest::Approx(sum / count).epsilon(1e-12));
    }
  }
}

TEST_CASE("design rows encode male, centered age, and nationality") {
  double center = 41.9;
  Respondent base = make_resp(1, 1, Sex::female, 41.9, "40-44", Nationality::jordanian);
  Eigen::VectorXd z0 = build_design_row(base, center);
  REQUIRE(z0.size() == kDesignDim);
  CHECK(z0.isZero(0.0));

  Respondent syr = make_resp(2, 1, Sex::male, 41.9, "40-44", Nationality::syrian);
  Eigen::VectorXd z1 = build_design_row(syr, center);
  CHECK(z1[0] == 1.0);
  CHECK(z1[kDesignMaleIndex] == 1.0);
  CHECK(z1[1] == 0.0);
  CHECK(z1[2] == 1.0);
  CHECK(z1[3] == 0.0);
  CHECK(z1[4] == 0.0);

  Respondent egy = make_resp(3, 1, Sex::female, 50, "50-54", Nationality::egyptian);
  Eigen::VectorXd z2 = build_design_row(egy, center);
  CHECK(z2[0] == 0.0);
  CHECK(z2[1] == doctest::Approx(8.1).epsilon(1e-12));
  CHECK(z2[2] == 0.0);
  CHECK(z2[3] == 1.0);
  CHECK(z2[4] == 0.0);

  Respondent oth = make_resp(4, 1, Sex::female, 41.9, "40-44", Nationality::other);
  CHECK(build_design_row(oth, center)[4] == 1.0);

  // Injective on (sex, nationality, age) given a shared center.
  CHECK(z0 != z1);
  CHECK(z1 != z2);
  CHECK(build_design_row(oth, center) != z0);

  Respondent no_age = make_resp(5, 1, Sex::male, std::nullopt, "30-34");
  CHECK_THROWS_AS(build_design_row(no_age, center), std::runtime_error);
}

TEST_CASE("mean age averages imputed rosters") {
  std::vector<Respondent> roster = {make_resp(1, 1, Sex::male, 30, "30-34"),
                                    make_resp(2, 1, Sex::female, 34, "30-34")};
  CHECK(mean_age(roster) == 32.0);
  roster.push_back(make_resp(3, 1, Sex::male, std::nullopt, "30-34"));
  CHECK_THROWS_AS(mean_age(roster), std::runtime_error);
}

TEST_CASE("ingest reads the mini fixture coherently") {
  DatasetPaths p = paths_in_dir(fixture_path("mini"));
  SurveyDataset ds = ingest(p);

  REQUIRE(ds.n() == 6);
  REQUIRE(ds.n_groups() == 4);
  REQUIRE(ds.n_governorates() == 2);
  CHECK(ds.adult_total() == 1'000'000);

  // Respondent fields, including an unknown nationality collapsing to other.
  CHECK(ds.respondents[1].sex == Sex::female);
  CHECK(ds.respondents[1].nationality == Nationality::syrian);
  CHECK(*ds.respondents[1].age_years == 23.5);
  CHECK_FALSE(ds.respondents[2].age_years.has_value());
  CHECK(ds.respondents[5].nationality == Nationality::other);

  // Group catalog and known sizes.
  CHECK(ds.groups[0].kind == GroupKind::probe_both);
  CHECK(ds.groups[0].known_size.at(1) == 12000);
  CHECK(ds.groups[0].known_size.at(2) == 9000);
  CHECK(ds.groups[1].kind == GroupKind::probe_known_only);
  CHECK(ds.groups[3].label == "Migrant workers, domestic");
  CHECK(ds.groups[3].kind == GroupKind::target);

  // Responses land in the right cells; 150 is truncated at the default cap.
  CHECK(ds.responses.counts(0, 0) == 3);
  CHECK(ds.responses.counts(2, 1) == 100);
  CHECK(ds.responses.truncated(2, 1));
  CHECK(ds.responses.counts(1, 0) == 5);
  CHECK(ds.responses.counts(0, 1) == 0);
  CHECK_FALSE(ds.responses.truncated(0, 1));

  // Strata table.
  CHECK(ds.national_strata.at({Sex::male, "20-24"}) == 520000);
  CHECK(ds.national_strata.size() == 6);

  // Memberships only where asked.
  REQUIRE_FALSE(ds.memberships.empty());
  CHECK(ds.memberships.asked(0, 0));
  CHECK(ds.memberships.member(0, 0));
  CHECK(ds.memberships.asked(1, 0));
  CHECK_FALSE(ds.memberships.member(1, 0));
  CHECK(ds.memberships.asked(2, 2));
  CHECK_FALSE(ds.memberships.asked(0, 1));
}

TEST_CASE("ingest -> write -> ingest round-trips bit-identically") {
  namespace fs = std::filesystem;
  DatasetPaths src = paths_in_dir(fixture_path("mini"));
  SurveyDataset ds = ingest(src);

  fs::path tmp = fs::temp_directory_path() / "scaleup_roundtrip";
  fs::create_directories(tmp / "b");
  fs::create_directories(tmp / "c");
  DatasetPaths b = paths_in_dir(tmp / "b");
  DatasetPaths c = paths_in_dir(tmp / "c");

  write_dataset(ds, b);
  SurveyDataset ds2 = ingest(b);
  write_dataset(ds2, c);

  for (auto field : {&DatasetPaths::governorates, &DatasetPaths::respondents,
                     &DatasetPaths::responses, &DatasetPaths::groups, &DatasetPaths::strata,
                     &DatasetPaths::known_sizes, &DatasetPaths::memberships}) {
    CAPTURE(b.*field);
    CHECK(slurp(b.*field) == slurp(c.*field));
  }
  fs::remove_all(tmp);
}

TEST_CASE("strict ingest rejects a malformed row; lenient mode drops it") {
  DatasetPaths p = paths_in_dir(fixture_path("mini"));
  DatasetPaths bad = p;
  bad.respondents = fixture_path("mini_bad/respondents.csv");
  bad.responses = fixture_path("mini_bad/responses.csv");
  bad.memberships.clear();

  CHECK_THROWS_WITH_AS(ingest(bad), doctest::Contains("row 2"), std::runtime_error);

  std::vector<std::string> warnings;
  IngestOptions opt;
  opt.lenient = true;
  opt.warn = [&](const std::string& w) { warnings.push_back(w); };
  SurveyDataset ds = ingest(bad, opt);
  CHECK(ds.n() == 2);
  CHECK(ds.respondent_index(2) == -1);
  // The bad respondent's response row is dropped too, with its own warning.
  REQUIRE(warnings.size() == 2);
  CHECK(warnings[0].find("unknown sex") != std::string::npos);
  CHECK(warnings[1].find("respondent_id 2") != std::string::npos);
  CHECK(ds.responses.counts(0, 0) == 3);
  CHECK(ds.responses.counts(1, 0) == 2);
}

TEST_CASE("ingest honors a custom truncation cap") {
  DatasetPaths p = paths_in_dir(fixture_path("mini"));
  IngestOptions opt;
  opt.truncation_cap = 30;
  SurveyDataset ds = ingest(p, opt);
  CHECK(ds.responses.truncation_cap == 30);
  CHECK(ds.responses.counts(2, 1) == 30);
  CHECK(ds.responses.truncated(2, 1));
}
