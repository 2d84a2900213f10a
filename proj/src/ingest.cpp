#include "scaleup/ingest.hpp"

#include <charconv>
#include <stdexcept>

#include <fmt/format.h>

#include "scaleup/csv.hpp"

namespace scaleup {

namespace {

[[noreturn]] void reject(const std::string& file, std::size_t row, const std::string& what) {
  // +2: 1-based line numbers, header on line 1.
  throw std::runtime_error(fmt::format("{}: row {} (line {}): {}", file, row + 1, row + 2, what));
}

int parse_int(const std::string& s, const char* what) {
  int value = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::invalid_argument(fmt::format("bad {} '{}'", what, s));
  }
  return value;
}

std::int64_t parse_i64(const std::string& s, const char* what) {
  std::int64_t value = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::invalid_argument(fmt::format("bad {} '{}'", what, s));
  }
  return value;
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    double value = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("");
    return value;
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("bad {} '{}'", what, s));
  }
}

std::string format_double(double x) { return fmt::format("{}", x); }

// Runs `body` per row; in lenient mode a failed row is reported and skipped.
template <typename Body>
void for_each_row(const csv::Table& table, const std::string& file, const IngestOptions& opt,
                  Body&& body) {
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    try {
      body(table.rows[r]);
    } catch (const std::invalid_argument& e) {
      if (!opt.lenient) reject(file, r, e.what());
      if (opt.warn) opt.warn(fmt::format("{}: row {}: {} (dropped)", file, r + 1, e.what()));
    }
  }
}

}  // namespace

SurveyDataset ingest(const DatasetPaths& paths, const IngestOptions& opt) {
  SurveyDataset ds;

  {
    auto t = csv::read_file(paths.governorates);
    auto c_id = t.col("id"), c_name = t.col("name"), c_pop = t.col("adult_population");
    for_each_row(t, paths.governorates, opt, [&](const std::vector<std::string>& row) {
      Governorate g;
      g.id = parse_int(row[c_id], "governorate id");
      g.name = row[c_name];
      g.adult_population = parse_i64(row[c_pop], "adult_population");
      if (g.adult_population <= 0) {
        throw std::invalid_argument(fmt::format("adult_population must be positive, got {}",
                                                g.adult_population));
      }
      ds.governorates.push_back(std::move(g));
    });
  }

  {
    auto t = csv::read_file(paths.respondents);
    auto c_id = t.col("id"), c_gov = t.col("governorate"), c_sex = t.col("sex");
    auto c_age = t.col("age_years"), c_band = t.col("age_group"), c_nat = t.col("nationality");
    bool has_weight = t.has_col("weight");
    std::size_t c_w = has_weight ? t.col("weight") : 0;
    for_each_row(t, paths.respondents, opt, [&](const std::vector<std::string>& row) {
      Respondent r;
      r.id = parse_int(row[c_id], "respondent id");
      r.governorate_id = parse_int(row[c_gov], "governorate");
      r.sex = sex_from_string(row[c_sex]);
      if (!row[c_age].empty()) r.age_years = parse_double(row[c_age], "age_years");
      r.age_group = row[c_band];
      AgeBand band = AgeBand::parse(r.age_group);
      if (r.age_years && !band.contains(*r.age_years)) {
        throw std::invalid_argument(
            fmt::format("age {} outside band {}", *r.age_years, r.age_group));
      }
      r.nationality = nationality_from_string(row[c_nat]);
      if (has_weight && !row[c_w].empty()) r.weight = parse_double(row[c_w], "weight");
      ds.respondents.push_back(std::move(r));
    });
  }

  {
    auto t = csv::read_file(paths.groups);
    auto c_id = t.col("group_id"), c_label = t.col("label"), c_kind = t.col("kind");
    auto c_nat = t.col("known_size_national");
    for_each_row(t, paths.groups, opt, [&](const std::vector<std::string>& row) {
      Group g;
      g.id = parse_int(row[c_id], "group_id");
      g.label = row[c_label];
      g.kind = group_kind_from_string(row[c_kind]);
      if (!row[c_nat].empty()) g.known_size_national = parse_i64(row[c_nat], "known_size_national");
      ds.groups.push_back(std::move(g));
    });
  }

  if (!paths.known_sizes.empty()) {
    auto t = csv::read_file(paths.known_sizes);
    auto c_g = t.col("group_id"), c_gov = t.col("governorate"), c_size = t.col("known_size");
    for_each_row(t, paths.known_sizes, opt, [&](const std::vector<std::string>& row) {
      int group_id = parse_int(row[c_g], "group_id");
      int gov_id = parse_int(row[c_gov], "governorate");
      std::int64_t size = parse_i64(row[c_size], "known_size");
      int k = ds.group_index(group_id);
      if (k < 0) throw std::invalid_argument(fmt::format("unknown group_id {}", group_id));
      ds.groups[k].known_size[gov_id] = size;
    });
  }

  if (!paths.strata.empty()) {
    auto t = csv::read_file(paths.strata);
    auto c_sex = t.col("sex"), c_band = t.col("age_group"), c_count = t.col("national_count");
    for_each_row(t, paths.strata, opt, [&](const std::vector<std::string>& row) {
      Sex sex = sex_from_string(row[c_sex]);
      AgeBand::parse(row[c_band]);  // shape check
      std::int64_t count = parse_i64(row[c_count], "national_count");
      if (count <= 0) throw std::invalid_argument("national_count must be positive");
      ds.national_strata[{sex, row[c_band]}] = count;
    });
  }

  {
    auto t = csv::read_file(paths.responses);
    auto c_r = t.col("respondent_id"), c_g = t.col("group_id"), c_count = t.col("count");
    int n = ds.n(), K = ds.n_groups();
    ds.responses.counts = Eigen::MatrixXi::Zero(n, K);
    ds.responses.truncated.setConstant(n, K, false);
    ds.responses.truncation_cap = opt.truncation_cap;
    for_each_row(t, paths.responses, opt, [&](const std::vector<std::string>& row) {
      int rid = parse_int(row[c_r], "respondent_id");
      int gid = parse_int(row[c_g], "group_id");
      long long count = parse_i64(row[c_count], "count");
      int i = ds.respondent_index(rid);
      if (i < 0) throw std::invalid_argument(fmt::format("unknown respondent_id {}", rid));
      int k = ds.group_index(gid);
      if (k < 0) throw std::invalid_argument(fmt::format("unknown group_id {}", gid));
      if (count < 0) {
        throw std::invalid_argument(
            fmt::format("negative count {} for respondent {}", count, rid));
      }
      if (count > opt.truncation_cap) {
        ds.responses.counts(i, k) = opt.truncation_cap;
        ds.responses.truncated(i, k) = true;
      } else {
        ds.responses.counts(i, k) = static_cast<int>(count);
      }
    });
  }

  if (!paths.memberships.empty()) {
    auto t = csv::read_file(paths.memberships);
    auto c_r = t.col("respondent_id"), c_g = t.col("group_id"), c_m = t.col("member");
    int n = ds.n(), K = ds.n_groups();
    ds.memberships.asked.setConstant(n, K, false);
    ds.memberships.member.setConstant(n, K, false);
    for_each_row(t, paths.memberships, opt, [&](const std::vector<std::string>& row) {
      int rid = parse_int(row[c_r], "respondent_id");
      int gid = parse_int(row[c_g], "group_id");
      int member = parse_int(row[c_m], "member");
      int i = ds.respondent_index(rid);
      if (i < 0) throw std::invalid_argument(fmt::format("unknown respondent_id {}", rid));
      int k = ds.group_index(gid);
      if (k < 0) throw std::invalid_argument(fmt::format("unknown group_id {}", gid));
      if (member != 0 && member != 1) {
        throw std::invalid_argument(fmt::format("member must be 0 or 1, got '{}'", row[c_m]));
      }
      ds.memberships.asked(i, k) = true;
      ds.memberships.member(i, k) = member == 1;
    });
  }

  ds.validate();
  return ds;
}

void write_respondents_csv(const SurveyDataset& ds, const std::string& path) {
  bool any_weight = false;
  for (const auto& r : ds.respondents) any_weight = any_weight || r.weight > 0;
  csv::Table t;
  t.header = {"id", "governorate", "sex", "age_years", "age_group", "nationality"};
  if (any_weight) t.header.push_back("weight");
  for (const auto& r : ds.respondents) {
    std::vector<std::string> row = {
        fmt::format("{}", r.id),
        fmt::format("{}", r.governorate_id),
        to_string(r.sex),
        r.age_years ? format_double(*r.age_years) : std::string(),
        r.age_group,
        to_string(r.nationality)};
    if (any_weight) row.push_back(format_double(r.weight));
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

void write_dataset(const SurveyDataset& ds, const DatasetPaths& paths) {
  {
    csv::Table t;
    t.header = {"id", "name", "adult_population"};
    for (const auto& g : ds.governorates) {
      t.rows.push_back({fmt::format("{}", g.id), g.name, fmt::format("{}", g.adult_population)});
    }
    csv::write_file(paths.governorates, t);
  }
  write_respondents_csv(ds, paths.respondents);
  {
    csv::Table t;
    t.header = {"group_id", "label", "kind", "known_size_national"};
    for (const auto& g : ds.groups) {
      t.rows.push_back({fmt::format("{}", g.id), g.label, to_string(g.kind),
                        g.known_size_national ? fmt::format("{}", *g.known_size_national)
                                              : std::string()});
    }
    csv::write_file(paths.groups, t);
  }
  if (!paths.known_sizes.empty()) {
    csv::Table t;
    t.header = {"group_id", "governorate", "known_size"};
    for (const auto& g : ds.groups) {
      for (const auto& [gov_id, size] : g.known_size) {
        t.rows.push_back({fmt::format("{}", g.id), fmt::format("{}", gov_id),
                          fmt::format("{}", size)});
      }
    }
    csv::write_file(paths.known_sizes, t);
  }
  if (!paths.strata.empty()) {
    csv::Table t;
    t.header = {"sex", "age_group", "national_count"};
    for (const auto& [key, count] : ds.national_strata) {
      t.rows.push_back({to_string(key.sex), key.age_group, fmt::format("{}", count)});
    }
    csv::write_file(paths.strata, t);
  }
  {
    csv::Table t;
    t.header = {"respondent_id", "group_id", "count"};
    for (int i = 0; i < ds.responses.n(); ++i) {
      for (int k = 0; k < ds.responses.k(); ++k) {
        int c = ds.responses.counts(i, k);
        if (c == 0 && !ds.responses.truncated(i, k)) continue;
        t.rows.push_back({fmt::format("{}", ds.respondents[i].id),
                          fmt::format("{}", ds.groups[k].id), fmt::format("{}", c)});
      }
    }
    csv::write_file(paths.responses, t);
  }
  if (!paths.memberships.empty() && !ds.memberships.empty()) {
    csv::Table t;
    t.header = {"respondent_id", "group_id", "member"};
    for (int i = 0; i < ds.memberships.asked.rows(); ++i) {
      for (int k = 0; k < ds.memberships.asked.cols(); ++k) {
        if (!ds.memberships.asked(i, k)) continue;
        t.rows.push_back({fmt::format("{}", ds.respondents[i].id),
                          fmt::format("{}", ds.groups[k].id),
                          ds.memberships.member(i, k) ? "1" : "0"});
      }
    }
    csv::write_file(paths.memberships, t);
  }
}

std::map<std::string, std::int64_t> read_yearbook_bands(const std::string& path) {
  auto t = csv::read_file(path);
  auto c_band = t.col("age_band");
  std::map<std::string, std::int64_t> bands;
  if (t.has_col("count")) {
    auto c_count = t.col("count");
    for (const auto& row : t.rows) {
      bands[row[c_band]] += parse_i64(row[c_count], "count");
    }
  } else {
    auto c_m = t.col("male"), c_f = t.col("female");
    for (const auto& row : t.rows) {
      bands[row[c_band]] += parse_i64(row[c_m], "male") + parse_i64(row[c_f], "female");
    }
  }
  return bands;
}

}  // namespace scaleup
