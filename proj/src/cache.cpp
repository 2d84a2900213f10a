#include "scaleup/cache.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace scaleup {

namespace {

constexpr char kMagic[8] = {'S', 'C', 'U', 'P', 'P', 'O', 'S', 'T'};
constexpr std::uint32_t kKindProbeSet = 1;
constexpr std::uint32_t kKindNsum = 2;

const char* kind_name(std::uint32_t kind) {
  switch (kind) {
    case kKindProbeSet: return "probe";
    case kKindNsum: return "nsum";
  }
  return "unknown";
}

// Fixed-width little-endian encoding so a cache is one sequence of bytes
// regardless of host struct layout.
class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error(fmt::format("cache: cannot open '{}' for writing", path));
  }

  void bytes(const void* data, std::size_t size) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    bytes(b, 8);
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void vec_str(const std::vector<std::string>& v) {
    u64(v.size());
    for (const auto& s : v) str(s);
  }
  void vec_i32(const std::vector<int>& v) {
    u64(v.size());
    for (int x : v) i32(x);
  }
  void vec_f64(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void matrix(const Eigen::MatrixXd& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
    }
  }
  void vector(const Eigen::VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
  }

  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error(fmt::format("cache: write to '{}' failed", path_));
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error(fmt::format("cache: cannot open '{}'", path));
  }

  void bytes(void* data, std::size_t size) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in_.gcount()) != size) {
      throw std::runtime_error(fmt::format("cache: '{}' is truncated", path_));
    }
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint8_t b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::uint64_t length() {
    const std::uint64_t n = u64();
    // A real payload can never outrun the file; this guards allocations
    // against corrupt headers.
    if (n > (1ull << 40)) {
      throw std::runtime_error(fmt::format("cache: '{}' carries an implausible length", path_));
    }
    return n;
  }
  std::string str() {
    const std::uint64_t n = length();
    std::string s(n, '\0');
    if (n > 0) bytes(s.data(), n);
    return s;
  }
  std::vector<std::string> vec_str() {
    std::vector<std::string> v(length());
    for (auto& s : v) s = str();
    return v;
  }
  std::vector<int> vec_i32() {
    std::vector<int> v(length());
    for (auto& x : v) x = i32();
    return v;
  }
  std::vector<double> vec_f64() {
    std::vector<double> v(length());
    for (auto& x : v) x = f64();
    return v;
  }
  Eigen::MatrixXd matrix() {
    const auto rows = static_cast<Eigen::Index>(length());
    const auto cols = static_cast<Eigen::Index>(length());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = f64();
    }
    return m;
  }
  Eigen::VectorXd vector() {
    const auto n = static_cast<Eigen::Index>(length());
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = f64();
    return v;
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

void write_header(Writer& w, std::uint32_t kind) {
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kCacheSchemaVersion);
  w.u32(kind);
}

void read_header(Reader& r, std::uint32_t expected_kind) {
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(
        fmt::format("cache: '{}' is not a scaleup posterior cache", r.path()));
  }
  const std::uint32_t version = r.u32();
  if (version != kCacheSchemaVersion) {
    throw std::runtime_error(
        fmt::format("cache: '{}' has schema version {}, this build expects {}", r.path(),
                    version, kCacheSchemaVersion));
  }
  const std::uint32_t kind = r.u32();
  if (kind != expected_kind) {
    throw std::runtime_error(fmt::format("cache: '{}' holds a {} posterior, expected {}",
                                         r.path(), kind_name(kind), kind_name(expected_kind)));
  }
}

void write_diagnostics(Writer& w, const DiagnosticsTable& t) {
  w.vec_str(t.names);
  w.u64(t.params.size());
  for (const auto& p : t.params) {
    w.f64(p.rhat);
    w.f64(p.ess_bulk);
    w.f64(p.ess_tail);
  }
  w.i64(t.divergences);
  w.i64(t.total_transitions);
  w.i64(t.clamp_events);
}

DiagnosticsTable read_diagnostics(Reader& r) {
  DiagnosticsTable t;
  t.names = r.vec_str();
  t.params.resize(r.length());
  for (auto& p : t.params) {
    p.rhat = r.f64();
    p.ess_bulk = r.f64();
    p.ess_tail = r.f64();
  }
  t.divergences = r.i64();
  t.total_transitions = r.i64();
  t.clamp_events = r.i64();
  return t;
}

void write_posterior(Writer& w, const LogisticPosterior& p) {
  w.matrix(p.values);
  w.vec_str(p.names);
  w.i32(p.group_id);
  w.str(p.group_label);
  w.vec_i32(p.gov_ids);
  w.vec_str(p.gov_names);
  w.i32(p.chains);
  w.i32(p.draws_per_chain);
  write_diagnostics(w, p.diagnostics);
  w.i64(p.divergences);
  w.u8(p.divergence_warning ? 1 : 0);
  w.u8(p.rhat_warning ? 1 : 0);
  w.vec_f64(p.step_sizes);
}

LogisticPosterior read_posterior(Reader& r) {
  LogisticPosterior p;
  p.values = r.matrix();
  p.names = r.vec_str();
  p.group_id = r.i32();
  p.group_label = r.str();
  p.gov_ids = r.vec_i32();
  p.gov_names = r.vec_str();
  p.chains = r.i32();
  p.draws_per_chain = r.i32();
  p.diagnostics = read_diagnostics(r);
  p.divergences = r.i64();
  p.divergence_warning = r.u8() != 0;
  p.rhat_warning = r.u8() != 0;
  p.step_sizes = r.vec_f64();
  return p;
}

}  // namespace

void write_probe_cache(const std::vector<LogisticPosterior>& posteriors,
                       const std::string& path) {
  Writer w(path);
  write_header(w, kKindProbeSet);
  w.u64(posteriors.size());
  for (const auto& p : posteriors) write_posterior(w, p);
  w.finish();
}

std::vector<LogisticPosterior> read_probe_cache(const std::string& path) {
  Reader r(path);
  read_header(r, kKindProbeSet);
  std::vector<LogisticPosterior> posteriors(r.length());
  for (auto& p : posteriors) p = read_posterior(r);
  return posteriors;
}

void write_nsum_cache(const NsumPosterior& p, const std::string& path) {
  Writer w(path);
  write_header(w, kKindNsum);
  w.matrix(p.values);
  w.vec_str(p.names);
  w.matrix(p.bias);
  w.vec_str(p.bias_names);
  w.i32(p.bias_thin);
  w.i32(p.n);
  w.i32(p.K);
  w.i32(p.G);
  w.i32(p.P);
  w.i32(p.chains);
  w.i32(p.draws_per_chain);
  w.vec_i32(p.respondent_ids);
  w.vec_i32(p.group_ids);
  w.vec_i32(p.gov_ids);
  w.vec_str(p.group_labels);
  w.vec_str(p.gov_names);
  w.vec_str(p.covariate_names);
  w.f64(p.age_center);
  w.vec_i32(p.resp_gov);
  w.vector(p.resp_weights);
  write_diagnostics(w, p.diagnostics);
  w.i64(p.divergences);
  w.i64(p.clamp_events);
  w.u8(p.divergence_warning ? 1 : 0);
  w.u8(p.rhat_warning ? 1 : 0);
  w.vec_f64(p.step_sizes);
  w.finish();
}

NsumPosterior read_nsum_cache(const std::string& path) {
  Reader r(path);
  read_header(r, kKindNsum);
  NsumPosterior p;
  p.values = r.matrix();
  p.names = r.vec_str();
  p.bias = r.matrix();
  p.bias_names = r.vec_str();
  p.bias_thin = r.i32();
  p.n = r.i32();
  p.K = r.i32();
  p.G = r.i32();
  p.P = r.i32();
  p.chains = r.i32();
  p.draws_per_chain = r.i32();
  p.respondent_ids = r.vec_i32();
  p.group_ids = r.vec_i32();
  p.gov_ids = r.vec_i32();
  p.group_labels = r.vec_str();
  p.gov_names = r.vec_str();
  p.covariate_names = r.vec_str();
  p.age_center = r.f64();
  p.resp_gov = r.vec_i32();
  p.resp_weights = r.vector();
  p.diagnostics = read_diagnostics(r);
  p.divergences = r.i64();
  p.clamp_events = r.i64();
  p.divergence_warning = r.u8() != 0;
  p.rhat_warning = r.u8() != 0;
  p.step_sizes = r.vec_f64();
  return p;
}

}  // namespace scaleup
