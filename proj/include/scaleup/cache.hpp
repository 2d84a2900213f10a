#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scaleup/nsum_model.hpp"
#include "scaleup/probe_model.hpp"

namespace scaleup {

// Binary posterior caches. The header carries a magic string, the schema
// version, and the payload kind; readers reject anything they were not built
// for with a message naming the file, so stale caches surface as input
// errors rather than corrupt downstream numbers.
inline constexpr std::uint32_t kCacheSchemaVersion = 1;

// One file holds the posterior set for every fitted probe group.
void write_probe_cache(const std::vector<LogisticPosterior>& posteriors,
                       const std::string& path);
std::vector<LogisticPosterior> read_probe_cache(const std::string& path);

void write_nsum_cache(const NsumPosterior& posterior, const std::string& path);
NsumPosterior read_nsum_cache(const std::string& path);

}  // namespace scaleup
