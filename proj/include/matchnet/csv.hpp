#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "matchnet/data.hpp"

namespace matchnet {

// Long-format patient CSV, one row per visit:
//
//   patient_id,time_years,event_observed,observed_time_years,baseline_event,diagnosis,<features...>
//
// Feature headers are longitudinal numeric by default; a `static:` prefix marks
// a static numeric feature and `cat:` a static categorical feature. Static
// values are repeated on every row of a patient. Empty cells are missing.

/// Throws FormatError naming the offending line on malformed input.
Dataset read_dataset_csv(std::istream& in, const std::string& source = "<stream>");
Dataset read_dataset_csv(const std::filesystem::path& path);

void write_dataset_csv(std::ostream& out, const Dataset& dataset);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset);

} // namespace matchnet
