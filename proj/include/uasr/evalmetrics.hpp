#pragma once

#include <string>
#include <vector>

#include "uasr/common.hpp"

namespace uasr {

struct ErrorReport {
  long substitutions = 0;
  long insertions = 0;
  long deletions = 0;
  long reference_length = 0;
  bool empty_reference = false;  // rate reported as |hyp| with length 0

  long total_errors() const { return substitutions + insertions + deletions; }
  double rate() const {
    if (reference_length == 0) return double(insertions);
    return double(total_errors()) / double(reference_length);
  }
};

// Levenshtein with unit costs; ties in the backtrace prefer substitution,
// then deletion, then insertion.
ErrorReport edit_distance(const std::vector<int>& reference, const std::vector<int>& hypothesis);
ErrorReport edit_distance(const std::vector<std::string>& reference,
                          const std::vector<std::string>& hypothesis);

// micro-average: sum counts, then divide by summed reference length
ErrorReport accumulate(const std::vector<ErrorReport>& reports);

}  // namespace uasr
