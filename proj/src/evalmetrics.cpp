#include "uasr/evalmetrics.hpp"

#include <algorithm>
#include <map>

namespace uasr {

ErrorReport edit_distance(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  size_t n = reference.size(), m = hypothesis.size();
  ErrorReport report;
  report.reference_length = long(n);
  if (n == 0) {
    report.insertions = long(m);
    report.empty_reference = true;
    return report;
  }

  // dp[i][j] = min edits aligning ref[:i] to hyp[:j]; op tracks the backtrace
  // choice with the tie order substitution > deletion > insertion
  std::vector<std::vector<int>> dp(n + 1, std::vector<int>(m + 1, 0));
  std::vector<std::vector<char>> op(n + 1, std::vector<char>(m + 1, ' '));
  for (size_t i = 1; i <= n; ++i) {
    dp[i][0] = int(i);
    op[i][0] = 'd';
  }
  for (size_t j = 1; j <= m; ++j) {
    dp[0][j] = int(j);
    op[0][j] = 'i';
  }
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      bool match = reference[i - 1] == hypothesis[j - 1];
      int sub = dp[i - 1][j - 1] + (match ? 0 : 1);
      int del = dp[i - 1][j] + 1;
      int ins = dp[i][j - 1] + 1;
      int best = std::min({sub, del, ins});
      dp[i][j] = best;
      if (sub == best)
        op[i][j] = match ? 'm' : 's';
      else if (del == best)
        op[i][j] = 'd';
      else
        op[i][j] = 'i';
    }
  }

  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    switch (op[i][j]) {
      case 'm':
        --i;
        --j;
        break;
      case 's':
        ++report.substitutions;
        --i;
        --j;
        break;
      case 'd':
        ++report.deletions;
        --i;
        break;
      default:
        ++report.insertions;
        --j;
        break;
    }
  }
  return report;
}

ErrorReport edit_distance(const std::vector<std::string>& reference,
                          const std::vector<std::string>& hypothesis) {
  std::map<std::string, int> ids;
  auto encode = [&](const std::vector<std::string>& tokens) {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
      auto [it, inserted] = ids.emplace(t, int(ids.size()));
      out.push_back(it->second);
    }
    return out;
  };
  auto r = encode(reference);
  auto h = encode(hypothesis);
  return edit_distance(r, h);
}

ErrorReport accumulate(const std::vector<ErrorReport>& reports) {
  ErrorReport total;
  for (const auto& r : reports) {
    total.substitutions += r.substitutions;
    total.insertions += r.insertions;
    total.deletions += r.deletions;
    total.reference_length += r.reference_length;
    total.empty_reference = total.empty_reference || r.empty_reference;
  }
  return total;
}

}  // namespace uasr
