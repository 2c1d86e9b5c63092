#pragma once

#include <string>
#include <vector>

#include "ptgf/ptgf.hpp"

namespace ptgf::testing {

/// Panel from per-unit rows: a[i][t], y[i][t] and one covariate w[i][t] named `name`.
inline LongPanel small_panel(const std::vector<std::vector<int>>& a, const std::vector<std::vector<double>>& y,
                             const std::vector<std::vector<double>>& w, const std::string& name = "W") {
  std::vector<std::string> ids;
  std::vector<double> wf, yf;
  std::vector<int> af;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ids.push_back(std::to_string(i));
    af.insert(af.end(), a[i].begin(), a[i].end());
    yf.insert(yf.end(), y[i].begin(), y[i].end());
    wf.insert(wf.end(), w[i].begin(), w[i].end());
  }
  return LongPanel(ids, static_cast<int>(a.front().size()), {name}, wf, af, yf);
}

inline std::string source_path(const std::string& rel) { return std::string(PTGF_SOURCE_DIR) + "/" + rel; }

}  // namespace ptgf::testing
