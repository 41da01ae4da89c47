#pragma once

// Small panels assembled directly from subject types, for tests that need
// exact control over who responds when.

#include <cmath>
#include <string>
#include <vector>

#include "reqiv/panel.hpp"

namespace reqiv::fixture {

struct SubjectType {
  int count = 0;
  int responds_at = 0;  // period of response; 0 for never
  double y = 0.0;
  std::vector<double> covariates = {};
};

// Rows t = 0..k per subject, weight 1/k, clusters equal to subjects.
inline Panel type_panel(const std::vector<SubjectType>& types, int k, const std::string& term = "T",
                        std::vector<std::string> covariate_names = {}) {
  Panel p;
  p.covariate_names = std::move(covariate_names);
  int id = 0;
  for (const auto& type : types) {
    for (int c = 0; c < type.count; ++c, ++id) {
      const std::string sid = term + "-" + std::to_string(id);
      for (int t = 0; t <= k; ++t) {
        PanelRow row;
        row.subject_id = sid;
        row.cluster_id = sid;
        row.term_id = term;
        row.t = t;
        row.R = t;
        row.S = type.responds_at == t && t > 0 ? 1 : 0;
        row.Y = row.S ? type.y : std::nan("");
        row.S_hat = type.responds_at > 0 && t >= type.responds_at ? 1 : 0;
        row.Y_hat = row.S_hat ? type.y : 0.0;
        row.weight = 1.0 / k;
        row.covariates = type.covariates;
        p.rows.push_back(std::move(row));
      }
    }
  }
  return p;
}

}  // namespace reqiv::fixture
