#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "reqiv/lar.hpp"
#include "reqiv/selectmod.hpp"
#include "reqiv/synthgen.hpp"

namespace reqiv {

struct NctReportOptions {
  NctConfig generation;
  int bootstrap_replicates = 500;
  std::uint64_t seed = 20250224;  // two-step bootstrap seeds derive from this and the variable name
  int threads = 0;
};

struct NctReportRow {
  NctVariable moments;
  NctGroupSummary always_takers;
  NctGroupSummary reminder_compliers;
  NctGroupSummary respondents;
  LarEstimate reminder_lar;  // pair (2, 1)
  SelectionFit fiml;
  MeanEstimate fiml_mean;
  SelectionFit twostep;
  MeanEstimate twostep_mean;
  double bias_gap = 0.0;  // respondent mean minus the FIML mean
  std::vector<std::string> warnings;
};

struct NctReport {
  NctGroupSizes sizes;
  NctReportOptions options;
  std::vector<NctReportRow> rows;

  bool all_converged() const;
};

// Generates the synthetic survey, builds each variable's panel and fits FIML
// and two-step selection models with R = 2 as the excluded instrument.
NctReport reproduce_nct(const NctMomentTable& moments, const NctReportOptions& options = {});

// Human-readable tables: group means of the generated data, then the
// corrected estimates next to the published ones.
void write_nct_report(std::ostream& out, const NctReport& report);
// One row per variable and estimator.
void write_nct_estimates(std::ostream& out, const NctReport& report);

}  // namespace reqiv
