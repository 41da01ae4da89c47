#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "reqiv/panel.hpp"
#include "reqiv/selectmod.hpp"

namespace reqiv {

struct RequestCoefficient {
  int request = 0;
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct OveridTest {
  std::string group;  // "joint" for the pooled test
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};

struct OveridOptions {
  // FIML for the outcome kind when unset.
  std::optional<FitMethod> method;
  // Also report a likelihood-ratio test. It treats rows as independent, so
  // it ignores the clustering the Wald tests account for.
  bool likelihood_ratio = false;
};

struct OveridResult {
  std::set<int> identification_requests;
  std::set<int> tested_requests;  // after dropping empty cells
  std::map<std::string, std::vector<RequestCoefficient>> request_coefficients;  // by group
  std::vector<OveridTest> wald;  // one per group, then the joint test when there are several groups
  std::optional<OveridTest> likelihood_ratio;
  SelectionFit fit;  // with the request indicators in the outcome equation
  std::vector<std::string> warnings;

  const OveridTest& joint() const { return wald.back(); }
};

// Refits the selection model with I(R = r), r in `tested`, added to the
// outcome columns and tests that their coefficients are zero with the fit's
// clustered covariance. Tested requests must be observed; at least two other
// request levels must remain for identification.
OveridResult overid_test(const Panel& panel, const ModelSpec& base_spec, const std::set<int>& tested,
                         const OveridOptions& options = {});

struct BiasGap {
  double respondent_mean = 0.0;  // final-row outcome mean of responding subject-terms
  double corrected_mean = 0.0;
  double gap = 0.0;
  double se = 0.0;  // cluster bootstrap, refitting the model each replicate
  int replicates = 0;
  int failed = 0;
};

// Respondent mean minus the fit's population mean, for one group or all
// rows. `replicates` = 0 skips the SE.
BiasGap bias_gap(const Panel& panel, const SelectionFit& fit, const std::string& group = "", int replicates = 0);

// group,request,estimate,se,ci_low,ci_high
void write_event_study(std::ostream& out, const OveridResult& r);
// test,group,statistic,df,p_value
void write_overid_tests(std::ostream& out, const OveridResult& r);

}  // namespace reqiv
