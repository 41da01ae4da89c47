#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "reqiv/design.hpp"
#include "reqiv/panel.hpp"

namespace reqiv {

// ---- synthetic NCT survey -------------------------------------------------

enum class VariableKind { continuous, binary };
std::string to_string(VariableKind k);
VariableKind parse_variable_kind(const std::string& s);

struct NctVariable {
  std::string name;
  VariableKind kind = VariableKind::continuous;
  double always_taker_mean = 0.0;
  double always_taker_se = 0.0;
  double reminder_complier_mean = 0.0;
  double reminder_complier_se = 0.0;
  double ground_truth_mean = 0.0;
};

struct NctMomentTable {
  std::vector<NctVariable> variables;
  double always_taker_share = 0.38;
  double reminder_complier_share = 0.07;
  double nonrespondent_share = 0.55;
  int n_total = 3720;  // 10000 invited x 0.93 online x 0.40

  void validate() const;
};

// The six NCT variables with their reported moments and ground truth.
NctMomentTable nct_reference_moments();

// Delimited form: one row per variable with columns
// variable, kind, at_mean, at_se, rc_mean, rc_se, ground_truth; shares and
// the total go in rows whose variable is "#shares" / "#n_total".
NctMomentTable read_nct_moments(std::istream& in, const std::string& source);
NctMomentTable read_nct_moments_file(const std::string& path);
void write_nct_moments(std::ostream& out, const NctMomentTable& table);

enum class CountRounding { floor, nearest };
std::string to_string(CountRounding r);
CountRounding parse_count_rounding(const std::string& s);

struct NctConfig {
  std::uint64_t rounding_seed = 20250224;  // which members get +sd / -sd
  CountRounding binary_rounding = CountRounding::floor;
};

struct NctGroupSizes {
  int always_takers = 0;
  int reminder_compliers = 0;
  int nonrespondents = 0;
};

// Cumulative round-half-to-even: n_AT = round(s_AT N), n_AT + n_RC =
// round((s_AT + s_RC) N).
NctGroupSizes nct_group_sizes(int n_total, double always_taker_share, double reminder_complier_share);

struct NctGroupSummary {
  int n = 0;
  double mean = 0.0;
  double se = 0.0;  // sd / sqrt(n), sd with divisor n
};

struct NctVariableData {
  NctVariable moments;
  ContactTable contacts;
  NctGroupSummary always_takers;
  NctGroupSummary reminder_compliers;
  NctGroupSummary respondents;
  std::vector<std::string> warnings;
};

struct NctDataset {
  NctGroupSizes sizes;
  NctConfig config;
  std::vector<NctVariableData> variables;
};

// Subjects nct0001.. get two requests a week apart; always-takers answer the
// first, reminder compliers the second, the rest never answer and carry no
// value.
NctDataset generate_nct(const NctMomentTable& moments, const NctConfig& config = {});

// Comparison rows shipped as constants for reports.
struct NctComparisonRow {
  std::string label;
  std::vector<double> values;                // one per reference variable
  std::vector<double> ses;                   // empty or one per variable (NaN when unreported)
  std::map<std::string, std::pair<double, double>> bounds;  // by variable name
};
NctComparisonRow nct_pooled_respondents_reported();
NctComparisonRow nct_other_method_reported();
NctComparisonRow nct_fiml_reported();
NctComparisonRow nct_twostep_reported();

// ---- Monte Carlo DGP ------------------------------------------------------

enum class MsrKind { constant, linear, probit_index };
std::string to_string(MsrKind k);
MsrKind parse_msr_kind(const std::string& s);

// m(u) for subjects without covariates:
//   constant      level
//   linear        level + slope * u
//   probit_index  binary: Phi((beta + rho q) / sqrt(1 - rho^2)),
//                 continuous: beta + noise_sd * rho * q, with q = Phi^{-1}(1 - u)
struct MsrSpec {
  MsrKind kind = MsrKind::probit_index;
  double level = 0.5;
  double slope = 0.0;
  double beta = 0.0;
  double rho = 0.0;
};

struct DiscreteCovariate {
  std::vector<double> values;
  std::vector<double> probabilities;
};

// A subpopulation with its own probit-index outcome equation on
// [1, covariates...] and its own rho.
struct SimGroup {
  double label = 0.0;  // value of the group column
  double share = 1.0;
  std::vector<DiscreteCovariate> covariates;
  std::vector<double> beta;  // intercept first
  double rho = 0.0;
};

struct SimViolations {
  double time_drift = 0.0;              // added per period to the response (latent index for probit_index binary)
  double request_effect = 0.0;          // shift on responses given at the requests below
  std::set<int> request_effect_requests;
  double defier_share = 0.0;            // these subjects redraw U every period
  double nonuniform_strength = 0.0;     // P(requests after the first are withheld | high Y*)

  bool any() const;
};

struct SimConfig {
  int n_subjects = 10000;
  std::vector<double> propensities = {0.3, 0.5};  // P(1..T), strictly increasing
  MsrSpec msr;
  OutcomeKind outcome_kind = OutcomeKind::binary;
  double noise_sd = 1.0;
  // Binary probit-index outcomes with a unit-variance logistic instead of a
  // normal idiosyncratic error, so probit selection fits are misspecified.
  bool logistic_latent = false;
  std::uint64_t seed = 20250224;
  SimViolations violations;
  // When non-empty the outcome follows each group's probit index and msr is
  // not used.
  std::vector<SimGroup> groups;
  std::string group_column = "group";
  std::vector<std::string> covariate_names;

  int request_count() const { return static_cast<int>(propensities.size()); }
  void validate() const;
};

struct SimSubject {
  double U = 0.0;
  int first_compliant_request = 0;  // min r with U <= P(r); 0 when none
  double Y_star = 0.0;
  int group = 0;
  std::vector<double> covariates;
  int requests_received = 0;
  int response_period = 0;  // 0: never
  double response = 0.0;    // value reported at response_period
};

struct ComplierTruth {
  int r = 0;
  int r_prime = 0;
  double analytic = 0.0;    // quadrature of m(u) over (P(r'), P(r)]
  double population = 0.0;  // average Y* of simulated subjects with P(r') < U <= P(r)
  std::size_t n = 0;
};

struct SimGroundTruth {
  double mean_analytic = 0.0;
  double mean_population = 0.0;
  std::vector<ComplierTruth> compliers;  // every pair r > r' >= 0
  std::vector<double> group_mean_analytic;
  std::vector<double> group_mean_population;

  const ComplierTruth& pair(int r, int r_prime) const;
};

struct SimResult {
  SimConfig config;
  std::vector<SimSubject> subjects;
  SimGroundTruth truth;
};

// Draws the population. Subject i uses the stream derive_seed(seed, block)
// of its 4096-subject block.
SimResult simulate(const SimConfig& config);

// Contact records (requests weekly from 2024-01-08T09:00Z, responses an hour
// after the recruiting request).
ContactTable sim_contacts(const SimResult& sim);
// The same panel build_panel(sim_contacts(sim)) yields, assembled directly.
Panel sim_panel(const SimResult& sim);

double sim_msr(const MsrSpec& msr, OutcomeKind kind, double noise_sd, double u);

// ---- gender-gap fixture -------------------------------------------------

struct GenderGapCell {
  int early = 0;
  double early_mean = 0.0;
  int late = 0;
  double late_mean = 0.0;
  int nonrespondents = 0;
};

struct GenderGapCounts {
  GenderGapCell men{10154, 0.378, 9147, 0.366, 120730};
  GenderGapCell women{12958, 0.169, 10643, 0.180, 126956};
};

// Two-request panel with covariate "female": early respondents answer the
// first request, late ones the second; outcome counts are rounded to the
// nearest whole subject.
Panel gender_gap_panel(const GenderGapCounts& counts = {});

}  // namespace reqiv
