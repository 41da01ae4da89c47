#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reqiv {

using Duration = std::chrono::microseconds;
using Instant = std::chrono::sys_time<Duration>;

// RFC-3339 instants: date, 'T' (or 't' or space), time with optional
// fraction, and 'Z' or a numeric offset. Throws ValidationError.
Instant parse_rfc3339(std::string_view s);
// UTC with 'Z'; fractional seconds only when nonzero.
std::string format_rfc3339(Instant t);

struct ContactRecord {
  std::string subject_id;
  std::string cluster_id;
  std::string term_id;
  std::optional<std::string> stratum_id;
  bool opt_out = false;
  std::vector<Instant> request_timestamps;  // intended requests, strictly increasing
  std::optional<Instant> response_timestamp;
  std::optional<double> outcome;
  std::vector<double> covariates;
};

struct ContactTable {
  std::vector<std::string> covariate_names;
  std::vector<ContactRecord> records;
};

// Record-level invariants; throws ValidationError naming the subject.
void check_record(const ContactRecord& r, std::size_t n_covariates);

struct PanelRow {
  std::string subject_id;
  std::string cluster_id;
  std::string term_id;
  int t = 0;
  int R = 0;
  int S = 0;
  double Y = 0.0;  // NaN unless S = 1
  int S_hat = 0;
  double Y_hat = 0.0;
  double weight = 1.0;
  std::vector<double> covariates;
};

struct Panel {
  std::vector<std::string> covariate_names;
  std::vector<PanelRow> rows;

  std::optional<std::size_t> covariate_index(std::string_view name) const;
};

struct PanelBuildConfig {
  std::uint64_t imputation_seed = 20250224;
  Duration min_request_gap = std::chrono::days{3};
  bool include_t0 = true;

  void validate() const;
};

// Opt-outs get a stratum drawn uniformly among their term's strata, and that
// stratum's intended request schedule. The draw for a record depends only on
// (seed, term, subject), so the result does not depend on input order.
ContactTable impute_opt_out_strata(ContactTable table, std::uint64_t seed);

// One row per intended-request period t = 0..K (t = 0 optional). Output is
// ordered by (term, subject, t) whatever the input order.
Panel build_panel(const ContactTable& table, const PanelBuildConfig& config = {});

struct PanelViolation {
  std::string subject_id;
  std::string term_id;
  int t = 0;
  std::string tag;
  std::string detail;
};

struct ResponseRate {
  std::string term_id;
  int R = 0;
  std::size_t n = 0;
  double rate = 0.0;  // unweighted mean of S_hat
};

struct RequestGap {
  std::string term_id;
  std::string schedule;  // stratum id, or subject id when unstratified
  int request = 0;       // gap between request `request` and `request + 1`
  Duration gap{};
  bool below_minimum = false;
};

struct PanelDiagnostics {
  std::vector<PanelViolation> violations;
  std::vector<ResponseRate> rates;
  std::vector<RequestGap> gaps;
  std::vector<std::string> notes;

  bool ok() const { return violations.empty(); }
};

// Reports violations instead of throwing. Gaps are only checked when the
// contact records are supplied.
PanelDiagnostics validate_panel(const Panel& panel, const ContactTable* records = nullptr,
                                Duration min_request_gap = std::chrono::days{3});

// Drops rows with R > max_r. Weights keep their original 1/K.
Panel restrict_requests(const Panel& panel, int max_r);

ContactTable read_contacts(std::istream& in, const std::string& source);
ContactTable read_contacts_file(const std::string& path);
void write_contacts(std::ostream& out, const ContactTable& table);
void write_contacts_file(const std::string& path, const ContactTable& table);

Panel read_panel(std::istream& in, const std::string& source);
Panel read_panel_file(const std::string& path);
void write_panel(std::ostream& out, const Panel& panel);
void write_panel_file(const std::string& path, const Panel& panel);

// Modal request dates and cumulative response rates for one survey term.
struct TermTiming {
  std::string term_id;
  std::vector<std::chrono::sys_days> request_dates;
  std::vector<double> cumulative_rates;
};

std::vector<TermTiming> read_request_timing(const std::string& path);
// Path of the bundled table of request dates by term.
std::string bundled_request_timing_path();
const TermTiming& find_term(const std::vector<TermTiming>& timing, std::string_view term_id);

// Contact records for n_subjects in one term whose cumulative response rates
// after each request equal the term's rates (rounded to whole subjects).
// Respondents answer one hour after the request that recruits them and carry
// outcome 1; everyone receives the full schedule.
ContactTable timing_fixture_contacts(const TermTiming& term, int n_subjects);

}  // namespace reqiv
