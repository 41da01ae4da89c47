#include "reqiv/panel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <tuple>

#include "reqiv/csv.hpp"
#include "reqiv/error.hpp"
#include "reqiv/random.hpp"

#ifndef REQIV_DATA_DIR
#define REQIV_DATA_DIR "data"
#endif

namespace reqiv {

namespace {

int digits(std::string_view s, std::size_t pos, std::size_t n, std::string_view full) {
  if (pos + n > s.size()) throw ValidationError("malformed RFC-3339 instant '" + std::string(full) + "'");
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') {
      throw ValidationError("malformed RFC-3339 instant '" + std::string(full) + "'");
    }
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

void expect(std::string_view s, std::size_t pos, std::string_view chars, std::string_view full) {
  if (pos >= s.size() || chars.find(s[pos]) == std::string_view::npos) {
    throw ValidationError("malformed RFC-3339 instant '" + std::string(full) + "'");
  }
}

using Key = std::pair<std::string, std::string>;  // (term, subject)

}  // namespace

Instant parse_rfc3339(std::string_view s) {
  using namespace std::chrono;
  const int y = digits(s, 0, 4, s);
  expect(s, 4, "-", s);
  const int mo = digits(s, 5, 2, s);
  expect(s, 7, "-", s);
  const int d = digits(s, 8, 2, s);
  expect(s, 10, "Tt ", s);
  const int hh = digits(s, 11, 2, s);
  expect(s, 13, ":", s);
  const int mi = digits(s, 14, 2, s);
  expect(s, 16, ":", s);
  const int ss = digits(s, 17, 2, s);
  std::size_t pos = 19;
  long long micros = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    int n = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (n < 6) {
        micros = micros * 10 + (s[pos] - '0');
        ++n;
      }
      ++pos;
    }
    if (n == 0) throw ValidationError("malformed RFC-3339 instant '" + std::string(s) + "'");
    for (; n < 6; ++n) micros *= 10;
  }
  long long offset_minutes = 0;
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else {
    expect(s, pos, "+-", s);
    const int sign = s[pos] == '-' ? -1 : 1;
    const int oh = digits(s, pos + 1, 2, s);
    expect(s, pos + 3, ":", s);
    const int om = digits(s, pos + 4, 2, s);
    offset_minutes = sign * (oh * 60 + om);
    pos += 6;
  }
  if (pos != s.size()) throw ValidationError("malformed RFC-3339 instant '" + std::string(s) + "'");
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mi > 59 || ss > 60) {
    throw ValidationError("invalid date or time in '" + std::string(s) + "'");
  }
  const Instant t = sys_days{ymd} + hours{hh} + minutes{mi} + seconds{ss} + microseconds{micros};
  return t - minutes{offset_minutes};
}

std::string format_rfc3339(Instant t) {
  using namespace std::chrono;
  const auto day_start = floor<days>(t);
  const year_month_day ymd{day_start};
  auto rest = t - day_start;
  const auto h = duration_cast<hours>(rest);
  rest -= h;
  const auto m = duration_cast<minutes>(rest);
  rest -= m;
  const auto s = duration_cast<seconds>(rest);
  rest -= s;
  char buf[48];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                        static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                        static_cast<int>(h.count()), static_cast<int>(m.count()),
                        static_cast<int>(s.count()));
  std::string out(buf, n);
  if (rest.count() != 0) {
    n = std::snprintf(buf, sizeof buf, ".%06lld", static_cast<long long>(rest.count()));
    out.append(buf, n);
  }
  out += 'Z';
  return out;
}

void check_record(const ContactRecord& r, std::size_t n_covariates) {
  const std::string who = "subject '" + r.subject_id + "' term '" + r.term_id + "': ";
  if (r.subject_id.empty()) throw ValidationError("record with empty subject_id");
  if (r.term_id.empty()) throw ValidationError(who + "empty term_id");
  for (std::size_t k = 1; k < r.request_timestamps.size(); ++k) {
    if (r.request_timestamps[k] <= r.request_timestamps[k - 1]) {
      throw ValidationError(who + "request timestamps are not strictly increasing");
    }
  }
  if (r.outcome.has_value() != r.response_timestamp.has_value()) {
    throw ValidationError(who + "outcome must be present exactly when a response timestamp is");
  }
  if (r.response_timestamp && !r.request_timestamps.empty() &&
      *r.response_timestamp < r.request_timestamps.front()) {
    throw ValidationError(who + "response precedes the first request");
  }
  if (r.opt_out) {
    if (r.response_timestamp) throw ValidationError(who + "opt-out with a response");
    if (r.stratum_id && r.request_timestamps.empty()) {
      throw ValidationError(who + "opt-out carries a stratum but no imputed requests");
    }
  }
  if (r.covariates.size() != n_covariates) {
    throw ValidationError(who + "expected " + std::to_string(n_covariates) + " covariates");
  }
}

std::optional<std::size_t> Panel::covariate_index(std::string_view name) const {
  for (std::size_t j = 0; j < covariate_names.size(); ++j) {
    if (covariate_names[j] == name) return j;
  }
  return std::nullopt;
}

void PanelBuildConfig::validate() const {
  if (min_request_gap.count() < 0) throw ValidationError("min_request_gap must be non-negative");
}

ContactTable impute_opt_out_strata(ContactTable table, std::uint64_t seed) {
  // Per term: stratum -> schedule (the longest among members; ties broken by
  // the smallest subject id, so the choice is order independent).
  struct Schedule {
    std::vector<Instant> ts;
    std::string owner;
  };
  std::map<std::string, std::map<std::string, Schedule>> strata;
  std::set<std::string> terms_with_opt_outs;
  for (const auto& r : table.records) {
    if (r.opt_out) {
      if (r.request_timestamps.empty()) terms_with_opt_outs.insert(r.term_id);
      continue;
    }
    if (!r.stratum_id || r.request_timestamps.empty()) continue;
    auto& s = strata[r.term_id][*r.stratum_id];
    if (s.owner.empty() || r.request_timestamps.size() > s.ts.size() ||
        (r.request_timestamps.size() == s.ts.size() && r.subject_id < s.owner)) {
      s.ts = r.request_timestamps;
      s.owner = r.subject_id;
    }
  }
  for (const auto& term : terms_with_opt_outs) {
    if (!strata.count(term)) {
      throw ValidationError("term '" + term + "' has opt-outs but no stratum with request timestamps");
    }
  }
  for (auto& r : table.records) {
    if (!r.opt_out || !r.request_timestamps.empty()) continue;
    const auto& term_strata = strata.at(r.term_id);
    Rng rng(derive_seed(derive_seed(seed, r.term_id), r.subject_id));
    auto it = term_strata.begin();
    std::advance(it, static_cast<long>(rng.index(term_strata.size())));
    r.stratum_id = it->first;
    r.request_timestamps = it->second.ts;
  }
  return table;
}

Panel build_panel(const ContactTable& table, const PanelBuildConfig& config) {
  config.validate();
  std::vector<const ContactRecord*> order;
  order.reserve(table.records.size());
  for (const auto& r : table.records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const ContactRecord* a, const ContactRecord* b) {
    return std::tie(a->term_id, a->subject_id) < std::tie(b->term_id, b->subject_id);
  });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i]->term_id == order[i - 1]->term_id && order[i]->subject_id == order[i - 1]->subject_id) {
      throw ValidationError("duplicate record for subject '" + order[i]->subject_id + "' in term '" +
                            order[i]->term_id + "'");
    }
  }

  Panel panel;
  panel.covariate_names = table.covariate_names;
  for (const ContactRecord* rp : order) {
    const ContactRecord& r = *rp;
    check_record(r, table.covariate_names.size());
    const int k = static_cast<int>(r.request_timestamps.size());
    if (k == 0) {
      throw ValidationError("subject '" + r.subject_id + "' term '" + r.term_id +
                            "' has no intended requests" +
                            (r.opt_out ? " (impute opt-out strata first)" : ""));
    }
    int response_period = 0;
    if (r.response_timestamp) {
      // Closed-left periods: a response at a request instant belongs to the
      // period that request opens.
      const auto it = std::upper_bound(r.request_timestamps.begin(), r.request_timestamps.end(),
                                       *r.response_timestamp);
      response_period = static_cast<int>(it - r.request_timestamps.begin());
      if (response_period == 0) {
        throw ValidationError("subject '" + r.subject_id + "' term '" + r.term_id +
                              "': response precedes the first request");
      }
    }
    const double weight = 1.0 / k;
    int s_hat = 0;
    double y_hat = 0.0;
    for (int t = 0; t <= k; ++t) {
      PanelRow row;
      row.subject_id = r.subject_id;
      row.cluster_id = r.cluster_id.empty() ? r.subject_id : r.cluster_id;
      row.term_id = r.term_id;
      row.t = t;
      row.R = t;
      row.S = (t > 0 && t == response_period) ? 1 : 0;
      row.Y = row.S ? *r.outcome : std::nan("");
      if (row.S) {
        s_hat = 1;
        y_hat = *r.outcome;
      }
      row.S_hat = s_hat;
      row.Y_hat = y_hat;
      row.weight = weight;
      row.covariates = r.covariates;
      if (t > 0 || config.include_t0) panel.rows.push_back(std::move(row));
    }
  }
  return panel;
}

PanelDiagnostics validate_panel(const Panel& panel, const ContactTable* records, Duration min_gap) {
  PanelDiagnostics d;
  std::map<Key, std::vector<const PanelRow*>> groups;
  for (const auto& row : panel.rows) groups[{row.term_id, row.subject_id}].push_back(&row);

  auto flag = [&](const PanelRow& row, std::string tag, std::string detail) {
    d.violations.push_back({row.subject_id, row.term_id, row.t, std::move(tag), std::move(detail)});
  };

  for (auto& [key, rows] : groups) {
    std::sort(rows.begin(), rows.end(), [](const PanelRow* a, const PanelRow* b) { return a->t < b->t; });
    int responses = 0;
    int s_sum = 0;
    double y_sum = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const PanelRow& row = *rows[i];
      if (row.t == 0 && (row.R != 0 || row.S_hat != 0 || row.S != 0)) {
        flag(row, "initial-3d", "t = 0 requires R = 0 and no response");
      }
      if (row.R != row.t) flag(row, "construction/R=t", "R differs from t");
      if (i > 0) {
        const PanelRow& prev = *rows[i - 1];
        if (row.t == prev.t) flag(row, "duplicate-period", "period appears twice");
        if (row.R < prev.R) flag(row, "monotonicity-3c/requests", "accumulated requests decrease");
        if (row.S_hat < prev.S_hat) flag(row, "monotonicity-3c/retention", "retained response choice decreases");
        if (row.weight != prev.weight) flag(row, "weight", "weight varies within subject-term");
      }
      if (row.S != 0 && row.S != 1) flag(row, "response-value", "S must be 0 or 1");
      if (row.S_hat != 0 && row.S_hat != 1) flag(row, "response-value", "S_hat must be 0 or 1");
      if (row.S == 1 && std::isnan(row.Y)) flag(row, "response-value", "responding row without Y");
      if (row.S == 0 && !std::isnan(row.Y)) flag(row, "response-value", "Y present without a response");
      if (!(row.weight > 0)) flag(row, "weight", "weight must be positive");
      responses += row.S;
      s_sum += row.S;
      if (row.S == 1) y_sum += row.Y;
      if (responses == 2) flag(row, "single-response", "more than one responding period");
      if (row.S_hat != s_sum || row.Y_hat != y_sum) {
        flag(row, "retained-response", "S_hat or Y_hat is not the running sum of S and S*Y");
      }
    }
  }

  std::map<std::pair<std::string, int>, std::pair<std::size_t, double>> acc;
  for (const auto& row : panel.rows) {
    auto& a = acc[{row.term_id, row.R}];
    a.first += 1;
    a.second += row.S_hat;
  }
  for (const auto& [key, a] : acc) {
    d.rates.push_back({key.first, key.second, a.first, a.second / static_cast<double>(a.first)});
  }
  for (std::size_t i = 1; i < d.rates.size(); ++i) {
    const auto& a = d.rates[i - 1];
    const auto& b = d.rates[i];
    if (a.term_id == b.term_id && b.rate < a.rate) {
      d.notes.push_back("rate-monotonicity: term '" + b.term_id + "' response rate falls from R=" +
                        std::to_string(a.R) + " to R=" + std::to_string(b.R));
    }
  }

  if (records) {
    std::set<std::tuple<std::string, std::string, std::vector<Instant>>> seen;
    for (const auto& r : records->records) {
      const std::string schedule = r.stratum_id ? *r.stratum_id : r.subject_id;
      if (!seen.insert({r.term_id, schedule, r.request_timestamps}).second) continue;
      for (std::size_t k = 1; k < r.request_timestamps.size(); ++k) {
        const Duration gap = r.request_timestamps[k] - r.request_timestamps[k - 1];
        d.gaps.push_back({r.term_id, schedule, static_cast<int>(k), gap, gap < min_gap});
      }
    }
    std::sort(d.gaps.begin(), d.gaps.end(), [](const RequestGap& a, const RequestGap& b) {
      return std::tie(a.term_id, a.schedule, a.request) < std::tie(b.term_id, b.schedule, b.request);
    });
  }
  return d;
}

Panel restrict_requests(const Panel& panel, int max_r) {
  if (max_r < 1) throw ValidationError("max_r must be at least 1");
  Panel out;
  out.covariate_names = panel.covariate_names;
  for (const auto& row : panel.rows) {
    if (row.R <= max_r) out.rows.push_back(row);
  }
  return out;
}

ContactTable read_contacts(std::istream& in, const std::string& source) {
  const CsvTable csv = read_csv(in, source);
  const std::size_t c_subject = csv.require("subject_id");
  const auto c_cluster = csv.find("cluster_id");
  const std::size_t c_term = csv.require("term_id");
  const auto c_stratum = csv.find("stratum_id");
  const auto c_opt = csv.find("opt_out");
  const std::size_t c_response = csv.require("response_ts");
  const std::size_t c_outcome = csv.require("outcome");
  std::vector<std::size_t> c_requests;
  for (int k = 1;; ++k) {
    auto c = csv.find("request_ts_" + std::to_string(k));
    if (!c) break;
    c_requests.push_back(*c);
  }
  if (c_requests.empty()) throw ValidationError(source + ": no request_ts_1 column");

  ContactTable table;
  std::vector<std::size_t> c_cov;
  for (std::size_t j = c_outcome + 1; j < csv.header.size(); ++j) {
    table.covariate_names.push_back(csv.header[j]);
    c_cov.push_back(j);
  }
  table.records.reserve(csv.rows.size());
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& f = csv.rows[i];
    const std::string at = csv.where(i);
    ContactRecord r;
    r.subject_id = f[c_subject];
    r.cluster_id = c_cluster && !f[*c_cluster].empty() ? f[*c_cluster] : r.subject_id;
    r.term_id = f[c_term];
    if (c_stratum && !f[*c_stratum].empty()) r.stratum_id = f[*c_stratum];
    if (c_opt) r.opt_out = parse_bool(f[*c_opt], at + "opt_out: ");
    bool gap = false;
    for (auto c : c_requests) {
      if (f[c].empty()) {
        gap = true;
        continue;
      }
      if (gap) throw ValidationError(at + "request timestamps must be filled from request_ts_1 onwards");
      try {
        r.request_timestamps.push_back(parse_rfc3339(f[c]));
      } catch (const ValidationError& e) {
        throw ValidationError(at + e.what());
      }
    }
    try {
      if (!f[c_response].empty()) r.response_timestamp = parse_rfc3339(f[c_response]);
    } catch (const ValidationError& e) {
      throw ValidationError(at + e.what());
    }
    if (!f[c_outcome].empty()) r.outcome = parse_double(f[c_outcome], at + "outcome: ");
    for (auto c : c_cov) {
      r.covariates.push_back(f[c].empty() ? std::nan("") : parse_double(f[c], at + csv.header[c] + ": "));
    }
    try {
      check_record(r, table.covariate_names.size());
    } catch (const ValidationError& e) {
      throw ValidationError(at + e.what());
    }
    table.records.push_back(std::move(r));
  }
  return table;
}

ContactTable read_contacts_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return read_contacts(in, path);
}

void write_contacts(std::ostream& out, const ContactTable& table) {
  std::size_t k = 1;
  for (const auto& r : table.records) k = std::max(k, r.request_timestamps.size());
  std::vector<std::string> header = {"subject_id", "cluster_id", "term_id", "stratum_id", "opt_out"};
  for (std::size_t j = 1; j <= k; ++j) header.push_back("request_ts_" + std::to_string(j));
  header.push_back("response_ts");
  header.push_back("outcome");
  for (const auto& c : table.covariate_names) header.push_back(c);
  write_csv_row(out, header);
  for (const auto& r : table.records) {
    std::vector<std::string> f = {r.subject_id, r.cluster_id, r.term_id, r.stratum_id.value_or(""),
                                  r.opt_out ? "1" : "0"};
    for (std::size_t j = 0; j < k; ++j) {
      f.push_back(j < r.request_timestamps.size() ? format_rfc3339(r.request_timestamps[j]) : "");
    }
    f.push_back(r.response_timestamp ? format_rfc3339(*r.response_timestamp) : "");
    f.push_back(r.outcome ? format_double(*r.outcome) : "");
    for (double v : r.covariates) f.push_back(format_double(v));
    write_csv_row(out, f);
  }
}

void write_contacts_file(const std::string& path, const ContactTable& table) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_contacts(out, table);
}

namespace {
const std::vector<std::string> kPanelColumns = {"subject_id", "cluster_id", "term_id", "t",     "R",
                                                "S",          "Y",          "S_hat",   "Y_hat", "weight"};
}

Panel read_panel(std::istream& in, const std::string& source) {
  const CsvTable csv = read_csv(in, source);
  std::vector<std::size_t> c;
  for (const auto& name : kPanelColumns) c.push_back(csv.require(name));
  Panel panel;
  std::vector<std::size_t> c_cov;
  for (std::size_t j = 0; j < csv.header.size(); ++j) {
    if (std::find(kPanelColumns.begin(), kPanelColumns.end(), csv.header[j]) == kPanelColumns.end()) {
      panel.covariate_names.push_back(csv.header[j]);
      c_cov.push_back(j);
    }
  }
  panel.rows.reserve(csv.rows.size());
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& f = csv.rows[i];
    const std::string at = csv.where(i);
    PanelRow row;
    row.subject_id = f[c[0]];
    row.cluster_id = f[c[1]].empty() ? row.subject_id : f[c[1]];
    row.term_id = f[c[2]];
    row.t = static_cast<int>(parse_int(f[c[3]], at + "t: "));
    row.R = static_cast<int>(parse_int(f[c[4]], at + "R: "));
    row.S = static_cast<int>(parse_int(f[c[5]], at + "S: "));
    row.Y = f[c[6]].empty() ? std::nan("") : parse_double(f[c[6]], at + "Y: ");
    row.S_hat = static_cast<int>(parse_int(f[c[7]], at + "S_hat: "));
    row.Y_hat = parse_double(f[c[8]], at + "Y_hat: ");
    row.weight = parse_double(f[c[9]], at + "weight: ");
    for (auto j : c_cov) {
      row.covariates.push_back(f[j].empty() ? std::nan("") : parse_double(f[j], at + csv.header[j] + ": "));
    }
    panel.rows.push_back(std::move(row));
  }
  return panel;
}

Panel read_panel_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return read_panel(in, path);
}

void write_panel(std::ostream& out, const Panel& panel) {
  std::vector<std::string> header = kPanelColumns;
  for (const auto& c : panel.covariate_names) header.push_back(c);
  write_csv_row(out, header);
  for (const auto& r : panel.rows) {
    std::vector<std::string> f = {r.subject_id,
                                  r.cluster_id,
                                  r.term_id,
                                  std::to_string(r.t),
                                  std::to_string(r.R),
                                  std::to_string(r.S),
                                  std::isnan(r.Y) ? "" : format_double(r.Y),
                                  std::to_string(r.S_hat),
                                  format_double(r.Y_hat),
                                  format_double(r.weight)};
    for (double v : r.covariates) f.push_back(format_double(v));
    write_csv_row(out, f);
  }
}

void write_panel_file(const std::string& path, const Panel& panel) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_panel(out, panel);
}

std::vector<TermTiming> read_request_timing(const std::string& path) {
  const CsvTable csv = read_csv_file(path);
  const auto c_term = csv.require("term_id");
  const auto c_req = csv.require("request");
  const auto c_date = csv.require("date");
  const auto c_rate = csv.require("cumulative_rate");
  std::vector<TermTiming> out;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& f = csv.rows[i];
    const std::string at = csv.where(i);
    if (out.empty() || out.back().term_id != f[c_term]) out.push_back({f[c_term], {}, {}});
    auto& term = out.back();
    const auto k = parse_int(f[c_req], at + "request: ");
    if (k != static_cast<long long>(term.request_dates.size()) + 1) {
      throw ValidationError(at + "requests must be listed in order starting at 1");
    }
    const Instant t = parse_rfc3339(f[c_date] + "T00:00:00Z");
    term.request_dates.push_back(std::chrono::floor<std::chrono::days>(t));
    term.cumulative_rates.push_back(parse_double(f[c_rate], at + "cumulative_rate: "));
  }
  return out;
}

std::string bundled_request_timing_path() { return std::string(REQIV_DATA_DIR) + "/request_timing.csv"; }

const TermTiming& find_term(const std::vector<TermTiming>& timing, std::string_view term_id) {
  for (const auto& t : timing) {
    if (t.term_id == term_id) return t;
  }
  throw ValidationError("no timing entry for term '" + std::string(term_id) + "'");
}

ContactTable timing_fixture_contacts(const TermTiming& term, int n_subjects) {
  if (n_subjects < 1) throw ValidationError("fixture needs at least one subject");
  using namespace std::chrono;
  ContactTable table;
  std::vector<Instant> schedule;
  for (auto d : term.request_dates) schedule.push_back(Instant{d} + hours{9});
  const int width = static_cast<int>(std::to_string(n_subjects).size());
  int assigned = 0;
  std::vector<int> recruited_by(n_subjects, 0);
  for (std::size_t k = 0; k < term.cumulative_rates.size(); ++k) {
    const int target = static_cast<int>(std::lround(term.cumulative_rates[k] * n_subjects));
    for (; assigned < target && assigned < n_subjects; ++assigned) recruited_by[assigned] = static_cast<int>(k) + 1;
  }
  for (int i = 0; i < n_subjects; ++i) {
    ContactRecord r;
    std::string id = std::to_string(i + 1);
    r.subject_id = "s" + std::string(width - id.size(), '0') + id;
    r.cluster_id = r.subject_id;
    r.term_id = term.term_id;
    r.stratum_id = "main";
    r.request_timestamps = schedule;
    if (recruited_by[i] > 0) {
      r.response_timestamp = schedule[recruited_by[i] - 1] + hours{1};
      r.outcome = 1.0;
    }
    table.records.push_back(std::move(r));
  }
  return table;
}

}  // namespace reqiv
