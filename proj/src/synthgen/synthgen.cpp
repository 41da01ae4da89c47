#include "reqiv/synthgen.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "reqiv/csv.hpp"
#include "reqiv/error.hpp"
#include "reqiv/normal.hpp"
#include "reqiv/random.hpp"

namespace reqiv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Instant nct_request(int k) {
  using namespace std::chrono;
  return Instant{sys_days{year{2020} / April / 14}} + hours{9} + days{7 * (k - 1)};
}

Instant sim_request(int k) {
  using namespace std::chrono;
  return Instant{sys_days{year{2024} / January / 8}} + hours{9} + days{7 * (k - 1)};
}

std::string padded_id(const std::string& prefix, std::size_t i, std::size_t n) {
  const std::string id = std::to_string(i + 1);
  const std::size_t width = std::max<std::size_t>(4, std::to_string(n).size());
  return prefix + std::string(width - id.size(), '0') + id;
}

// Fisher-Yates with our own generator.
std::vector<int> shuffled(int n, std::uint64_t seed) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(v[i], v[rng.index(i + 1)]);
  return v;
}

NctGroupSummary summarize(const std::vector<double>& v) {
  NctGroupSummary s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / s.n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.se = std::sqrt(ss / s.n) / std::sqrt(static_cast<double>(s.n));
  return s;
}

// Values for one responding group of one variable.
std::vector<double> group_values(const NctVariable& var, bool always_takers, int n, const NctConfig& config,
                                 std::vector<std::string>& warnings) {
  const double mean = always_takers ? var.always_taker_mean : var.reminder_complier_mean;
  const double se = always_takers ? var.always_taker_se : var.reminder_complier_se;
  const std::string group = always_takers ? "always-takers" : "reminder compliers";
  std::vector<double> v(n, mean);
  const auto order = shuffled(n, derive_seed(config.rounding_seed, var.name + "/" + group));
  if (var.kind == VariableKind::continuous) {
    // Half the group at mean + sd, half at mean - sd; an odd member keeps the mean.
    const double sd = se * std::sqrt(static_cast<double>(n));
    for (int i = 0; i < n / 2; ++i) {
      v[order[i]] = mean + sd;
      v[order[n / 2 + i]] = mean - sd;
    }
    return v;
  }
  const double target = mean * n;
  const int ones = config.binary_rounding == CountRounding::floor ? static_cast<int>(std::floor(target + 1e-9))
                                                                  : static_cast<int>(std::lround(target));
  std::fill(v.begin(), v.end(), 0.0);
  for (int i = 0; i < ones; ++i) v[order[i]] = 1.0;
  if (std::abs(target - std::round(target)) > 1e-6) {
    warnings.push_back(var.name + ": " + group + " mean " + format_double(mean) + " x " + std::to_string(n) +
                       " is not a whole count; " + std::to_string(ones) + " ones give mean " +
                       format_double(static_cast<double>(ones) / n));
  }
  return v;
}

}  // namespace

std::string to_string(VariableKind k) { return k == VariableKind::binary ? "binary" : "continuous"; }

VariableKind parse_variable_kind(const std::string& s) {
  if (s == "binary") return VariableKind::binary;
  if (s == "continuous") return VariableKind::continuous;
  throw ValidationError("unknown variable kind '" + s + "' (binary or continuous)");
}

std::string to_string(CountRounding r) { return r == CountRounding::floor ? "floor" : "nearest"; }

CountRounding parse_count_rounding(const std::string& s) {
  if (s == "floor") return CountRounding::floor;
  if (s == "nearest") return CountRounding::nearest;
  throw ValidationError("unknown count rounding '" + s + "' (floor or nearest)");
}

void NctMomentTable::validate() const {
  const double shares = always_taker_share + reminder_complier_share + nonrespondent_share;
  if (std::abs(shares - 1.0) > 1e-9) throw ValidationError("NCT group shares must sum to 1");
  for (double s : {always_taker_share, reminder_complier_share, nonrespondent_share}) {
    if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("NCT group shares must lie in [0, 1]");
  }
  if (n_total < 2) throw ValidationError("NCT total must be at least 2");
  if (variables.empty()) throw ValidationError("NCT moment table has no variables");
  for (const auto& v : variables) {
    if (v.name.empty()) throw ValidationError("NCT variable without a name");
    if (!std::isfinite(v.always_taker_mean) || !std::isfinite(v.reminder_complier_mean) ||
        !(v.always_taker_se >= 0) || !(v.reminder_complier_se >= 0)) {
      throw ValidationError("NCT variable '" + v.name + "' has an incomplete or negative moment");
    }
    if (v.kind == VariableKind::binary) {
      for (double m : {v.always_taker_mean, v.reminder_complier_mean}) {
        if (m < 0 || m > 1) throw ValidationError("binary NCT variable '" + v.name + "' has a mean outside [0, 1]");
      }
    }
  }
}

NctMomentTable nct_reference_moments() {
  NctMomentTable t;
  using K = VariableKind;
  t.variables = {
      {"earnings_before", K::continuous, 3746, 116, 3244, 256, 3095},
      {"earnings_after", K::continuous, 3783, 107, 3257, 251, 2981},
      {"large_earnings_loss", K::binary, 0.13, 0.01, 0.12, 0.02, 0.148},
      {"employed_before", K::binary, 0.65, 0.01, 0.55, 0.03, 0.567},
      {"employed_after", K::binary, 0.64, 0.01, 0.55, 0.03, 0.494},
      {"employment_loss", K::binary, 0.03, 0.00, 0.03, 0.01, 0.091},
  };
  return t;
}

NctMomentTable read_nct_moments(std::istream& in, const std::string& source) {
  const CsvTable csv = read_csv(in, source);
  const auto c_var = csv.require("variable"), c_kind = csv.require("kind"), c_am = csv.require("at_mean"),
             c_as = csv.require("at_se"), c_rm = csv.require("rc_mean"), c_rs = csv.require("rc_se"),
             c_gt = csv.require("ground_truth");
  NctMomentTable t;
  t.variables.clear();
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& row = csv.rows[i];
    const std::string where = csv.where(i);
    if (row[c_var] == "#shares") {
      t.always_taker_share = parse_double(row[c_am], where + "at share");
      t.reminder_complier_share = parse_double(row[c_rm], where + "rc share");
      t.nonrespondent_share = parse_double(row[c_gt], where + "nonrespondent share");
      continue;
    }
    if (row[c_var] == "#n_total") {
      t.n_total = static_cast<int>(parse_int(row[c_gt], where + "n_total"));
      continue;
    }
    NctVariable v;
    v.name = row[c_var];
    try {
      v.kind = parse_variable_kind(row[c_kind]);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    v.always_taker_mean = parse_double(row[c_am], where + "at_mean");
    v.always_taker_se = parse_double(row[c_as], where + "at_se");
    v.reminder_complier_mean = parse_double(row[c_rm], where + "rc_mean");
    v.reminder_complier_se = parse_double(row[c_rs], where + "rc_se");
    v.ground_truth_mean = row[c_gt].empty() ? kNaN : parse_double(row[c_gt], where + "ground_truth");
    t.variables.push_back(v);
  }
  t.validate();
  return t;
}

NctMomentTable read_nct_moments_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open moment table '" + path + "'");
  return read_nct_moments(in, path);
}

void write_nct_moments(std::ostream& out, const NctMomentTable& t) {
  write_csv_row(out, {"variable", "kind", "at_mean", "at_se", "rc_mean", "rc_se", "ground_truth"});
  for (const auto& v : t.variables) {
    write_csv_row(out, {v.name, to_string(v.kind), format_double(v.always_taker_mean), format_double(v.always_taker_se),
                        format_double(v.reminder_complier_mean), format_double(v.reminder_complier_se),
                        format_double(v.ground_truth_mean)});
  }
  write_csv_row(out, {"#shares", "", format_double(t.always_taker_share), "", format_double(t.reminder_complier_share),
                      "", format_double(t.nonrespondent_share)});
  write_csv_row(out, {"#n_total", "", "", "", "", "", std::to_string(t.n_total)});
}

NctGroupSizes nct_group_sizes(int n_total, double at_share, double rc_share) {
  NctGroupSizes s;
  s.always_takers = static_cast<int>(std::nearbyint(at_share * n_total));
  const int responding = static_cast<int>(std::nearbyint((at_share + rc_share) * n_total));
  s.reminder_compliers = responding - s.always_takers;
  s.nonrespondents = n_total - responding;
  return s;
}

NctDataset generate_nct(const NctMomentTable& moments, const NctConfig& config) {
  moments.validate();
  NctDataset ds;
  ds.config = config;
  ds.sizes = nct_group_sizes(moments.n_total, moments.always_taker_share, moments.reminder_complier_share);
  const int n_at = ds.sizes.always_takers, n_rc = ds.sizes.reminder_compliers;
  if (n_at < 1 || n_rc < 1) throw ValidationError("NCT groups are empty at this total");
  const auto n = static_cast<std::size_t>(moments.n_total);
  for (const auto& var : moments.variables) {
    NctVariableData data;
    data.moments = var;
    const auto at = group_values(var, true, n_at, config, data.warnings);
    const auto rc = group_values(var, false, n_rc, config, data.warnings);
    data.always_takers = summarize(at);
    data.reminder_compliers = summarize(rc);
    std::vector<double> pooled = at;
    pooled.insert(pooled.end(), rc.begin(), rc.end());
    data.respondents = summarize(pooled);
    data.contacts.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      ContactRecord r;
      r.subject_id = padded_id("nct", i, n);
      r.cluster_id = r.subject_id;
      r.term_id = "nct";
      r.stratum_id = "main";
      r.request_timestamps = {nct_request(1), nct_request(2)};
      if (i < pooled.size()) {
        const int period = i < static_cast<std::size_t>(n_at) ? 1 : 2;
        r.response_timestamp = nct_request(period) + std::chrono::hours{1};
        r.outcome = pooled[i];
      }
      data.contacts.records.push_back(std::move(r));
    }
    ds.variables.push_back(std::move(data));
  }
  return ds;
}

NctComparisonRow nct_pooled_respondents_reported() {
  return {"Always+Reminders (45%)", {3668, 3701, 0.13, 0.63, 0.63, 0.03}, {106, 98, 0.00, 0.01, 0.01, 0.00}, {}};
}

NctComparisonRow nct_other_method_reported() {
  return {"Bounds model (mid)point", {3368, 3232, 0.142, 0.588, 0.536, 0.091}, {}, {{"employed_before", {0.567, 0.609}}}};
}

NctComparisonRow nct_fiml_reported() {
  return {"MLE (reported)", {3197, 3211, 0.116, 0.517, 0.521, 0.026}, {250, 238, 0.023, 0.039, 0.039, 0.011}, {}};
}

NctComparisonRow nct_twostep_reported() {
  return {"Two step (reported)", {3107, 3113, 0.116, 0.520, 0.523, 0.026}, {303, 297, 0.026, 0.037, 0.037, 0.014}, {}};
}

// ---- Monte Carlo DGP ------------------------------------------------------

std::string to_string(MsrKind k) {
  switch (k) {
    case MsrKind::constant: return "constant";
    case MsrKind::linear: return "linear";
    case MsrKind::probit_index: return "probit_index";
  }
  return "";
}

MsrKind parse_msr_kind(const std::string& s) {
  if (s == "constant") return MsrKind::constant;
  if (s == "linear") return MsrKind::linear;
  if (s == "probit_index" || s == "probit") return MsrKind::probit_index;
  throw ValidationError("unknown m(u) kind '" + s + "' (constant, linear, probit_index)");
}

bool SimViolations::any() const {
  return time_drift != 0.0 || request_effect != 0.0 || defier_share > 0.0 || nonuniform_strength > 0.0;
}

void SimConfig::validate() const {
  if (n_subjects < 1) throw ValidationError("simulation needs at least one subject");
  if (propensities.empty()) throw ValidationError("simulation needs at least one request");
  for (std::size_t r = 0; r < propensities.size(); ++r) {
    const double p = propensities[r];
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("propensity P(" + std::to_string(r + 1) + ") must lie in (0, 1]");
    if (r > 0 && !(p > propensities[r - 1])) {
      throw ValidationError("propensities must be strictly increasing in the request count");
    }
  }
  if (!(noise_sd >= 0.0)) throw ValidationError("noise_sd must be non-negative");
  if (logistic_latent && (outcome_kind != OutcomeKind::binary || (groups.empty() && msr.kind != MsrKind::probit_index))) {
    throw ValidationError("logistic latent errors need a binary probit-index outcome");
  }
  if (groups.empty()) {
    if (msr.kind == MsrKind::probit_index && !(std::abs(msr.rho) < 1.0)) {
      throw ValidationError("probit-index m(u) needs |rho| < 1");
    }
    if (msr.kind != MsrKind::probit_index && outcome_kind == OutcomeKind::binary) {
      const double lo = std::min(msr.level, msr.level + (msr.kind == MsrKind::linear ? msr.slope : 0.0));
      const double hi = std::max(msr.level, msr.level + (msr.kind == MsrKind::linear ? msr.slope : 0.0));
      if (lo < 0.0 || hi > 1.0) throw ValidationError("binary m(u) must stay within [0, 1]");
    }
  } else {
    double total = 0.0;
    for (const auto& g : groups) {
      total += g.share;
      if (!(g.share > 0)) throw ValidationError("group shares must be positive");
      if (g.covariates.size() != covariate_names.size()) {
        throw ValidationError("every group needs one distribution per named covariate");
      }
      if (g.beta.size() != covariate_names.size() + 1) {
        throw ValidationError("group beta needs an intercept plus one coefficient per covariate");
      }
      if (!(std::abs(g.rho) < 1.0)) throw ValidationError("group rho must satisfy |rho| < 1");
      for (const auto& c : g.covariates) {
        if (c.values.empty() || c.values.size() != c.probabilities.size()) {
          throw ValidationError("discrete covariate needs matching values and probabilities");
        }
        if (std::abs(std::accumulate(c.probabilities.begin(), c.probabilities.end(), 0.0) - 1.0) > 1e-9) {
          throw ValidationError("discrete covariate probabilities must sum to 1");
        }
      }
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("group shares must sum to 1");
  }
  const auto& v = violations;
  if (!(v.defier_share >= 0.0 && v.defier_share <= 1.0)) throw ValidationError("defier share must lie in [0, 1]");
  if (!(v.nonuniform_strength >= 0.0 && v.nonuniform_strength <= 1.0)) {
    throw ValidationError("nonuniform request strength must lie in [0, 1]");
  }
  if (v.request_effect != 0.0 && v.request_effect_requests.empty()) {
    throw ValidationError("request_effect needs the requests it applies to");
  }
  for (int r : v.request_effect_requests) {
    if (r < 1 || r > request_count()) throw ValidationError("request_effect request out of range");
  }
  if (v.defier_share > 0.0 && v.nonuniform_strength > 0.0) {
    throw ValidationError("defiers and nonuniform requests cannot be combined (the request count would depend on both)");
  }
  if (v.nonuniform_strength > 0.0 && request_count() < 2) {
    throw ValidationError("nonuniform requests need at least two requests");
  }
}

double sim_msr(const MsrSpec& msr, OutcomeKind kind, double noise_sd, double u) {
  switch (msr.kind) {
    case MsrKind::constant: return msr.level;
    case MsrKind::linear: return msr.level + msr.slope * u;
    case MsrKind::probit_index: {
      const double q = normal_quantile(1.0 - u);
      if (kind == OutcomeKind::continuous) return msr.beta + noise_sd * msr.rho * q;
      return normal_cdf((msr.beta + msr.rho * q) / std::sqrt(1.0 - msr.rho * msr.rho));
    }
  }
  return kNaN;
}

const ComplierTruth& SimGroundTruth::pair(int r, int r_prime) const {
  for (const auto& c : compliers) {
    if (c.r == r && c.r_prime == r_prime) return c;
  }
  throw ValidationError("no ground truth for request pair (" + std::to_string(r) + ", " + std::to_string(r_prime) + ")");
}

namespace {

struct Cell {
  int group;
  double probability;
  double index;
  double rho;
};

// Every (group, covariate profile) with its population probability.
std::vector<Cell> population_cells(const SimConfig& c) {
  std::vector<Cell> cells;
  if (c.groups.empty()) {
    cells.push_back({0, 1.0, c.msr.beta, c.msr.rho});
    return cells;
  }
  for (std::size_t g = 0; g < c.groups.size(); ++g) {
    const auto& grp = c.groups[g];
    std::vector<std::size_t> pick(grp.covariates.size(), 0);
    while (true) {
      double p = grp.share, index = grp.beta[0];
      for (std::size_t j = 0; j < pick.size(); ++j) {
        p *= grp.covariates[j].probabilities[pick[j]];
        index += grp.beta[j + 1] * grp.covariates[j].values[pick[j]];
      }
      cells.push_back({static_cast<int>(g), p, index, grp.rho});
      std::size_t j = 0;
      for (; j < pick.size(); ++j) {
        if (++pick[j] < grp.covariates[j].values.size()) break;
        pick[j] = 0;
      }
      if (j == pick.size()) break;
    }
  }
  return cells;
}

// pi / sqrt(3): the standard logistic has this many unit standard deviations
// per unit of its scale.
constexpr double kLogisticScale = 1.8137993642342178;

double cell_msr(const SimConfig& c, const Cell& cell, double u) {
  if (c.groups.empty() && c.msr.kind != MsrKind::probit_index) return sim_msr(c.msr, c.outcome_kind, c.noise_sd, u);
  const double q = normal_quantile(1.0 - u);
  if (c.outcome_kind == OutcomeKind::continuous) return cell.index + c.noise_sd * cell.rho * q;
  const double t = (cell.index + cell.rho * q) / std::sqrt(1.0 - cell.rho * cell.rho);
  if (c.logistic_latent) return 1.0 / (1.0 + std::exp(-t * kLogisticScale));
  return normal_cdf(t);
}

double cell_mean(const SimConfig& c, const Cell& cell) {
  if (c.groups.empty() && c.msr.kind == MsrKind::constant) return c.msr.level;
  if (c.groups.empty() && c.msr.kind == MsrKind::linear) return c.msr.level + 0.5 * c.msr.slope;
  if (c.logistic_latent) {
    using boost::math::quadrature::gauss_kronrod;
    return gauss_kronrod<double, 31>::integrate([&](double u) { return cell_msr(c, cell, u); }, 0.0, 1.0, 15, 1e-12);
  }
  return c.outcome_kind == OutcomeKind::continuous ? cell.index : normal_cdf(cell.index);
}

double segment_mean(const SimConfig& c, const std::vector<Cell>& cells, double lo, double hi) {
  using boost::math::quadrature::gauss_kronrod;
  auto m = [&](double u) {
    double v = 0.0;
    for (const auto& cell : cells) v += cell.probability * cell_msr(c, cell, u);
    return v;
  };
  return gauss_kronrod<double, 31>::integrate(m, lo, hi, 15, 1e-12) / (hi - lo);
}

int draw_discrete(Rng& rng, const std::vector<double>& probabilities) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < probabilities.size(); ++k) {
    acc += probabilities[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probabilities.size()) - 1;
}

}  // namespace

SimResult simulate(const SimConfig& config) {
  config.validate();
  SimResult out;
  out.config = config;
  const int T = config.request_count();
  const auto& P = config.propensities;
  const auto& viol = config.violations;
  const auto cells = population_cells(config);
  const bool latent_normal = !config.groups.empty() || config.msr.kind == MsrKind::probit_index;

  std::vector<double> group_share;
  if (config.groups.empty()) {
    group_share = {1.0};
  } else {
    for (const auto& g : config.groups) group_share.push_back(g.share);
  }
  out.truth.group_mean_analytic.assign(group_share.size(), 0.0);
  for (const auto& cell : cells) {
    const double m = cell_mean(config, cell);
    out.truth.mean_analytic += cell.probability * m;
    out.truth.group_mean_analytic[cell.group] += cell.probability * m / group_share[cell.group];
  }

  constexpr int kBlock = 4096;
  out.subjects.resize(config.n_subjects);
  for (int start = 0; start < config.n_subjects; start += kBlock) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(start / kBlock)));
    const int stop = std::min(config.n_subjects, start + kBlock);
    for (int i = start; i < stop; ++i) {
      SimSubject& s = out.subjects[i];
      double index = config.msr.beta, rho = config.msr.rho;
      if (!config.groups.empty()) {
        s.group = draw_discrete(rng, group_share);
        const auto& g = config.groups[s.group];
        index = g.beta[0];
        rho = g.rho;
        for (std::size_t j = 0; j < g.covariates.size(); ++j) {
          const double x = g.covariates[j].values[draw_discrete(rng, g.covariates[j].probabilities)];
          s.covariates.push_back(x);
          index += g.beta[j + 1] * x;
        }
      }
      s.U = rng.uniform();
      const double e = rng.normal();
      const double xi = rng.uniform();
      const bool defier = viol.defier_share > 0.0 && rng.uniform() < viol.defier_share;
      const double withhold = rng.uniform();

      // Outcome at a given shift of the response.
      double eps = 0.0;
      if (latent_normal) {
        const double idio = config.logistic_latent ? std::log(xi / (1.0 - xi)) / kLogisticScale : e;
        eps = rho * normal_quantile(1.0 - s.U) + std::sqrt(1.0 - rho * rho) * idio;
      }
      auto outcome = [&](double shift) {
        if (config.outcome_kind == OutcomeKind::continuous) {
          const double base = latent_normal ? index + config.noise_sd * eps
                                            : sim_msr(config.msr, config.outcome_kind, config.noise_sd, s.U) +
                                                  config.noise_sd * e;
          return base + shift;
        }
        if (latent_normal) return index + eps + shift >= 0.0 ? 1.0 : 0.0;
        const double m = sim_msr(config.msr, config.outcome_kind, config.noise_sd, s.U) + shift;
        return xi <= m ? 1.0 : 0.0;
      };
      s.Y_star = outcome(0.0);

      for (int r = 1; r <= T; ++r) {
        if (s.U <= P[r - 1]) {
          s.first_compliant_request = r;
          break;
        }
      }
      const bool high = s.Y_star > out.truth.mean_analytic;
      s.requests_received = viol.nonuniform_strength > 0.0 && high && withhold < viol.nonuniform_strength ? 1 : T;
      for (int t = 1; t <= s.requests_received; ++t) {
        const double u = defier && t > 1 ? rng.uniform() : s.U;
        if (u <= P[t - 1]) {
          s.response_period = t;
          break;
        }
      }
      if (s.response_period > 0) {
        const int t = s.response_period;
        double shift = viol.time_drift * t;
        if (viol.request_effect_requests.count(t)) shift += viol.request_effect;
        s.response = outcome(shift);
      }
    }
  }

  // Ground truth.
  out.truth.group_mean_population.assign(group_share.size(), 0.0);
  std::vector<double> group_n(group_share.size(), 0.0);
  for (const auto& s : out.subjects) {
    out.truth.mean_population += s.Y_star;
    out.truth.group_mean_population[s.group] += s.Y_star;
    group_n[s.group] += 1.0;
  }
  out.truth.mean_population /= config.n_subjects;
  for (std::size_t g = 0; g < group_n.size(); ++g) {
    out.truth.group_mean_population[g] = group_n[g] > 0 ? out.truth.group_mean_population[g] / group_n[g] : kNaN;
  }
  for (int r = 1; r <= T; ++r) {
    for (int rp = 0; rp < r; ++rp) {
      ComplierTruth c;
      c.r = r;
      c.r_prime = rp;
      const double lo = rp == 0 ? 0.0 : P[rp - 1], hi = P[r - 1];
      c.analytic = segment_mean(config, cells, lo, hi);
      double sum = 0.0;
      for (const auto& s : out.subjects) {
        if (s.U > lo && s.U <= hi) {
          sum += s.Y_star;
          ++c.n;
        }
      }
      c.population = c.n > 0 ? sum / static_cast<double>(c.n) : kNaN;
      out.truth.compliers.push_back(c);
    }
  }
  return out;
}

namespace {

std::vector<std::string> sim_covariate_names(const SimConfig& c) {
  std::vector<std::string> names;
  if (!c.groups.empty()) names.push_back(c.group_column);
  names.insert(names.end(), c.covariate_names.begin(), c.covariate_names.end());
  return names;
}

std::vector<double> sim_covariates(const SimConfig& c, const SimSubject& s) {
  std::vector<double> v;
  if (!c.groups.empty()) v.push_back(c.groups[s.group].label);
  v.insert(v.end(), s.covariates.begin(), s.covariates.end());
  return v;
}

}  // namespace

ContactTable sim_contacts(const SimResult& sim) {
  ContactTable table;
  table.covariate_names = sim_covariate_names(sim.config);
  const std::size_t n = sim.subjects.size();
  table.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = sim.subjects[i];
    ContactRecord r;
    r.subject_id = padded_id("s", i, n);
    r.cluster_id = r.subject_id;
    r.term_id = "sim";
    r.stratum_id = "main";
    for (int k = 1; k <= s.requests_received; ++k) r.request_timestamps.push_back(sim_request(k));
    if (s.response_period > 0) {
      r.response_timestamp = sim_request(s.response_period) + std::chrono::hours{1};
      r.outcome = s.response;
    }
    r.covariates = sim_covariates(sim.config, s);
    table.records.push_back(std::move(r));
  }
  return table;
}

Panel sim_panel(const SimResult& sim) {
  Panel panel;
  panel.covariate_names = sim_covariate_names(sim.config);
  const std::size_t n = sim.subjects.size();
  std::size_t total = 0;
  for (const auto& s : sim.subjects) total += s.requests_received + 1;
  panel.rows.reserve(total);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = sim.subjects[i];
    const std::string id = padded_id("s", i, n);
    const auto cov = sim_covariates(sim.config, s);
    const int k = s.requests_received;
    for (int t = 0; t <= k; ++t) {
      PanelRow row;
      row.subject_id = id;
      row.cluster_id = id;
      row.term_id = "sim";
      row.t = t;
      row.R = t;
      row.S = t > 0 && t == s.response_period ? 1 : 0;
      row.Y = row.S ? s.response : kNaN;
      row.S_hat = s.response_period > 0 && t >= s.response_period ? 1 : 0;
      row.Y_hat = row.S_hat ? s.response : 0.0;
      row.weight = 1.0 / k;
      row.covariates = cov;
      panel.rows.push_back(std::move(row));
    }
  }
  return panel;
}

Panel gender_gap_panel(const GenderGapCounts& counts) {
  Panel panel;
  panel.covariate_names = {"female"};
  for (const auto& [cell, female] : {std::pair{&counts.men, 0.0}, std::pair{&counts.women, 1.0}}) {
    const int early_ones = static_cast<int>(std::lround(cell->early_mean * cell->early));
    const int late_ones = static_cast<int>(std::lround(cell->late_mean * cell->late));
    const std::size_t n = static_cast<std::size_t>(cell->early) + cell->late + cell->nonrespondents;
    for (std::size_t i = 0; i < n; ++i) {
      int period = 0;
      double y = 0.0;
      if (i < static_cast<std::size_t>(cell->early)) {
        period = 1;
        y = i < static_cast<std::size_t>(early_ones) ? 1.0 : 0.0;
      } else if (i < static_cast<std::size_t>(cell->early + cell->late)) {
        period = 2;
        y = i - cell->early < static_cast<std::size_t>(late_ones) ? 1.0 : 0.0;
      }
      const std::string id = padded_id(female ? "w" : "m", i, n);
      for (int t = 0; t <= 2; ++t) {
        PanelRow row;
        row.subject_id = id;
        row.cluster_id = id;
        row.term_id = "gender";
        row.t = t;
        row.R = t;
        row.S = t > 0 && t == period ? 1 : 0;
        row.Y = row.S ? y : kNaN;
        row.S_hat = period > 0 && t >= period ? 1 : 0;
        row.Y_hat = row.S_hat ? y : 0.0;
        row.weight = 0.5;
        row.covariates = {female};
        panel.rows.push_back(std::move(row));
      }
    }
  }
  return panel;
}

}  // namespace reqiv
