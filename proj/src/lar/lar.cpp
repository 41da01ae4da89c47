#include "reqiv/lar.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "reqiv/csv.hpp"

namespace reqiv {

namespace {

struct Moments {
  double w = 0.0, ys = 0.0, ss = 0.0;
  std::size_t n = 0;
  double mean_y() const { return ys / w; }
  double mean_s() const { return ss / w; }
};

struct PairData {
  std::vector<std::size_t> rows;  // indices into panel.rows with R in {r', r}
  std::vector<int> cluster;       // dense cluster ids over `rows`
  int n_clusters = 0;
};

PairData pair_rows(const Panel& panel, int r, int r_prime) {
  PairData d;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < panel.rows.size(); ++i) {
    const int R = panel.rows[i].R;
    if (R == r || R == r_prime) {
      d.rows.push_back(i);
      labels.push_back(panel.rows[i].cluster_id);
    }
  }
  const auto idx = index_clusters(labels);
  d.cluster = idx.of_row;
  d.n_clusters = idx.count;
  return d;
}

// Moments at r (index 1) and r' (index 0) over a subset of `d.rows`.
template <class Rows>
std::pair<Moments, Moments> pair_moments(const Panel& panel, const Rows& rows, int r) {
  Moments lo, hi;
  for (std::size_t i : rows) {
    const auto& row = panel.rows[i];
    Moments& m = row.R == r ? hi : lo;
    m.w += row.weight;
    m.ys += row.weight * row.Y_hat;
    m.ss += row.weight * row.S_hat;
    ++m.n;
  }
  return {lo, hi};
}

}  // namespace

PropensityTable estimate_propensities(const Panel& panel, const std::vector<int>& requests) {
  std::set<int> levels;
  for (const auto& row : panel.rows) levels.insert(row.R);
  PropensityTable out;
  std::vector<int> wanted = requests;
  if (wanted.empty()) wanted.assign(levels.begin(), levels.end());

  std::vector<std::string> labels;
  labels.reserve(panel.rows.size());
  for (const auto& row : panel.rows) labels.push_back(row.cluster_id);
  const auto clusters = index_clusters(labels);

  for (int r : wanted) {
    if (!levels.count(r)) {
      out.notes.push_back("no rows with R=" + std::to_string(r) + "; omitted");
      continue;
    }
    Moments m;
    for (const auto& row : panel.rows) {
      if (row.R != r) continue;
      m.w += row.weight;
      m.ss += row.weight * row.S_hat;
      ++m.n;
    }
    const double p = m.mean_s();
    std::vector<double> psi(clusters.count, 0.0);
    std::set<int> used;
    for (std::size_t i = 0; i < panel.rows.size(); ++i) {
      const auto& row = panel.rows[i];
      if (row.R != r) continue;
      psi[clusters.of_row[i]] += row.weight * (row.S_hat - p) / m.w;
      used.insert(clusters.of_row[i]);
    }
    double v = 0.0;
    for (double x : psi) v += x * x;
    const double g = static_cast<double>(used.size());
    if (g > 1) v *= g / (g - 1);
    out.by_request[r] = {r, p, std::sqrt(v), m.n};
  }
  return out;
}

LarEstimate estimate_lar(const Panel& panel, int r, int r_prime, const VarianceSpec& variance) {
  if (r <= r_prime) {
    throw ValidationError("LAR needs r > r' (got r=" + std::to_string(r) + ", r'=" + std::to_string(r_prime) + ")");
  }
  variance.validate();
  const PairData d = pair_rows(panel, r, r_prime);
  const auto [lo, hi] = pair_moments(panel, d.rows, r);
  if (hi.n == 0 || lo.n == 0) {
    throw ValidationError("no rows with R=" + std::to_string(hi.n == 0 ? r : r_prime));
  }
  LarEstimate e;
  e.r = r;
  e.r_prime = r_prime;
  e.p_r = hi.mean_s();
  e.p_r_prime = lo.mean_s();
  e.mean_y_r = hi.mean_y();
  e.mean_y_r_prime = lo.mean_y();
  e.n_r = hi.n;
  e.n_r_prime = lo.n;
  const double dp = e.p_r - e.p_r_prime;
  if (!(dp > 0)) {
    throw RelevanceError("relevance failure: P(" + std::to_string(r) + ")=" + format_double(e.p_r) +
                         " does not exceed P(" + std::to_string(r_prime) + ")=" + format_double(e.p_r_prime));
  }
  e.complier_mean = (e.mean_y_r - e.mean_y_r_prime) / dp;

  if (variance.method == VarianceMethod::analytic_sandwich) {
    e.se_method = "delta";
    std::vector<double> psi(d.n_clusters, 0.0);
    for (std::size_t k = 0; k < d.rows.size(); ++k) {
      const auto& row = panel.rows[d.rows[k]];
      const bool at_r = row.R == r;
      const double w = row.weight / (at_r ? hi.w : lo.w);
      const double my = at_r ? e.mean_y_r : e.mean_y_r_prime;
      const double ms = at_r ? e.p_r : e.p_r_prime;
      const double sign = at_r ? 1.0 : -1.0;
      psi[d.cluster[k]] += sign * w * ((row.Y_hat - my) - e.complier_mean * (row.S_hat - ms)) / dp;
    }
    double v = 0.0;
    for (double x : psi) v += x * x;
    const double g = static_cast<double>(d.n_clusters);
    if (g > 1) v *= g / (g - 1);
    e.se = std::sqrt(v);
  } else {
    e.se_method = "cluster_bootstrap";
    const auto boot = cluster_bootstrap(d.cluster, d.n_clusters, variance, [&](const Resample& rs) {
      std::vector<std::size_t> rows;
      rows.reserve(rs.rows.size());
      for (auto k : rs.rows) rows.push_back(d.rows[k]);
      const auto [blo, bhi] = pair_moments(panel, rows, r);
      const double bdp = bhi.mean_s() - blo.mean_s();
      if (blo.n == 0 || bhi.n == 0 || !(bdp > 0)) {
        return Eigen::VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN());
      }
      return Eigen::VectorXd::Constant(1, (bhi.mean_y() - blo.mean_y()) / bdp);
    });
    e.se = boot.se(0);
  }
  return e;
}

LarProfile lar_profile(const Panel& panel, const VarianceSpec& variance) {
  std::set<int> levels;
  for (const auto& row : panel.rows) levels.insert(row.R);
  LarProfile out;
  if (levels.empty()) return out;
  const int r_max = *levels.rbegin();
  for (int r = 1; r <= r_max; ++r) {
    if (!levels.count(r) || !levels.count(r - 1)) {
      out.skipped.push_back("pair (" + std::to_string(r) + "," + std::to_string(r - 1) + "): no rows at R=" +
                            std::to_string(levels.count(r) ? r - 1 : r));
      continue;
    }
    try {
      out.estimates.push_back(estimate_lar(panel, r, r - 1, variance));
    } catch (const RelevanceError& e) {
      out.skipped.push_back("pair (" + std::to_string(r) + "," + std::to_string(r - 1) + "): " + e.what());
    }
  }
  return out;
}

}  // namespace reqiv
