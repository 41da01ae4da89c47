#include "reqiv/variance.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <stdexcept>
#include <thread>

#include "reqiv/error.hpp"
#include "reqiv/random.hpp"

namespace reqiv {

void VarianceSpec::validate() const {
  if (method == VarianceMethod::cluster_bootstrap && bootstrap_replicates < 2) {
    throw ValidationError("cluster bootstrap needs at least 2 replicates");
  }
  if (cluster_column.empty()) throw ValidationError("cluster column must be named");
}

std::string to_string(VarianceMethod m) {
  return m == VarianceMethod::analytic_sandwich ? "analytic_sandwich" : "cluster_bootstrap";
}

VarianceMethod parse_variance_method(const std::string& s) {
  if (s == "analytic_sandwich" || s == "analytic" || s == "sandwich") {
    return VarianceMethod::analytic_sandwich;
  }
  if (s == "cluster_bootstrap" || s == "bootstrap") return VarianceMethod::cluster_bootstrap;
  throw ValidationError("unknown variance method '" + s + "'");
}

int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("REQIV_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

ClusterIndex index_clusters(std::span<const std::string> labels) {
  std::map<std::string_view, int> ids;
  for (const auto& l : labels) ids.emplace(l, 0);
  int next = 0;
  for (auto& [label, id] : ids) id = next++;
  ClusterIndex out;
  out.count = next;
  out.of_row.reserve(labels.size());
  for (const auto& l : labels) out.of_row.push_back(ids.at(l));
  return out;
}

Eigen::MatrixXd cluster_sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& scores,
                                 std::span<const int> cluster_of_row, int n_clusters) {
  Eigen::MatrixXd summed = Eigen::MatrixXd::Zero(n_clusters, scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) summed.row(cluster_of_row[i]) += scores.row(i);
  return cluster_sandwich(bread, summed);
}

Eigen::MatrixXd cluster_sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& cluster_scores) {
  const double g = static_cast<double>(cluster_scores.rows());
  const double correction = g > 1 ? g / (g - 1.0) : 1.0;
  const Eigen::MatrixXd meat = cluster_scores.transpose() * cluster_scores;
  Eigen::MatrixXd v = correction * bread * meat * bread.transpose();
  return 0.5 * (v + v.transpose());
}

Resample draw_resample(const std::vector<std::vector<std::size_t>>& members, std::uint64_t base_seed,
                       std::uint64_t replicate) {
  Rng rng(derive_seed(base_seed, replicate));
  const auto g = members.size();
  Resample out;
  out.n_clusters = static_cast<int>(g);
  for (std::size_t k = 0; k < g; ++k) {
    const auto& rows = members[rng.index(g)];
    for (auto r : rows) {
      out.rows.push_back(r);
      out.cluster.push_back(static_cast<int>(k));
    }
  }
  return out;
}

BootstrapResult cluster_bootstrap(std::span<const int> cluster_of_row, int n_clusters,
                                  const VarianceSpec& spec, const BootstrapStatistic& statistic) {
  if (n_clusters < 2) throw ValidationError("cluster bootstrap needs at least 2 distinct clusters");
  if (spec.bootstrap_replicates < 2) throw ValidationError("cluster bootstrap needs at least 2 replicates");

  std::vector<std::vector<std::size_t>> members(n_clusters);
  for (std::size_t i = 0; i < cluster_of_row.size(); ++i) members[cluster_of_row[i]].push_back(i);

  const int b = spec.bootstrap_replicates;
  std::vector<Eigen::VectorXd> values(b);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < b; r = next++) {
      try {
        values[r] = statistic(draw_resample(members, spec.base_seed, static_cast<std::uint64_t>(r)));
      } catch (const std::exception&) {
        values[r] = Eigen::VectorXd();
      }
    }
  };
  const int threads = std::min(resolve_thread_count(spec.threads), b);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  Eigen::Index k = 0;
  for (const auto& v : values) k = std::max(k, v.size());
  BootstrapResult out;
  out.replicates = Eigen::MatrixXd::Constant(b, k, std::numeric_limits<double>::quiet_NaN());
  for (int r = 0; r < b; ++r) {
    if (values[r].size() == k && values[r].allFinite()) {
      out.replicates.row(r) = values[r].transpose();
    } else {
      ++out.failed;
    }
  }
  out.se = replicate_sd(out.replicates);
  return out;
}

Eigen::VectorXd replicate_sd(const Eigen::MatrixXd& replicates) {
  return replicate_cov(replicates).diagonal().cwiseSqrt();
}

Eigen::MatrixXd replicate_cov(const Eigen::MatrixXd& replicates) {
  const auto k = replicates.cols();
  std::vector<Eigen::Index> ok;
  for (Eigen::Index r = 0; r < replicates.rows(); ++r) {
    if (replicates.row(r).allFinite()) ok.push_back(r);
  }
  if (ok.size() < 2) {
    return Eigen::MatrixXd::Constant(k, k, std::numeric_limits<double>::quiet_NaN());
  }
  Eigen::MatrixXd m(ok.size(), k);
  for (std::size_t i = 0; i < ok.size(); ++i) m.row(i) = replicates.row(ok[i]);
  const Eigen::RowVectorXd mean = m.colwise().mean();
  m.rowwise() -= mean;
  return m.transpose() * m / static_cast<double>(ok.size() - 1);
}

}  // namespace reqiv
