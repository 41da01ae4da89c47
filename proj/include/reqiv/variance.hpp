#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace reqiv {

enum class VarianceMethod { analytic_sandwich, cluster_bootstrap };

struct VarianceSpec {
  VarianceMethod method = VarianceMethod::analytic_sandwich;
  std::string cluster_column = "cluster_id";
  int bootstrap_replicates = 500;
  std::uint64_t base_seed = 20250224;
  // 0 means: take REQIV_THREADS from the environment, else 1.
  int threads = 0;

  void validate() const;
};

std::string to_string(VarianceMethod m);
VarianceMethod parse_variance_method(const std::string& s);

int resolve_thread_count(int requested);

// Dense cluster labels 0..G-1 assigned in sorted order of the raw labels,
// so the mapping does not depend on row order.
struct ClusterIndex {
  std::vector<int> of_row;
  int count = 0;
};

ClusterIndex index_clusters(std::span<const std::string> labels);

// Cluster-robust sandwich bread * meat * bread with the G/(G-1) correction.
// `scores` holds one (weighted) score row per observation.
Eigen::MatrixXd cluster_sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& scores,
                                 std::span<const int> cluster_of_row, int n_clusters);

// Same, from scores already summed within clusters (one row per cluster).
Eigen::MatrixXd cluster_sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& cluster_scores);

// One bootstrap draw: original row indices, and for each the index of the
// drawn cluster copy (0..G-1) so a cluster drawn twice counts as two clusters.
struct Resample {
  std::vector<std::size_t> rows;
  std::vector<int> cluster;
  int n_clusters = 0;
};

struct BootstrapResult {
  Eigen::VectorXd se;
  Eigen::MatrixXd replicates;  // B x k; rows of failed replicates are NaN
  int failed = 0;
};

using BootstrapStatistic = std::function<Eigen::VectorXd(const Resample&)>;

// Draws G clusters with replacement per replicate. Replicate r is seeded with
// derive_seed(base_seed, r), so output is identical for any thread count.
// Throws ValidationError with fewer than 2 clusters.
BootstrapResult cluster_bootstrap(std::span<const int> cluster_of_row, int n_clusters,
                                  const VarianceSpec& spec, const BootstrapStatistic& statistic);

// Resample used by replicate `replicate` (exposed for tests and reuse).
Resample draw_resample(const std::vector<std::vector<std::size_t>>& members, std::uint64_t base_seed,
                       std::uint64_t replicate);

// Column-wise standard deviation (n-1 denominator) ignoring NaN rows.
Eigen::VectorXd replicate_sd(const Eigen::MatrixXd& replicates);
Eigen::MatrixXd replicate_cov(const Eigen::MatrixXd& replicates);

}  // namespace reqiv
