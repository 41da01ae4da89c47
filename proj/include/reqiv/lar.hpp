#pragma once

#include <map>
#include <string>
#include <vector>

#include "reqiv/error.hpp"
#include "reqiv/panel.hpp"
#include "reqiv/variance.hpp"

namespace reqiv {

// P(r) <= P(r') for a requested pair: the request indicator does not move
// response, so the Wald ratio is undefined.
class RelevanceError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct Propensity {
  int r = 0;
  double p = 0.0;   // weighted mean of S_hat among rows with R = r
  double se = 0.0;  // clustered
  std::size_t n = 0;
};

struct PropensityTable {
  std::map<int, Propensity> by_request;
  std::vector<std::string> notes;
};

// All observed request levels when `requests` is empty.
PropensityTable estimate_propensities(const Panel& panel, const std::vector<int>& requests = {});

struct LarEstimate {
  int r = 0;
  int r_prime = 0;
  double p_r = 0.0;
  double p_r_prime = 0.0;
  double mean_y_r = 0.0;        // weighted E[Y_hat | R = r]
  double mean_y_r_prime = 0.0;
  double complier_mean = 0.0;
  double se = 0.0;
  std::size_t n_r = 0;
  std::size_t n_r_prime = 0;
  std::string se_method;  // "delta" or "cluster_bootstrap"
};

// Wald ratio (E[Y_hat|r] - E[Y_hat|r']) / (E[S_hat|r] - E[S_hat|r']) on the
// rows with R in {r', r}. Analytic variance is the delta method with
// cluster-summed influence functions; bootstrap resamples clusters.
LarEstimate estimate_lar(const Panel& panel, int r, int r_prime, const VarianceSpec& variance = {});

struct LarProfile {
  std::vector<LarEstimate> estimates;
  std::vector<std::string> skipped;
};

// Consecutive pairs (1,0), (2,1), ... up to the largest observed R. Pairs
// without data or failing relevance are skipped with a note.
LarProfile lar_profile(const Panel& panel, const VarianceSpec& variance = {});

}  // namespace reqiv
