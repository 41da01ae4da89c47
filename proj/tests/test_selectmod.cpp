#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "reqiv/error.hpp"
#include "reqiv/normal.hpp"
#include "reqiv/selectmod.hpp"

using namespace reqiv;
using fixture::SubjectType;
using fixture::type_panel;

namespace {

struct SimTruth {
  double a0 = -0.8, a1 = 0.5;  // selection index a0 + a1 * R
  double b0 = 0.2, b1 = 0.6;   // outcome index b0 + b1 * x
  double rho = 0.5;
  double sigma = 2.0;          // continuous outcomes only
};

// Subjects respond at the first period where a0 + a1 t + V > 0; the outcome
// error is correlated with V.
Panel sim_panel(unsigned seed, int n, int k, const SimTruth& truth, bool binary) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution coin(0.5);
  std::vector<SubjectType> types;
  for (int i = 0; i < n; ++i) {
    const double v = nd(gen);
    const double e = truth.rho * v + std::sqrt(1 - truth.rho * truth.rho) * nd(gen);
    const double x = coin(gen) ? 1.0 : 0.0;
    int at = 0;
    for (int t = 1; t <= k; ++t) {
      if (truth.a0 + truth.a1 * t + v > 0) {
        at = t;
        break;
      }
    }
    const double index = truth.b0 + truth.b1 * x;
    const double y = binary ? (index + e > 0 ? 1.0 : 0.0) : index + truth.sigma * e;
    types.push_back({1, at, y, {x}});
  }
  return type_panel(types, k, "T", {"x"});
}

ModelSpec sim_spec(bool binary) {
  ModelSpec s;
  s.outcome_kind = binary ? OutcomeKind::binary : OutcomeKind::continuous;
  s.x_columns = {"x"};
  s.z_columns = {"R"};
  return s;
}

// A hand-built design with random covariates, one pattern per row.
Design random_design(unsigned seed, int n, bool binary) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.2, 2.0);
  Design d;
  d.x.resize(n, 2);
  d.z.resize(n, 3);
  d.y.resize(n);
  d.s.resize(n);
  d.w.resize(n);
  d.group.assign(n, 0);
  for (int p = 0; p < n; ++p) {
    d.x.row(p) << 1.0, nd(gen);
    d.z.row(p) << 1.0, d.x(p, 1), nd(gen);
    d.s(p) = nd(gen) > -0.3 ? 1.0 : 0.0;
    d.y(p) = d.s(p) == 0.0 ? 0.0 : binary ? (nd(gen) > 0 ? 1.0 : 0.0) : 2.0 * nd(gen) + 1.0;
    d.w(p) = u(gen);
    d.panel_row.push_back(p);
    d.pattern_of_row.push_back(p);
    d.weight_of_row.push_back(d.w(p));
    d.cluster_of_row.push_back(p);
  }
  d.n_clusters = n;
  d.group_labels = {"all"};
  d.x_names = {"(intercept)", "x1"};
  d.z_names = {"(intercept)", "x1", "z2"};
  return d;
}

ModelSpec design_spec(bool binary) {
  ModelSpec s;
  s.outcome_kind = binary ? OutcomeKind::binary : OutcomeKind::continuous;
  s.x_columns = {"x1"};
  s.z_columns = {"x1", "z2"};
  return s;
}

SmoothObjective bind(const Design& d, const SelectionFit& f) {
  return [&d, &f](const Eigen::VectorXd& th, Eigen::VectorXd* g) { return pattern_loglik(d, f, th, d.w, g, nullptr); };
}

}  // namespace

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd(0.0, 0.7);
  struct Case {
    bool binary;
    FitMethod method;
  };
  for (const Case c : {Case{true, FitMethod::heckprobit}, Case{false, FitMethod::heckman_fiml},
                       Case{true, FitMethod::probit}, Case{false, FitMethod::probit}}) {
    const Design d = random_design(11, 60, c.binary);
    ModelSpec spec = design_spec(c.binary);
    if (c.method == FitMethod::probit) spec.rho_constraint = 0.0;
    const SelectionFit f = layout_for(d, spec, c.method);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::VectorXd th(f.param_names.size());
      for (Eigen::Index j = 0; j < th.size(); ++j) th(j) = nd(gen);
      worst = std::max(worst, gradient_check(bind(d, f), th, 1e-5));
    }
    CAPTURE(to_string(c.method));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("binary cell probabilities add to one") {
  Design d = random_design(3, 3, true);
  d.s << 1, 1, 0;
  d.y << 1, 0, 0;
  d.x.row(1) = d.x.row(0);
  d.x.row(2) = d.x.row(0);
  d.z.row(1) = d.z.row(0);
  d.z.row(2) = d.z.row(0);
  d.w.setOnes();
  const SelectionFit f = layout_for(d, design_spec(true), FitMethod::heckprobit);
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd th(f.param_names.size());
    for (Eigen::Index j = 0; j < th.size(); ++j) th(j) = nd(gen);
    Eigen::MatrixXd scores;
    Eigen::VectorXd g;
    double total = 0.0;
    for (int p = 0; p < 3; ++p) {
      Eigen::VectorXd w = Eigen::VectorXd::Zero(3);
      w(p) = 1.0;
      total += std::exp(pattern_loglik(d, f, th, w, nullptr, nullptr));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("rho = 0 splits into two independent probits") {
  const Design d = random_design(19, 80, true);
  ModelSpec spec = design_spec(true);
  spec.rho_constraint = 0.0;
  const SelectionFit f = layout_for(d, spec, FitMethod::heckprobit);
  Eigen::VectorXd th(f.param_names.size());
  th << 0.3, -0.4, 0.1, 0.7, -0.2;
  double expected = 0.0;
  for (Eigen::Index p = 0; p < d.patterns(); ++p) {
    const double za = d.z.row(p).dot(th.tail(3));
    const double xb = d.x.row(p).dot(th.head(2));
    double l = std::log(oracle::series_normal_cdf(d.s(p) == 1.0 ? za : -za));
    if (d.s(p) == 1.0) l += std::log(oracle::series_normal_cdf(d.y(p) == 1.0 ? xb : -xb));
    expected += d.w(p) * l;
  }
  CHECK(pattern_loglik(d, f, th, d.w, nullptr, nullptr) == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("continuous likelihood at rho = 0 is normal times probit") {
  const Design d = random_design(23, 50, false);
  ModelSpec spec = design_spec(false);
  spec.rho_constraint = 0.0;
  const SelectionFit f = layout_for(d, spec, FitMethod::heckman_fiml);
  Eigen::VectorXd th(f.param_names.size());
  th << 1.1, 0.2, 0.4, -0.3, 0.5, std::log(1.7);
  double expected = 0.0;
  for (Eigen::Index p = 0; p < d.patterns(); ++p) {
    const double za = d.z.row(p).dot(th.segment(2, 3));
    double l;
    if (d.s(p) == 1.0) {
      const double r = (d.y(p) - d.x.row(p).dot(th.head(2))) / 1.7;
      l = std::log(oracle::series_normal_cdf(za)) - std::log(1.7) - 0.5 * r * r - 0.5 * std::log(2 * M_PI);
    } else {
      l = std::log(oracle::series_normal_cdf(-za));
    }
    expected += d.w(p) * l;
  }
  CHECK(pattern_loglik(d, f, th, d.w, nullptr, nullptr) == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("binary model recovers simulated parameters") {
  SimTruth truth;
  const Panel p = sim_panel(101, 20000, 3, truth, true);
  const SelectionFit f = fit_heckprobit(p, sim_spec(true));
  REQUIRE(f.converged);
  CHECK(std::abs(f.beta(0, 0) - truth.b0) < 0.06);
  CHECK(std::abs(f.beta(1, 0) - truth.b1) < 0.06);
  CHECK(std::abs(f.alpha(0, 0) - truth.a0) < 0.05);
  CHECK(std::abs(f.alpha(1, 0) - truth.a1) < 0.03);
  CHECK(std::abs(f.rho(0) - truth.rho) < 0.1);
  for (Eigen::Index j = 0; j < f.se.size(); ++j) CHECK(f.se(j) > 0);

  // Estimates within a few standard errors.
  CHECK(std::abs(f.rho(0) - truth.rho) < 4 * f.se(f.eta_index(0)) * (1 - f.rho(0) * f.rho(0)) + 0.02);

  // The free fit nests the rho = 0 fit.
  ModelSpec zero = sim_spec(true);
  zero.rho_constraint = 0.0;
  const SelectionFit f0 = fit_heckprobit(p, zero);
  CHECK(f.loglik >= f0.loglik - 1e-6);
  CHECK(f0.eta_index(0) == -1);
}

TEST_CASE("continuous model: FIML and two-step agree with the truth") {
  SimTruth truth;
  truth.rho = -0.4;
  const Panel p = sim_panel(202, 6000, 3, truth, false);
  ModelSpec spec = sim_spec(false);
  spec.variance.bootstrap_replicates = 60;
  const SelectionFit fiml = fit_heckman_fiml(p, spec);
  REQUIRE(fiml.converged);
  CHECK(std::abs(fiml.beta(0, 0) - truth.b0) < 0.15);
  CHECK(std::abs(fiml.beta(1, 0) - truth.b1) < 0.15);
  CHECK(std::abs(fiml.sigma(0) - truth.sigma) < 0.1);
  CHECK(std::abs(fiml.rho(0) - truth.rho) < 0.12);
  const SelectionFit two = fit_heckman_twostep(p, spec);
  CHECK(std::isnan(two.loglik));
  CHECK(two.variance_method == "cluster_bootstrap");
  CHECK(std::abs(two.beta(0, 0) - fiml.beta(0, 0)) < 3 * fiml.se(0));
  CHECK(std::abs(two.beta(1, 0) - fiml.beta(1, 0)) < 3 * fiml.se(1));
  CHECK(std::abs(two.rho(0) - fiml.rho(0)) < 0.2);
  CHECK(two.se(0) > 0);
}

TEST_CASE("fits ignore row order and overall weight scale") {
  SimTruth truth;
  const Panel p = sim_panel(303, 3000, 2, truth, true);
  const SelectionFit f = fit_heckprobit(p, sim_spec(true));

  Panel shuffled = p;
  std::mt19937 gen(9);
  std::shuffle(shuffled.rows.begin(), shuffled.rows.end(), gen);
  const SelectionFit fs = fit_heckprobit(shuffled, sim_spec(true));
  CHECK((fs.theta - f.theta).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((fs.se - f.se).cwiseAbs().maxCoeff() < 1e-8);

  Panel scaled = p;
  for (auto& row : scaled.rows) row.weight *= 7.5;
  const SelectionFit fw = fit_heckprobit(scaled, sim_spec(true));
  CHECK((fw.theta - f.theta).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((fw.se - f.se).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(fw.loglik == doctest::Approx(7.5 * f.loglik).epsilon(1e-8));
}

TEST_CASE("population means") {
  // 40 respond with y = 1, 60 with y = 0, 100 never respond.
  const Panel p = type_panel({{40, 1, 1.0}, {60, 1, 0.0}, {100, 0, 0.0}}, 1);
  ModelSpec spec;
  spec.outcome_kind = OutcomeKind::binary;
  spec.rho_constraint = 0.0;
  const SelectionFit f = fit_outcome_only(p, spec);
  CHECK(normal_cdf(f.beta(0, 0)) == doctest::Approx(0.4).epsilon(1e-7));
  const auto m = population_mean(f, p, MeanTarget::corrected);
  CHECK(m.estimate == doctest::Approx(0.4).epsilon(1e-7));
  CHECK(m.n == 200);
  // Intercept-only probit: the delta SE is the binomial SE over respondents,
  // with G/(G-1) over all 200 clusters.
  CHECK(m.se == doctest::Approx(std::sqrt(0.24 / 100 * 200 / 199.0)).epsilon(1e-6));
  const auto r = population_mean(f, p, MeanTarget::respondent_only);
  CHECK(r.n == 100);
  CHECK(r.estimate == doctest::Approx(0.4).epsilon(1e-7));
}

TEST_CASE("continuous outcome-only fit is weighted least squares") {
  const Panel p = type_panel({{3, 1, 2.0}, {2, 1, 7.0}, {4, 0, 0.0}}, 1);
  ModelSpec spec;
  spec.outcome_kind = OutcomeKind::continuous;
  const SelectionFit f = fit_outcome_only(p, spec);
  CHECK(f.beta(0, 0) == doctest::Approx(4.0));
  CHECK(f.sigma(0) == doctest::Approx(std::sqrt(6.0)));
  CHECK(f.link == Link::identity);
}

TEST_CASE("a fit compared with itself has p = 1") {
  SimTruth truth;
  const Panel p = sim_panel(404, 400, 2, truth, true);
  ModelSpec spec = sim_spec(true);
  spec.variance.bootstrap_replicates = 20;
  const SelectionFit f = fit_heckprobit(p, spec);
  const auto t = test_selection_bias(f, f, p);
  CHECK(t.difference == 0.0);
  CHECK(t.p_value == 1.0);
}

TEST_CASE("selection bias test detects strong selection") {
  SimTruth truth;
  truth.rho = 0.8;
  const Panel p = sim_panel(505, 4000, 2, truth, true);
  ModelSpec spec = sim_spec(true);
  spec.variance.bootstrap_replicates = 40;
  const SelectionFit f = fit_heckprobit(p, spec);
  ModelSpec zero = spec;
  zero.rho_constraint = 0.0;
  const SelectionFit f0 = fit_outcome_only(p, zero);
  const auto t = test_selection_bias(f, f0, p);
  CHECK(t.difference > 0);
  CHECK(t.se > 0);
  CHECK(t.p_value < 0.05);
  CHECK(t.failed == 0);
}

TEST_CASE("errors name the problem") {
  SimTruth truth;
  Panel p = sim_panel(606, 300, 2, truth, true);
  for (auto& row : p.rows) row.covariates.push_back(2.0 * row.covariates[0]);
  p.covariate_names.push_back("x2");

  ModelSpec spec = sim_spec(true);
  spec.x_columns = {"x", "x2"};
  try {
    fit_heckprobit(p, spec);
    FAIL("expected a collinearity error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("x2") != std::string::npos);
  }

  Panel all_one = p;
  for (auto& row : all_one.rows) {
    if (row.S_hat) row.Y_hat = 1.0;
    if (row.S) row.Y = 1.0;
  }
  CHECK_THROWS_AS(fit_heckprobit(all_one, sim_spec(true)), ValidationError);

  ModelSpec unidentified;
  unidentified.x_columns = {"x"};
  unidentified.z_columns = {"x"};
  CHECK_THROWS_AS(fit_heckprobit(p, unidentified), ValidationError);

  CHECK_THROWS_AS(fit_heckman_fiml(p, sim_spec(true)), ValidationError);
  CHECK_THROWS_AS(parse_fit_method("logit"), ValidationError);
}

TEST_CASE("grouped fits match separate fits") {
  SimTruth truth;
  Panel a = sim_panel(707, 3000, 2, truth, true);
  truth.rho = -0.3;
  truth.b0 = -0.4;
  Panel b = sim_panel(708, 3000, 2, truth, true);
  Panel both;
  both.covariate_names = {"x", "female"};
  for (auto [src, flag] : {std::pair{&a, 0.0}, std::pair{&b, 1.0}}) {
    for (auto row : src->rows) {
      row.subject_id += flag ? "f" : "m";
      row.cluster_id = row.subject_id;
      row.covariates.push_back(flag);
      both.rows.push_back(row);
    }
  }
  ModelSpec spec = sim_spec(true);
  spec.group_column = "female";
  const SelectionFit g = fit_heckprobit(both, spec);
  REQUIRE(g.group_labels == std::vector<std::string>{"0", "1"});
  const SelectionFit fa = fit_heckprobit(a, sim_spec(true));
  const SelectionFit fb = fit_heckprobit(b, sim_spec(true));
  CHECK(std::abs(g.rho(0) - fa.rho(0)) < 1e-5);
  CHECK(std::abs(g.rho(1) - fb.rho(0)) < 1e-5);
  CHECK((g.beta.col(1) - fb.beta.col(0)).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(g.loglik == doctest::Approx(fa.loglik + fb.loglik).epsilon(1e-8));
}

TEST_CASE("chi-square tail and Wald test") {
  CHECK(chi_square_upper(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi_square_upper(5.991464547107979, 2) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi_square_upper(0.0, 3) == 1.0);
  SelectionFit f;
  f.theta = Eigen::Vector2d(1.0, 2.0);
  f.vcov = Eigen::Matrix2d::Identity() * 0.25;
  const auto w = wald_test(f, {0, 1});
  CHECK(w.statistic == doctest::Approx(20.0));
  CHECK(w.df == 2);
}

TEST_CASE("clustered sandwich of a continuous fit matches a direct computation") {
  SimTruth truth;
  truth.sigma = 150.0;  // far from unit scale
  truth.b0 = 3000.0;
  truth.b1 = 200.0;
  const Panel p = sim_panel(808, 2000, 2, truth, false);
  const SelectionFit f = fit_heckman_fiml(p, sim_spec(false));
  REQUIRE(f.converged);
  const Design d = build_design(p, f.spec);
  const Eigen::MatrixXd h = hessian_from_gradient(bind(d, f), f.theta, 1e-5);
  Eigen::VectorXd g;
  Eigen::MatrixXd scores;
  pattern_loglik(d, f, f.theta, d.w, &g, &scores);
  Eigen::MatrixXd by_cluster = Eigen::MatrixXd::Zero(d.n_clusters, f.theta.size());
  for (std::size_t i = 0; i < d.pattern_of_row.size(); ++i) {
    by_cluster.row(d.cluster_of_row[i]) += d.weight_of_row[i] * scores.row(d.pattern_of_row[i]);
  }
  const Eigen::MatrixXd bread = (-h).inverse();
  const double G = d.n_clusters;
  const Eigen::MatrixXd v = bread * by_cluster.transpose() * by_cluster * bread * G / (G - 1);
  for (Eigen::Index j = 0; j < v.rows(); ++j) {
    CAPTURE(f.param_names[j]);
    CHECK(f.se(j) == doctest::Approx(std::sqrt(v(j, j))).epsilon(1e-3));
  }
}
