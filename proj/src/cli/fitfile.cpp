#include "reqiv/fitfile.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <ostream>

#include "reqiv/csv.hpp"
#include "reqiv/error.hpp"
#include "reqiv/normal.hpp"

namespace reqiv {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double num_of(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

// Row-major list of rows.
json mat(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec(m.row(i).transpose()));
  return a;
}

Eigen::VectorXd vec_of(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = num_of(j[i]);
  return v;
}

Eigen::MatrixXd mat_of(const json& j, Eigen::Index cols_if_empty = 0) {
  if (j.empty()) return Eigen::MatrixXd(0, cols_if_empty);
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) throw ValidationError("ragged matrix");
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = num_of(j[i][k]);
  }
  return m;
}

json spec_json(const ModelSpec& s) {
  return {
      {"outcome_kind", to_string(s.outcome_kind)},
      {"x_columns", s.x_columns},
      {"z_columns", s.z_columns},
      {"rho_constraint", s.rho_constraint ? json(*s.rho_constraint) : json(nullptr)},
      {"weight_column", s.weight_column},
      {"variance",
       {{"method", to_string(s.variance.method)},
        {"cluster_column", s.variance.cluster_column},
        {"bootstrap_replicates", s.variance.bootstrap_replicates},
        {"base_seed", s.variance.base_seed}}},
      {"sample_rule", to_string(s.sample_rule)},
      {"group_column", s.group_column},
      {"min_request", s.min_request},
      {"max_request", s.max_request},
      {"optimizer",
       {{"max_iterations", s.optimizer.max_iterations},
        {"gradient_tolerance", s.optimizer.gradient_tolerance},
        {"objective_rel_tolerance", s.optimizer.objective_rel_tolerance},
        {"finite_difference_step", s.optimizer.finite_difference_step}}},
  };
}

ModelSpec spec_of(const json& j) {
  ModelSpec s;
  s.outcome_kind = parse_outcome_kind(j.at("outcome_kind").get<std::string>());
  s.x_columns = j.at("x_columns").get<std::vector<std::string>>();
  s.z_columns = j.at("z_columns").get<std::vector<std::string>>();
  if (!j.at("rho_constraint").is_null()) s.rho_constraint = j.at("rho_constraint").get<double>();
  s.weight_column = j.at("weight_column").get<std::string>();
  const json& v = j.at("variance");
  s.variance.method = parse_variance_method(v.at("method").get<std::string>());
  s.variance.cluster_column = v.at("cluster_column").get<std::string>();
  s.variance.bootstrap_replicates = v.at("bootstrap_replicates").get<int>();
  s.variance.base_seed = v.at("base_seed").get<std::uint64_t>();
  // Thread count is a property of the run, not the model; it is not stored.
  s.sample_rule = parse_sample_rule(j.at("sample_rule").get<std::string>());
  s.group_column = j.at("group_column").get<std::string>();
  s.min_request = j.at("min_request").get<int>();
  s.max_request = j.at("max_request").get<int>();
  const json& o = j.at("optimizer");
  s.optimizer.max_iterations = o.at("max_iterations").get<int>();
  s.optimizer.gradient_tolerance = o.at("gradient_tolerance").get<double>();
  s.optimizer.objective_rel_tolerance = o.at("objective_rel_tolerance").get<double>();
  s.optimizer.finite_difference_step = o.at("finite_difference_step").get<double>();
  return s;
}

}  // namespace

void write_fit(std::ostream& out, const SelectionFit& f) {
  const json j = {
      {"format", "reqiv-fit"},
      {"format_version", kFormatVersion},
      {"spec", spec_json(f.spec)},
      {"method", to_string(f.method)},
      {"link", f.link == Link::probit ? "probit" : "identity"},
      {"group_labels", f.group_labels},
      {"x_names", f.x_names},
      {"z_names", f.z_names},
      {"param_names", f.param_names},
      {"theta", vec(f.theta)},
      {"vcov", mat(f.vcov)},
      {"se", vec(f.se)},
      {"beta", mat(f.beta)},
      {"alpha", mat(f.alpha)},
      {"rho", vec(f.rho)},
      {"sigma", vec(f.sigma)},
      {"loglik", num(f.loglik)},
      {"converged", f.converged},
      {"iterations", f.iterations},
      {"message", f.message},
      {"variance_method", f.variance_method},
      {"n_rows", f.n_rows},
      {"n_selected_rows", f.n_selected_rows},
      {"n_clusters", f.n_clusters},
      {"bootstrap_failures", f.bootstrap_failures},
  };
  out << j.dump(2) << '\n';
}

void write_fit_file(const std::string& path, const SelectionFit& fit) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_fit(out, fit);
}

SelectionFit read_fit(std::istream& in, const std::string& source) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(source + ": " + e.what());
  }
  try {
    if (j.value("format", "") != "reqiv-fit") throw ValidationError(source + ": not a fit file");
    if (j.at("format_version").get<int>() != kFormatVersion) throw ValidationError(source + ": unsupported fit file version");
    SelectionFit f;
    f.spec = spec_of(j.at("spec"));
    f.method = parse_fit_method(j.at("method").get<std::string>());
    f.link = j.at("link").get<std::string>() == "probit" ? Link::probit : Link::identity;
    f.group_labels = j.at("group_labels").get<std::vector<std::string>>();
    f.x_names = j.at("x_names").get<std::vector<std::string>>();
    f.z_names = j.at("z_names").get<std::vector<std::string>>();
    f.param_names = j.at("param_names").get<std::vector<std::string>>();
    f.theta = vec_of(j.at("theta"));
    f.vcov = mat_of(j.at("vcov"));
    f.se = vec_of(j.at("se"));
    f.beta = mat_of(j.at("beta"));
    f.alpha = mat_of(j.at("alpha"));
    f.rho = vec_of(j.at("rho"));
    f.sigma = vec_of(j.at("sigma"));
    f.loglik = num_of(j.at("loglik"));
    f.converged = j.at("converged").get<bool>();
    f.iterations = j.at("iterations").get<int>();
    f.message = j.at("message").get<std::string>();
    f.variance_method = j.at("variance_method").get<std::string>();
    f.n_rows = j.at("n_rows").get<std::size_t>();
    f.n_selected_rows = j.at("n_selected_rows").get<std::size_t>();
    f.n_clusters = j.at("n_clusters").get<int>();
    f.bootstrap_failures = j.at("bootstrap_failures").get<int>();
    if (f.theta.size() != static_cast<Eigen::Index>(f.param_names.size())) {
      throw ValidationError(source + ": theta and param_names differ in length");
    }
    return f;
  } catch (const json::exception& e) {
    throw ValidationError(source + ": malformed fit file: " + e.what());
  }
}

SelectionFit read_fit_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return read_fit(in, path);
}

void write_parameter_table(std::ostream& out, const SelectionFit& f) {
  write_csv_row(out, {"parameter", "estimate", "se", "z", "p_value"});
  for (Eigen::Index i = 0; i < f.theta.size(); ++i) {
    const double se = i < f.se.size() ? f.se(i) : std::numeric_limits<double>::quiet_NaN();
    const double z = se > 0 ? f.theta(i) / se : std::numeric_limits<double>::quiet_NaN();
    const double p = std::isfinite(z) ? 2.0 * normal_cdf(-std::abs(z)) : std::numeric_limits<double>::quiet_NaN();
    write_csv_row(out, {f.param_names[i], format_double(f.theta(i)), format_double(se), format_double(z),
                        format_double(p)});
  }
  // Natural-scale rho and sigma, SEs by the delta method.
  auto natural = [&](const std::string& name, double value, double se) {
    const double z = se > 0 ? value / se : std::numeric_limits<double>::quiet_NaN();
    const double p = std::isfinite(z) ? 2.0 * normal_cdf(-std::abs(z)) : std::numeric_limits<double>::quiet_NaN();
    write_csv_row(out, {name, format_double(value), format_double(se), format_double(z), format_double(p)});
  };
  for (int g = 0; g < f.n_groups(); ++g) {
    const std::string tag = f.n_groups() > 1 ? "[" + f.group_labels[g] + "]" : "";
    const int ie = f.eta_index(g);
    if (ie >= 0 && ie < f.se.size()) natural("rho" + tag, f.rho(g), (1.0 - f.rho(g) * f.rho(g)) * f.se(ie));
    const int is = f.log_sigma_index(g);
    if (is >= 0 && is < f.se.size()) natural("sigma" + tag, f.sigma(g), f.sigma(g) * f.se(is));
  }
}

}  // namespace reqiv
