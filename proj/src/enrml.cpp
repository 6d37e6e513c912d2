#include "interopt/enrml.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace interopt {

void NoiseModel::validate() const {
  if (obs_var.size() == 0 || param_var.size() == 0) {
    fail(ErrorKind::precondition, "noise model needs observation and parameter variances");
  }
  for (Eigen::Index i = 0; i < obs_var.size(); ++i) {
    if (!(obs_var(i) > 0.0) || !std::isfinite(obs_var(i))) {
      fail(ErrorKind::precondition, "observation variance " + std::to_string(i) +
                                        " must be positive and finite");
    }
  }
  for (Eigen::Index i = 0; i < param_var.size(); ++i) {
    if (!(param_var(i) > 0.0) || !std::isfinite(param_var(i))) {
      fail(ErrorKind::precondition, "parameter variance " + std::to_string(i) +
                                        " must be positive and finite");
    }
  }
}

Eigen::MatrixXd perturb_observations(const Eigen::VectorXd& d_obs,
                                     const NoiseModel& noise, std::size_t n_ensemble,
                                     std::uint64_t seed) {
  noise.validate();
  if (d_obs.size() != noise.obs_var.size()) {
    fail(ErrorKind::shape_mismatch, "observation vector does not match noise width");
  }
  if (n_ensemble < 2) fail(ErrorKind::precondition, "ensemble needs at least 2 members");
  Rng rng(seed);
  Eigen::MatrixXd out(d_obs.size(), static_cast<Eigen::Index>(n_ensemble));
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      out(i, j) = d_obs(i) + std::sqrt(noise.obs_var(i)) * rng.normal();
    }
  }
  return out;
}

Eigen::MatrixXd init_realizations(const Eigen::VectorXd& m_prior,
                                  const NoiseModel& noise, std::size_t n_ensemble,
                                  std::uint64_t seed) {
  noise.validate();
  if (m_prior.size() != noise.param_var.size()) {
    fail(ErrorKind::shape_mismatch, "prior vector does not match noise width");
  }
  if (n_ensemble < 2) fail(ErrorKind::precondition, "ensemble needs at least 2 members");
  Rng rng(seed);
  Eigen::MatrixXd out(m_prior.size(), static_cast<Eigen::Index>(n_ensemble));
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      out(i, j) = m_prior(i) + std::sqrt(noise.param_var(i)) * rng.normal();
    }
  }
  return out;
}

EnsembleCovariances ensemble_covariances(const Eigen::MatrixXd& params,
                                         const Eigen::MatrixXd& predictions) {
  if (params.cols() != predictions.cols()) {
    fail(ErrorKind::shape_mismatch, "parameter and prediction ensembles differ in size");
  }
  if (params.cols() < 2) {
    fail(ErrorKind::precondition, "sample covariance needs at least 2 members");
  }
  const double denom = static_cast<double>(params.cols() - 1);
  const Eigen::MatrixXd mc = params.colwise() - params.rowwise().mean();
  const Eigen::MatrixXd dc = predictions.colwise() - predictions.rowwise().mean();
  EnsembleCovariances cov;
  cov.c_mm = mc * mc.transpose() / denom;
  cov.c_md = mc * dc.transpose() / denom;
  cov.c_dd = dc * dc.transpose() / denom;
  return cov;
}

double objective(const Eigen::VectorXd& m, const Eigen::VectorXd& g_m,
                 const Eigen::VectorXd& d_obs, const Eigen::VectorXd& m_prior,
                 const NoiseModel& noise) {
  noise.validate();
  if (m.size() != m_prior.size() || m.size() != noise.param_var.size()) {
    fail(ErrorKind::shape_mismatch, "parameter vectors do not match noise width");
  }
  if (g_m.size() != d_obs.size() || g_m.size() != noise.obs_var.size()) {
    fail(ErrorKind::shape_mismatch, "prediction vectors do not match noise width");
  }
  const double data = ((g_m - d_obs).array().square() / noise.obs_var.array()).sum();
  const double model = ((m - m_prior).array().square() / noise.param_var.array()).sum();
  return 0.5 * data + 0.5 * model;
}

namespace {

// Solve A X = B for symmetric A with a one-shot diagonal jitter fallback.
Eigen::MatrixXd solve_spd(Eigen::MatrixXd a, const Eigen::MatrixXd& b) {
  const double trace = a.trace();
  const auto n = static_cast<double>(a.rows());
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() == Eigen::Success) {
      Eigen::MatrixXd x = ldlt.solve(b);
      if (x.allFinite()) return x;
    }
    if (attempt == 0) {
      a.diagonal().array() += 1e-10 * trace / n;
    }
  }
  std::ostringstream diag;
  diag << "data-space covariance solve failed (dim " << a.rows() << ", trace " << trace
       << ", min diag " << a.diagonal().minCoeff() << ", max diag "
       << a.diagonal().maxCoeff() << ")";
  fail(ErrorKind::numerical_failure, diag.str());
}

}  // namespace

UpdateTerms update_terms(const Eigen::MatrixXd& params,
                         const Eigen::MatrixXd& predictions,
                         const Eigen::MatrixXd& prior, const Eigen::MatrixXd& obs,
                         const NoiseModel& noise, double lambda) {
  noise.validate();
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    fail(ErrorKind::precondition, "lambda must be finite and non-negative");
  }
  if (params.rows() != prior.rows() || params.cols() != prior.cols()) {
    fail(ErrorKind::shape_mismatch, "parameter and prior ensembles differ in shape");
  }
  if (predictions.rows() != obs.rows() || predictions.cols() != obs.cols()) {
    fail(ErrorKind::shape_mismatch, "prediction and observation ensembles differ in shape");
  }
  if (params.rows() != noise.param_var.size() ||
      predictions.rows() != noise.obs_var.size()) {
    fail(ErrorKind::shape_mismatch, "ensemble shapes do not match the noise model");
  }

  const EnsembleCovariances cov = ensemble_covariances(params, predictions);

  Eigen::MatrixXd a = cov.c_dd;
  a.diagonal() += (1.0 + lambda) * noise.obs_var;

  // K = C_md A^-1, via the symmetric solve A K^T = C_md^T
  const Eigen::MatrixXd k = solve_spd(a, cov.c_md.transpose()).transpose();
  const Eigen::MatrixXd bracket = cov.c_mm - k * cov.c_md.transpose();

  UpdateTerms terms;
  const Eigen::MatrixXd scaled_prior_residual =
      ((params - prior).array().colwise() / noise.param_var.array()).matrix();
  terms.delta_model = bracket * scaled_prior_residual / (1.0 + lambda);
  terms.delta_data = k * (predictions - obs);
  return terms;
}

Eigen::MatrixXd enrml_update(const EnsembleState& state,
                             const Eigen::MatrixXd& predictions,
                             const NoiseModel& noise, double lambda) {
  const UpdateTerms terms = update_terms(state.params, predictions, state.prior,
                                         state.obs, noise, lambda);
  return state.params - terms.delta_model - terms.delta_data;
}

namespace {

struct EnsembleEval {
  Eigen::MatrixXd predictions;
  double mean_objective = 0.0;
  double mean_data = 0.0;
  double mean_model = 0.0;
  bool finite = true;
};

EnsembleEval evaluate_ensemble(const ForwardModel& forward, const Eigen::MatrixXd& params,
                               const EnsembleState& state, const NoiseModel& noise) {
  EnsembleEval eval;
  const Eigen::Index n_d = state.obs.rows();
  eval.predictions.resize(n_d, params.cols());
  for (Eigen::Index j = 0; j < params.cols(); ++j) {
    const Eigen::VectorXd g = forward(params.col(j));
    if (g.size() != n_d) {
      fail(ErrorKind::shape_mismatch, "forward model returned " +
                                          std::to_string(g.size()) +
                                          " values, expected " + std::to_string(n_d));
    }
    eval.predictions.col(j) = g;
  }
  if (!params.allFinite() || !eval.predictions.allFinite()) {
    eval.finite = false;
    eval.mean_objective = std::numeric_limits<double>::quiet_NaN();
    return eval;
  }
  const double n = static_cast<double>(params.cols());
  for (Eigen::Index j = 0; j < params.cols(); ++j) {
    const double data = ((eval.predictions.col(j) - state.obs.col(j)).array().square() /
                         noise.obs_var.array())
                            .sum();
    const double model = ((params.col(j) - state.prior.col(j)).array().square() /
                          noise.param_var.array())
                             .sum();
    eval.mean_data += 0.5 * data / n;
    eval.mean_model += 0.5 * model / n;
  }
  eval.mean_objective = eval.mean_data + eval.mean_model;
  if (!std::isfinite(eval.mean_objective)) eval.finite = false;
  return eval;
}

}  // namespace

EnrmlResult run_enrml(const ForwardModel& forward, const Eigen::VectorXd& m_prior,
                      const Eigen::VectorXd& d_obs, const NoiseModel& noise,
                      const EnrmlOptions& options) {
  noise.validate();
  if (options.max_iters < 1) fail(ErrorKind::precondition, "max_iters must be >= 1");

  EnrmlResult result;
  EnsembleState& state = result.state;
  state.prior = init_realizations(m_prior, noise, options.n_ensemble,
                                  derive_seed(options.seed, "init-realizations"));
  state.obs = perturb_observations(d_obs, noise, options.n_ensemble,
                                   derive_seed(options.seed, "perturb-observations"));
  state.params = state.prior;
  state.iteration = 0;

  EnsembleEval current = evaluate_ensemble(forward, state.params, state, noise);
  if (!current.finite) {
    fail(ErrorKind::divergence, "initial ensemble evaluates to a non-finite objective");
  }
  result.trace.push_back({0, options.lambda.initial, current.mean_objective,
                          current.mean_data, current.mean_model, true});

  double lambda = options.lambda.initial;
  int small_changes = 0;
  for (int iter = 1; iter <= options.max_iters; ++iter) {
    int retries = 0;
    while (true) {
      const UpdateTerms terms = update_terms(state.params, current.predictions,
                                             state.prior, state.obs, noise, lambda);
      const Eigen::MatrixXd candidate =
          state.params - terms.delta_model - terms.delta_data;
      const EnsembleEval next = evaluate_ensemble(forward, candidate, state, noise);

      const bool improved = next.finite && next.mean_objective <= current.mean_objective;
      const bool out_of_retries = retries >= options.lambda.max_retries;
      if (improved || out_of_retries) {
        if (!next.finite) {
          fail(ErrorKind::divergence, "mean objective became non-finite at iteration " +
                                          std::to_string(iter));
        }
        result.trace.push_back({iter, lambda, next.mean_objective, next.mean_data,
                                next.mean_model, true});
        const double rel_change =
            std::abs(next.mean_objective - current.mean_objective) /
            std::max(std::abs(current.mean_objective), 1e-300);
        state.params = candidate;
        state.iteration = iter;
        current = next;
        if (improved) lambda *= options.lambda.decrease;
        small_changes = rel_change < options.conv_tol ? small_changes + 1 : 0;
        break;
      }
      result.trace.push_back({iter, lambda, next.mean_objective, next.mean_data,
                              next.mean_model, false});
      lambda *= options.lambda.increase;
      ++retries;
    }
    if (small_changes >= options.conv_window) {
      result.converged = true;
      break;
    }
  }
  return result;
}

std::string trace_to_csv(const std::vector<IterationRecord>& trace) {
  std::ostringstream out;
  out << "iteration,lambda,mean_objective,mean_data_mismatch,mean_model_mismatch,accepted\n";
  for (const IterationRecord& row : trace) {
    out << row.iteration << ',' << format_double(row.lambda) << ','
        << format_double(row.mean_objective) << ','
        << format_double(row.mean_data_mismatch) << ','
        << format_double(row.mean_model_mismatch) << ',' << (row.accepted ? 1 : 0)
        << '\n';
  }
  return out.str();
}

}  // namespace interopt
