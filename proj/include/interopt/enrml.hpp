#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "interopt/common.hpp"

namespace interopt {

// Diagonal observation and parameter covariances, stored as variances.
struct NoiseModel {
  Eigen::VectorXd obs_var;
  Eigen::VectorXd param_var;

  void validate() const;
};

struct EnsembleState {
  Eigen::MatrixXd params;  // N_m x N_e
  Eigen::MatrixXd prior;   // N_m x N_e, the initial draws each member regresses to
  Eigen::MatrixXd obs;     // N_d x N_e, perturbed observations per member
  int iteration = 0;
};

struct LambdaSchedule {
  double initial = 1.0;
  double decrease = 0.5;  // applied after an accepted step
  double increase = 4.0;  // applied before retrying a rejected step
  int max_retries = 5;
};

Eigen::MatrixXd perturb_observations(const Eigen::VectorXd& d_obs,
                                     const NoiseModel& noise, std::size_t n_ensemble,
                                     std::uint64_t seed);
Eigen::MatrixXd init_realizations(const Eigen::VectorXd& m_prior,
                                  const NoiseModel& noise, std::size_t n_ensemble,
                                  std::uint64_t seed);

struct EnsembleCovariances {
  Eigen::MatrixXd c_mm;  // N_m x N_m
  Eigen::MatrixXd c_md;  // N_m x N_d
  Eigen::MatrixXd c_dd;  // N_d x N_d
};

// sample covariances with 1/(N_e - 1), both factors centered
EnsembleCovariances ensemble_covariances(const Eigen::MatrixXd& params,
                                         const Eigen::MatrixXd& predictions);

// 0.5 |g(m) - d|^2_{C_D^-1} + 0.5 |m - m_pr|^2_{C_M^-1}
double objective(const Eigen::VectorXd& m, const Eigen::VectorXd& g_m,
                 const Eigen::VectorXd& d_obs, const Eigen::VectorXd& m_prior,
                 const NoiseModel& noise);

// The two additive pieces of the damped Gauss-Newton step, one column per
// member: a prior-regression term scaled by 1/(1+lambda) and a data term.
// The subtraction params - (delta_model + delta_data) is the full update.
struct UpdateTerms {
  Eigen::MatrixXd delta_model;
  Eigen::MatrixXd delta_data;
};

UpdateTerms update_terms(const Eigen::MatrixXd& params,
                         const Eigen::MatrixXd& predictions,
                         const Eigen::MatrixXd& prior, const Eigen::MatrixXd& obs,
                         const NoiseModel& noise, double lambda);

Eigen::MatrixXd enrml_update(const EnsembleState& state,
                             const Eigen::MatrixXd& predictions,
                             const NoiseModel& noise, double lambda);

using ForwardModel = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct EnrmlOptions {
  std::size_t n_ensemble = 100;
  int max_iters = 50;
  LambdaSchedule lambda;
  double conv_tol = 1e-6;  // relative mean-objective change
  int conv_window = 3;     // consecutive accepted iterations below conv_tol
  std::uint64_t seed = 0;
};

struct IterationRecord {
  int iteration = 0;
  double lambda = 0.0;
  double mean_objective = 0.0;
  double mean_data_mismatch = 0.0;
  double mean_model_mismatch = 0.0;
  bool accepted = false;
};

struct EnrmlResult {
  EnsembleState state;
  std::vector<IterationRecord> trace;
  bool converged = false;
};

EnrmlResult run_enrml(const ForwardModel& forward, const Eigen::VectorXd& m_prior,
                      const Eigen::VectorXd& d_obs, const NoiseModel& noise,
                      const EnrmlOptions& options);

std::string trace_to_csv(const std::vector<IterationRecord>& trace);

}  // namespace interopt
