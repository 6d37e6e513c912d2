#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "interopt/emulator.hpp"
#include "interopt/enrml.hpp"
#include "interopt/shapley.hpp"

namespace interopt {

// Per-well view of a record: adjustable features become the optimization
// parameters, fixed features stay frozen inside the forward closure.
struct WellContext {
  std::string id;
  Eigen::VectorXd prior_adjustable;  // normalized
  Eigen::VectorXd fixed_values;      // normalized
};

WellContext make_well_context(const FeatureSchema& schema, const NormStats& stats,
                              const WellRecord& record);

struct InterOptConfig {
  std::size_t n_ensemble = 100;
  int max_blocks = 10;
  int iterations_per_block = 10;
  double initial_step = 1.0;
  double step_increase = 1.5;
  double step_decrease = 0.5;
  double step_cap_factor = 10.0;    // cap = factor * initial_step
  double step_floor_factor = 0.01;  // floor = factor * initial_step
  double data_multiplier = 10.0;
  double shap_clamp_lo = 1e-6;
  double shap_clamp_hi = 0.5;  // caps the weight at 1/(-log10 0.5), about 3.3
  double lambda = 1.0;    // fixed damping inside the per-well update
  double prior_std = 0.3; // normalized spread granted to each adjustable feature
  double obs_std = 1.0;   // noise scale on the saturated data residual
  ObjectiveDirection direction = ObjectiveDirection::minimize;
  std::uint64_t seed = 0;
  bool dynamic_weights = true;
  bool adaptive_step = true;
  bool block_optimization = true;
  std::size_t background_cap = 128;
  std::size_t shap_permutations = 2000;
  std::size_t shap_exact_cap = 16;
  int stall_blocks_to_stop = 3;  // consecutive rolled-back blocks before stopping

  nlohmann::json to_json() const;
  static InterOptConfig from_json(const nlohmann::json& j);
};

// -1 when minimizing, +1 when maximizing: the saturated residual pulls the
// prediction toward the unreachable end of tanh
double target_bound(ObjectiveDirection direction);

// tanh(prediction) minus the bound, elementwise over ensemble members
Eigen::VectorXd transform_data_mismatch(const Eigen::VectorXd& raw_predictions,
                                        ObjectiveDirection direction);

// w_k = 1 / (-log10 |phi_k|), attribution magnitudes clamped into (lo, hi)
Eigen::VectorXd dynamic_weights(const Eigen::VectorXd& phi_adjustable,
                                double clamp_lo, double clamp_hi);

// weights (per parameter row) applied to delta_model + multiplier * delta_data
Eigen::MatrixXd weighted_correction(const UpdateTerms& terms,
                                    const Eigen::VectorXd& weights, double multiplier);

struct StepDecision {
  bool accept = true;
  double next_step = 1.0;
};

StepDecision adaptive_step(double prev_objective, double new_objective, double step,
                           const InterOptConfig& cfg);

enum class WellOutcome { improved, no_improvement, not_converged };

std::string to_string(WellOutcome outcome);

struct IterationPoint {
  int block = 0;
  int iteration = 0;  // global, 1-based
  double predicted_target = 0.0;  // physical units, at the ensemble mean
  double objective = 0.0;         // ensemble-mean objective
  double step = 1.0;
  bool accepted = true;
};

struct BlockSummary {
  int block = 0;
  double entry_objective = 0.0;
  double exit_objective = 0.0;
  double best_objective = 0.0;  // best iterate seen inside the block
  bool committed = false;
  bool aborted = false;          // numerical failure ended the block early
  double best_so_far = 0.0;      // committed-state objective after this block
};

struct OptimizationTrace {
  double initial_objective = 0.0;
  double initial_predicted_target = 0.0;
  std::vector<IterationPoint> iterations;
  std::vector<BlockSummary> blocks;
};

struct WellPlan {
  std::string id;
  Eigen::VectorXd before_adjustable;  // physical units
  Eigen::VectorXd after_adjustable;   // physical units, continuous
  Eigen::VectorXd after_rounded;      // integer features rounded half away from zero
  double before_target = 0.0;         // emulator prediction, physical units
  double after_target = 0.0;
  double improvement_rate = 0.0;  // fraction; positive means better in the
                                  // configured direction
};

struct WellResult {
  WellPlan converged;
  WellPlan in_process;  // best predicted target observed at any iterate
  OptimizationTrace trace;
  WellOutcome outcome = WellOutcome::improved;
};

class WellOptimizer {
 public:
  WellOptimizer(const EmulatorModel& model, const FeatureSchema& schema,
                WellContext ctx, const ShapleyAttribution& attribution,
                InterOptConfig cfg);

  struct Evaluation {
    Eigen::VectorXd raw;          // emulator output per member, normalized units
    Eigen::VectorXd transformed;  // tanh of raw
    double mean_objective = 0.0;
    double predicted_target = 0.0;  // physical units at the ensemble mean
    bool finite = true;
  };

  struct LoopState {
    Eigen::MatrixXd ensemble;  // n_adjustable x N_e
    Evaluation eval;
    double step = 1.0;
    int iteration = 0;
    int block = 0;
  };

  // best predicted target over the iterates the loop actually adopted
  struct BestIterate {
    double predicted_target = 0.0;
    Eigen::VectorXd adjustable_mean;
  };

  LoopState make_initial_state() const;
  Evaluation evaluate(const Eigen::MatrixXd& ensemble) const;
  // one weighted, damped correction for the current ensemble
  Eigen::MatrixXd correction(const Eigen::MatrixXd& ensemble,
                             const Evaluation& eval) const;
  BlockSummary run_block(LoopState& state, OptimizationTrace& trace,
                         BestIterate* best = nullptr) const;
  WellResult run() const;

  const Eigen::VectorXd& weights() const { return weights_; }
  const NoiseModel& noise() const { return noise_; }

 private:
  Eigen::MatrixXd assemble_inputs(const Eigen::MatrixXd& ensemble) const;
  WellPlan plan_for(const Eigen::VectorXd& adjustable_mean, double predicted) const;
  double predict_physical(const Eigen::VectorXd& adjustable) const;

  const EmulatorModel* model_;
  const FeatureSchema* schema_;
  WellContext ctx_;
  InterOptConfig cfg_;
  Eigen::VectorXd weights_;
  NoiseModel noise_;
  Eigen::MatrixXd prior_ensemble_;
  Eigen::MatrixXd obs_;  // 1 x N_e, constant bound
};

WellResult optimize_well(const EmulatorModel& model, const FeatureSchema& schema,
                         const WellContext& ctx, const ShapleyAttribution& attribution,
                         const InterOptConfig& cfg);

// percent buckets: <1, 1-5, 5-10, 10-20, 20-30, >=30
std::vector<std::string> improvement_bucket_labels();
std::size_t improvement_bucket(double improvement_rate);

struct CampaignSummary {
  std::size_t n_wells = 0;
  std::size_t n_improved = 0;
  std::size_t n_no_improvement = 0;
  std::size_t n_not_converged = 0;
  double mean_improvement_rate = 0.0;  // over all wells; failed wells count 0
  std::vector<std::size_t> histogram;  // improvement buckets
};

struct CampaignReport {
  std::vector<WellResult> wells;
  std::vector<ShapleyAttribution> attributions;
  CampaignSummary summary;
};

CampaignReport optimize_campaign(const EmulatorModel& model, const Dataset& dataset,
                                 const InterOptConfig& cfg);

struct AblationRow {
  bool block_optimization = false;
  bool adaptive_step = false;
  std::size_t not_converged = 0;
  std::size_t no_improvement = 0;
  double mean_improvement_rate = 0.0;
};

// the four block/adaptive toggle combinations, all-on first
std::vector<AblationRow> run_ablation(const EmulatorModel& model, const Dataset& dataset,
                                      const InterOptConfig& cfg);

}  // namespace interopt
