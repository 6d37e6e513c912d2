#include "interopt/interopt.hpp"

#include <cmath>
#include <limits>

namespace interopt {

WellContext make_well_context(const FeatureSchema& schema, const NormStats& stats,
                              const WellRecord& record) {
  if (record.inputs.size() != static_cast<Eigen::Index>(schema.input_count())) {
    fail(ErrorKind::shape_mismatch, "record '" + record.id +
                                        "' does not match the schema input width");
  }
  const Eigen::VectorXd z = stats.normalize_inputs(record.inputs);
  WellContext ctx;
  ctx.id = record.id;
  ctx.prior_adjustable.resize(static_cast<Eigen::Index>(schema.adjustable_inputs().size()));
  ctx.fixed_values.resize(static_cast<Eigen::Index>(schema.fixed_inputs().size()));
  for (std::size_t i = 0; i < schema.adjustable_inputs().size(); ++i) {
    ctx.prior_adjustable(static_cast<Eigen::Index>(i)) =
        z(static_cast<Eigen::Index>(schema.adjustable_inputs()[i]));
  }
  for (std::size_t i = 0; i < schema.fixed_inputs().size(); ++i) {
    ctx.fixed_values(static_cast<Eigen::Index>(i)) =
        z(static_cast<Eigen::Index>(schema.fixed_inputs()[i]));
  }
  return ctx;
}

nlohmann::json InterOptConfig::to_json() const {
  return {{"n_ensemble", n_ensemble},
          {"max_blocks", max_blocks},
          {"iterations_per_block", iterations_per_block},
          {"initial_step", initial_step},
          {"step_increase", step_increase},
          {"step_decrease", step_decrease},
          {"step_cap_factor", step_cap_factor},
          {"step_floor_factor", step_floor_factor},
          {"data_multiplier", data_multiplier},
          {"shap_clamp_lo", shap_clamp_lo},
          {"shap_clamp_hi", shap_clamp_hi},
          {"lambda", lambda},
          {"prior_std", prior_std},
          {"obs_std", obs_std},
          {"direction", to_string(direction)},
          {"seed", seed},
          {"dynamic_weights", dynamic_weights},
          {"adaptive_step", adaptive_step},
          {"block_optimization", block_optimization},
          {"background_cap", background_cap},
          {"shap_permutations", shap_permutations},
          {"shap_exact_cap", shap_exact_cap},
          {"stall_blocks_to_stop", stall_blocks_to_stop}};
}

InterOptConfig InterOptConfig::from_json(const nlohmann::json& j) {
  InterOptConfig cfg;
  cfg.n_ensemble = j.value("n_ensemble", cfg.n_ensemble);
  cfg.max_blocks = j.value("max_blocks", cfg.max_blocks);
  cfg.iterations_per_block = j.value("iterations_per_block", cfg.iterations_per_block);
  cfg.initial_step = j.value("initial_step", cfg.initial_step);
  cfg.step_increase = j.value("step_increase", cfg.step_increase);
  cfg.step_decrease = j.value("step_decrease", cfg.step_decrease);
  cfg.step_cap_factor = j.value("step_cap_factor", cfg.step_cap_factor);
  cfg.step_floor_factor = j.value("step_floor_factor", cfg.step_floor_factor);
  cfg.data_multiplier = j.value("data_multiplier", cfg.data_multiplier);
  cfg.shap_clamp_lo = j.value("shap_clamp_lo", cfg.shap_clamp_lo);
  cfg.shap_clamp_hi = j.value("shap_clamp_hi", cfg.shap_clamp_hi);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.prior_std = j.value("prior_std", cfg.prior_std);
  cfg.obs_std = j.value("obs_std", cfg.obs_std);
  cfg.direction =
      objective_direction_from_string(j.value("direction", to_string(cfg.direction)));
  cfg.seed = j.value("seed", cfg.seed);
  cfg.dynamic_weights = j.value("dynamic_weights", cfg.dynamic_weights);
  cfg.adaptive_step = j.value("adaptive_step", cfg.adaptive_step);
  cfg.block_optimization = j.value("block_optimization", cfg.block_optimization);
  cfg.background_cap = j.value("background_cap", cfg.background_cap);
  cfg.shap_permutations = j.value("shap_permutations", cfg.shap_permutations);
  cfg.shap_exact_cap = j.value("shap_exact_cap", cfg.shap_exact_cap);
  cfg.stall_blocks_to_stop = j.value("stall_blocks_to_stop", cfg.stall_blocks_to_stop);
  return cfg;
}

double target_bound(ObjectiveDirection direction) {
  return direction == ObjectiveDirection::minimize ? -1.0 : 1.0;
}

Eigen::VectorXd transform_data_mismatch(const Eigen::VectorXd& raw_predictions,
                                        ObjectiveDirection direction) {
  return (raw_predictions.array().tanh() - target_bound(direction)).matrix();
}

Eigen::VectorXd dynamic_weights(const Eigen::VectorXd& phi_adjustable, double clamp_lo,
                                double clamp_hi) {
  if (!(clamp_lo > 0.0) || !(clamp_hi > clamp_lo) || !(clamp_hi < 1.0)) {
    fail(ErrorKind::precondition, "attribution clamp bounds must satisfy 0 < lo < hi < 1");
  }
  Eigen::VectorXd w(phi_adjustable.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double mag =
        std::clamp(std::abs(phi_adjustable(i)), clamp_lo, clamp_hi);
    w(i) = 1.0 / (-std::log10(mag));
  }
  return w;
}

Eigen::MatrixXd weighted_correction(const UpdateTerms& terms,
                                    const Eigen::VectorXd& weights, double multiplier) {
  if (terms.delta_model.rows() != weights.size() ||
      terms.delta_data.rows() != weights.size()) {
    fail(ErrorKind::shape_mismatch, "weight vector does not match correction rows");
  }
  return ((terms.delta_model + multiplier * terms.delta_data).array().colwise() *
          weights.array())
      .matrix();
}

StepDecision adaptive_step(double prev_objective, double new_objective, double step,
                           const InterOptConfig& cfg) {
  const double cap = cfg.initial_step * cfg.step_cap_factor;
  const double floor = cfg.initial_step * cfg.step_floor_factor;
  StepDecision decision;
  decision.accept = new_objective <= prev_objective;
  decision.next_step = decision.accept ? std::min(step * cfg.step_increase, cap)
                                       : std::max(step * cfg.step_decrease, floor);
  return decision;
}

std::string to_string(WellOutcome outcome) {
  switch (outcome) {
    case WellOutcome::improved: return "improved";
    case WellOutcome::no_improvement: return "no_improvement";
    case WellOutcome::not_converged: return "not_converged";
  }
  return "?";
}

namespace {

double improvement_fraction(double before, double after, ObjectiveDirection direction) {
  const double denom = std::abs(before);
  if (denom < 1e-12) return 0.0;
  const double gain =
      direction == ObjectiveDirection::minimize ? before - after : after - before;
  return gain / denom;
}

double round4(double x) { return std::round(x * 1e4) / 1e4; }

// Placeholder result for a well whose optimization could not start; the plan
// echoes the record's own values and both targets stay unset.
WellResult failed_well_result(const FeatureSchema& schema, const WellRecord& record) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  WellPlan plan;
  plan.id = record.id;
  const auto& adjustable = schema.adjustable_inputs();
  const auto n_adj = static_cast<Eigen::Index>(adjustable.size());
  plan.before_adjustable.resize(n_adj);
  plan.after_adjustable.resize(n_adj);
  plan.after_rounded.resize(n_adj);
  for (Eigen::Index i = 0; i < n_adj; ++i) {
    const double value = record.inputs(static_cast<Eigen::Index>(adjustable[i]));
    plan.before_adjustable(i) = value;
    plan.after_adjustable(i) = value;
    plan.after_rounded(i) =
        schema.input(adjustable[i]).integer_valued ? std::round(value) : value;
  }
  plan.before_target = nan;
  plan.after_target = nan;
  plan.improvement_rate = 0.0;

  WellResult result;
  result.outcome = WellOutcome::not_converged;
  result.converged = plan;
  result.in_process = std::move(plan);
  result.trace.initial_objective = nan;
  result.trace.initial_predicted_target = nan;
  return result;
}

}  // namespace

WellOptimizer::WellOptimizer(const EmulatorModel& model, const FeatureSchema& schema,
                             WellContext ctx, const ShapleyAttribution& attribution,
                             InterOptConfig cfg)
    : model_(&model), schema_(&schema), ctx_(std::move(ctx)), cfg_(std::move(cfg)) {
  const auto n_adj = static_cast<Eigen::Index>(schema.adjustable_inputs().size());
  const auto n_fixed = static_cast<Eigen::Index>(schema.fixed_inputs().size());
  if (ctx_.prior_adjustable.size() != n_adj || ctx_.fixed_values.size() != n_fixed) {
    fail(ErrorKind::shape_mismatch, "well context does not match the schema layout");
  }
  if (attribution.phi.size() != static_cast<Eigen::Index>(schema.input_count())) {
    fail(ErrorKind::shape_mismatch, "attribution does not cover every input feature");
  }
  if (cfg_.n_ensemble < 2) fail(ErrorKind::precondition, "ensemble needs at least 2 members");
  if (cfg_.max_blocks < 1 || cfg_.iterations_per_block < 1) {
    fail(ErrorKind::precondition, "block layout must have at least one block and iteration");
  }
  if (!(cfg_.initial_step > 0.0) || !(cfg_.prior_std > 0.0) || !(cfg_.obs_std > 0.0)) {
    fail(ErrorKind::precondition, "step and spread scales must be positive");
  }
  if (!(cfg_.data_multiplier > 0.0)) {
    fail(ErrorKind::precondition, "data-mismatch multiplier must be positive");
  }
  model.require_schema(schema);

  if (cfg_.dynamic_weights) {
    Eigen::VectorXd phi_adj(n_adj);
    for (Eigen::Index i = 0; i < n_adj; ++i) {
      phi_adj(i) = attribution.phi(
          static_cast<Eigen::Index>(schema.adjustable_inputs()[static_cast<std::size_t>(i)]));
    }
    weights_ = dynamic_weights(phi_adj, cfg_.shap_clamp_lo, cfg_.shap_clamp_hi);
  } else {
    weights_ = Eigen::VectorXd::Ones(n_adj);
  }

  noise_.obs_var = Eigen::VectorXd::Constant(1, cfg_.obs_std * cfg_.obs_std);
  noise_.param_var = Eigen::VectorXd::Constant(n_adj, cfg_.prior_std * cfg_.prior_std);

  NoiseModel init_noise = noise_;
  init_noise.param_var *= cfg_.initial_step;  // initial spread scales with the step
  prior_ensemble_ = init_realizations(ctx_.prior_adjustable, init_noise, cfg_.n_ensemble,
                                      derive_seed(cfg_.seed, "ensemble-init"));
  obs_ = Eigen::MatrixXd::Constant(1, static_cast<Eigen::Index>(cfg_.n_ensemble),
                                   target_bound(cfg_.direction));
}

Eigen::MatrixXd WellOptimizer::assemble_inputs(const Eigen::MatrixXd& ensemble) const {
  const auto n_members = ensemble.cols();
  Eigen::MatrixXd full(n_members, static_cast<Eigen::Index>(schema_->input_count()));
  const auto& fixed = schema_->fixed_inputs();
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    full.col(static_cast<Eigen::Index>(fixed[i]))
        .setConstant(ctx_.fixed_values(static_cast<Eigen::Index>(i)));
  }
  const auto& adjustable = schema_->adjustable_inputs();
  for (std::size_t i = 0; i < adjustable.size(); ++i) {
    full.col(static_cast<Eigen::Index>(adjustable[i])) =
        ensemble.row(static_cast<Eigen::Index>(i)).transpose();
  }
  return full;
}

double WellOptimizer::predict_physical(const Eigen::VectorXd& adjustable) const {
  const Eigen::MatrixXd one = assemble_inputs(adjustable);
  return model_->stats().denormalize_target(model_->net().batch(one)(0));
}

WellOptimizer::Evaluation WellOptimizer::evaluate(const Eigen::MatrixXd& ensemble) const {
  Evaluation eval;
  if (!ensemble.allFinite()) {
    eval.finite = false;
    eval.mean_objective = std::numeric_limits<double>::quiet_NaN();
    return eval;
  }
  eval.raw = model_->net().batch(assemble_inputs(ensemble));
  eval.transformed = eval.raw.array().tanh().matrix();

  const double t = target_bound(cfg_.direction);
  const double obs_var = noise_.obs_var(0);
  const auto n = static_cast<double>(ensemble.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < ensemble.cols(); ++j) {
    const double r = eval.transformed(j) - t;
    const double data = cfg_.data_multiplier * r * r / obs_var;
    const double model = ((ensemble.col(j) - prior_ensemble_.col(j)).array().square() /
                          noise_.param_var.array())
                             .sum();
    total += 0.5 * (data + model);
  }
  eval.mean_objective = total / n;
  eval.predicted_target = predict_physical(ensemble.rowwise().mean());
  eval.finite = std::isfinite(eval.mean_objective) && std::isfinite(eval.predicted_target);
  return eval;
}

Eigen::MatrixXd WellOptimizer::correction(const Eigen::MatrixXd& ensemble,
                                          const Evaluation& eval) const {
  const UpdateTerms terms =
      update_terms(ensemble, eval.transformed.transpose(), prior_ensemble_, obs_,
                   noise_, cfg_.lambda);
  return weighted_correction(terms, weights_, cfg_.data_multiplier);
}

WellOptimizer::LoopState WellOptimizer::make_initial_state() const {
  LoopState state;
  state.ensemble = prior_ensemble_;
  state.eval = evaluate(state.ensemble);
  state.step = cfg_.initial_step;
  state.iteration = 0;
  state.block = 0;
  return state;
}

BlockSummary WellOptimizer::run_block(LoopState& state, OptimizationTrace& trace,
                                      BestIterate* best) const {
  BlockSummary summary;
  summary.block = state.block;
  summary.entry_objective = state.eval.mean_objective;
  summary.best_objective = std::numeric_limits<double>::infinity();

  const Eigen::MatrixXd entry_ensemble = state.ensemble;
  const Evaluation entry_eval = state.eval;

  for (int it = 0; it < cfg_.iterations_per_block; ++it) {
    ++state.iteration;
    const double step_used = state.step;
    Eigen::MatrixXd candidate;
    Evaluation cand_eval;
    try {
      candidate = state.ensemble - step_used * correction(state.ensemble, state.eval);
      cand_eval = evaluate(candidate);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numerical_failure) throw;
      cand_eval.finite = false;
    }
    if (!cand_eval.finite) {
      if (cfg_.block_optimization) {
        // numerical failure poisons the block: restore the entry state and
        // let the outer loop retry from there
        state.ensemble = entry_ensemble;
        state.eval = entry_eval;
        if (cfg_.adaptive_step) {
          state.step = std::max(state.step * cfg_.step_decrease,
                                cfg_.initial_step * cfg_.step_floor_factor);
        }
        summary.aborted = true;
        summary.exit_objective = entry_eval.mean_objective;
        summary.committed = false;
        summary.best_so_far = entry_eval.mean_objective;
        trace.blocks.push_back(summary);
        return summary;
      }
      if (cfg_.adaptive_step) {
        // reject the iterate outright and retreat the step
        state.step = std::max(state.step * cfg_.step_decrease,
                              cfg_.initial_step * cfg_.step_floor_factor);
        trace.iterations.push_back({state.block, state.iteration,
                                    std::numeric_limits<double>::quiet_NaN(),
                                    std::numeric_limits<double>::quiet_NaN(), step_used,
                                    false});
        continue;
      }
      // neither containment mechanism is on; the well cannot recover
      summary.aborted = true;
      summary.exit_objective = state.eval.mean_objective;
      summary.committed = false;
      summary.best_so_far = state.eval.mean_objective;
      trace.blocks.push_back(summary);
      return summary;
    }

    bool accept = true;
    if (cfg_.adaptive_step) {
      const StepDecision decision = adaptive_step(
          state.eval.mean_objective, cand_eval.mean_objective, state.step, cfg_);
      state.step = decision.next_step;
      // inside blocks every iterate advances (exploration); standalone
      // adaptive stepping rejects deteriorating iterates outright
      if (!cfg_.block_optimization) accept = decision.accept;
    }
    if (accept) {
      state.ensemble = std::move(candidate);
      state.eval = cand_eval;
      if (best != nullptr) {
        const bool better = cfg_.direction == ObjectiveDirection::minimize
                                ? cand_eval.predicted_target < best->predicted_target
                                : cand_eval.predicted_target > best->predicted_target;
        if (better) {
          best->predicted_target = cand_eval.predicted_target;
          best->adjustable_mean = state.ensemble.rowwise().mean();
        }
      }
    }
    summary.best_objective = std::min(summary.best_objective, cand_eval.mean_objective);
    trace.iterations.push_back({state.block, state.iteration, cand_eval.predicted_target,
                                cand_eval.mean_objective, step_used, accept});
  }

  summary.exit_objective = state.eval.mean_objective;
  if (cfg_.block_optimization) {
    summary.committed = summary.exit_objective < summary.entry_objective;
    if (!summary.committed) {
      state.ensemble = entry_ensemble;
      state.eval = entry_eval;
    }
  } else {
    summary.committed = true;
  }
  summary.best_so_far = state.eval.mean_objective;
  trace.blocks.push_back(summary);
  return summary;
}

WellPlan WellOptimizer::plan_for(const Eigen::VectorXd& adjustable_mean,
                                 double predicted) const {
  WellPlan plan;
  plan.id = ctx_.id;
  const auto& adjustable = schema_->adjustable_inputs();
  const NormStats& stats = model_->stats();
  plan.before_adjustable.resize(ctx_.prior_adjustable.size());
  plan.after_adjustable.resize(adjustable_mean.size());
  plan.after_rounded.resize(adjustable_mean.size());
  for (std::size_t i = 0; i < adjustable.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(adjustable[i]);
    const auto row = static_cast<Eigen::Index>(i);
    plan.before_adjustable(row) =
        ctx_.prior_adjustable(row) * stats.input_std(col) + stats.input_mean(col);
    plan.after_adjustable(row) =
        adjustable_mean(row) * stats.input_std(col) + stats.input_mean(col);
    plan.after_rounded(row) = schema_->input(adjustable[i]).integer_valued
                                  ? std::round(plan.after_adjustable(row))
                                  : plan.after_adjustable(row);
  }
  plan.before_target = predict_physical(ctx_.prior_adjustable);
  plan.after_target = predicted;
  plan.improvement_rate =
      improvement_fraction(plan.before_target, plan.after_target, cfg_.direction);
  return plan;
}

WellResult WellOptimizer::run() const {
  WellResult result;
  LoopState state = make_initial_state();
  if (!state.eval.finite) {
    fail(ErrorKind::divergence, "well '" + ctx_.id + "': initial ensemble is non-finite");
  }

  result.trace.initial_objective = state.eval.mean_objective;
  result.trace.initial_predicted_target = predict_physical(ctx_.prior_adjustable);

  BestIterate best;
  best.predicted_target = result.trace.initial_predicted_target;
  best.adjustable_mean = ctx_.prior_adjustable;

  bool fatal = false;
  int consecutive_rollbacks = 0;
  for (int block = 1; block <= cfg_.max_blocks; ++block) {
    state.block = block;
    const BlockSummary summary = run_block(state, result.trace, &best);
    if (summary.aborted && !cfg_.block_optimization) {
      // nothing to roll back to; the failure ends the well
      fatal = true;
      break;
    }
    if (cfg_.block_optimization) {
      consecutive_rollbacks = summary.committed ? 0 : consecutive_rollbacks + 1;
      if (consecutive_rollbacks >= cfg_.stall_blocks_to_stop) break;
    }
  }

  if (fatal) {
    result.outcome = WellOutcome::not_converged;
    result.converged = plan_for(ctx_.prior_adjustable, result.trace.initial_predicted_target);
    result.in_process = plan_for(best.adjustable_mean, best.predicted_target);
    return result;
  }

  result.converged = plan_for(state.ensemble.rowwise().mean(), state.eval.predicted_target);
  result.in_process = plan_for(best.adjustable_mean, best.predicted_target);
  result.outcome = round4(result.converged.improvement_rate) <= 0.0
                       ? WellOutcome::no_improvement
                       : WellOutcome::improved;
  return result;
}

WellResult optimize_well(const EmulatorModel& model, const FeatureSchema& schema,
                         const WellContext& ctx, const ShapleyAttribution& attribution,
                         const InterOptConfig& cfg) {
  return WellOptimizer(model, schema, ctx, attribution, cfg).run();
}

std::vector<std::string> improvement_bucket_labels() {
  return {"<1%", "1-5%", "5-10%", "10-20%", "20-30%", ">=30%"};
}

std::size_t improvement_bucket(double improvement_rate) {
  const double pct = improvement_rate * 100.0;
  if (pct < 1.0) return 0;
  if (pct < 5.0) return 1;
  if (pct < 10.0) return 2;
  if (pct < 20.0) return 3;
  if (pct < 30.0) return 4;
  return 5;
}

CampaignReport optimize_campaign(const EmulatorModel& model, const Dataset& dataset,
                                 const InterOptConfig& cfg) {
  if (dataset.size() == 0) fail(ErrorKind::precondition, "campaign dataset is empty");
  model.require_schema(dataset.schema());
  const FeatureSchema& schema = dataset.schema();
  const NormStats& stats = model.stats();

  const BackgroundSet background = BackgroundSet::from_dataset(
      dataset, stats, cfg.background_cap, derive_seed(cfg.seed, "background"));
  const RowEvaluator evaluator = evaluator_from(model);

  CampaignReport report;
  report.summary.histogram.assign(improvement_bucket_labels().size(), 0);

  double rate_sum = 0.0;
  for (const WellRecord& record : dataset.records()) {
    const Eigen::VectorXd z = stats.normalize_inputs(record.inputs);
    ShapleyAttribution attribution =
        schema.input_count() <= cfg.shap_exact_cap
            ? shapley_exact(evaluator, background, z, cfg.shap_exact_cap)
            : shapley_sampled(evaluator, background, z, cfg.shap_permutations,
                              derive_seed(cfg.seed, "shapley:" + record.id));

    InterOptConfig well_cfg = cfg;
    well_cfg.seed = derive_seed(cfg.seed, "well:" + record.id);
    well_cfg.direction = schema.objective_direction();

    const WellContext ctx = make_well_context(schema, stats, record);
    WellResult result;
    try {
      result = optimize_well(model, schema, ctx, attribution, well_cfg);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::divergence) throw;
      result = failed_well_result(schema, record);
    }

    switch (result.outcome) {
      case WellOutcome::improved: ++report.summary.n_improved; break;
      case WellOutcome::no_improvement: ++report.summary.n_no_improvement; break;
      case WellOutcome::not_converged: ++report.summary.n_not_converged; break;
    }
    rate_sum += result.converged.improvement_rate;
    ++report.summary.histogram[improvement_bucket(result.converged.improvement_rate)];

    report.wells.push_back(std::move(result));
    report.attributions.push_back(std::move(attribution));
  }
  report.summary.n_wells = report.wells.size();
  report.summary.mean_improvement_rate =
      rate_sum / static_cast<double>(report.wells.size());
  return report;
}

std::vector<AblationRow> run_ablation(const EmulatorModel& model, const Dataset& dataset,
                                      const InterOptConfig& cfg) {
  const bool combos[4][2] = {{true, true}, {true, false}, {false, true}, {false, false}};
  std::vector<AblationRow> rows;
  for (const auto& combo : combos) {
    InterOptConfig variant = cfg;
    variant.block_optimization = combo[0];
    variant.adaptive_step = combo[1];
    const CampaignReport report = optimize_campaign(model, dataset, variant);
    AblationRow row;
    row.block_optimization = combo[0];
    row.adaptive_step = combo[1];
    row.not_converged = report.summary.n_not_converged;
    row.no_improvement = report.summary.n_no_improvement;
    row.mean_improvement_rate = report.summary.mean_improvement_rate;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace interopt
