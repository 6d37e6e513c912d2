#include "interopt/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace interopt {

RowEvaluator evaluator_from(const EmulatorModel& model) {
  // the bare network is small; copying it keeps the evaluator self-contained
  return [net = model.net()](const Eigen::MatrixXd& rows) { return net.batch(rows); };
}

BackgroundSet BackgroundSet::subsample(const Eigen::MatrixXd& rows, std::size_t cap,
                                       std::uint64_t seed) {
  if (rows.rows() == 0) fail(ErrorKind::precondition, "background set cannot be empty");
  if (cap == 0) fail(ErrorKind::precondition, "background cap must be positive");
  BackgroundSet bg;
  bg.source_seed = seed;
  const auto n = static_cast<std::size_t>(rows.rows());
  if (n <= cap) {
    bg.rows = rows;
    return bg;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "background-subsample"));
  rng.shuffle(order);
  order.resize(cap);
  std::sort(order.begin(), order.end());  // keep dataset ordering in the subsample
  bg.rows.resize(static_cast<Eigen::Index>(cap), rows.cols());
  for (std::size_t i = 0; i < cap; ++i) {
    bg.rows.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(order[i]));
  }
  return bg;
}

BackgroundSet BackgroundSet::from_dataset(const Dataset& dataset, const NormStats& stats,
                                          std::size_t cap, std::uint64_t seed) {
  return subsample(stats.normalize_inputs(dataset.input_matrix()), cap, seed);
}

Coalition::Coalition(std::uint32_t bits, std::size_t n) : bits_(bits), n_(n) {
  if (n == 0 || n > 31) {
    fail(ErrorKind::precondition, "coalition universe size must be in 1..31");
  }
  if (bits >> n) {
    fail(ErrorKind::bounds, "coalition bits reference features outside the universe");
  }
}

Coalition Coalition::full(std::size_t n) {
  if (n == 0 || n > 31) {
    fail(ErrorKind::precondition, "coalition universe size must be in 1..31");
  }
  return Coalition((std::uint32_t(1) << n) - 1u, n);
}

Coalition Coalition::with(std::size_t k) const {
  if (k >= n_) fail(ErrorKind::bounds, "feature index outside the coalition universe");
  return Coalition(bits_ | (std::uint32_t(1) << k), n_);
}

std::size_t Coalition::size() const { return static_cast<std::size_t>(std::popcount(bits_)); }

namespace {

std::uint64_t binomial_u64(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t c = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;  // exact at every step for n <= 20
  }
  return c;
}

}  // namespace

double coalition_weight(std::size_t n, std::size_t s) {
  if (n == 0) fail(ErrorKind::precondition, "coalition weight needs n >= 1");
  if (s > n - 1) {
    fail(ErrorKind::bounds, "coalition size " + std::to_string(s) +
                                " exceeds n-1 = " + std::to_string(n - 1));
  }
  if (n <= 20) {
    // s! (n-1-s)! / n!  ==  1 / (n * C(n-1, s)), exact in integers up to n=20
    return 1.0 / (static_cast<double>(n) * static_cast<double>(binomial_u64(n - 1, s)));
  }
  return std::exp(std::lgamma(static_cast<double>(s) + 1.0) +
                  std::lgamma(static_cast<double>(n - s)) -
                  std::lgamma(static_cast<double>(n) + 1.0));
}

namespace {

void check_inputs(const BackgroundSet& background, const Eigen::VectorXd& x) {
  if (background.rows.rows() == 0) {
    fail(ErrorKind::precondition, "background set cannot be empty");
  }
  if (background.rows.cols() != x.size()) {
    fail(ErrorKind::shape_mismatch, "instance has " + std::to_string(x.size()) +
                                        " features, background has " +
                                        std::to_string(background.rows.cols()));
  }
  if (!x.allFinite() || !background.rows.allFinite()) {
    fail(ErrorKind::precondition, "non-finite values in attribution inputs");
  }
}

double mean_prediction(const RowEvaluator& f, const Eigen::MatrixXd& rows) {
  const Eigen::VectorXd out = f(rows);
  if (out.size() != rows.rows()) {
    fail(ErrorKind::shape_mismatch, "evaluator returned " + std::to_string(out.size()) +
                                        " predictions for " + std::to_string(rows.rows()) +
                                        " rows");
  }
  return out.mean();
}

}  // namespace

double value_function(const RowEvaluator& f, const BackgroundSet& background,
                      const Eigen::VectorXd& x, const Coalition& coalition) {
  check_inputs(background, x);
  if (coalition.universe() != static_cast<std::size_t>(x.size())) {
    fail(ErrorKind::shape_mismatch, "coalition universe does not match feature count");
  }
  Eigen::MatrixXd composed = background.rows;
  for (std::size_t k = 0; k < coalition.universe(); ++k) {
    if (coalition.contains(k)) {
      composed.col(static_cast<Eigen::Index>(k)).setConstant(x(static_cast<Eigen::Index>(k)));
    }
  }
  // same estimator on both sides, so the empty coalition cancels to exactly 0
  return mean_prediction(f, composed) - mean_prediction(f, background.rows);
}

ShapleyAttribution shapley_exact(const RowEvaluator& f, const BackgroundSet& background,
                                 const Eigen::VectorXd& x, std::size_t exact_cap) {
  check_inputs(background, x);
  const auto n = static_cast<std::size_t>(x.size());
  if (n > exact_cap) {
    fail(ErrorKind::precondition,
         "exact attribution over " + std::to_string(n) + " features exceeds the cap of " +
             std::to_string(exact_cap) + "; use the sampled estimator");
  }
  if (n > 31) fail(ErrorKind::precondition, "feature count exceeds bitmask width");

  const std::uint32_t n_masks = std::uint32_t(1) << n;
  std::vector<double> conditional(n_masks);
  Eigen::MatrixXd composed = background.rows;
  for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
    composed = background.rows;
    for (std::size_t k = 0; k < n; ++k) {
      if ((mask >> k) & 1u) {
        composed.col(static_cast<Eigen::Index>(k))
            .setConstant(x(static_cast<Eigen::Index>(k)));
      }
    }
    conditional[mask] = mean_prediction(f, composed);
  }

  ShapleyAttribution attr;
  attr.base_value = conditional[0];
  attr.phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  attr.std_error = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  attr.n_permutations = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint32_t bit = std::uint32_t(1) << k;
    double phi = 0.0;
    for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
      if (mask & bit) continue;
      const auto s = static_cast<std::size_t>(std::popcount(mask));
      phi += coalition_weight(n, s) * (conditional[mask | bit] - conditional[mask]);
    }
    attr.phi(static_cast<Eigen::Index>(k)) = phi;
  }
  return attr;
}

ShapleyAttribution shapley_sampled(const RowEvaluator& f, const BackgroundSet& background,
                                   const Eigen::VectorXd& x, std::size_t n_permutations,
                                   std::uint64_t seed) {
  check_inputs(background, x);
  if (n_permutations == 0) {
    fail(ErrorKind::precondition, "sampled attribution needs at least one permutation");
  }
  const auto n = static_cast<std::size_t>(x.size());
  const double base = mean_prediction(f, background.rows);

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  std::vector<std::size_t> order(n);

  for (std::size_t p = 0; p < n_permutations; ++p) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, p));
    rng.shuffle(order);

    Eigen::MatrixXd composed = background.rows;
    double prev = base;
    for (std::size_t step = 0; step < n; ++step) {
      const std::size_t k = order[step];
      composed.col(static_cast<Eigen::Index>(k))
          .setConstant(x(static_cast<Eigen::Index>(k)));
      const double cur = mean_prediction(f, composed);
      const double marginal = cur - prev;
      prev = cur;
      // Welford, one marginal sample per feature per permutation
      const auto ki = static_cast<Eigen::Index>(k);
      const double delta = marginal - mean(ki);
      mean(ki) += delta / static_cast<double>(p + 1);
      m2(ki) += delta * (marginal - mean(ki));
    }
  }

  ShapleyAttribution attr;
  attr.base_value = base;
  attr.phi = mean;
  attr.n_permutations = n_permutations;
  attr.std_error = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (n_permutations > 1) {
    const double p = static_cast<double>(n_permutations);
    attr.std_error = (m2.array() / (p - 1.0) / p).sqrt().matrix();
  }
  return attr;
}

GlobalImportance global_shapley(const std::vector<ShapleyAttribution>& attributions,
                                std::vector<std::string> names) {
  if (attributions.empty()) {
    fail(ErrorKind::precondition, "global importance needs at least one attribution");
  }
  const Eigen::Index n = attributions.front().phi.size();
  for (const ShapleyAttribution& attr : attributions) {
    if (attr.phi.size() != n) {
      fail(ErrorKind::shape_mismatch, "attributions cover differing feature counts");
    }
  }
  if (!names.empty() && static_cast<Eigen::Index>(names.size()) != n) {
    fail(ErrorKind::shape_mismatch, "feature name list does not match attribution width");
  }

  GlobalImportance global;
  global.names = std::move(names);
  if (global.names.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      global.names.push_back("f" + std::to_string(i));
    }
  }
  global.mean_abs_phi = Eigen::VectorXd::Zero(n);
  for (const ShapleyAttribution& attr : attributions) {
    global.mean_abs_phi += attr.phi.cwiseAbs();
  }
  global.mean_abs_phi /= static_cast<double>(attributions.size());

  global.descending_order.resize(static_cast<std::size_t>(n));
  std::iota(global.descending_order.begin(), global.descending_order.end(), 0);
  std::stable_sort(global.descending_order.begin(), global.descending_order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return global.mean_abs_phi(static_cast<Eigen::Index>(a)) >
                            global.mean_abs_phi(static_cast<Eigen::Index>(b));
                   });
  return global;
}

AdditivityReport additivity_check(const RowEvaluator& f, const RowEvaluator& g,
                                  const BackgroundSet& background,
                                  const Eigen::VectorXd& x) {
  const RowEvaluator sum = [&f, &g](const Eigen::MatrixXd& rows) {
    return (f(rows) + g(rows)).eval();
  };
  const ShapleyAttribution a = shapley_exact(f, background, x);
  const ShapleyAttribution b = shapley_exact(g, background, x);
  const ShapleyAttribution ab = shapley_exact(sum, background, x);
  AdditivityReport report;
  report.defect = ab.phi - a.phi - b.phi;
  report.max_abs_defect = report.defect.cwiseAbs().maxCoeff();
  return report;
}

}  // namespace interopt
