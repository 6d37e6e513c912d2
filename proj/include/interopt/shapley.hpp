#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "interopt/emulator.hpp"

namespace interopt {

// batch of normalized input rows -> one prediction per row
using RowEvaluator = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

RowEvaluator evaluator_from(const EmulatorModel& model);

// Reference rows the attribution marginalizes over. Kept in normalized units.
struct BackgroundSet {
  Eigen::MatrixXd rows;
  std::uint64_t source_seed = 0;

  static BackgroundSet subsample(const Eigen::MatrixXd& rows, std::size_t cap,
                                 std::uint64_t seed);
  static BackgroundSet from_dataset(const Dataset& dataset, const NormStats& stats,
                                    std::size_t cap = 128, std::uint64_t seed = 0);
};

// Subset of feature indices over a universe of n features, bitmask backed.
class Coalition {
 public:
  Coalition(std::uint32_t bits, std::size_t n);
  static Coalition empty(std::size_t n) { return Coalition(0, n); }
  static Coalition full(std::size_t n);

  bool contains(std::size_t k) const { return (bits_ >> k) & 1u; }
  Coalition with(std::size_t k) const;
  std::size_t size() const;
  std::size_t universe() const { return n_; }
  std::uint32_t bits() const { return bits_; }

 private:
  std::uint32_t bits_;
  std::size_t n_;
};

// |S|! (n-1-|S|)! / n!  for subsets of the n-1 features excluding the player
double coalition_weight(std::size_t n, std::size_t s);

// Interventional value: average prediction with coalition features pinned to
// x and the rest taken from the background, minus the unconditional average.
double value_function(const RowEvaluator& f, const BackgroundSet& background,
                      const Eigen::VectorXd& x, const Coalition& coalition);

struct ShapleyAttribution {
  Eigen::VectorXd phi;        // normalized target units
  Eigen::VectorXd std_error;  // zero in exact mode
  double base_value = 0.0;    // average background prediction
  std::size_t n_permutations = 0;  // 0 in exact mode
};

ShapleyAttribution shapley_exact(const RowEvaluator& f, const BackgroundSet& background,
                                 const Eigen::VectorXd& x, std::size_t exact_cap = 16);
ShapleyAttribution shapley_sampled(const RowEvaluator& f, const BackgroundSet& background,
                                   const Eigen::VectorXd& x, std::size_t n_permutations,
                                   std::uint64_t seed);

struct GlobalImportance {
  std::vector<std::string> names;
  Eigen::VectorXd mean_abs_phi;
  std::vector<std::size_t> descending_order;
};

GlobalImportance global_shapley(const std::vector<ShapleyAttribution>& attributions,
                                std::vector<std::string> names = {});

struct AdditivityReport {
  Eigen::VectorXd defect;  // phi(f+g) - phi(f) - phi(g)
  double max_abs_defect = 0.0;
};

AdditivityReport additivity_check(const RowEvaluator& f, const RowEvaluator& g,
                                  const BackgroundSet& background,
                                  const Eigen::VectorXd& x);

}  // namespace interopt
