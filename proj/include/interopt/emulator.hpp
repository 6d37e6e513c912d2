#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "interopt/dataset.hpp"

namespace interopt {

enum class Activation { tanh, relu };

std::string to_string(Activation activation);
Activation activation_from_string(const std::string& text);

struct LayerParams {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Bare feed-forward network on normalized values. Activation applies to every
// layer except the last, which stays linear.
struct Mlp {
  std::vector<LayerParams> layers;
  Activation activation = Activation::tanh;

  double forward_one(const Eigen::VectorXd& z) const;
  Eigen::VectorXd batch(const Eigen::MatrixXd& rows) const;  // one row per sample
  std::size_t input_width() const;
  std::size_t parameter_count() const;
};

Mlp init_mlp(std::size_t n_inputs, const std::vector<int>& hidden_widths,
             Activation activation, std::uint64_t seed);

struct LossGrad {
  double loss = 0.0;  // mean squared error over the batch
  std::vector<LayerParams> grad;
};

LossGrad loss_and_gradients(const Mlp& net, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& y);

struct TrainConfig {
  int max_epochs = 500;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 0;  // 0 means full batch
  std::uint64_t seed = 0;
  std::vector<int> hidden_widths = {20, 10};
  Activation activation = Activation::tanh;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Trained surrogate: network plus the normalization it was fitted under and
// the fingerprint of the schema it belongs to.
class EmulatorModel {
 public:
  EmulatorModel(Mlp net, NormStats stats, std::string schema_fingerprint,
                TrainConfig config = {});

  // normalized in, normalized out
  double forward(const Eigen::VectorXd& z) const;
  Eigen::VectorXd batch_forward(const Eigen::MatrixXd& z) const;

  // physical in, physical out
  double predict(const Eigen::VectorXd& inputs) const;
  Eigen::VectorXd predict_batch(const Eigen::MatrixXd& rows) const;

  const Mlp& net() const { return net_; }
  const NormStats& stats() const { return stats_; }
  const std::string& schema_fingerprint() const { return fingerprint_; }
  const TrainConfig& train_config() const { return config_; }

  void require_schema(const FeatureSchema& schema) const;

  nlohmann::json to_json() const;
  static EmulatorModel from_json(const nlohmann::json& j);

 private:
  Mlp net_;
  NormStats stats_;
  std::string fingerprint_;
  TrainConfig config_;
};

EmulatorModel train(const Dataset& dataset, const TrainConfig& config);

// 1 - SS_res / SS_tot; returns -inf when the observed values carry no
// variance, callers decide what to do with the sentinel
double r_squared(const Eigen::VectorXd& predictions, const Eigen::VectorXd& observed);

struct LooCvResult {
  Eigen::VectorXd oof_predictions;  // physical units, one per record
  double cv_r2 = 0.0;
  double fit_r2 = 0.0;
  EmulatorModel full_fit;
};

LooCvResult loo_cv(const Dataset& dataset, const TrainConfig& config);

}  // namespace interopt
