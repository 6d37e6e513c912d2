#include "interopt/emulator.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace interopt {

std::string to_string(Activation activation) {
  return activation == Activation::tanh ? "tanh" : "relu";
}

Activation activation_from_string(const std::string& text) {
  if (text == "tanh") return Activation::tanh;
  if (text == "relu") return Activation::relu;
  fail(ErrorKind::parse, "unknown activation '" + text + "'");
}

namespace {

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& z) {
  if (act == Activation::tanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

// derivative expressed through the activated output where possible
Eigen::MatrixXd activation_grad(Activation act, const Eigen::MatrixXd& z,
                                const Eigen::MatrixXd& a) {
  if (act == Activation::tanh) return (1.0 - a.array().square()).matrix();
  return (z.array() > 0.0).cast<double>().matrix();
}

void check_chain(const std::vector<LayerParams>& layers) {
  if (layers.empty()) fail(ErrorKind::precondition, "network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weight.rows() != layers[l].bias.size()) {
      fail(ErrorKind::shape_mismatch, "layer " + std::to_string(l) +
                                          " weight/bias row mismatch");
    }
    if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows()) {
      fail(ErrorKind::shape_mismatch, "layer " + std::to_string(l) +
                                          " input width does not match layer " +
                                          std::to_string(l - 1) + " output width");
    }
  }
}

}  // namespace

double Mlp::forward_one(const Eigen::VectorXd& z) const {
  check_chain(layers);
  if (z.size() != layers.front().weight.cols()) {
    fail(ErrorKind::shape_mismatch, "input has " + std::to_string(z.size()) +
                                        " values, network expects " +
                                        std::to_string(layers.front().weight.cols()));
  }
  Eigen::VectorXd a = z;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::VectorXd lin = layers[l].weight * a + layers[l].bias;
    if (l + 1 == layers.size()) {
      a = std::move(lin);
    } else if (activation == Activation::tanh) {
      a = lin.array().tanh().matrix();
    } else {
      a = lin.cwiseMax(0.0);
    }
  }
  if (a.size() != 1) {
    fail(ErrorKind::shape_mismatch, "network output width is " +
                                        std::to_string(a.size()) + ", expected 1");
  }
  return a(0);
}

Eigen::VectorXd Mlp::batch(const Eigen::MatrixXd& rows) const {
  check_chain(layers);
  if (rows.cols() != layers.front().weight.cols()) {
    fail(ErrorKind::shape_mismatch, "batch has " + std::to_string(rows.cols()) +
                                        " columns, network expects " +
                                        std::to_string(layers.front().weight.cols()));
  }
  Eigen::MatrixXd a = rows;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd lin =
        (a * layers[l].weight.transpose()).rowwise() + layers[l].bias.transpose();
    a = (l + 1 == layers.size()) ? std::move(lin) : apply_activation(activation, lin);
  }
  if (a.cols() != 1) {
    fail(ErrorKind::shape_mismatch, "network output width is " +
                                        std::to_string(a.cols()) + ", expected 1");
  }
  return a.col(0);
}

std::size_t Mlp::input_width() const {
  check_chain(layers);
  return static_cast<std::size_t>(layers.front().weight.cols());
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const LayerParams& layer : layers) {
    n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  }
  return n;
}

Mlp init_mlp(std::size_t n_inputs, const std::vector<int>& hidden_widths,
             Activation activation, std::uint64_t seed) {
  if (n_inputs == 0) fail(ErrorKind::precondition, "network needs at least one input");
  for (int w : hidden_widths) {
    if (w <= 0) fail(ErrorKind::precondition, "hidden width must be positive");
  }
  std::vector<Eigen::Index> widths;
  widths.push_back(static_cast<Eigen::Index>(n_inputs));
  for (int w : hidden_widths) widths.push_back(w);
  widths.push_back(1);

  Rng rng(seed);
  Mlp net;
  net.activation = activation;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    LayerParams layer;
    layer.weight.resize(widths[l + 1], widths[l]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = rng.uniform(-bound, bound);
      }
    }
    layer.bias = Eigen::VectorXd::Zero(widths[l + 1]);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

LossGrad loss_and_gradients(const Mlp& net, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& y) {
  check_chain(net.layers);
  if (x.rows() != y.size()) {
    fail(ErrorKind::shape_mismatch, "batch rows and target length differ");
  }
  if (x.rows() == 0) fail(ErrorKind::precondition, "empty batch");

  const std::size_t n_layers = net.layers.size();
  std::vector<Eigen::MatrixXd> pre(n_layers);   // linear outputs
  std::vector<Eigen::MatrixXd> post(n_layers);  // after activation
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    pre[l] = (a * net.layers[l].weight.transpose()).rowwise() +
             net.layers[l].bias.transpose();
    post[l] = (l + 1 == n_layers) ? pre[l] : apply_activation(net.activation, pre[l]);
    a = post[l];
  }

  const double n = static_cast<double>(x.rows());
  const Eigen::VectorXd residual = post.back().col(0) - y;
  LossGrad out;
  out.loss = residual.squaredNorm() / n;

  out.grad.resize(n_layers);
  Eigen::MatrixXd delta = (2.0 / n) * residual;  // dL/d(linear output), last layer
  for (std::size_t l = n_layers; l-- > 0;) {
    const Eigen::MatrixXd& input = (l == 0) ? x : post[l - 1];
    out.grad[l].weight = delta.transpose() * input;
    out.grad[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd upstream = delta * net.layers[l].weight;
      delta = upstream.cwiseProduct(activation_grad(net.activation, pre[l - 1], post[l - 1]));
    }
  }
  return out;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"max_epochs", max_epochs},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epsilon", epsilon},
          {"batch_size", batch_size},
          {"seed", seed},
          {"hidden_widths", hidden_widths},
          {"activation", to_string(activation)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.hidden_widths = j.value("hidden_widths", cfg.hidden_widths);
  cfg.activation = activation_from_string(j.value("activation", to_string(cfg.activation)));
  return cfg;
}

EmulatorModel::EmulatorModel(Mlp net, NormStats stats, std::string schema_fingerprint,
                             TrainConfig config)
    : net_(std::move(net)),
      stats_(std::move(stats)),
      fingerprint_(std::move(schema_fingerprint)),
      config_(std::move(config)) {
  check_chain(net_.layers);
  if (net_.layers.front().weight.cols() != stats_.input_mean.size()) {
    fail(ErrorKind::shape_mismatch,
         "network input width does not match normalizer width");
  }
}

double EmulatorModel::forward(const Eigen::VectorXd& z) const {
  if (!z.allFinite()) fail(ErrorKind::precondition, "non-finite network input");
  return net_.forward_one(z);
}

Eigen::VectorXd EmulatorModel::batch_forward(const Eigen::MatrixXd& z) const {
  if (!z.allFinite()) fail(ErrorKind::precondition, "non-finite network input");
  return net_.batch(z);
}

double EmulatorModel::predict(const Eigen::VectorXd& inputs) const {
  // Eigen asserts are disabled in release builds, so check before normalizing
  if (inputs.size() != stats_.input_mean.size()) {
    fail(ErrorKind::shape_mismatch, "input has " + std::to_string(inputs.size()) +
                                        " features, model expects " +
                                        std::to_string(stats_.input_mean.size()));
  }
  return stats_.denormalize_target(forward(stats_.normalize_inputs(inputs)));
}

Eigen::VectorXd EmulatorModel::predict_batch(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != stats_.input_mean.size()) {
    fail(ErrorKind::shape_mismatch, "batch has " + std::to_string(rows.cols()) +
                                        " features, model expects " +
                                        std::to_string(stats_.input_mean.size()));
  }
  const Eigen::VectorXd z = batch_forward(stats_.normalize_inputs(rows));
  return (z.array() * stats_.target_std + stats_.target_mean).matrix();
}

void EmulatorModel::require_schema(const FeatureSchema& schema) const {
  if (schema.fingerprint() != fingerprint_) {
    fail(ErrorKind::schema_mismatch,
         "model was trained against a different schema (fingerprint " + fingerprint_ +
             " vs " + schema.fingerprint() + ")");
  }
}

nlohmann::json EmulatorModel::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerParams& layer : net_.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(layer.weight.size()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        w.push_back(layer.weight(r, c));
      }
    }
    layers.push_back({{"out", layer.weight.rows()},
                      {"in", layer.weight.cols()},
                      {"weight", w},
                      {"bias", std::vector<double>(layer.bias.begin(), layer.bias.end())}});
  }
  return {{"format", "interopt-emulator-v1"},
          {"schema_fingerprint", fingerprint_},
          {"activation", to_string(net_.activation)},
          {"layers", layers},
          {"normalizer", stats_.to_json()},
          {"train_config", config_.to_json()}};
}

EmulatorModel EmulatorModel::from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != std::string("interopt-emulator-v1")) {
      fail(ErrorKind::integrity, "not an emulator artifact (bad or missing format tag)");
    }
    Mlp net;
    net.activation = activation_from_string(j.at("activation").get<std::string>());
    for (const auto& lj : j.at("layers")) {
      LayerParams layer;
      const auto rows = lj.at("out").get<Eigen::Index>();
      const auto cols = lj.at("in").get<Eigen::Index>();
      const auto w = lj.at("weight").get<std::vector<double>>();
      const auto b = lj.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols ||
          static_cast<Eigen::Index>(b.size()) != rows) {
        fail(ErrorKind::integrity, "emulator artifact layer sizes are inconsistent");
      }
      layer.weight.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
          layer.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
        }
      }
      layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
      net.layers.push_back(std::move(layer));
    }
    NormStats stats = NormStats::from_json(j.at("normalizer"));
    TrainConfig cfg = TrainConfig::from_json(j.value("train_config", nlohmann::json::object()));
    return EmulatorModel(std::move(net), std::move(stats),
                         j.at("schema_fingerprint").get<std::string>(), std::move(cfg));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::integrity, std::string("emulator artifact malformed: ") + e.what());
  }
}

EmulatorModel train(const Dataset& dataset, const TrainConfig& config) {
  if (config.max_epochs < 0) fail(ErrorKind::precondition, "max_epochs must be >= 0");
  if (!(config.learning_rate > 0.0)) {
    fail(ErrorKind::precondition, "learning rate must be positive");
  }
  if (config.batch_size < 0) fail(ErrorKind::precondition, "batch size must be >= 0");

  const NormStats stats = fit_normalizer(dataset);
  const Eigen::MatrixXd x = stats.normalize_inputs(dataset.input_matrix());
  Eigen::VectorXd y = dataset.target_vector();
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = stats.normalize_target(y(i));

  Mlp net = init_mlp(dataset.schema().input_count(), config.hidden_widths,
                     config.activation, derive_seed(config.seed, "weight-init"));

  std::vector<LayerParams> m(net.layers.size());
  std::vector<LayerParams> v(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    m[l].weight = Eigen::MatrixXd::Zero(net.layers[l].weight.rows(),
                                        net.layers[l].weight.cols());
    m[l].bias = Eigen::VectorXd::Zero(net.layers[l].bias.size());
    v[l] = m[l];
  }

  const auto n = static_cast<int>(x.rows());
  const int batch = (config.batch_size <= 0 || config.batch_size >= n)
                        ? n
                        : config.batch_size;
  Rng shuffle_rng(derive_seed(config.seed, "batch-shuffle"));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  auto adam_update = [&](std::size_t l, const LayerParams& grad) {
    auto update = [&](Eigen::Ref<Eigen::MatrixXd> param, Eigen::Ref<Eigen::MatrixXd> m1,
                      Eigen::Ref<Eigen::MatrixXd> m2, const Eigen::MatrixXd& g) {
      m1 = config.beta1 * m1 + (1.0 - config.beta1) * g;
      m2 = config.beta2 * m2.array().matrix() + (1.0 - config.beta2) * g.array().square().matrix();
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      param.array() -= config.learning_rate * (m1.array() / c1) /
                       ((m2.array() / c2).sqrt() + config.epsilon);
    };
    update(net.layers[l].weight, m[l].weight, v[l].weight, grad.weight);
    Eigen::MatrixXd bg = grad.bias;
    Eigen::Map<Eigen::MatrixXd> bias(net.layers[l].bias.data(), net.layers[l].bias.size(), 1);
    Eigen::Map<Eigen::MatrixXd> bm(m[l].bias.data(), m[l].bias.size(), 1);
    Eigen::Map<Eigen::MatrixXd> bv(v[l].bias.data(), v[l].bias.size(), 1);
    update(bias, bm, bv, bg);
  };

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    if (batch < n) shuffle_rng.shuffle(order);
    for (int start = 0; start < n; start += batch) {
      const int count = std::min(batch, n - start);
      LossGrad lg;
      if (count == n) {
        lg = loss_and_gradients(net, x, y);
      } else {
        Eigen::MatrixXd xb(count, x.cols());
        Eigen::VectorXd yb(count);
        for (int i = 0; i < count; ++i) {
          xb.row(i) = x.row(order[static_cast<std::size_t>(start + i)]);
          yb(i) = y(order[static_cast<std::size_t>(start + i)]);
        }
        lg = loss_and_gradients(net, xb, yb);
      }
      if (!std::isfinite(lg.loss)) {
        fail(ErrorKind::divergence,
             "training loss became non-finite at epoch " + std::to_string(epoch));
      }
      ++step;
      for (std::size_t l = 0; l < net.layers.size(); ++l) adam_update(l, lg.grad[l]);
    }
  }
  return EmulatorModel(std::move(net), stats, dataset.schema().fingerprint(), config);
}

double r_squared(const Eigen::VectorXd& predictions, const Eigen::VectorXd& observed) {
  if (predictions.size() != observed.size()) {
    fail(ErrorKind::shape_mismatch, "prediction/observation length mismatch");
  }
  if (observed.size() == 0) fail(ErrorKind::precondition, "empty observation vector");
  const double mean = observed.mean();
  const double ss_tot = (observed.array() - mean).square().sum();
  if (ss_tot == 0.0) return -std::numeric_limits<double>::infinity();
  const double ss_res = (observed - predictions).squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

LooCvResult loo_cv(const Dataset& dataset, const TrainConfig& config) {
  if (dataset.size() < 3) {
    fail(ErrorKind::precondition, "leave-one-out CV needs at least 3 records, got " +
                                      std::to_string(dataset.size()));
  }
  const Eigen::VectorXd y = dataset.target_vector();
  Eigen::VectorXd oof(y.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    LooSplit split = split_loo(dataset, i);
    TrainConfig fold_cfg = config;
    fold_cfg.seed = derive_seed(config.seed, i);
    const EmulatorModel model = train(split.train, fold_cfg);
    oof(static_cast<Eigen::Index>(i)) = model.predict(split.held_out.inputs);
  }
  EmulatorModel full = train(dataset, config);
  const Eigen::VectorXd fit = full.predict_batch(dataset.input_matrix());
  LooCvResult result{std::move(oof), 0.0, 0.0, std::move(full)};
  result.cv_r2 = r_squared(result.oof_predictions, y);
  result.fit_r2 = r_squared(fit, y);
  return result;
}

}  // namespace interopt
