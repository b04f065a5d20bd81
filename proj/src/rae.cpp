// SPDX-License-Identifier: Apache-2.0
#include "rxads/rae.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>

#include "rxads/error.hpp"
#include "rxads/random.hpp"

namespace rxads::rae {

namespace {

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

void glorot(Eigen::MatrixXd& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-limit, limit);
}

// Activations for a batch (columns); acts[0] is the input.
std::vector<Eigen::MatrixXd> forward_batch(const RaeModel& m, const Eigen::MatrixXd& x) {
  if (x.rows() != m.input_dim())
    throw LengthMismatch(fmt::format("forward: input has {} features, model expects {}", x.rows(), m.input_dim()));
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(m.layers.size() + 1);
  acts.push_back(x);
  for (int l = 1; l <= m.depth(); ++l) {
    const Layer& layer = m.layers[static_cast<std::size_t>(l - 1)];
    Eigen::MatrixXd z = layer.weights * acts.back();
    z.colwise() += layer.bias;
    for (std::size_t s = 0; s < m.skips.size(); ++s) {
      const Skip& sk = m.skips[s];
      if (sk.to != l) continue;
      const auto& src = acts[static_cast<std::size_t>(sk.from)];
      if (sk.projection) {
        z.noalias() += m.projections[s] * src;
      } else {
        z += src;
      }
    }
    acts.push_back(sigmoid(z));
  }
  return acts;
}

// Backpropagates dLoss/dA_L through the network. Fills parameter gradients
// when `grads` is non-null and returns dLoss/dA_0.
Eigen::MatrixXd backward(const RaeModel& m, const std::vector<Eigen::MatrixXd>& acts, Eigen::MatrixXd grad_out,
                         Gradients* grads) {
  const int depth = m.depth();
  std::vector<Eigen::MatrixXd> g(acts.size());
  for (std::size_t i = 0; i < acts.size(); ++i) g[i] = Eigen::MatrixXd::Zero(acts[i].rows(), acts[i].cols());
  g.back() = std::move(grad_out);

  if (grads) {
    grads->weights.resize(m.layers.size());
    grads->biases.resize(m.layers.size());
    grads->projections.assign(m.skips.size(), Eigen::MatrixXd());
  }

  for (int l = depth; l >= 1; --l) {
    const auto ul = static_cast<std::size_t>(l);
    const Eigen::MatrixXd& a = acts[ul];
    const Eigen::MatrixXd delta = g[ul].cwiseProduct(a.cwiseProduct((1.0 - a.array()).matrix()));
    const Layer& layer = m.layers[ul - 1];
    if (grads) {
      grads->weights[ul - 1].noalias() = delta * acts[ul - 1].transpose();
      grads->biases[ul - 1] = delta.rowwise().sum();
    }
    g[ul - 1].noalias() += layer.weights.transpose() * delta;
    for (std::size_t s = 0; s < m.skips.size(); ++s) {
      const Skip& sk = m.skips[s];
      if (sk.to != l) continue;
      const auto from = static_cast<std::size_t>(sk.from);
      if (sk.projection) {
        if (grads) grads->projections[s].noalias() = delta * acts[from].transpose();
        g[from].noalias() += m.projections[s].transpose() * delta;
      } else {
        g[from] += delta;
      }
    }
  }
  return std::move(g.front());
}

Eigen::MatrixXd sign(const Eigen::MatrixXd& m) { return m.cwiseSign(); }

}  // namespace

std::size_t RaeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  for (const auto& p : projections) n += static_cast<std::size_t>(p.size());
  return n;
}

bool RaeModel::operator==(const RaeModel& o) const {
  if (dims != o.dims || skips != o.skips || l1_coeff != o.l1_coeff || seed != o.seed) return false;
  if (layers.size() != o.layers.size() || projections.size() != o.projections.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weights.rows() != o.layers[i].weights.rows() ||
        layers[i].weights.cols() != o.layers[i].weights.cols() || layers[i].bias.size() != o.layers[i].bias.size())
      return false;
    if (layers[i].weights != o.layers[i].weights || layers[i].bias != o.layers[i].bias) return false;
  }
  for (std::size_t i = 0; i < projections.size(); ++i) {
    if (projections[i].rows() != o.projections[i].rows() || projections[i].cols() != o.projections[i].cols())
      return false;
    if (projections[i].size() > 0 && projections[i] != o.projections[i]) return false;
  }
  return true;
}

std::vector<Skip> place_skips(const std::vector<int>& dims, SkipPlacement placement) {
  std::vector<Skip> skips;
  if (placement == SkipPlacement::None) return skips;
  const int last_hidden = static_cast<int>(dims.size()) - 2;
  for (int i = 1; i <= last_hidden; ++i) {
    for (int j = i + 1; j <= last_hidden; ++j) {
      if (dims[static_cast<std::size_t>(j)] == dims[static_cast<std::size_t>(i)]) {
        skips.push_back({i, j, false});
        break;
      }
    }
  }
  return skips;
}

void validate(const RaeModel& m) {
  if (m.dims.size() < 2) throw BadArchitecture("need at least input and output dims");
  for (int d : m.dims)
    if (d < 1) throw BadArchitecture("every layer width must be >= 1");
  if (m.dims.front() != m.dims.back())
    throw BadArchitecture(fmt::format("input width {} differs from output width {}", m.dims.front(), m.dims.back()));
  if (!(m.l1_coeff >= 0.0)) throw BadArchitecture("l1_coeff must be >= 0");
  if (m.layers.size() != m.dims.size() - 1) throw BadArchitecture("layer count does not match dims");
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    if (layer.weights.rows() != m.dims[l + 1] || layer.weights.cols() != m.dims[l] ||
        layer.bias.size() != m.dims[l + 1])
      throw BadArchitecture(fmt::format("layer {} has inconsistent shape", l + 1));
  }
  if (m.projections.size() != m.skips.size()) throw BadArchitecture("projection list does not match skips");
  const int depth = static_cast<int>(m.layers.size());
  for (std::size_t s = 0; s < m.skips.size(); ++s) {
    const Skip& sk = m.skips[s];
    if (sk.from < 0 || sk.to > depth || sk.from >= sk.to)
      throw BadArchitecture(fmt::format("skip {}->{} out of range", sk.from, sk.to));
    const int in = m.dims[static_cast<std::size_t>(sk.from)];
    const int out = m.dims[static_cast<std::size_t>(sk.to)];
    if (sk.projection) {
      if (m.projections[s].rows() != out || m.projections[s].cols() != in)
        throw BadArchitecture(fmt::format("projection for skip {}->{} has wrong shape", sk.from, sk.to));
    } else {
      if (in != out) throw BadArchitecture(fmt::format("identity skip {}->{} joins unequal widths", sk.from, sk.to));
      if (m.projections[s].size() != 0) throw BadArchitecture("identity skip carries a projection");
    }
  }
}

RaeModel init_model(const std::vector<int>& dims, const std::vector<Skip>& skips, double l1_coeff,
                    std::uint64_t seed) {
  RaeModel m;
  m.dims = dims;
  m.skips = skips;
  m.l1_coeff = l1_coeff;
  m.seed = seed;
  if (dims.size() < 2) throw BadArchitecture("need at least input and output dims");
  for (int d : dims)
    if (d < 1) throw BadArchitecture("every layer width must be >= 1");
  if (dims.front() != dims.back())
    throw BadArchitecture(fmt::format("input width {} differs from output width {}", dims.front(), dims.back()));

  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer{Eigen::MatrixXd(dims[l + 1], dims[l]), Eigen::VectorXd::Zero(dims[l + 1])};
    glorot(layer.weights, rng);
    m.layers.push_back(std::move(layer));
  }
  for (const Skip& sk : skips) {
    if (sk.projection && sk.from >= 0 && sk.to < static_cast<int>(dims.size()) && sk.from < sk.to) {
      Eigen::MatrixXd p(dims[static_cast<std::size_t>(sk.to)], dims[static_cast<std::size_t>(sk.from)]);
      glorot(p, rng);
      m.projections.push_back(std::move(p));
    } else {
      m.projections.emplace_back();
    }
  }
  validate(m);
  return m;
}

RaeModel init_model(const std::vector<int>& dims, double l1_coeff, std::uint64_t seed, SkipPlacement placement) {
  if (dims.size() < 2) throw BadArchitecture("need at least input and output dims");
  return init_model(dims, place_skips(dims, placement), l1_coeff, seed);
}

ForwardResult forward(const RaeModel& model, const Eigen::VectorXd& x) {
  auto acts = forward_batch(model, x);
  ForwardResult r;
  r.reconstruction = acts.back().col(0);
  r.activations.reserve(acts.size());
  for (auto& a : acts) r.activations.emplace_back(a.col(0));
  return r;
}

Eigen::MatrixXd reconstruct(const RaeModel& model, const Eigen::MatrixXd& samples) {
  return forward_batch(model, samples).back();
}

double sample_error(const RaeModel& model, const Eigen::VectorXd& x) {
  return (x - forward(model, x).reconstruction).squaredNorm();
}

Eigen::VectorXd sample_errors(const RaeModel& model, const Eigen::MatrixXd& samples) {
  return (samples - reconstruct(model, samples)).colwise().squaredNorm().transpose();
}

double l1_norm(const RaeModel& model) {
  double s = 0.0;
  for (const auto& layer : model.layers) s += layer.weights.cwiseAbs().sum();
  for (const auto& p : model.projections) s += p.cwiseAbs().sum();
  return s;
}

double batch_loss(const RaeModel& model, const Eigen::MatrixXd& batch) {
  if (batch.cols() == 0) throw EmptyBatch("batch_loss: empty batch");
  const double mse = sample_errors(model, batch).mean();
  return model.l1_coeff > 0.0 ? mse + model.l1_coeff * l1_norm(model) : mse;
}

double loss_and_gradients(const RaeModel& model, const Eigen::MatrixXd& batch, Gradients& grads) {
  if (batch.cols() == 0) throw EmptyBatch("gradients: empty batch");
  const auto acts = forward_batch(model, batch);
  const double n = static_cast<double>(batch.cols());
  const Eigen::MatrixXd residual = acts.back() - batch;
  backward(model, acts, (2.0 / n) * residual, &grads);

  double loss = residual.colwise().squaredNorm().sum() / n;
  if (model.l1_coeff > 0.0) {
    loss += model.l1_coeff * l1_norm(model);
    for (std::size_t l = 0; l < model.layers.size(); ++l)
      grads.weights[l] += model.l1_coeff * sign(model.layers[l].weights);
    for (std::size_t s = 0; s < model.skips.size(); ++s)
      if (model.skips[s].projection) grads.projections[s] += model.l1_coeff * sign(model.projections[s]);
  }
  return loss;
}

Gradients gradients(const RaeModel& model, const Eigen::MatrixXd& batch) {
  Gradients g;
  loss_and_gradients(model, batch, g);
  return g;
}

double error_and_input_gradient(const RaeModel& model, const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
  const auto acts = forward_batch(model, x);
  const Eigen::VectorXd residual = x - acts.back().col(0);
  // J = ||x - f(x)||^2: the direct term plus the path through f.
  const Eigen::MatrixXd through = backward(model, acts, -2.0 * residual, nullptr);
  grad = 2.0 * residual + through.col(0);
  return residual.squaredNorm();
}

Eigen::VectorXd input_gradient(const RaeModel& model, const Eigen::VectorXd& x) {
  Eigen::VectorXd g;
  error_and_input_gradient(model, x, g);
  return g;
}

Eigen::VectorXd flatten(const RaeModel& model) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(model.parameter_count()));
  Eigen::Index k = 0;
  auto put = [&](const auto& m) {
    out.segment(k, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    k += m.size();
  };
  for (const auto& layer : model.layers) {
    put(layer.weights);
    put(layer.bias);
  }
  for (const auto& p : model.projections) put(p);
  return out;
}

void unflatten(RaeModel& model, const Eigen::VectorXd& params) {
  if (params.size() != static_cast<Eigen::Index>(model.parameter_count()))
    throw LengthMismatch("unflatten: parameter vector has wrong length");
  Eigen::Index k = 0;
  auto take = [&](auto& m) {
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = params.segment(k, m.size());
    k += m.size();
  };
  for (auto& layer : model.layers) {
    take(layer.weights);
    take(layer.bias);
  }
  for (auto& p : model.projections) take(p);
}

Eigen::VectorXd flatten(const Gradients& grads) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) n += grads.weights[l].size() + grads.biases[l].size();
  for (const auto& p : grads.projections) n += p.size();
  Eigen::VectorXd out(n);
  Eigen::Index k = 0;
  auto put = [&](const auto& m) {
    out.segment(k, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    k += m.size();
  };
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    put(grads.weights[l]);
    put(grads.biases[l]);
  }
  for (const auto& p : grads.projections) put(p);
  return out;
}

TrainResult fit(RaeModel model, const Eigen::MatrixXd& train, const TrainConfig& config,
                const Eigen::MatrixXd* validation) {
  if (config.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (config.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(config.learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
  if (train.cols() == 0) throw EmptyInput("train: no training vectors");
  validate(model);

  TrainResult result;
  result.history.initial_loss = batch_loss(model, train);

  Rng rng(config.shuffle_seed);
  const auto n = static_cast<std::size_t>(train.cols());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  Eigen::VectorXd params = flatten(model);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(params.size());
  std::int64_t step = 0;
  Gradients grads;
  Eigen::MatrixXd batch;

  double best_validation = std::numeric_limits<double>::infinity();
  RaeModel best_model = model;
  int since_best = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<Eigen::Index>(order));
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(config.batch_size));
      batch.resize(train.rows(), static_cast<Eigen::Index>(end - begin));
      for (std::size_t j = begin; j < end; ++j) batch.col(static_cast<Eigen::Index>(j - begin)) = train.col(order[j]);

      const double loss = loss_and_gradients(model, batch, grads);
      if (!std::isfinite(loss))
        throw NonFiniteLoss(fmt::format("train: loss became {} in epoch {}", loss, epoch + 1));

      ++step;
      const Eigen::VectorXd g = flatten(grads);
      m1 = config.beta1 * m1 + (1.0 - config.beta1) * g;
      m2 = config.beta2 * m2 + (1.0 - config.beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      params.array() -= config.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + config.epsilon);
      unflatten(model, params);
    }

    const double epoch_loss = batch_loss(model, train);
    if (!std::isfinite(epoch_loss))
      throw NonFiniteLoss(fmt::format("train: loss became {} after epoch {}", epoch_loss, epoch + 1));
    result.history.epoch_loss.push_back(epoch_loss);

    if (validation && validation->cols() > 0) {
      const double v = sample_errors(model, *validation).mean();
      result.history.validation_error.push_back(v);
      if (config.patience) {
        if (v < best_validation) {
          best_validation = v;
          best_model = model;
          since_best = 0;
        } else if (++since_best >= *config.patience) {
          model = best_model;
          break;
        }
      }
    }
  }

  result.model = std::move(model);
  return result;
}

}  // namespace rxads::rae
