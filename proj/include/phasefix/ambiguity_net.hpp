/*
 * Copyright (c) 2026 The phasefix Authors.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/**
 * @file ambiguity_net.hpp
 * @brief Multi-branch MLP that classifies differential integer ambiguities.
 *
 * A shared ReLU trunk feeds |J| parallel branches; each branch ends in a
 * softmax over the Q_jk admissible labels [-q_jk - 1, q_jk] of its AP. The
 * network is trained with the mean sparse categorical cross-entropy over
 * branches plus an L2 penalty on the weight matrices, using mini-batch Adam
 * and inverted dropout after every hidden ReLU layer.
 *
 * Activations are stored feature-major: one column per sample.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#if defined(__SSE__) || defined(_M_X64)
#include <xmmintrin.h>
#endif

#include "phasefix/core.hpp"
#include "phasefix/geometry.hpp"
#include "phasefix/simulator.hpp"

namespace phasefix {

inline constexpr int kModelFormatVersion = 1;

/// How delta is presented to the first layer.
enum class InputEncoding {
  kScaled,  // delta / lambda
  kSinCos,  // [sin(2 pi delta / lambda), cos(2 pi delta / lambda)]
};

inline std::string to_string(InputEncoding e) {
  return e == InputEncoding::kScaled ? "scaled" : "sincos";
}

inline InputEncoding input_encoding_from_string(const std::string& s) {
  if (s == "scaled") return InputEncoding::kScaled;
  if (s == "sincos") return InputEncoding::kSinCos;
  throw InvalidArgument("unknown input encoding '" + s + "'");
}

struct MlpConfig {
  int input_dim = 8;  // I - 1
  int width = 128;    // D
  /// Dense layers in the trunk; the first maps input_dim -> D.
  int shared_layers = 8;
  /// Hidden D -> D layers per branch before the softmax layer.
  int branch_hidden_layers = 2;
  std::vector<int> branch_q;  // q_jk per branch; output size is 2 q + 2
  double dropout_rate = 0.1;
  double l2_coeff = 1e-5;
  double wavelength = kSpeedOfLight / 2.3e9;
  /// Divide delta by lambda before the first layer.
  bool input_scale = true;
  InputEncoding encoding = InputEncoding::kScaled;

  int num_branches() const { return static_cast<int>(branch_q.size()); }
  int branch_outputs(int k) const { return 2 * branch_q[k] + 2; }
  int encoded_dim() const { return encoding == InputEncoding::kSinCos ? 2 * input_dim : input_dim; }

  void validate() const {
    if (input_dim < 1 || width < 1 || shared_layers < 1 || branch_hidden_layers < 1)
      throw InvalidArgument("mlp config: all layer counts and widths must be >= 1");
    if (branch_q.empty()) throw InvalidArgument("mlp config: need at least one branch");
    for (int q : branch_q)
      if (q < 0) throw InvalidArgument("mlp config: q must be >= 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw InvalidArgument("mlp config: dropout_rate must lie in [0, 1)");
    if (!(l2_coeff >= 0.0)) throw InvalidArgument("mlp config: l2_coeff must be >= 0");
    if (!(wavelength > 0.0)) throw InvalidArgument("mlp config: wavelength must be > 0");
  }

  bool operator==(const MlpConfig&) const = default;
};

/// Config whose branches match the deployment's ambiguity bounds.
inline MlpConfig mlp_config_for(const Deployment& dep, MlpConfig base = {}) {
  base.input_dim = dep.num_diffs();
  base.branch_q = ambiguity_bounds(dep).q;
  base.wavelength = dep.wavelength;
  return base;
}

enum class Mode { kTrain, kInfer };

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weights;  // out x in
  VectorX<Scalar> bias;     // out

  int rows() const { return static_cast<int>(weights.rows()); }
  int cols() const { return static_cast<int>(weights.cols()); }
};

/// Per-branch probability vectors for one input; entry l + q + 1 holds p(l).
template <typename Scalar>
struct BranchDistributions {
  std::vector<VectorX<Scalar>> probs;
};

struct TrainingMetadata {
  int epochs_seen = 0;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_val_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Sets FTZ/DAZ for the current thread while alive; denormals from decaying
/// weights otherwise slow training by an order of magnitude.
class FlushDenormals {
 public:
  FlushDenormals() {
#if defined(__SSE__) || defined(_M_X64)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040);
#endif
  }
  ~FlushDenormals() {
#if defined(__SSE__) || defined(_M_X64)
    _mm_setcsr(saved_);
#endif
  }
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned saved_ = 0;
};

template <typename Scalar>
class Mlp {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;
  using Layer = DenseLayer<Scalar>;

  Mlp() = default;

  /// Zero-initialised network with the architecture of `config`.
  explicit Mlp(MlpConfig config) : config_(std::move(config)) {
    config_.validate();
    const int D = config_.width;
    int in = config_.encoded_dim();
    for (int l = 0; l < config_.shared_layers; ++l) {
      trunk_.push_back(zero_layer(D, in));
      in = D;
    }
    branches_.resize(config_.num_branches());
    for (int k = 0; k < config_.num_branches(); ++k) {
      for (int l = 0; l < config_.branch_hidden_layers; ++l) branches_[k].push_back(zero_layer(D, D));
      branches_[k].push_back(zero_layer(config_.branch_outputs(k), D));
    }
  }

  /// He-uniform weights (fan-in), zero biases.
  static Mlp initialized(MlpConfig config, std::uint64_t seed) {
    Mlp m(std::move(config));
    Rng rng(seed);
    m.for_each_layer([&](Layer& layer) {
      const double limit = std::sqrt(6.0 / static_cast<double>(layer.cols()));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
          layer.weights(r, c) = static_cast<Scalar>(u(rng));
    });
    return m;
  }

  const MlpConfig& config() const { return config_; }
  const std::vector<Layer>& trunk() const { return trunk_; }
  const std::vector<std::vector<Layer>>& branches() const { return branches_; }
  std::vector<Layer>& trunk() { return trunk_; }
  std::vector<std::vector<Layer>>& branches() { return branches_; }
  TrainingMetadata& metadata() { return metadata_; }
  const TrainingMetadata& metadata() const { return metadata_; }

  /// All layers in file order: trunk, then branch 0, branch 1, ...
  template <typename Fn>
  void for_each_layer(Fn&& fn) {
    for (auto& l : trunk_) fn(l);
    for (auto& b : branches_)
      for (auto& l : b) fn(l);
  }
  template <typename Fn>
  void for_each_layer(Fn&& fn) const {
    for (const auto& l : trunk_) fn(l);
    for (const auto& b : branches_)
      for (const auto& l : b) fn(l);
  }

  std::size_t num_layers() const {
    std::size_t n = trunk_.size();
    for (const auto& b : branches_) n += b.size();
    return n;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for_each_layer([&](const Layer& l) { n += l.weights.size() + l.bias.size(); });
    return n;
  }

  /// Encodes a batch of delta vectors (one per column, meters).
  Matrix encode(const Eigen::MatrixXd& delta) const {
    if (delta.rows() != config_.input_dim)
      throw DimensionMismatch("mlp: expected " + std::to_string(config_.input_dim) +
                              " differential measurements, got " + std::to_string(delta.rows()));
    const double s = config_.input_scale ? 1.0 / config_.wavelength : 1.0;
    if (config_.encoding == InputEncoding::kScaled) return (delta * s).template cast<Scalar>();
    Matrix out(2 * config_.input_dim, delta.cols());
    for (Eigen::Index c = 0; c < delta.cols(); ++c)
      for (Eigen::Index r = 0; r < delta.rows(); ++r) {
        const double a = kTwoPi * delta(r, c) / config_.wavelength;
        out(r, c) = static_cast<Scalar>(std::sin(a));
        out(r + config_.input_dim, c) = static_cast<Scalar>(std::cos(a));
      }
    return out;
  }

  Matrix encode(const std::vector<double>& delta) const {
    return encode(Eigen::Map<const Eigen::VectorXd>(delta.data(), static_cast<Eigen::Index>(delta.size())));
  }

  /// Intermediate values of a batch forward pass, kept for backprop.
  struct Tape {
    Matrix input;
    std::vector<Matrix> trunk_pre, trunk_act, trunk_mask;
    std::vector<std::vector<Matrix>> branch_pre, branch_act, branch_mask;
    std::vector<Matrix> probs;  // per branch: Q_k x N
  };

  /// Batched forward pass on encoded input. `rng` is required in train mode
  /// when dropout is enabled.
  Tape forward_tape(const Matrix& x, Mode mode, Rng* rng) const {
    const bool drop = mode == Mode::kTrain && config_.dropout_rate > 0.0;
    if (drop && rng == nullptr) throw InvalidArgument("mlp: train-mode dropout needs an RNG");
    if (x.rows() != config_.encoded_dim()) throw DimensionMismatch("mlp: encoded input has wrong size");
    Tape t;
    t.input = x;
    const Matrix* a = &t.input;
    for (const auto& layer : trunk_) {
      t.trunk_pre.push_back(affine(layer, *a));
      t.trunk_act.push_back(t.trunk_pre.back().cwiseMax(Scalar(0)));
      t.trunk_mask.push_back(drop ? apply_dropout(t.trunk_act.back(), *rng) : Matrix());
      a = &t.trunk_act.back();
    }
    const Matrix* shared = a;
    const int nb = config_.num_branches();
    t.branch_pre.resize(nb);
    t.branch_act.resize(nb);
    t.branch_mask.resize(nb);
    t.probs.resize(nb);
    for (int k = 0; k < nb; ++k) {
      const auto& layers = branches_[k];
      a = shared;
      for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        t.branch_pre[k].push_back(affine(layers[l], *a));
        t.branch_act[k].push_back(t.branch_pre[k].back().cwiseMax(Scalar(0)));
        t.branch_mask[k].push_back(drop ? apply_dropout(t.branch_act[k].back(), *rng) : Matrix());
        a = &t.branch_act[k].back();
      }
      t.probs[k] = softmax_columns(affine(layers.back(), *a));
    }
    return t;
  }

  /// Per-branch probabilities (Q_k x N) for a batch of delta columns [m].
  std::vector<Matrix> forward_batch(const Eigen::MatrixXd& delta, Mode mode = Mode::kInfer,
                                    Rng* rng = nullptr) const {
    return forward_tape(encode(delta), mode, rng).probs;
  }

  BranchDistributions<Scalar> forward(const std::vector<double>& delta, Mode mode = Mode::kInfer,
                                      std::optional<std::uint64_t> dropout_seed = std::nullopt) const {
    std::optional<Rng> rng;
    if (dropout_seed) rng.emplace(*dropout_seed);
    auto probs = forward_tape(encode(delta), mode, rng ? &*rng : nullptr).probs;
    BranchDistributions<Scalar> out;
    for (auto& p : probs) out.probs.push_back(p.col(0));
    return out;
  }

  /// Argmax label per branch for each column; ties go to the smaller label.
  std::vector<std::vector<std::int64_t>> predict_batch(const Eigen::MatrixXd& delta) const {
    const auto probs = forward_batch(delta, Mode::kInfer);
    std::vector<std::vector<std::int64_t>> out(delta.cols(),
                                               std::vector<std::int64_t>(config_.num_branches()));
    for (int k = 0; k < config_.num_branches(); ++k) {
      for (Eigen::Index c = 0; c < probs[k].cols(); ++c) {
        Eigen::Index best = 0;
        // maxCoeff already keeps the first maximum; spelled out for the tie rule
        for (Eigen::Index r = 1; r < probs[k].rows(); ++r)
          if (probs[k](r, c) > probs[k](best, c)) best = r;
        out[c][k] = static_cast<std::int64_t>(best) - config_.branch_q[k] - 1;
      }
    }
    return out;
  }

  std::vector<std::int64_t> predict(const std::vector<double>& delta) const {
    return predict_batch(Eigen::Map<const Eigen::VectorXd>(delta.data(),
                                                           static_cast<Eigen::Index>(delta.size())))[0];
  }

  /// Gradients with the same layout as the model.
  struct Gradients {
    std::vector<Layer> trunk;
    std::vector<std::vector<Layer>> branches;
  };

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto& l : trunk_) g.trunk.push_back(zero_layer(l.rows(), l.cols()));
    g.branches.resize(branches_.size());
    for (std::size_t k = 0; k < branches_.size(); ++k)
      for (const auto& l : branches_[k]) g.branches[k].push_back(zero_layer(l.rows(), l.cols()));
    return g;
  }

  /**
   * Loss and exact gradients of
   *   (1/N) sum_n (1/|J|) sum_k -ln p_k(label_nk)  +  l2 * sum ||W||^2
   * for one batch. `labels` holds class indices (|J| x N). The returned loss
   * uses the clamped log; the gradient is that of the unclamped expression.
   */
  double backprop(const Tape& t, const Eigen::MatrixXi& labels, Gradients& g) const {
    const Eigen::Index n = t.input.cols();
    const int nb = config_.num_branches();
    if (labels.rows() != nb || labels.cols() != n)
      throw DimensionMismatch("mlp: labels must be |J| x N");
    const Scalar inv = Scalar(1) / static_cast<Scalar>(n * nb);
    const Scalar l2x2 = static_cast<Scalar>(2.0 * config_.l2_coeff);
    double loss = 0.0;

    Matrix d_shared = Matrix::Zero(config_.width, n);
    const Matrix& shared = t.trunk_act.back();
    for (int k = 0; k < nb; ++k) {
      const auto& layers = branches_[k];
      auto& gl = g.branches[k];
      Matrix dz = t.probs[k];
      for (Eigen::Index c = 0; c < n; ++c) {
        const int y = labels(k, c);
        loss -= std::log(std::max(static_cast<double>(dz(y, c)), 1e-12));
        dz(y, c) -= Scalar(1);
      }
      dz *= inv;
      for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
        const Matrix& a_in = l == 0 ? shared : t.branch_act[k][l - 1];
        const Matrix* in_mask = l == 0 ? nullptr : &t.branch_mask[k][l - 1];
        gl[l].weights.noalias() = dz * a_in.transpose();
        gl[l].bias = dz.rowwise().sum();
        Matrix da = layers[l].weights.transpose() * dz;
        if (l == 0) {
          d_shared += da;
        } else {
          dz = relu_dropout_backward(da, t.branch_pre[k][l - 1], *in_mask);
        }
      }
    }
    loss *= static_cast<double>(inv);

    Matrix dz = relu_dropout_backward(d_shared, t.trunk_pre.back(), t.trunk_mask.back());
    for (int l = static_cast<int>(trunk_.size()) - 1; l >= 0; --l) {
      const Matrix& a_in = l == 0 ? t.input : t.trunk_act[l - 1];
      g.trunk[l].weights.noalias() = dz * a_in.transpose();
      g.trunk[l].bias = dz.rowwise().sum();
      if (l > 0) {
        Matrix da = trunk_[l].weights.transpose() * dz;
        dz = relu_dropout_backward(da, t.trunk_pre[l - 1], t.trunk_mask[l - 1]);
      }
    }

    double penalty = 0.0;
    auto add_l2 = [&](const Layer& layer, Layer& grad) {
      penalty += layer.weights.template cast<double>().squaredNorm();
      grad.weights += l2x2 * layer.weights;
    };
    for (std::size_t l = 0; l < trunk_.size(); ++l) add_l2(trunk_[l], g.trunk[l]);
    for (std::size_t k = 0; k < branches_.size(); ++k)
      for (std::size_t l = 0; l < branches_[k].size(); ++l) add_l2(branches_[k][l], g.branches[k][l]);
    return loss + config_.l2_coeff * penalty;
  }

  /// Sum of squared weights (biases excluded).
  double weight_norm_squared() const {
    double s = 0.0;
    for_each_layer([&](const Layer& l) { s += l.weights.template cast<double>().squaredNorm(); });
    return s;
  }

  bool same_parameters(const Mlp& o) const {
    if (!(config_ == o.config_) || num_layers() != o.num_layers()) return false;
    std::vector<const Layer*> a, b;
    for_each_layer([&](const Layer& l) { a.push_back(&l); });
    o.for_each_layer([&](const Layer& l) { b.push_back(&l); });
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i]->weights != b[i]->weights || a[i]->bias != b[i]->bias) return false;
    return true;
  }

 private:
  static Layer zero_layer(int rows, int cols) {
    return Layer{Matrix::Zero(rows, cols), Vector::Zero(rows)};
  }

  static Matrix affine(const Layer& layer, const Matrix& a) {
    Matrix z(layer.weights.rows(), a.cols());
    z.noalias() = layer.weights * a;
    z.colwise() += layer.bias;
    return z;
  }

  static Matrix softmax_columns(Matrix z) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      auto col = z.col(c);
      col.array() -= col.maxCoeff();
      col = col.array().exp().matrix();
      col /= col.sum();
    }
    return z;
  }

  /// Zeroes units with probability p and scales survivors by 1/(1-p). Returns
  /// the scaled mask so backprop can replay it.
  Matrix apply_dropout(Matrix& act, Rng& rng) const {
    const double p = config_.dropout_rate;
    const auto keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
    const auto threshold = static_cast<std::uint32_t>(p * 4294967296.0);
    Matrix mask(act.rows(), act.cols());
    Scalar* m = mask.data();
    const Eigen::Index size = mask.size();
    Eigen::Index i = 0;
    while (i < size) {
      const std::uint64_t bits = rng();
      const auto lo = static_cast<std::uint32_t>(bits);
      const auto hi = static_cast<std::uint32_t>(bits >> 32);
      m[i++] = lo < threshold ? Scalar(0) : keep_scale;
      if (i < size) m[i++] = hi < threshold ? Scalar(0) : keep_scale;
    }
    act.array() *= mask.array();
    return mask;
  }

  static Matrix relu_dropout_backward(const Matrix& da, const Matrix& pre, const Matrix& mask) {
    Matrix dz = (pre.array() > Scalar(0)).select(da, Scalar(0));
    if (mask.size() != 0) dz.array() *= mask.array();
    return dz;
  }

  MlpConfig config_;
  std::vector<Layer> trunk_;
  std::vector<std::vector<Layer>> branches_;
  TrainingMetadata metadata_;
};

using MlpModel = Mlp<float>;

// ----------------------------------------------------------------------------
// Loss on explicit distributions
// ----------------------------------------------------------------------------

/// Mean over branches of -ln p_k(label_k); probabilities clamped at 1e-12.
template <typename Scalar>
double scce_loss(const BranchDistributions<Scalar>& dists, const std::vector<std::int64_t>& labels,
                 const std::vector<int>& branch_q) {
  if (dists.probs.size() != labels.size() || labels.size() != branch_q.size())
    throw DimensionMismatch("scce_loss: branch count mismatch");
  double sum = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const long lo = -branch_q[k] - 1;
    const long hi = branch_q[k];
    if (labels[k] < lo || labels[k] > hi)
      throw LabelOutOfRange("scce_loss: label " + std::to_string(labels[k]) + " outside [" +
                            std::to_string(lo) + ", " + std::to_string(hi) + "] in branch " +
                            std::to_string(k));
    const auto idx = static_cast<Eigen::Index>(labels[k] - lo);
    if (idx >= dists.probs[k].size()) throw DimensionMismatch("scce_loss: distribution too short");
    sum -= std::log(std::max(static_cast<double>(dists.probs[k](idx)), 1e-12));
  }
  return sum / static_cast<double>(labels.size());
}

// ----------------------------------------------------------------------------
// Training
// ----------------------------------------------------------------------------

struct TrainHyper {
  int batch_size = 500;
  int epochs = 500;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;  // exact-vector, percent
};

/// Delta columns and label classes extracted from a dataset.
struct TrainingTensors {
  Eigen::MatrixXd delta;   // (I-1) x N, meters
  Eigen::MatrixXi labels;  // |J| x N, class indices
};

inline TrainingTensors to_tensors(const Dataset& ds, const MlpConfig& config) {
  const auto& dep = ds.deployment;
  if (dep.num_diffs() != config.input_dim || dep.num_branches() != config.num_branches() ||
      ambiguity_bounds(dep).q != config.branch_q || dep.wavelength != config.wavelength)
    throw ConfigMismatch("dataset deployment does not match the model configuration");
  TrainingTensors t;
  const auto n = static_cast<Eigen::Index>(ds.size());
  t.delta.resize(config.input_dim, n);
  t.labels.resize(config.num_branches(), n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& s = ds.samples[c];
    for (int r = 0; r < config.input_dim; ++r) t.delta(r, c) = s.delta[r];
    for (int k = 0; k < config.num_branches(); ++k) {
      const long lab = s.labels[k];
      if (lab < -config.branch_q[k] - 1 || lab > config.branch_q[k])
        throw LabelOutOfRange("dataset label outside the branch bounds");
      t.labels(k, c) = static_cast<int>(lab + config.branch_q[k] + 1);
    }
  }
  return t;
}

template <typename Scalar>
class AdamOptimizer {
 public:
  using Model = Mlp<Scalar>;

  AdamOptimizer(const Model& model, const TrainHyper& hyper)
      : hyper_(hyper), m_(model.zero_gradients()), v_(model.zero_gradients()) {}

  void step(Model& model, const typename Model::Gradients& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(hyper_.beta1, t_);
    const double c2 = 1.0 - std::pow(hyper_.beta2, t_);
    const auto lr = static_cast<Scalar>(hyper_.learning_rate * std::sqrt(c2) / c1);
    const auto b1 = static_cast<Scalar>(hyper_.beta1);
    const auto b2 = static_cast<Scalar>(hyper_.beta2);
    const auto eps = static_cast<Scalar>(hyper_.epsilon * std::sqrt(c2));
    auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
      m = b1 * m + (Scalar(1) - b1) * grad;
      v = b2 * v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
      param.array() -= lr * m.array() / (v.array().sqrt() + eps);
    };
    for (std::size_t l = 0; l < model.trunk().size(); ++l) {
      update(model.trunk()[l].weights, g.trunk[l].weights, m_.trunk[l].weights, v_.trunk[l].weights);
      update(model.trunk()[l].bias, g.trunk[l].bias, m_.trunk[l].bias, v_.trunk[l].bias);
    }
    for (std::size_t k = 0; k < model.branches().size(); ++k)
      for (std::size_t l = 0; l < model.branches()[k].size(); ++l) {
        auto& p = model.branches()[k][l];
        update(p.weights, g.branches[k][l].weights, m_.branches[k][l].weights, v_.branches[k][l].weights);
        update(p.bias, g.branches[k][l].bias, m_.branches[k][l].bias, v_.branches[k][l].bias);
      }
  }

 private:
  TrainHyper hyper_;
  typename Model::Gradients m_, v_;
  long t_ = 0;
};

/// Mean SCCE (no penalty) and exact-vector accuracy of `model` on tensors.
template <typename Scalar>
std::pair<double, double> evaluate_loss_accuracy(const Mlp<Scalar>& model,
                                                 const TrainingTensors& data,
                                                 Eigen::Index chunk = 2000) {
  const Eigen::Index n = data.delta.cols();
  const int nb = model.config().num_branches();
  double loss = 0.0;
  std::size_t correct = 0;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    const auto probs = model.forward_batch(data.delta.middleCols(start, len));
    for (Eigen::Index c = 0; c < len; ++c) {
      bool all = true;
      for (int k = 0; k < nb; ++k) {
        const int y = data.labels(k, start + c);
        loss -= std::log(std::max(static_cast<double>(probs[k](y, c)), 1e-12));
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < probs[k].rows(); ++r)
          if (probs[k](r, c) > probs[k](best, c)) best = r;
        all = all && best == y;
      }
      correct += all ? 1 : 0;
    }
  }
  return {loss / static_cast<double>(n * nb), 100.0 * static_cast<double>(correct) / static_cast<double>(n)};
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/**
 * Mini-batch Adam on the regularised SCCE. Samples are reshuffled every epoch
 * from `seed`; the returned model is the one with the lowest validation loss.
 * Single-threaded, so the result is bit-reproducible for a given seed.
 */
template <typename Scalar>
Mlp<Scalar> train(Mlp<Scalar> model, const TrainingTensors& train_set, const TrainingTensors& val_set,
                  const TrainHyper& hyper, std::uint64_t seed, std::vector<EpochRecord>* history = nullptr,
                  const EpochCallback& on_epoch = {}) {
  if (hyper.epochs == 0) return model;
  if (hyper.epochs < 0 || hyper.batch_size < 1) throw InvalidArgument("train: epochs >= 0 and batch >= 1 required");
  const auto& cfg = model.config();
  if (train_set.delta.rows() != cfg.input_dim || val_set.delta.rows() != cfg.input_dim ||
      train_set.labels.rows() != cfg.num_branches() || val_set.labels.rows() != cfg.num_branches())
    throw ConfigMismatch("train: dataset dimensions do not match the model");
  if (train_set.delta.cols() == 0 || val_set.delta.cols() == 0)
    throw InvalidArgument("train: empty dataset");

  FlushDenormals ftz;
  using Matrix = MatrixX<Scalar>;
  const Matrix encoded = model.encode(train_set.delta);
  const Eigen::Index n = encoded.cols();
  AdamOptimizer<Scalar> adam(model, hyper);
  auto grads = model.zero_gradients();
  Mlp<Scalar> best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Matrix xb;
  Eigen::MatrixXi yb;
  const int start_epoch = model.metadata().epochs_seen;

  for (int e = 0; e < hyper.epochs; ++e) {
    const int epoch = start_epoch + e;
    Rng shuffle_rng(derive_seed(seed, Stream::kShuffle, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng dropout_rng(derive_seed(seed, Stream::kDropout, static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n; start += hyper.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(hyper.batch_size, n - start);
      xb.resize(encoded.rows(), len);
      yb.resize(train_set.labels.rows(), len);
      for (Eigen::Index c = 0; c < len; ++c) {
        xb.col(c) = encoded.col(order[start + c]);
        yb.col(c) = train_set.labels.col(order[start + c]);
      }
      const auto tape = model.forward_tape(xb, Mode::kTrain, &dropout_rng);
      loss_sum += model.backprop(tape, yb, grads) * static_cast<double>(len);
      seen += len;
      adam.step(model, grads);
    }
    const auto [val_loss, val_acc] = evaluate_loss_accuracy(model, val_set);
    EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(seen), val_loss, val_acc};
    model.metadata().epochs_seen = epoch + 1;
    model.metadata().final_train_loss = rec.train_loss;
    model.metadata().final_val_loss = rec.val_loss;
    if (val_loss < best_loss) {
      best_loss = val_loss;
      best = model;
      best.metadata().best_epoch = epoch + 1;
      best.metadata().best_val_loss = val_loss;
    }
    if (history) history->push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  best.metadata().epochs_seen = model.metadata().epochs_seen;
  best.metadata().final_train_loss = model.metadata().final_train_loss;
  best.metadata().final_val_loss = model.metadata().final_val_loss;
  return best;
}

// ----------------------------------------------------------------------------
// Persistence
// ----------------------------------------------------------------------------

inline nlohmann::json mlp_config_to_json(const MlpConfig& c) {
  return {{"input_dim", c.input_dim},
          {"width", c.width},
          {"shared_layers", c.shared_layers},
          {"branch_hidden_layers", c.branch_hidden_layers},
          {"branch_q", c.branch_q},
          {"dropout_rate", c.dropout_rate},
          {"l2_coeff", c.l2_coeff},
          {"wavelength_m", c.wavelength},
          {"input_scale", c.input_scale},
          {"input_encoding", to_string(c.encoding)}};
}

inline MlpConfig mlp_config_from_json(const nlohmann::json& j) {
  MlpConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.width = j.at("width").get<int>();
  c.shared_layers = j.at("shared_layers").get<int>();
  c.branch_hidden_layers = j.at("branch_hidden_layers").get<int>();
  c.branch_q = j.at("branch_q").get<std::vector<int>>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.l2_coeff = j.at("l2_coeff").get<double>();
  c.wavelength = j.at("wavelength_m").get<double>();
  c.input_scale = j.at("input_scale").get<bool>();
  c.encoding = input_encoding_from_string(j.at("input_encoding").get<std::string>());
  c.validate();
  return c;
}

template <typename Scalar>
nlohmann::json model_to_json(const Mlp<Scalar>& model) {
  nlohmann::json layers = nlohmann::json::array();
  model.for_each_layer([&](const DenseLayer<Scalar>& l) {
    std::vector<double> w;
    w.reserve(l.weights.size());
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.push_back(static_cast<double>(l.weights(r, c)));
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"rows", l.rows()}, {"cols", l.cols()}, {"weights", w}, {"bias", b}});
  });
  const auto& md = model.metadata();
  auto num_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  return {{"format_version", kModelFormatVersion},
          {"mlp_config", mlp_config_to_json(model.config())},
          {"layers", layers},
          {"metadata",
           {{"epochs_seen", md.epochs_seen},
            {"best_epoch", md.best_epoch},
            {"best_val_loss", num_or_null(md.best_val_loss)},
            {"final_train_loss", num_or_null(md.final_train_loss)},
            {"final_val_loss", num_or_null(md.final_val_loss)}}}};
}

template <typename Scalar>
Mlp<Scalar> model_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw VersionMismatch("model: unsupported format_version " + std::to_string(version));
    Mlp<Scalar> model(mlp_config_from_json(j.at("mlp_config")));
    const auto& layers = j.at("layers");
    if (layers.size() != model.num_layers())
      throw SchemaError("model: expected " + std::to_string(model.num_layers()) + " layers, found " +
                        std::to_string(layers.size()));
    std::size_t idx = 0;
    model.for_each_layer([&](DenseLayer<Scalar>& l) {
      const auto& jl = layers[idx];
      const int rows = jl.at("rows").get<int>();
      const int cols = jl.at("cols").get<int>();
      if (rows != l.rows() || cols != l.cols())
        throw SchemaError("model: layer " + std::to_string(idx) + " is " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", architecture requires " + std::to_string(l.rows()) +
                          "x" + std::to_string(l.cols()));
      const auto w = jl.at("weights").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (w.size() != static_cast<std::size_t>(rows) * cols || b.size() != static_cast<std::size_t>(rows))
        throw SchemaError("model: layer " + std::to_string(idx) + " has wrong weight/bias count");
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) l.weights(r, c) = static_cast<Scalar>(w[static_cast<std::size_t>(r) * cols + c]);
      for (int r = 0; r < rows; ++r) l.bias(r) = static_cast<Scalar>(b[r]);
      ++idx;
    });
    if (j.contains("metadata")) {
      const auto& m = j["metadata"];
      auto num = [&](const char* key) {
        return m.contains(key) && m[key].is_number() ? m[key].get<double>()
                                                     : std::numeric_limits<double>::quiet_NaN();
      };
      model.metadata().epochs_seen = m.value("epochs_seen", 0);
      model.metadata().best_epoch = m.value("best_epoch", -1);
      model.metadata().best_val_loss = num("best_val_loss");
      model.metadata().final_train_loss = num("final_train_loss");
      model.metadata().final_val_loss = num("final_val_loss");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw SchemaError(std::string("model: ") + e.what());
  }
}

template <typename Scalar>
void save_model(const Mlp<Scalar>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_model: cannot open " + path.string());
  out << model_to_json(model).dump() << '\n';
  if (!out) throw IoError("save_model: write failed for " + path.string());
}

template <typename Scalar = float>
Mlp<Scalar> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_model: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("load_model: ") + e.what());
  }
  return model_from_json<Scalar>(j);
}

}  // namespace phasefix
