// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "adaptmerge/adapter.hpp"
#include "adaptmerge/align.hpp"
#include "adaptmerge/linalg.hpp"

namespace adaptmerge {

// SplitMix64 with the standard constants. uniform() takes the top 53 bits of
// one draw; gaussian() consumes two consecutive uniforms u1, u2 and returns
// sqrt(-2 ln(1 - u1)) * cos(2 pi u2) (Box-Muller, cosine branch only).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  double uniform();
  double gaussian();

 private:
  std::uint64_t state_;
};

// Independent seed for sub-stream `stream` of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Weights ~ N(0, 1/d), biases zero. Draw order per layer: w_down row-major,
// then w_up row-major.
AdapterStack gen_adapter(const AdapterConfig& cfg, std::uint64_t seed);

// Standard normal entries, layer after layer, row-major.
ProbeBatch gen_probe(std::size_t d, std::size_t n, std::size_t layers, std::uint64_t seed);

// Frozen stand-in for a pretrained network: block l maps h to relu(B_l h),
// the adapter at layer l follows block l, and a fixed linear head reads the
// final hidden state.
struct Backbone {
  std::vector<Matrix> blocks;  // d x d each
  Vector head;                 // length d

  friend bool operator==(const Backbone&, const Backbone&) = default;
};

// Blocks ~ N(0, 2/d), head ~ N(0, 1/d).
Backbone gen_backbone(std::size_t d, std::size_t layers, std::uint64_t seed);

// Frozen backbone features with every adapter removed, n x d.
Matrix backbone_features(const Backbone& backbone, const Matrix& x);

struct SyntheticTask {
  std::string track_id;
  std::string task_id;
  Matrix rotation;      // d x d orthogonal, shared by every task of a track
  Matrix perturbation;  // d x d, Frobenius norm = perturbation_scale * ||rotation||
  Vector label_rule;    // y = sign(label_rule . (rotation + perturbation) (f(x) - center))
  // Representation f the rule is defined in; empty means f(x) = x.
  Backbone representation;
  Vector center;  // mean of f over a reference sample, zero when f(x) = x
  Matrix train_x;
  Vector train_y;
  Matrix test_x;
  Vector test_y;

  Matrix transform() const { return add(rotation, perturbation); }
};

struct TrackOptions {
  std::size_t train_samples = 512;
  std::size_t test_samples = 1024;
  double perturbation_scale = 0.1;
  std::size_t center_samples = 4096;
};

// n_tasks tasks sharing one rotation drawn from `seed`. With a
// representation, labels are linear in the frozen backbone's features rather
// than in the raw inputs.
std::vector<SyntheticTask> gen_track(const std::string& track_id, std::size_t n_tasks, std::size_t d,
                                     std::uint64_t seed, const TrackOptions& options = {},
                                     const Backbone* representation = nullptr);

// Labels for arbitrary inputs under a task's rule.
Vector label(const SyntheticTask& task, const Matrix& x);

Vector model_logits(const Backbone& backbone, const AdapterStack& stack, const Matrix& x);

// Hidden states entering each adapter when every adapter is removed; usable
// as an activation probe shared by all adapters.
ProbeBatch backbone_probe(const Backbone& backbone, const Matrix& x);

struct LossAndGrad {
  double loss = 0.0;
  AdapterStack grad;  // same shapes as the adapter stack
};

// Mean logistic loss log(1 + exp(-y z)) and its gradient w.r.t. every adapter
// tensor. Labels are +1 / -1.
LossAndGrad loss_and_grad(const Backbone& backbone, const AdapterStack& stack, const Matrix& x, const Vector& y);

double logistic_loss(const Backbone& backbone, const AdapterStack& stack, const Matrix& x, const Vector& y);

struct TrainConfig {
  std::size_t steps = 300;
  double lr = 0.5;
  std::uint64_t seed = 0;  // reserved; full-batch descent draws no randomness
};

struct TrainResult {
  AdapterStack stack;
  std::vector<double> loss_curve;  // loss before each step, plus the final loss
};

// Full-batch gradient descent on the adapter only. Throws
// TrainingDivergedError if the loss becomes non-finite.
TrainResult train_adapter(const Backbone& backbone, const AdapterStack& init, const Matrix& x, const Vector& y,
                          const TrainConfig& cfg);
TrainResult train_adapter(const SyntheticTask& task, const Backbone& backbone, const AdapterStack& init,
                          const TrainConfig& cfg);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate(const Backbone& backbone, const AdapterStack& stack, const Matrix& x, const Vector& y);

// Loss and accuracy on the task's test split without any training.
EvalResult eval_zero_shot(const SyntheticTask& task, const Backbone& backbone, const AdapterStack& stack);

// First k examples of each class from the training split, in split order.
void few_shot_split(const SyntheticTask& task, std::size_t k, Matrix& x, Vector& y);

}  // namespace adaptmerge
