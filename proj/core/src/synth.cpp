// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/synth.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "adaptmerge/errors.hpp"

namespace adaptmerge {

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  Rng mix(seed ^ (stream * 0xD1B54A32D192ED03ULL));
  mix.next_u64();
  return mix.next_u64();
}

namespace {

void fill_gaussian(Rng& rng, std::span<double> xs, double scale) {
  for (double& x : xs) x = scale * rng.gaussian();
}

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  fill_gaussian(rng, m.data(), scale);
  return m;
}

// Modified Gram-Schmidt on the rows.
Matrix orthonormalize_rows(Matrix a) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ri = a.row(i);
    for (std::size_t k = 0; k < i; ++k) {
      auto rk = a.row(k);
      double dot = 0.0;
      for (std::size_t j = 0; j < ri.size(); ++j) dot += ri[j] * rk[j];
      for (std::size_t j = 0; j < ri.size(); ++j) ri[j] -= dot * rk[j];
    }
    double norm = 0.0;
    for (double x : ri) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : ri) x /= norm;
  }
  return a;
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

struct LayerCache {
  Matrix pre_block;  // P = H B^T
  Matrix input;      // Q = relu(P), the adapter input
  Matrix preact;     // U = Q W_down^T + b_down
  Matrix act;        // S = act(U)
};

struct ForwardPass {
  std::vector<LayerCache> layers;
  Matrix hidden;  // final hidden state, n x d
  Vector logits;
};

void check_model(const Backbone& backbone, const AdapterStack& stack, const Matrix& x) {
  stack.validate();
  if (backbone.blocks.size() != stack.config.layers) {
    throw ConfigError("backbone has " + std::to_string(backbone.blocks.size()) + " blocks, adapter stack has " +
                      std::to_string(stack.config.layers) + " layers");
  }
  if (backbone.head.size() != stack.config.d || x.cols() != stack.config.d) {
    throw ShapeError("backbone, adapter and inputs disagree on d");
  }
}

ForwardPass forward(const Backbone& backbone, const AdapterStack& stack, const Matrix& x, bool keep_cache) {
  const AdapterConfig& cfg = stack.config;
  ForwardPass fp;
  Matrix h = x;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const AdapterLayer& layer = stack.layers[l];
    LayerCache c;
    c.pre_block = matmul(h, transpose(backbone.blocks[l]));
    c.input = c.pre_block;
    for (double& v : c.input.data()) v = relu(v);
    c.preact = matmul(c.input, transpose(layer.w_down));
    for (std::size_t s = 0; s < c.preact.rows(); ++s) {
      auto r = c.preact.row(s);
      for (std::size_t p = 0; p < r.size(); ++p) r[p] += layer.b_down[p];
    }
    c.act = c.preact;
    for (double& v : c.act.data()) v = activate(cfg.nonlinearity, v);
    h = matmul(c.act, transpose(layer.w_up));
    for (std::size_t s = 0; s < h.rows(); ++s) {
      auto o = h.row(s);
      auto in = c.input.row(s);
      for (std::size_t k = 0; k < o.size(); ++k) o[k] = in[k] + (o[k] + layer.b_up[k]);
    }
    if (keep_cache) fp.layers.push_back(std::move(c));
  }
  fp.logits = matvec(h, backbone.head);
  fp.hidden = std::move(h);
  return fp;
}

// log(1 + exp(t)) without overflow.
double softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double mean_loss(const Vector& logits, const Vector& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += softplus(-y[i] * logits[i]);
  return s / static_cast<double>(y.size());
}

void check_labels(const Matrix& x, const Vector& y) {
  if (x.rows() != y.size()) throw ShapeError("inputs and labels have different lengths");
  if (y.empty()) throw ShapeError("empty training set");
}

}  // namespace

AdapterStack gen_adapter(const AdapterConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  AdapterStack s = AdapterStack::zeros(cfg);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  for (auto& layer : s.layers) {
    fill_gaussian(rng, layer.w_down.data(), scale);
    fill_gaussian(rng, layer.w_up.data(), scale);
  }
  s.metadata.name = "random-" + std::to_string(seed);
  return s;
}

ProbeBatch gen_probe(std::size_t d, std::size_t n, std::size_t layers, std::uint64_t seed) {
  ProbeBatch p;
  p.n = n;
  p.d = d;
  Rng rng(seed);
  for (std::size_t l = 0; l < layers; ++l) p.layers.push_back(gaussian_matrix(rng, n, d, 1.0));
  p.validate();
  return p;
}

Matrix backbone_features(const Backbone& backbone, const Matrix& x) {
  Matrix h = x;
  for (const auto& block : backbone.blocks) {
    h = matmul(h, transpose(block));
    for (double& v : h.data()) v = relu(v);
  }
  return h;
}

Vector label(const SyntheticTask& task, const Matrix& x) {
  const Matrix m = task.transform();
  // Boundary normal in representation space: (rotation + perturbation)^T label_rule.
  const Vector normal = matvec(transpose(m), task.label_rule);
  const Matrix f = task.representation.blocks.empty() ? x : backbone_features(task.representation, x);
  Vector score = matvec(f, normal);
  const double offset = std::inner_product(task.center.begin(), task.center.end(), normal.begin(), 0.0);
  Vector y(score.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = score[i] - offset >= 0.0 ? 1.0 : -1.0;
  return y;
}

std::vector<SyntheticTask> gen_track(const std::string& track_id, std::size_t n_tasks, std::size_t d,
                                     std::uint64_t seed, const TrackOptions& options,
                                     const Backbone* representation) {
  if (n_tasks == 0) throw ConfigError("gen_track needs at least one task");
  if (d == 0) throw ConfigError("gen_track needs d >= 1");
  if (representation != nullptr && representation->head.size() != d) {
    throw ShapeError("gen_track: representation width does not match d");
  }
  Rng track_rng(derive_seed(seed, 0));
  const Matrix rotation = orthonormalize_rows(gaussian_matrix(track_rng, d, d, 1.0));
  const double rotation_norm = frobenius_norm(rotation);
  Vector rule(d, 0.0);
  rule[0] = 1.0;
  Vector center(d, 0.0);
  if (representation != nullptr && options.center_samples > 0) {
    center = col_sums(backbone_features(*representation, gaussian_matrix(track_rng, options.center_samples, d, 1.0)));
    for (double& c : center) c /= static_cast<double>(options.center_samples);
  }

  std::vector<SyntheticTask> tasks;
  for (std::size_t k = 0; k < n_tasks; ++k) {
    Rng rng(derive_seed(seed, k + 1));
    SyntheticTask t;
    t.track_id = track_id;
    t.task_id = track_id + "/" + std::to_string(k);
    t.rotation = rotation;
    Matrix p = gaussian_matrix(rng, d, d, 1.0);
    const double pn = frobenius_norm(p);
    t.perturbation = pn > 0.0 ? scale(p, options.perturbation_scale * rotation_norm / pn) : p;
    t.label_rule = rule;
    if (representation != nullptr) t.representation = *representation;
    t.center = center;
    t.train_x = gaussian_matrix(rng, options.train_samples, d, 1.0);
    t.test_x = gaussian_matrix(rng, options.test_samples, d, 1.0);
    t.train_y = label(t, t.train_x);
    t.test_y = label(t, t.test_x);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

Backbone gen_backbone(std::size_t d, std::size_t layers, std::uint64_t seed) {
  Rng rng(seed);
  Backbone b;
  const double block_scale = std::sqrt(2.0 / static_cast<double>(d));
  for (std::size_t l = 0; l < layers; ++l) b.blocks.push_back(gaussian_matrix(rng, d, d, block_scale));
  b.head.resize(d);
  fill_gaussian(rng, b.head, 1.0 / std::sqrt(static_cast<double>(d)));
  return b;
}

Vector model_logits(const Backbone& backbone, const AdapterStack& stack, const Matrix& x) {
  check_model(backbone, stack, x);
  return forward(backbone, stack, x, false).logits;
}

ProbeBatch backbone_probe(const Backbone& backbone, const Matrix& x) {
  if (backbone.blocks.empty()) throw ConfigError("backbone has no blocks");
  ProbeBatch p;
  p.n = x.rows();
  p.d = x.cols();
  Matrix h = x;
  for (const auto& block : backbone.blocks) {
    h = matmul(h, transpose(block));
    for (double& v : h.data()) v = relu(v);
    p.layers.push_back(h);
  }
  p.validate();
  return p;
}

double logistic_loss(const Backbone& backbone, const AdapterStack& stack, const Matrix& x, const Vector& y) {
  check_labels(x, y);
  return mean_loss(model_logits(backbone, stack, x), y);
}

LossAndGrad loss_and_grad(const Backbone& backbone, const AdapterStack& stack, const Matrix& x, const Vector& y) {
  check_model(backbone, stack, x);
  check_labels(x, y);
  const AdapterConfig& cfg = stack.config;
  const std::size_t n = x.rows();
  const ForwardPass fp = forward(backbone, stack, x, true);

  LossAndGrad out;
  out.loss = mean_loss(fp.logits, y);
  out.grad = AdapterStack::zeros(cfg);
  out.grad.metadata = stack.metadata;

  // dL/dh_L, one row per sample.
  Matrix g(n, cfg.d);
  for (std::size_t s = 0; s < n; ++s) {
    const double dz = -y[s] * sigmoid(-y[s] * fp.logits[s]) / static_cast<double>(n);
    auto r = g.row(s);
    for (std::size_t k = 0; k < cfg.d; ++k) r[k] = dz * backbone.head[k];
  }

  for (std::size_t l = cfg.layers; l-- > 0;) {
    const LayerCache& c = fp.layers[l];
    const AdapterLayer& layer = stack.layers[l];
    AdapterLayer& grad = out.grad.layers[l];

    grad.b_up = col_sums(g);
    grad.w_up = matmul(transpose(g), c.act);
    Matrix du = matmul(g, layer.w_up);
    for (std::size_t s = 0; s < n; ++s) {
      auto r = du.row(s);
      auto u = c.preact.row(s);
      for (std::size_t p = 0; p < r.size(); ++p) r[p] *= activate_derivative(cfg.nonlinearity, u[p]);
    }
    grad.w_down = matmul(transpose(du), c.input);
    grad.b_down = col_sums(du);

    Matrix dq = add(g, matmul(du, layer.w_down));
    for (std::size_t s = 0; s < n; ++s) {
      auto r = dq.row(s);
      auto p = c.pre_block.row(s);
      for (std::size_t k = 0; k < r.size(); ++k) r[k] = p[k] > 0.0 ? r[k] : 0.0;
    }
    if (l > 0) g = matmul(dq, backbone.blocks[l]);
  }
  return out;
}

TrainResult train_adapter(const Backbone& backbone, const AdapterStack& init, const Matrix& x, const Vector& y,
                          const TrainConfig& cfg) {
  TrainResult result;
  result.stack = init;
  result.loss_curve.reserve(cfg.steps + 1);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    LossAndGrad lg = loss_and_grad(backbone, result.stack, x, y);
    if (!std::isfinite(lg.loss)) {
      throw TrainingDivergedError("training diverged at step " + std::to_string(step));
    }
    result.loss_curve.push_back(lg.loss);
    if (cfg.lr == 0.0) continue;
    for (std::size_t l = 0; l < result.stack.layers.size(); ++l) {
      AdapterLayer& w = result.stack.layers[l];
      const AdapterLayer& gr = lg.grad.layers[l];
      auto step_tensor = [&](std::span<double> dst, std::span<const double> src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= cfg.lr * src[i];
      };
      step_tensor(w.w_down.data(), gr.w_down.data());
      step_tensor(w.b_down, gr.b_down);
      step_tensor(w.w_up.data(), gr.w_up.data());
      step_tensor(w.b_up, gr.b_up);
    }
  }
  const double final_loss = logistic_loss(backbone, result.stack, x, y);
  if (!std::isfinite(final_loss)) throw TrainingDivergedError("training diverged at the final step");
  result.loss_curve.push_back(final_loss);
  return result;
}

TrainResult train_adapter(const SyntheticTask& task, const Backbone& backbone, const AdapterStack& init,
                          const TrainConfig& cfg) {
  return train_adapter(backbone, init, task.train_x, task.train_y, cfg);
}

EvalResult evaluate(const Backbone& backbone, const AdapterStack& stack, const Matrix& x, const Vector& y) {
  check_labels(x, y);
  const Vector z = model_logits(backbone, stack, x);
  EvalResult r;
  r.loss = mean_loss(z, y);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if ((z[i] >= 0.0 ? 1.0 : -1.0) == y[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(y.size());
  return r;
}

EvalResult eval_zero_shot(const SyntheticTask& task, const Backbone& backbone, const AdapterStack& stack) {
  return evaluate(backbone, stack, task.test_x, task.test_y);
}

void few_shot_split(const SyntheticTask& task, std::size_t k, Matrix& x, Vector& y) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < task.train_y.size(); ++i) {
    auto& bucket = task.train_y[i] > 0.0 ? pos : neg;
    if (bucket.size() < k) bucket.push_back(i);
  }
  if (pos.size() < k || neg.size() < k) {
    throw ConfigError("task " + task.task_id + " has fewer than " + std::to_string(k) + " examples of some class");
  }
  x = Matrix(2 * k, task.train_x.cols());
  y.assign(2 * k, 0.0);
  // Interleave classes so the split is order-stable.
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      const std::size_t src = c == 0 ? pos[i] : neg[i];
      const std::size_t dst = 2 * i + c;
      auto from = task.train_x.row(src);
      std::copy(from.begin(), from.end(), x.row(dst).begin());
      y[dst] = task.train_y[src];
    }
  }
}

}  // namespace adaptmerge
