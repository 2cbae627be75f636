// Copyright 2026 The Unpose Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "unpose/error.hpp"
#include "unpose/features.hpp"
#include "unpose/matrix.hpp"
#include "unpose/random.hpp"

namespace unpose {

inline constexpr std::size_t kBottleneckDim = 8;

// Fully connected layer; weights are stored input-major (in x out).
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> biases;
  bool relu = false;

  double& w(std::size_t i, std::size_t o) { return weights[i * out + o]; }
  double w(std::size_t i, std::size_t o) const { return weights[i * out + o]; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Encoder input -> 64 -> 32 -> 16 -> 8 and decoder 8 -> 32 -> input.
/// Hidden layers use ReLU; the bottleneck and the reconstruction are linear.
struct AutoencoderModel {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;
  // Per-feature input standardization, fitted on the training corpus.
  // Empty means identity.
  std::vector<double> input_mean;
  std::vector<double> input_scale;
  std::uint64_t config_fingerprint = 0;

  std::size_t input_dim() const { return encoder.empty() ? 0 : encoder.front().in; }

  std::vector<std::size_t> encoder_dims() const {
    std::vector<std::size_t> dims{input_dim()};
    for (const auto& l : encoder) dims.push_back(l.out);
    return dims;
  }
  std::vector<std::size_t> decoder_dims() const {
    std::vector<std::size_t> dims{decoder.empty() ? 0 : decoder.front().in};
    for (const auto& l : decoder) dims.push_back(l.out);
    return dims;
  }

  // Flat view over every parameter vector, encoder first.
  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& l : encoder) { fn(l.weights); fn(l.biases); }
    for (auto& l : decoder) { fn(l.weights); fn(l.biases); }
  }
  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    for (const auto& l : encoder) { fn(l.weights); fn(l.biases); }
    for (const auto& l : decoder) { fn(l.weights); fn(l.biases); }
  }

  friend bool operator==(const AutoencoderModel&, const AutoencoderModel&) = default;
};

struct AutoencoderShape {
  std::vector<std::size_t> encoder_hidden{64, 32, 16};
  std::vector<std::size_t> decoder_hidden{32};
};

struct TrainingHyperparams {
  std::size_t batch_size = 2048;
  double learning_rate = 0.01;
  double final_learning_rate = 0.001;
  double weight_decay = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t epochs = 50;
  double contrastive_temperature = 0.5;
  double contrastive_weight = 1.0;
  double jitter_sigma = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 2) throw Error(ErrorKind::kPrecondition, "batch_size must be >= 2");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::kPrecondition, "learning_rate must be > 0");
    if (!(contrastive_temperature > 0.0)) {
      throw Error(ErrorKind::kPrecondition, "contrastive temperature must be > 0");
    }
  }
};

struct ReducedEmbedding {
  std::string image_id;
  std::string product_id;
  std::vector<double> vector;
  bool is_no_pose = false;

  friend bool operator==(const ReducedEmbedding&, const ReducedEmbedding&) = default;
};

inline AutoencoderModel init_autoencoder(std::size_t input_dim, std::uint64_t seed,
                                         const AutoencoderShape& shape = {}) {
  if (input_dim <= kBottleneckDim) {
    throw Error(ErrorKind::kPrecondition, "autoencoder input dimension " + std::to_string(input_dim) +
                                              " does not exceed the bottleneck width 8");
  }
  Rng rng(seed);
  auto make = [&](std::size_t in, std::size_t out, bool relu) {
    DenseLayer l{in, out, std::vector<double>(in * out), std::vector<double>(out), relu};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : l.weights) w = rng.uniform(-bound, bound);
    for (double& b : l.biases) b = rng.uniform(-bound, bound);
    return l;
  };
  AutoencoderModel model;
  std::size_t prev = input_dim;
  for (std::size_t width : shape.encoder_hidden) {
    model.encoder.push_back(make(prev, width, true));
    prev = width;
  }
  model.encoder.push_back(make(prev, kBottleneckDim, false));
  prev = kBottleneckDim;
  for (std::size_t width : shape.decoder_hidden) {
    model.decoder.push_back(make(prev, width, true));
    prev = width;
  }
  model.decoder.push_back(make(prev, input_dim, false));
  return model;
}

namespace detail {

inline Matrix layer_forward(const DenseLayer& layer, const Matrix& x) {
  Matrix y(x.rows(), layer.out);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto out = y.row(r);
    std::copy(layer.biases.begin(), layer.biases.end(), out.begin());
    for (std::size_t i = 0; i < layer.in; ++i) {
      const double xi = in[i];
      if (xi == 0.0) continue;
      const double* w = layer.weights.data() + i * layer.out;
      for (std::size_t o = 0; o < layer.out; ++o) out[o] += xi * w[o];
    }
    if (layer.relu) {
      for (double& v : out) v = std::max(v, 0.0);
    }
  }
  return y;
}

// Activations of every layer; acts[0] is the input.
struct ForwardTrace {
  std::vector<Matrix> acts;
  const Matrix& output() const { return acts.back(); }
};

inline ForwardTrace stack_forward(const std::vector<DenseLayer>& layers, const Matrix& x,
                                  const char* stack_name) {
  ForwardTrace trace;
  trace.acts.push_back(x);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    trace.acts.push_back(layer_forward(layers[l], trace.acts.back()));
    if (!all_finite(trace.acts.back().data())) {
      throw Error(ErrorKind::kNonFinite, std::string("non-finite activations in ") + stack_name +
                                             " layer " + std::to_string(l));
    }
  }
  return trace;
}

// Backpropagates dout through the stack, accumulating into grads; returns
// the gradient with respect to the stack input.
inline Matrix stack_backward(const std::vector<DenseLayer>& layers, const ForwardTrace& trace,
                             Matrix dout, std::vector<DenseLayer>& grads) {
  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayer& layer = layers[l];
    DenseLayer& g = grads[l];
    const Matrix& in = trace.acts[l];
    const Matrix& out = trace.acts[l + 1];
    if (layer.relu) {
      for (std::size_t k = 0; k < dout.data().size(); ++k) {
        if (out.data()[k] <= 0.0) dout.data()[k] = 0.0;
      }
    }
    Matrix din(in.rows(), layer.in);
    for (std::size_t r = 0; r < in.rows(); ++r) {
      auto x = in.row(r);
      auto d = dout.row(r);
      auto dx = din.row(r);
      for (std::size_t o = 0; o < layer.out; ++o) g.biases[o] += d[o];
      for (std::size_t i = 0; i < layer.in; ++i) {
        const double* w = layer.weights.data() + i * layer.out;
        double* gw = g.weights.data() + i * layer.out;
        double acc = 0.0;
        for (std::size_t o = 0; o < layer.out; ++o) {
          gw[o] += x[i] * d[o];
          acc += w[o] * d[o];
        }
        dx[i] = acc;
      }
    }
    dout = std::move(din);
  }
  return dout;
}

inline std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers) {
  std::vector<DenseLayer> out;
  for (const auto& l : layers) {
    out.push_back({l.in, l.out, std::vector<double>(l.weights.size(), 0.0),
                   std::vector<double>(l.biases.size(), 0.0), l.relu});
  }
  return out;
}

// Smoothed Euclidean norm keeps the cosine similarity differentiable at 0.
inline constexpr double kNormEpsilon = 1e-12;

}  // namespace detail

/// Gradient buffers shaped like the model parameters.
struct AutoencoderGradients {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;

  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    for (const auto& l : encoder) { fn(l.weights); fn(l.biases); }
    for (const auto& l : decoder) { fn(l.weights); fn(l.biases); }
  }
};

struct LossAndGradients {
  double loss = 0.0;
  double reconstruction = 0.0;
  double contrastive = 0.0;
  AutoencoderGradients gradients;
};

namespace detail {

inline Matrix standardize(const AutoencoderModel& model, const Matrix& x) {
  if (model.input_mean.empty()) return x;
  Matrix out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      out(r, c) = (out(r, c) - model.input_mean[c]) / model.input_scale[c];
    }
  }
  return out;
}

}  // namespace detail

/// Fits mean and population standard deviation per column. Constant
/// columns get scale 1.
inline void fit_input_scaling(AutoencoderModel& model, const Matrix& corpus) {
  const std::size_t n = corpus.rows(), d = corpus.cols();
  model.input_mean.assign(d, 0.0);
  model.input_scale.assign(d, 1.0);
  if (n == 0) return;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) model.input_mean[c] += corpus(r, c);
  }
  for (double& m : model.input_mean) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = corpus(r, c) - model.input_mean[c];
      var[c] += dev * dev;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    const double sd = std::sqrt(var[c] / static_cast<double>(n));
    model.input_scale[c] = sd > 1e-8 ? sd : 1.0;
  }
}

/// Gaussian jitter used to build contrastive positives; deterministic in
/// (seed, step).
inline Matrix jitter_noise(std::size_t rows, std::size_t cols, double sigma, std::uint64_t seed,
                           std::uint64_t step) {
  Matrix noise(rows, cols);
  Rng rng = Rng::derived(seed, step);
  for (double& v : noise.data()) v = sigma * rng.gaussian();
  return noise;
}

/// Loss = mean squared reconstruction error (averaged over rows and
/// features) + weight * NT-Xent over cosine similarities of bottleneck
/// codes. Row i's positive is the code of its jittered copy; its negatives
/// are the clean codes of every other row in the batch. The batch is
/// standardized first, so reconstruction targets are standardized rows.
inline LossAndGradients loss_and_gradients(const AutoencoderModel& model, const Matrix& batch,
                                           const TrainingHyperparams& hyper, std::uint64_t step = 0) {
  const std::size_t n = batch.rows();
  const std::size_t d = batch.cols();
  if (n < 2) throw Error(ErrorKind::kPrecondition, "loss requires a batch of at least 2 rows");
  if (d != model.input_dim()) {
    throw Error(ErrorKind::kDimensionMismatch, "batch has " + std::to_string(d) +
                                                   " columns, model expects " +
                                                   std::to_string(model.input_dim()));
  }
  const double weight = hyper.contrastive_weight;
  const bool contrast = weight != 0.0;

  const Matrix input = detail::standardize(model, batch);
  Matrix stacked = input;
  if (contrast) {
    const Matrix noise = jitter_noise(n, d, hyper.jitter_sigma, hyper.seed, step);
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<double> row(input.row(r).begin(), input.row(r).end());
      for (std::size_t c = 0; c < d; ++c) row[c] += noise(r, c);
      stacked.append_row(row);
    }
  }

  LossAndGradients result;
  result.gradients.encoder = detail::zeros_like(model.encoder);
  result.gradients.decoder = detail::zeros_like(model.decoder);

  const auto enc = detail::stack_forward(model.encoder, stacked, "encoder");
  const Matrix& codes = enc.output();
  Matrix clean_codes(n, kBottleneckDim);
  std::copy_n(codes.data().begin(), n * kBottleneckDim, clean_codes.data().begin());
  const auto dec = detail::stack_forward(model.decoder, clean_codes, "decoder");
  const Matrix& recon = dec.output();

  const double scale = 1.0 / static_cast<double>(n * d);
  Matrix drecon(n, d);
  double sse = 0.0;
  for (std::size_t k = 0; k < n * d; ++k) {
    const double diff = recon.data()[k] - input.data()[k];
    sse += diff * diff;
    drecon.data()[k] = 2.0 * diff * scale;
  }
  result.reconstruction = sse * scale;

  Matrix dcodes(stacked.rows(), kBottleneckDim);
  const Matrix dclean = detail::stack_backward(model.decoder, dec, std::move(drecon),
                                               result.gradients.decoder);
  std::copy(dclean.data().begin(), dclean.data().end(), dcodes.data().begin());

  if (contrast) {
    const std::size_t m = 2 * n;
    const double tau = hyper.contrastive_temperature;
    Matrix unit(m, kBottleneckDim);
    std::vector<double> norms(m);
    for (std::size_t r = 0; r < m; ++r) {
      auto z = codes.row(r);
      double sq = 0.0;
      for (double v : z) sq += v * v;
      norms[r] = std::sqrt(sq + detail::kNormEpsilon);
      for (std::size_t c = 0; c < kBottleneckDim; ++c) unit(r, c) = z[c] / norms[r];
    }
    auto dot = [&](std::size_t a, std::size_t b) {
      double s = 0.0;
      for (std::size_t c = 0; c < kBottleneckDim; ++c) s += unit(a, c) * unit(b, c);
      return s;
    };
    Matrix dunit(m, kBottleneckDim);
    std::vector<double> logits(n);
    double total = 0.0;
    const double row_scale = weight / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      // logits[i] holds the positive; logits[j != i] the negatives.
      for (std::size_t j = 0; j < n; ++j) {
        logits[j] = (j == i ? dot(i, n + i) : dot(i, j)) / tau;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double denom = 0.0;
      for (double l : logits) denom += std::exp(l - mx);
      total += mx + std::log(denom) - logits[i];
      for (std::size_t j = 0; j < n; ++j) {
        const double p = std::exp(logits[j] - mx) / denom;
        const double g = (j == i ? p - 1.0 : p) * row_scale / tau;
        const std::size_t other = j == i ? n + i : j;
        for (std::size_t c = 0; c < kBottleneckDim; ++c) {
          dunit(i, c) += g * unit(other, c);
          dunit(other, c) += g * unit(i, c);
        }
      }
    }
    result.contrastive = total / static_cast<double>(n);
    for (std::size_t r = 0; r < m; ++r) {
      double proj = 0.0;
      for (std::size_t c = 0; c < kBottleneckDim; ++c) proj += unit(r, c) * dunit(r, c);
      for (std::size_t c = 0; c < kBottleneckDim; ++c) {
        dcodes(r, c) += (dunit(r, c) - unit(r, c) * proj) / norms[r];
      }
    }
  }

  detail::stack_backward(model.encoder, enc, std::move(dcodes), result.gradients.encoder);
  result.loss = result.reconstruction + weight * result.contrastive;
  if (!std::isfinite(result.loss)) {
    throw Error(ErrorKind::kNonFinite, std::string("non-finite loss in ") +
                                           (std::isfinite(result.reconstruction)
                                                ? "contrastive term (encoder bottleneck)"
                                                : "reconstruction term (decoder output)"));
  }
  return result;
}

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(const AutoencoderModel& model, const TrainingHyperparams& hyper) : hyper_(hyper) {
    model.for_each_param([&](const std::vector<double>& p) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    });
  }

  void step(AutoencoderModel& model, const AutoencoderGradients& grads, double lr) {
    ++t_;
    const double b1 = hyper_.beta1, b2 = hyper_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    std::vector<const std::vector<double>*> g;
    grads.for_each_param([&](const std::vector<double>& p) { g.push_back(&p); });
    std::size_t k = 0;
    model.for_each_param([&](std::vector<double>& p) {
      auto& m = m_[k];
      auto& v = v_[k];
      const auto& gk = *g[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] *= 1.0 - lr * hyper_.weight_decay;
        m[i] = b1 * m[i] + (1.0 - b1) * gk[i];
        v[i] = b2 * v[i] + (1.0 - b2) * gk[i] * gk[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + hyper_.adam_epsilon);
      }
      ++k;
    });
  }

 private:
  TrainingHyperparams hyper_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t t_ = 0;
};

// Cosine decay from learning_rate to final_learning_rate over total_steps.
inline double scheduled_learning_rate(const TrainingHyperparams& hyper, std::size_t step,
                                      std::size_t total_steps) {
  if (total_steps <= 1) return hyper.learning_rate;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return hyper.final_learning_rate + 0.5 * (hyper.learning_rate - hyper.final_learning_rate) *
                                         (1.0 + std::cos(std::numbers::pi * progress));
}

struct AutoencoderTrainResult {
  AutoencoderModel model;
  std::vector<double> loss_trace;  // one entry per epoch
};

inline AutoencoderTrainResult train_autoencoder(AutoencoderModel model, const Matrix& corpus,
                                                const TrainingHyperparams& hyper) {
  hyper.validate();
  const std::size_t n = corpus.rows();
  if (n < 2) throw Error(ErrorKind::kPrecondition, "autoencoder training needs at least 2 rows");
  if (corpus.cols() != model.input_dim()) {
    throw Error(ErrorKind::kDimensionMismatch, "corpus has " + std::to_string(corpus.cols()) +
                                                   " columns, model expects " +
                                                   std::to_string(model.input_dim()));
  }
  const std::size_t batch = std::min(hyper.batch_size, n);
  // Batch boundaries; a trailing singleton batch is folded into its predecessor.
  std::vector<std::size_t> bounds;
  for (std::size_t b = 0; b < n; b += batch) bounds.push_back(b);
  if (n - bounds.back() < 2) bounds.pop_back();
  bounds.push_back(n);
  const std::size_t batches_per_epoch = bounds.size() - 1;
  const std::size_t total_steps = batches_per_epoch * hyper.epochs;

  if (model.input_mean.empty()) fit_input_scaling(model, corpus);
  AdamW optimizer(model, hyper);
  Rng shuffle_rng = Rng::derived(hyper.seed, 0xa11ceULL);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  AutoencoderTrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      Matrix x(bounds[b + 1] - bounds[b], corpus.cols());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        auto src = corpus.row(order[bounds[b] + r]);
        std::copy(src.begin(), src.end(), x.row(r).begin());
      }
      LossAndGradients lg;
      try {
        lg = loss_and_gradients(model, x, hyper, step);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNonFinite) throw;
        throw Error(ErrorKind::kDivergence,
                    std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                        (epoch == 0 ? "; no epoch completed"
                                    : "; last good epoch " + std::to_string(epoch - 1)));
      }
      epoch_loss += lg.loss * static_cast<double>(x.rows());
      optimizer.step(model, lg.gradients, scheduled_learning_rate(hyper, step, total_steps));
      ++step;
      bool finite = true;
      model.for_each_param([&](const std::vector<double>& p) { finite = finite && all_finite(p); });
      if (!finite) {
        throw Error(ErrorKind::kDivergence,
                    "non-finite weights at epoch " + std::to_string(epoch) +
                        (epoch == 0 ? "; no epoch completed"
                                    : "; last good epoch " + std::to_string(epoch - 1)));
      }
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(n));
  }
  result.model = std::move(model);
  return result;
}

inline Matrix encode_matrix(const AutoencoderModel& model, const Matrix& x) {
  if (x.empty()) return Matrix(0, kBottleneckDim);
  if (x.cols() != model.input_dim()) {
    throw Error(ErrorKind::kDimensionMismatch, "input has " + std::to_string(x.cols()) +
                                                   " columns, encoder expects " +
                                                   std::to_string(model.input_dim()));
  }
  return detail::stack_forward(model.encoder, detail::standardize(model, x), "encoder").output();
}

inline Matrix decode_matrix(const AutoencoderModel& model, const Matrix& codes) {
  if (codes.cols() != kBottleneckDim) {
    throw Error(ErrorKind::kDimensionMismatch, "decoder expects 8-wide codes");
  }
  Matrix out = detail::stack_forward(model.decoder, codes, "decoder").output();
  if (!model.input_mean.empty()) {
    for (std::size_t r = 0; r < out.rows(); ++r) {
      for (std::size_t c = 0; c < out.cols(); ++c) {
        out(r, c) = out(r, c) * model.input_scale[c] + model.input_mean[c];
      }
    }
  }
  return out;
}

inline ReducedEmbedding encode(const AutoencoderModel& model, const PoseEmbedding& embedding) {
  Matrix x;
  x.append_row(embedding.vector);
  const Matrix z = encode_matrix(model, x);
  return {embedding.image_id, embedding.product_id,
          std::vector<double>(z.data().begin(), z.data().end()), embedding.is_no_pose};
}

}  // namespace unpose
