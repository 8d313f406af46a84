#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "weaknesslab/data_io.hpp"
#include "weaknesslab/errors.hpp"
#include "weaknesslab/rng.hpp"

// Dense ReLU MLP in -> h1 -> h2 -> out with softmax cross-entropy, written
// against 64-bit reals throughout: the reparameterisation experiments scale
// weights by factors up to 400, and the invariance claims are checked at
// tolerances float32 could not hold.

namespace weaknesslab {

struct MlpDims {
  int in = 784, h1 = 64, h2 = 8, out = 10;
  bool operator==(const MlpDims&) const = default;
};

struct MlpParams {
  Eigen::MatrixXd w1, w2, w3;  // h1 x in, h2 x h1, out x h2
  Eigen::VectorXd b1, b2, b3;

  static MlpParams zeros(const MlpDims& d) {
    MlpParams p;
    p.w1 = Eigen::MatrixXd::Zero(d.h1, d.in);
    p.b1 = Eigen::VectorXd::Zero(d.h1);
    p.w2 = Eigen::MatrixXd::Zero(d.h2, d.h1);
    p.b2 = Eigen::VectorXd::Zero(d.h2);
    p.w3 = Eigen::MatrixXd::Zero(d.out, d.h2);
    p.b3 = Eigen::VectorXd::Zero(d.out);
    return p;
  }

  MlpDims dims() const {
    return MlpDims{static_cast<int>(w1.cols()), static_cast<int>(w1.rows()),
                   static_cast<int>(w2.rows()), static_cast<int>(w3.rows())};
  }

  Eigen::Index n_params() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
  }

  // Flattening order (row-major within each block): w1, b1, w2, b2, w3, b3.
  // The checkpoint format and all HVP vectors use this order.
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd v(n_params());
    Eigen::Index off = 0;
    auto put_mat = [&](const Eigen::MatrixXd& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) v[off++] = m(r, c);
    };
    auto put_vec = [&](const Eigen::VectorXd& b) {
      for (Eigen::Index i = 0; i < b.size(); ++i) v[off++] = b[i];
    };
    put_mat(w1);
    put_vec(b1);
    put_mat(w2);
    put_vec(b2);
    put_mat(w3);
    put_vec(b3);
    return v;
  }

  static MlpParams from_flat(const MlpDims& d, const Eigen::VectorXd& v) {
    MlpParams p = zeros(d);
    Eigen::Index off = 0;
    auto get_mat = [&](Eigen::MatrixXd& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = v[off++];
    };
    auto get_vec = [&](Eigen::VectorXd& b) {
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = v[off++];
    };
    get_mat(p.w1);
    get_vec(p.b1);
    get_mat(p.w2);
    get_vec(p.b2);
    get_mat(p.w3);
    get_vec(p.b3);
    return p;
  }

  bool all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() &&
           w3.allFinite() && b3.allFinite();
  }
};

struct TrainConfig {
  int h1 = 64, h2 = 8;
  int batch_size = 64;
  double learning_rate = 0.03;
  int max_epochs = 500;
  double target_train_accuracy = 1.0;
  std::uint64_t seed = 0;
};

// Per-layer pre/post activations for a batch (rows are examples).
struct ForwardTrace {
  Eigen::MatrixXd pre1, post1, pre2, post2, logits;
};

inline ForwardTrace forward(const MlpParams& p, const Eigen::MatrixXd& x) {
  if (x.cols() != p.w1.cols()) throw ArgumentError("forward: input width mismatch");
  ForwardTrace t;
  t.pre1 = (x * p.w1.transpose()).rowwise() + p.b1.transpose();
  t.post1 = t.pre1.cwiseMax(0.0);
  t.pre2 = (t.post1 * p.w2.transpose()).rowwise() + p.b2.transpose();
  t.post2 = t.pre2.cwiseMax(0.0);
  t.logits = (t.post2 * p.w3.transpose()).rowwise() + p.b3.transpose();
  return t;
}

namespace detail {

// Row-wise softmax computed against the log-sum-exp; also returns the mean
// cross-entropy of the given labels.
inline double softmax_xent(const Eigen::MatrixXd& logits,
                           const std::vector<int>& labels, Eigen::MatrixXd* probs) {
  Eigen::Index b = logits.rows();
  probs->resize(b, logits.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    double m = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    double z = e.sum();
    probs->row(i) = e / z;
    loss -= logits(i, labels[static_cast<std::size_t>(i)]) - m - std::log(z);
  }
  return loss / static_cast<double>(b);
}

}  // namespace detail

// Mean softmax cross-entropy and its gradient by reverse accumulation.
inline std::pair<double, MlpParams> loss_and_grad(const MlpParams& p,
                                                  const Eigen::MatrixXd& x,
                                                  const std::vector<int>& y) {
  if (x.rows() == 0) throw ArgumentError("loss_and_grad: empty batch");
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw ArgumentError("loss_and_grad: batch size mismatch");
  if (!x.allFinite()) throw NumericError("loss_and_grad: non-finite inputs");

  ForwardTrace t = forward(p, x);
  Eigen::MatrixXd probs;
  double loss = detail::softmax_xent(t.logits, y, &probs);

  Eigen::Index b = x.rows();
  Eigen::MatrixXd g3 = probs;  // dL/dlogits, per example
  for (Eigen::Index i = 0; i < b; ++i) g3(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  g3 /= static_cast<double>(b);

  MlpParams grad;
  grad.w3 = g3.transpose() * t.post2;
  grad.b3 = g3.colwise().sum().transpose();
  Eigen::MatrixXd mask2 = (t.pre2.array() > 0.0).cast<double>();
  Eigen::MatrixXd g2 = (g3 * p.w3).cwiseProduct(mask2);
  grad.w2 = g2.transpose() * t.post1;
  grad.b2 = g2.colwise().sum().transpose();
  Eigen::MatrixXd mask1 = (t.pre1.array() > 0.0).cast<double>();
  Eigen::MatrixXd g1 = (g2 * p.w2).cwiseProduct(mask1);
  grad.w1 = g1.transpose() * x;
  grad.b1 = g1.colwise().sum().transpose();
  return {loss, std::move(grad)};
}

// Argmax with ties broken toward the lowest class index.
inline int predict(const MlpParams& p, const Eigen::MatrixXd& logits_row) {
  (void)p;
  int best = 0;
  for (int c = 1; c < logits_row.cols(); ++c)
    if (logits_row(0, c) > logits_row(0, best)) best = c;
  return best;
}

inline std::vector<int> predict_batch(const MlpParams& p, const Eigen::MatrixXd& x) {
  ForwardTrace t = forward(p, x);
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < t.logits.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < t.logits.cols(); ++c)
      if (t.logits(i, c) > t.logits(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

inline double accuracy(const MlpParams& p, const Eigen::MatrixXd& x,
                       const std::vector<int>& y) {
  if (x.rows() == 0) throw ArgumentError("accuracy: empty evaluation set");
  std::vector<int> pred = predict_batch(p, x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == y[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct EpochStats {
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  double achieved_train_accuracy = 0.0;
  int epochs_run = 0;
  std::uint64_t seed = 0;
  std::string init_scheme = "uniform(-a,a), a=sqrt(6/(fan_in+fan_out)); zero biases";
};

struct TrainResult {
  MlpParams params;
  TrainLog log;
};

// Gathers dataset rows (float storage) into a double matrix plus int labels.
inline std::pair<Eigen::MatrixXd, std::vector<int>> gather(
    const Dataset& d, const std::vector<std::uint32_t>& indices) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(indices.size()), d.dim());
  std::vector<int> y(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) =
        d.images.row(indices[i]).cast<double>();
    y[i] = d.labels[indices[i]];
  }
  return {std::move(x), std::move(y)};
}

inline MlpParams init_params(const MlpDims& d, SplitMix64& rng) {
  MlpParams p = MlpParams::zeros(d);
  auto fill = [&](Eigen::MatrixXd& w) {
    double a = std::sqrt(6.0 / static_cast<double>(w.cols() + w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.next_uniform(-a, a);
  };
  fill(p.w1);
  fill(p.w2);
  fill(p.w3);
  return p;
}

// Plain SGD over shuffled minibatches. Stops when training accuracy reaches
// the target (checked after each epoch) or at max_epochs. Fully determined
// by (config, data, split).
inline TrainResult train(const TrainConfig& cfg, const Dataset& data,
                         const Split& split) {
  if (split.train_indices.empty()) throw ArgumentError("train: empty training split");
  if (cfg.batch_size <= 0 || cfg.h1 <= 0 || cfg.h2 <= 0)
    throw ArgumentError("train: sizes must be positive");
  if (cfg.target_train_accuracy > 1.0)
    throw ArgumentError("train: target accuracy > 1");

  auto [x_train, y_train] = gather(data, split.train_indices);
  MlpDims dims{static_cast<int>(data.dim()), cfg.h1, cfg.h2, 10};

  SplitMix64 rng(cfg.seed);
  SplitMix64 init_rng = rng.split(1);
  SplitMix64 shuffle_rng = rng.split(2);
  MlpParams p = init_params(dims, init_rng);

  TrainResult result;
  result.log.seed = cfg.seed;
  std::size_t n = split.train_indices.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.next_below(i))]);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(stop - start), x_train.cols());
      std::vector<int> yb(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        xb.row(static_cast<Eigen::Index>(i - start)) = x_train.row(static_cast<Eigen::Index>(order[i]));
        yb[i - start] = y_train[order[i]];
      }
      auto [loss, grad] = loss_and_grad(p, xb, yb);
      if (!std::isfinite(loss)) throw TrainingError("train: loss diverged", epoch);
      epoch_loss += loss;
      ++n_batches;
      p.w1 -= cfg.learning_rate * grad.w1;
      p.b1 -= cfg.learning_rate * grad.b1;
      p.w2 -= cfg.learning_rate * grad.w2;
      p.b2 -= cfg.learning_rate * grad.b2;
      p.w3 -= cfg.learning_rate * grad.w3;
      p.b3 -= cfg.learning_rate * grad.b3;
    }
    EpochStats es;
    es.loss = epoch_loss / static_cast<double>(n_batches);
    es.train_accuracy = accuracy(p, x_train, y_train);
    result.log.epochs.push_back(es);
    result.log.epochs_run = epoch + 1;
    result.log.achieved_train_accuracy = es.train_accuracy;
    if (es.train_accuracy >= cfg.target_train_accuracy) break;
  }
  if (!p.all_finite())
    throw TrainingError("train: non-finite parameters", result.log.epochs_run);
  result.params = std::move(p);
  return result;
}

// --- checkpoint format ------------------------------------------------------
// "WLNET" | u32 version=1 | i32 dims[4] (in, h1, h2, out) | f64 arrays in
// flatten order, little-endian.

inline void save_checkpoint(const MlpParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write("WLNET", 5);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  MlpDims d = p.dims();
  std::int32_t dims[4] = {d.in, d.h1, d.h2, d.out};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  Eigen::VectorXd flat = p.flatten();
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(sizeof(double) * flat.size()));
}

inline MlpParams load_checkpoint(const std::string& path) {
  auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 25 || std::memcmp(bytes.data(), "WLNET", 5) != 0)
    throw FormatError("checkpoint magic: not a WLNET file: " + path);
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 5, 4);
  if (version != 1)
    throw FormatError("checkpoint version: unsupported " + std::to_string(version));
  std::int32_t dims[4];
  std::memcpy(dims, bytes.data() + 9, sizeof(dims));
  MlpDims d{dims[0], dims[1], dims[2], dims[3]};
  std::size_t n_params = static_cast<std::size_t>(d.h1) * d.in + d.h1 +
                         static_cast<std::size_t>(d.h2) * d.h1 + d.h2 +
                         static_cast<std::size_t>(d.out) * d.h2 + d.out;
  if (bytes.size() < 25 + sizeof(double) * n_params)
    throw FormatError("truncated checkpoint data");
  Eigen::VectorXd flat(static_cast<Eigen::Index>(n_params));
  std::memcpy(flat.data(), bytes.data() + 25, sizeof(double) * n_params);
  return MlpParams::from_flat(d, flat);
}

}  // namespace weaknesslab
