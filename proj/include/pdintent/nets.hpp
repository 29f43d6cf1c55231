#pragma once

// Gradient-trained softmax classifiers. Each net keeps all of its parameters
// in one flat vector so optimizers and gradient checks can treat them alike.

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pdintent/datagen.hpp"

namespace pdintent {

/// Column-per-sample design matrix with class indices.
struct FlatBatch {
  Eigen::MatrixXd x;  // d x n
  std::vector<int> y;
};

/// One 5 x n matrix per round; all sequences in a batch share their length.
struct SeqBatch {
  std::vector<Eigen::MatrixXd> steps;
  std::vector<int> y;
};

FlatBatch make_flat_batch(std::span<const Sample> samples, std::span<const std::size_t> idx,
                          std::span<const int> class_of);
SeqBatch make_seq_batch(std::span<const Sample> samples, std::span<const std::size_t> idx,
                        std::span<const int> class_of);

/// Numerically stable column-wise softmax.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits);

/// logits = W x + b.
class LogisticNet {
 public:
  LogisticNet(int inputs, int classes, double l2);
  void init(Rng& rng);
  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
  /// Mean cross-entropy plus 0.5 * l2 * |W|^2. Fills grad when non-null.
  double loss(const FlatBatch& batch, std::vector<double>* grad) const;

  int inputs, classes;
  double l2;
  std::vector<double> params;
};

/// logits = W2 tanh(W1 x + b1) + b2.
class FeedforwardNet {
 public:
  FeedforwardNet(int inputs, int hidden, int classes, double l2);
  void init(Rng& rng);
  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
  double loss(const FlatBatch& batch, std::vector<double>* grad) const;

  int inputs, hidden, classes;
  double l2;
  std::vector<double> params;
};

/// Single LSTM layer; the final hidden state feeds a softmax head.
class LstmNet {
 public:
  LstmNet(int inputs, int hidden, int classes, double l2);
  void init(Rng& rng);
  Eigen::MatrixXd logits(std::span<const Eigen::MatrixXd> steps) const;
  /// Backpropagation through time over the whole sequence.
  double loss(const SeqBatch& batch, std::vector<double>* grad) const;

  int inputs, hidden, classes;
  double l2;
  std::vector<double> params;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(std::size_t n, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::vector<double>& params, const std::vector<double>& grad);

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace pdintent
