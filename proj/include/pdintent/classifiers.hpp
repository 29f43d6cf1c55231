#pragma once

// Strategy-intent classifiers: six estimator kinds behind one Model type,
// a shared training entry point, evaluation metrics and persistence.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdintent/datagen.hpp"

namespace pdintent {

enum class ClassifierKind : std::uint8_t {
  LogisticRegression,
  RandomForest,
  FeedforwardNet,
  RecurrentNet,
  PerClassHMM,
  StateFactorized,
};

inline constexpr std::array<ClassifierKind, 6> kAllKinds = {
    ClassifierKind::LogisticRegression, ClassifierKind::RandomForest, ClassifierKind::FeedforwardNet,
    ClassifierKind::RecurrentNet,       ClassifierKind::PerClassHMM,  ClassifierKind::StateFactorized};

/// Short CLI names: logistic, forest, feedforward, recurrent, hmm, factorized.
std::string_view kind_name(ClassifierKind k);
ClassifierKind kind_from_name(std::string_view name);
/// Kinds that accept sequences of any length.
bool supports_variable_length(ClassifierKind k);

/// Plain minibatch gradient descent; one epoch is one pass over the data.
struct LogisticParams {
  double learning_rate = 0.1;
  int epochs = 200;
  int batch_size = 64;
  double l2 = 1e-4;
};

struct FeedforwardParams {
  int hidden = 64;
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 64;
  double l2 = 1e-4;
};

struct RecurrentParams {
  int hidden = 32;
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 64;
  double l2 = 0.0;
};

struct ForestParams {
  int trees = 100;
  int max_depth = 8;
  int min_samples_split = 2;
  /// Features tried per split; 0 means floor(sqrt(d)).
  int max_features = 0;
};

struct HmmParams {
  int states = 3;
  int iterations = 50;
  double floor = 1e-6;
};

struct FactorizedParams {
  double alpha = 1.0;
};

struct Hyperparams {
  LogisticParams logistic;
  FeedforwardParams feedforward;
  RecurrentParams recurrent;
  ForestParams forest;
  HmmParams hmm;
  FactorizedParams factorized;

  nlohmann::json to_json(ClassifierKind kind) const;
  /// Overrides fields present under the kind's key (e.g. {"recurrent": {"epochs": 5}}).
  static Hyperparams from_json(const nlohmann::json& j);
};

/// Kind-specific fitted parameters. Immutable after training.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::vector<double> predict_proba(const FeatureSequence& x) const = 0;
  virtual nlohmann::json parameters() const = 0;
};

inline constexpr int kModelFormatVersion = 1;

class Model {
 public:
  Model(ClassifierKind kind, std::vector<StrategyLabel> labels, int horizon, nlohmann::json manifest,
        std::shared_ptr<const Estimator> estimator);

  ClassifierKind kind() const { return kind_; }
  const std::vector<StrategyLabel>& labels() const { return labels_; }
  int horizon() const { return horizon_; }
  const nlohmann::json& training_manifest() const { return manifest_; }
  const Estimator& estimator() const { return *estimator_; }

  /// Distribution over labels(); rejects horizon mismatches for fixed-size kinds.
  std::vector<double> predict_proba(const FeatureSequence& x) const;
  StrategyLabel predict(const FeatureSequence& x) const;

 private:
  ClassifierKind kind_;
  std::vector<StrategyLabel> labels_;
  int horizon_;
  nlohmann::json manifest_;
  std::shared_ptr<const Estimator> estimator_;
};

/// Per-iteration diagnostics collected during training.
struct TrainingTrace {
  /// Loss per epoch for gradient-trained kinds.
  std::vector<double> loss;
  /// Per class: mean per-sequence log-likelihood after each EM iteration,
  /// starting with the initial parameters.
  std::vector<std::vector<double>> em_log_likelihood;
};

/// `provenance` (e.g. a corpus hash) is merged into the training manifest.
Model train(ClassifierKind kind, std::span<const Sample> data, const StrategySet& set, const Hyperparams& hp,
            std::uint64_t seed, TrainingTrace* trace = nullptr, const nlohmann::json& provenance = nullptr);

struct EvalReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<StrategyLabel> labels;
  /// Rows are true labels, columns predictions.
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<double> per_class_f1;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Metrics from (true, predicted) label index pairs over `labels`.
EvalReport evaluate_predictions(std::span<const StrategyLabel> labels, std::span<const int> truth,
                                std::span<const int> predicted);
EvalReport evaluate(const Model& model, std::span<const Sample> test);

/// Loss with optional gradient output, over a flat parameter vector.
using LossFunction = std::function<double(const std::vector<double>& params, std::vector<double>* grad)>;

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
/// with central differences of the given step.
double max_relative_gradient_error(const LossFunction& loss, std::vector<double> params, double step = 1e-5);

/// Max relative error between analytic and central-difference gradients of
/// the training loss, over every parameter of a randomly initialized model.
double gradient_check(ClassifierKind kind, std::span<const Sample> batch, int n_classes,
                      const Hyperparams& hp, std::uint64_t seed, double step = 1e-5);

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);
void save_model(const Model& model, const std::string& path);
/// Throws FormatError, ChecksumError, or LabelSetMismatch when `expected` is
/// given and differs from the stored label set.
Model load_model(const std::string& path, std::optional<StrategySet> expected = std::nullopt);

}  // namespace pdintent
