#include "pdintent/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "pdintent/forest.hpp"
#include "pdintent/hashing.hpp"
#include "pdintent/hmm.hpp"
#include "pdintent/nets.hpp"
#include "text.hpp"

namespace pdintent {

using nlohmann::json;

std::string_view kind_name(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::LogisticRegression: return "logistic";
    case ClassifierKind::RandomForest: return "forest";
    case ClassifierKind::FeedforwardNet: return "feedforward";
    case ClassifierKind::RecurrentNet: return "recurrent";
    case ClassifierKind::PerClassHMM: return "hmm";
    case ClassifierKind::StateFactorized: return "factorized";
  }
  return "?";
}

ClassifierKind kind_from_name(std::string_view name) {
  for (auto k : kAllKinds)
    if (kind_name(k) == name) return k;
  throw SchemaError("unknown classifier kind \"" + std::string(name) +
                    "\" (expected logistic, forest, feedforward, recurrent, hmm or factorized)");
}

bool supports_variable_length(ClassifierKind k) {
  return k == ClassifierKind::RecurrentNet || k == ClassifierKind::PerClassHMM;
}

json Hyperparams::to_json(ClassifierKind kind) const {
  switch (kind) {
    case ClassifierKind::LogisticRegression:
      return {{"learning_rate", logistic.learning_rate},
              {"epochs", logistic.epochs},
              {"batch_size", logistic.batch_size},
              {"l2", logistic.l2}};
    case ClassifierKind::FeedforwardNet:
      return {{"hidden", feedforward.hidden},   {"learning_rate", feedforward.learning_rate},
              {"epochs", feedforward.epochs},   {"batch_size", feedforward.batch_size},
              {"l2", feedforward.l2}};
    case ClassifierKind::RecurrentNet:
      return {{"hidden", recurrent.hidden}, {"learning_rate", recurrent.learning_rate},
              {"epochs", recurrent.epochs}, {"batch_size", recurrent.batch_size},
              {"l2", recurrent.l2}};
    case ClassifierKind::RandomForest:
      return {{"trees", forest.trees},
              {"max_depth", forest.max_depth},
              {"min_samples_split", forest.min_samples_split},
              {"max_features", forest.max_features}};
    case ClassifierKind::PerClassHMM:
      return {{"states", hmm.states}, {"iterations", hmm.iterations}, {"floor", hmm.floor}};
    case ClassifierKind::StateFactorized: return {{"alpha", factorized.alpha}};
  }
  return json::object();
}

Hyperparams Hyperparams::from_json(const json& j) {
  Hyperparams h;
  if (j.is_null()) return h;
  try {
    if (j.contains("logistic")) {
      const auto& s = j["logistic"];
      h.logistic.learning_rate = s.value("learning_rate", h.logistic.learning_rate);
      h.logistic.epochs = s.value("epochs", h.logistic.epochs);
      h.logistic.batch_size = s.value("batch_size", h.logistic.batch_size);
      h.logistic.l2 = s.value("l2", h.logistic.l2);
    }
    if (j.contains("feedforward")) {
      const auto& s = j["feedforward"];
      h.feedforward.hidden = s.value("hidden", h.feedforward.hidden);
      h.feedforward.learning_rate = s.value("learning_rate", h.feedforward.learning_rate);
      h.feedforward.epochs = s.value("epochs", h.feedforward.epochs);
      h.feedforward.batch_size = s.value("batch_size", h.feedforward.batch_size);
      h.feedforward.l2 = s.value("l2", h.feedforward.l2);
    }
    if (j.contains("recurrent")) {
      const auto& s = j["recurrent"];
      h.recurrent.hidden = s.value("hidden", h.recurrent.hidden);
      h.recurrent.learning_rate = s.value("learning_rate", h.recurrent.learning_rate);
      h.recurrent.epochs = s.value("epochs", h.recurrent.epochs);
      h.recurrent.batch_size = s.value("batch_size", h.recurrent.batch_size);
      h.recurrent.l2 = s.value("l2", h.recurrent.l2);
    }
    if (j.contains("forest")) {
      const auto& s = j["forest"];
      h.forest.trees = s.value("trees", h.forest.trees);
      h.forest.max_depth = s.value("max_depth", h.forest.max_depth);
      h.forest.min_samples_split = s.value("min_samples_split", h.forest.min_samples_split);
      h.forest.max_features = s.value("max_features", h.forest.max_features);
    }
    if (j.contains("hmm")) {
      const auto& s = j["hmm"];
      h.hmm.states = s.value("states", h.hmm.states);
      h.hmm.iterations = s.value("iterations", h.hmm.iterations);
      h.hmm.floor = s.value("floor", h.hmm.floor);
    }
    if (j.contains("factorized")) h.factorized.alpha = j["factorized"].value("alpha", h.factorized.alpha);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("hyperparameters: ") + e.what());
  }
  return h;
}

namespace {

std::vector<double> softmax(std::span<const double> scores) {
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(scores[i] - m));
  for (double& v : p) v /= sum;
  return p;
}

Eigen::MatrixXd column(const FeatureSequence& x) {
  const FeatureVector v = flatten(x);
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), static_cast<Eigen::Index>(v.size()), 1);
}

std::vector<double> to_vector(const Eigen::MatrixXd& col) { return {col.data(), col.data() + col.size()}; }

int outcome_slot(const std::array<double, kFeatureWidth>& row) {
  for (int k = 0; k < 4; ++k)
    if (row[static_cast<std::size_t>(1 + k)] != 0.0) return k;
  throw DomainError("feature row has no outcome slot set");
}

/// HMM observation per round: the context the agent responded to, i.e. 0
/// ("start") in round 1 and 1 + previous-round outcome index afterwards.
std::vector<int> hmm_symbols(const FeatureSequence& x) {
  std::vector<int> obs;
  obs.reserve(x.rounds.size());
  obs.push_back(0);
  for (std::size_t t = 0; t + 1 < x.rounds.size(); ++t) obs.push_back(1 + outcome_slot(x.rounds[t]));
  return obs;
}

// ---- estimators ----

class LogisticEstimator final : public Estimator {
 public:
  explicit LogisticEstimator(LogisticNet net) : net_(std::move(net)) {}
  std::vector<double> predict_proba(const FeatureSequence& x) const override {
    return to_vector(softmax_columns(net_.logits(column(x))));
  }
  json parameters() const override {
    return {{"inputs", net_.inputs}, {"classes", net_.classes}, {"l2", net_.l2}, {"params", net_.params}};
  }
  static std::shared_ptr<const Estimator> from_json(const json& j) {
    LogisticNet net(j.at("inputs").get<int>(), j.at("classes").get<int>(), j.at("l2").get<double>());
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != net.params.size()) throw FormatError("logistic parameter vector has the wrong length");
    net.params = std::move(params);
    return std::make_shared<LogisticEstimator>(std::move(net));
  }

 private:
  LogisticNet net_;
};

class FeedforwardEstimator final : public Estimator {
 public:
  explicit FeedforwardEstimator(FeedforwardNet net) : net_(std::move(net)) {}
  std::vector<double> predict_proba(const FeatureSequence& x) const override {
    return to_vector(softmax_columns(net_.logits(column(x))));
  }
  json parameters() const override {
    return {{"inputs", net_.inputs}, {"hidden", net_.hidden}, {"classes", net_.classes},
            {"l2", net_.l2},         {"params", net_.params}};
  }
  static std::shared_ptr<const Estimator> from_json(const json& j) {
    FeedforwardNet net(j.at("inputs").get<int>(), j.at("hidden").get<int>(), j.at("classes").get<int>(),
                       j.at("l2").get<double>());
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != net.params.size()) throw FormatError("feedforward parameter vector has the wrong length");
    net.params = std::move(params);
    return std::make_shared<FeedforwardEstimator>(std::move(net));
  }

 private:
  FeedforwardNet net_;
};

class RecurrentEstimator final : public Estimator {
 public:
  explicit RecurrentEstimator(LstmNet net) : net_(std::move(net)) {}
  std::vector<double> predict_proba(const FeatureSequence& x) const override {
    std::vector<Eigen::MatrixXd> steps;
    steps.reserve(x.rounds.size());
    for (const auto& row : x.rounds)
      steps.emplace_back(Eigen::Map<const Eigen::MatrixXd>(row.data(), kFeatureWidth, 1));
    return to_vector(softmax_columns(net_.logits(steps)));
  }
  json parameters() const override {
    return {{"inputs", net_.inputs}, {"hidden", net_.hidden}, {"classes", net_.classes},
            {"l2", net_.l2},         {"params", net_.params}};
  }
  static std::shared_ptr<const Estimator> from_json(const json& j) {
    LstmNet net(j.at("inputs").get<int>(), j.at("hidden").get<int>(), j.at("classes").get<int>(),
                j.at("l2").get<double>());
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != net.params.size()) throw FormatError("recurrent parameter vector has the wrong length");
    net.params = std::move(params);
    return std::make_shared<RecurrentEstimator>(std::move(net));
  }

 private:
  LstmNet net_;
};

class ForestEstimator final : public Estimator {
 public:
  explicit ForestEstimator(RandomForest forest) : forest_(std::move(forest)) {}
  std::vector<double> predict_proba(const FeatureSequence& x) const override {
    return forest_.predict_proba(flatten(x));
  }
  json parameters() const override { return forest_.to_json(); }
  static std::shared_ptr<const Estimator> from_json(const json& j) {
    return std::make_shared<ForestEstimator>(RandomForest::from_json(j));
  }

 private:
  RandomForest forest_;
};

class HmmEstimator final : public Estimator {
 public:
  explicit HmmEstimator(std::vector<DiscreteHmm> per_class) : hmms_(std::move(per_class)) {}
  std::vector<double> predict_proba(const FeatureSequence& x) const override {
    const auto obs = hmm_symbols(x);
    std::vector<double> ll;
    ll.reserve(hmms_.size());
    for (const auto& h : hmms_) ll.push_back(h.log_likelihood(obs));
    return softmax(ll);
  }
  json parameters() const override {
    json arr = json::array();
    for (const auto& h : hmms_) arr.push_back(h.to_json());
    return {{"per_class", arr}};
  }
  static std::shared_ptr<const Estimator> from_json(const json& j) {
    std::vector<DiscreteHmm> hmms;
    for (const auto& h : j.at("per_class")) hmms.push_back(DiscreteHmm::from_json(h));
    return std::make_shared<HmmEstimator>(std::move(hmms));
  }

 private:
  std::vector<DiscreteHmm> hmms_;
};

/// Per class, P(cooperate | previous-round context) with contexts
/// {initial, R, S, T, P}; sequences are scored by their likelihood.
class FactorizedEstimator final : public Estimator {
 public:
  static constexpr int kContexts = 5;

  explicit FactorizedEstimator(std::vector<std::array<double, kContexts>> p_coop) : p_coop_(std::move(p_coop)) {}

  static int context(const FeatureSequence& x, std::size_t t) {
    return t == 0 ? 0 : 1 + outcome_slot(x.rounds[t - 1]);
  }

  std::vector<double> predict_proba(const FeatureSequence& x) const override {
    std::vector<double> ll(p_coop_.size(), 0.0);
    for (std::size_t k = 0; k < p_coop_.size(); ++k) {
      for (std::size_t t = 0; t < x.rounds.size(); ++t) {
        const double p = p_coop_[k][static_cast<std::size_t>(context(x, t))];
        ll[k] += std::log(x.rounds[t][0] == 1.0 ? p : 1.0 - p);
      }
    }
    return softmax(ll);
  }
  json parameters() const override { return {{"p_cooperate", p_coop_}}; }
  static std::shared_ptr<const Estimator> from_json(const json& j) {
    return std::make_shared<FactorizedEstimator>(
        j.at("p_cooperate").get<std::vector<std::array<double, kContexts>>>());
  }

 private:
  std::vector<std::array<double, kContexts>> p_coop_;
};

std::shared_ptr<const Estimator> estimator_from_json(ClassifierKind kind, const json& j) {
  switch (kind) {
    case ClassifierKind::LogisticRegression: return LogisticEstimator::from_json(j);
    case ClassifierKind::FeedforwardNet: return FeedforwardEstimator::from_json(j);
    case ClassifierKind::RecurrentNet: return RecurrentEstimator::from_json(j);
    case ClassifierKind::RandomForest: return ForestEstimator::from_json(j);
    case ClassifierKind::PerClassHMM: return HmmEstimator::from_json(j);
    case ClassifierKind::StateFactorized: return FactorizedEstimator::from_json(j);
  }
  throw FormatError("unknown classifier kind");
}

// ---- training ----

void check_finite(double loss, std::string_view what, int epoch) {
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << what << " diverged: loss " << loss << " at epoch " << epoch;
    throw TrainingError(msg.str());
  }
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

/// Groups sample indices by sequence length, shuffles each group and cuts it
/// into minibatches.
std::vector<std::vector<std::size_t>> minibatches(std::span<const Sample> data, int batch_size, Rng& rng) {
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < data.size(); ++i) by_len[data[i].features.rounds.size()].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [len, idx] : by_len) {
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(batch_size))
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                           idx.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(idx.size(), s + static_cast<std::size_t>(batch_size))));
  }
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

std::shared_ptr<const Estimator> train_logistic(std::span<const Sample> data, std::span<const int> class_of,
                                                int n_classes, const LogisticParams& p, std::uint64_t seed,
                                                TrainingTrace* trace) {
  const auto idx = all_indices(data.size());
  const FlatBatch all = make_flat_batch(data, idx, class_of);
  LogisticNet net(static_cast<int>(all.x.rows()), n_classes, p.l2);
  Rng init_rng(derive_seed(seed, {1}));
  net.init(init_rng);
  std::vector<double> grad;
  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    Rng rng(derive_seed(seed, {2, static_cast<std::uint64_t>(epoch)}));
    double total = 0.0;
    for (const auto& b : minibatches(data, p.batch_size, rng)) {
      FlatBatch mb;
      mb.x = all.x(Eigen::all, b);
      for (std::size_t i : b) mb.y.push_back(all.y[i]);
      const double loss = net.loss(mb, &grad);
      check_finite(loss, "logistic regression", epoch);
      total += loss * static_cast<double>(b.size());
      for (std::size_t k = 0; k < net.params.size(); ++k) net.params[k] -= p.learning_rate * grad[k];
    }
    if (trace) trace->loss.push_back(total / static_cast<double>(data.size()));
  }
  return std::make_shared<LogisticEstimator>(std::move(net));
}

std::shared_ptr<const Estimator> train_feedforward(std::span<const Sample> data, std::span<const int> class_of,
                                                   int n_classes, const FeedforwardParams& p, std::uint64_t seed,
                                                   TrainingTrace* trace) {
  const auto idx = all_indices(data.size());
  const FlatBatch all = make_flat_batch(data, idx, class_of);
  FeedforwardNet net(static_cast<int>(all.x.rows()), p.hidden, n_classes, p.l2);
  Rng init_rng(derive_seed(seed, {1}));
  net.init(init_rng);
  Adam opt(net.params.size(), p.learning_rate);
  std::vector<double> grad;
  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    Rng rng(derive_seed(seed, {2, static_cast<std::uint64_t>(epoch)}));
    double total = 0.0;
    for (const auto& b : minibatches(data, p.batch_size, rng)) {
      FlatBatch mb;
      mb.x = all.x(Eigen::all, b);
      for (std::size_t i : b) mb.y.push_back(all.y[i]);
      const double loss = net.loss(mb, &grad);
      check_finite(loss, "feedforward net", epoch);
      total += loss * static_cast<double>(b.size());
      opt.step(net.params, grad);
    }
    if (trace) trace->loss.push_back(total / static_cast<double>(data.size()));
  }
  return std::make_shared<FeedforwardEstimator>(std::move(net));
}

std::shared_ptr<const Estimator> train_recurrent(std::span<const Sample> data, std::span<const int> class_of,
                                                 int n_classes, const RecurrentParams& p, std::uint64_t seed,
                                                 TrainingTrace* trace) {
  LstmNet net(kFeatureWidth, p.hidden, n_classes, p.l2);
  Rng init_rng(derive_seed(seed, {1}));
  net.init(init_rng);
  Adam opt(net.params.size(), p.learning_rate);
  std::vector<double> grad;
  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    Rng rng(derive_seed(seed, {2, static_cast<std::uint64_t>(epoch)}));
    double total = 0.0;
    for (const auto& b : minibatches(data, p.batch_size, rng)) {
      const SeqBatch mb = make_seq_batch(data, b, class_of);
      const double loss = net.loss(mb, &grad);
      check_finite(loss, "recurrent net", epoch);
      total += loss * static_cast<double>(b.size());
      opt.step(net.params, grad);
    }
    if (trace) trace->loss.push_back(total / static_cast<double>(data.size()));
  }
  return std::make_shared<RecurrentEstimator>(std::move(net));
}

std::shared_ptr<const Estimator> train_forest(std::span<const Sample> data, std::span<const int> class_of,
                                              int n_classes, const ForestParams& p, std::uint64_t seed) {
  const std::size_t d = data.front().features.rounds.size() * kFeatureWidth;
  std::vector<double> x;
  x.reserve(data.size() * d);
  std::vector<int> y;
  y.reserve(data.size());
  for (const auto& s : data) {
    const auto v = flatten(s.features);
    x.insert(x.end(), v.begin(), v.end());
    y.push_back(class_of[static_cast<std::size_t>(s.label)]);
  }
  RandomForest forest(static_cast<int>(d), n_classes);
  forest.fit(x, y, p.trees, p.max_depth, p.min_samples_split, p.max_features, seed);
  return std::make_shared<ForestEstimator>(std::move(forest));
}

std::shared_ptr<const Estimator> train_hmm(std::span<const Sample> data, std::span<const int> class_of,
                                           int n_classes, const HmmParams& p, std::uint64_t seed,
                                           TrainingTrace* trace) {
  std::vector<std::vector<std::vector<int>>> per_class(static_cast<std::size_t>(n_classes));
  for (const auto& s : data)
    per_class[static_cast<std::size_t>(class_of[static_cast<std::size_t>(s.label)])].push_back(
        hmm_symbols(s.features));
  std::vector<DiscreteHmm> hmms;
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    DiscreteHmm h(p.states, 5);
    Rng rng(derive_seed(seed, {3, k}));
    h.randomize(rng, p.floor);
    auto history = h.fit(per_class[k], p.iterations, p.floor);
    if (trace) trace->em_log_likelihood.push_back(std::move(history));
    hmms.push_back(std::move(h));
  }
  return std::make_shared<HmmEstimator>(std::move(hmms));
}

std::shared_ptr<const Estimator> train_factorized(std::span<const Sample> data, std::span<const int> class_of,
                                                  int n_classes, const FactorizedParams& p) {
  constexpr int C = FactorizedEstimator::kContexts;
  std::vector<std::array<double, C>> coop(static_cast<std::size_t>(n_classes)), total(coop.size());
  for (auto& a : coop) a.fill(0.0);
  for (auto& a : total) a.fill(0.0);
  for (const auto& s : data) {
    const auto k = static_cast<std::size_t>(class_of[static_cast<std::size_t>(s.label)]);
    for (std::size_t t = 0; t < s.features.rounds.size(); ++t) {
      const auto ctx = static_cast<std::size_t>(FactorizedEstimator::context(s.features, t));
      total[k][ctx] += 1.0;
      coop[k][ctx] += s.features.rounds[t][0];
    }
  }
  std::vector<std::array<double, C>> p_coop(coop.size());
  for (std::size_t k = 0; k < coop.size(); ++k)
    for (std::size_t c = 0; c < static_cast<std::size_t>(C); ++c)
      p_coop[k][c] = (coop[k][c] + p.alpha) / (total[k][c] + 2.0 * p.alpha);
  return std::make_shared<FactorizedEstimator>(std::move(p_coop));
}

}  // namespace

// ---- Model ----

Model::Model(ClassifierKind kind, std::vector<StrategyLabel> labels, int horizon, json manifest,
             std::shared_ptr<const Estimator> estimator)
    : kind_(kind),
      labels_(std::move(labels)),
      horizon_(horizon),
      manifest_(std::move(manifest)),
      estimator_(std::move(estimator)) {}

std::vector<double> Model::predict_proba(const FeatureSequence& x) const {
  if (x.rounds.empty()) throw DomainError("cannot classify an empty sequence");
  if (!supports_variable_length(kind_) && x.horizon() != horizon_)
    throw DomainError("input horizon " + std::to_string(x.horizon()) + " does not match the model horizon " +
                      std::to_string(horizon_));
  return estimator_->predict_proba(x);
}

StrategyLabel Model::predict(const FeatureSequence& x) const {
  const auto p = predict_proba(x);
  return labels_[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())];
}

Model train(ClassifierKind kind, std::span<const Sample> data, const StrategySet& set, const Hyperparams& hp,
            std::uint64_t seed, TrainingTrace* trace, const json& provenance) {
  if (data.empty()) throw DomainError("training data is empty");
  std::vector<StrategyLabel> labels(set.labels().begin(), set.labels().end());
  std::vector<int> class_of(kAllLabels.size(), -1);
  for (std::size_t k = 0; k < labels.size(); ++k) class_of[static_cast<std::size_t>(labels[k])] = static_cast<int>(k);

  std::vector<std::size_t> counts(labels.size(), 0);
  const int horizon = data.front().features.horizon();
  for (const auto& s : data) {
    const int k = class_of[static_cast<std::size_t>(s.label)];
    if (k < 0) throw DomainError("training label " + std::string(label_name(s.label)) + " is outside the strategy set");
    ++counts[static_cast<std::size_t>(k)];
    if (!supports_variable_length(kind) && s.features.horizon() != horizon)
      throw DomainError(std::string(kind_name(kind)) + " needs a single horizon across training data");
  }
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (counts[k] == 0) throw DomainError("class " + std::string(label_name(labels[k])) + " is absent from training data");

  const int n_classes = static_cast<int>(labels.size());
  std::shared_ptr<const Estimator> est;
  switch (kind) {
    case ClassifierKind::LogisticRegression:
      est = train_logistic(data, class_of, n_classes, hp.logistic, seed, trace);
      break;
    case ClassifierKind::FeedforwardNet:
      est = train_feedforward(data, class_of, n_classes, hp.feedforward, seed, trace);
      break;
    case ClassifierKind::RecurrentNet:
      est = train_recurrent(data, class_of, n_classes, hp.recurrent, seed, trace);
      break;
    case ClassifierKind::RandomForest: est = train_forest(data, class_of, n_classes, hp.forest, seed); break;
    case ClassifierKind::PerClassHMM: est = train_hmm(data, class_of, n_classes, hp.hmm, seed, trace); break;
    case ClassifierKind::StateFactorized: est = train_factorized(data, class_of, n_classes, hp.factorized); break;
  }

  json manifest = {{"hyperparameters", hp.to_json(kind)},
                   {"seed", seed},
                   {"n_train", data.size()},
                   {"strategy_set", set.size()}};
  if (provenance.is_object()) manifest.update(provenance);
  return Model(kind, std::move(labels), horizon, std::move(manifest), std::move(est));
}

// ---- evaluation ----

EvalReport evaluate_predictions(std::span<const StrategyLabel> labels, std::span<const int> truth,
                                std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw DomainError("truth and prediction lengths differ");
  if (truth.empty()) throw DomainError("cannot evaluate on an empty test split");
  const std::size_t k = labels.size();
  EvalReport r;
  r.labels.assign(labels.begin(), labels.end());
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];

  std::size_t diag = 0;
  r.per_class_f1.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += r.confusion[c][j];
      col += r.confusion[j][c];
    }
    const double tp = static_cast<double>(r.confusion[c][c]);
    diag += r.confusion[c][c];
    const double precision = col ? tp / static_cast<double>(col) : 0.0;
    const double recall = row ? tp / static_cast<double>(row) : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    r.macro_precision += precision;
    r.macro_recall += recall;
    r.per_class_f1[c] = f1;
    r.macro_f1 += f1;
  }
  const double kd = static_cast<double>(k);
  r.macro_precision /= kd;
  r.macro_recall /= kd;
  r.macro_f1 /= kd;
  r.accuracy = static_cast<double>(diag) / static_cast<double>(truth.size());
  return r;
}

EvalReport evaluate(const Model& model, std::span<const Sample> test) {
  const auto& labels = model.labels();
  std::vector<int> truth, pred;
  truth.reserve(test.size());
  pred.reserve(test.size());
  for (const auto& s : test) {
    const auto it = std::find(labels.begin(), labels.end(), s.label);
    if (it == labels.end()) throw LabelSetMismatch("test label outside the model's label set");
    truth.push_back(static_cast<int>(it - labels.begin()));
    const auto p = model.predict_proba(s.features);
    pred.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  return evaluate_predictions(labels, truth, pred);
}

json EvalReport::to_json() const {
  json per_class = json::object();
  for (std::size_t c = 0; c < labels.size(); ++c) per_class[std::string(label_name(labels[c]))] = per_class_f1[c];
  json names = json::array();
  for (auto l : labels) names.push_back(label_name(l));
  return {{"accuracy", accuracy},   {"macro_precision", macro_precision},
          {"macro_recall", macro_recall}, {"macro_f1", macro_f1},
          {"labels", names},        {"confusion_matrix", confusion},
          {"per_class_f1", per_class}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "scope,accuracy,precision,recall,f1,support\n";
  std::size_t total = 0;
  for (const auto& row : confusion)
    for (auto v : row) total += v;
  out << "macro," << detail::fmt(accuracy) << ',' << detail::fmt(macro_precision) << ','
      << detail::fmt(macro_recall) << ',' << detail::fmt(macro_f1) << ',' << total << '\n';
  for (std::size_t c = 0; c < labels.size(); ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      row += confusion[c][j];
      col += confusion[j][c];
    }
    const double tp = static_cast<double>(confusion[c][c]);
    out << label_name(labels[c]) << ",," << detail::fmt(col ? tp / static_cast<double>(col) : 0.0) << ','
        << detail::fmt(row ? tp / static_cast<double>(row) : 0.0) << ',' << detail::fmt(per_class_f1[c]) << ','
        << row << '\n';
  }
  return out.str();
}

// ---- gradient checking ----

double max_relative_gradient_error(const LossFunction& loss, std::vector<double> params, double step) {
  std::vector<double> analytic;
  loss(params, &analytic);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + step;
    const double up = loss(params, nullptr);
    params[k] = saved - step;
    const double down = loss(params, nullptr);
    params[k] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  return worst;
}

double gradient_check(ClassifierKind kind, std::span<const Sample> batch, int n_classes, const Hyperparams& hp,
                      std::uint64_t seed, double step) {
  if (batch.empty()) throw DomainError("gradient check needs a non-empty batch");
  std::vector<int> class_of(kAllLabels.size());
  for (std::size_t k = 0; k < class_of.size(); ++k) class_of[k] = static_cast<int>(k) % n_classes;
  const auto idx = all_indices(batch.size());
  Rng rng(derive_seed(seed, {9}));
  auto perturb = [&](std::vector<double>& params) {
    for (double& v : params) v += 0.1 * rng.normal();
  };

  switch (kind) {
    case ClassifierKind::LogisticRegression: {
      const FlatBatch b = make_flat_batch(batch, idx, class_of);
      LogisticNet net(static_cast<int>(b.x.rows()), n_classes, hp.logistic.l2);
      net.init(rng);
      perturb(net.params);
      return max_relative_gradient_error(
          [&](const std::vector<double>& p, std::vector<double>* g) {
            LogisticNet n = net;
            n.params = p;
            return n.loss(b, g);
          },
          net.params, step);
    }
    case ClassifierKind::FeedforwardNet: {
      const FlatBatch b = make_flat_batch(batch, idx, class_of);
      FeedforwardNet net(static_cast<int>(b.x.rows()), hp.feedforward.hidden, n_classes, hp.feedforward.l2);
      net.init(rng);
      perturb(net.params);
      return max_relative_gradient_error(
          [&](const std::vector<double>& p, std::vector<double>* g) {
            FeedforwardNet n = net;
            n.params = p;
            return n.loss(b, g);
          },
          net.params, step);
    }
    case ClassifierKind::RecurrentNet: {
      const SeqBatch b = make_seq_batch(batch, idx, class_of);
      LstmNet net(kFeatureWidth, hp.recurrent.hidden, n_classes, hp.recurrent.l2);
      net.init(rng);
      perturb(net.params);
      return max_relative_gradient_error(
          [&](const std::vector<double>& p, std::vector<double>* g) {
            LstmNet n = net;
            n.params = p;
            return n.loss(b, g);
          },
          net.params, step);
    }
    default: throw DomainError(std::string(kind_name(kind)) + " is not gradient-trained");
  }
}

// ---- persistence ----

namespace {
constexpr std::string_view kFormatName = "pdintent-model";
}

json model_to_json(const Model& model) {
  json labels = json::array();
  for (auto l : model.labels()) labels.push_back(label_name(l));
  json payload = {{"kind", kind_name(model.kind())},
                  {"labels", labels},
                  {"horizon", model.horizon()},
                  {"training_manifest", model.training_manifest()},
                  {"parameters", model.estimator().parameters()}};
  const std::string checksum = sha256_hex(payload.dump());
  return {{"format", kFormatName},
          {"format_version", kModelFormatVersion},
          {"checksum", checksum},
          {"payload", std::move(payload)}};
}

Model model_from_json(const json& j) {
  if (!j.is_object() || j.value("format", std::string()) != kFormatName)
    throw FormatError("not a pdintent model container");
  const int version = j.value("format_version", -1);
  if (version != kModelFormatVersion)
    throw FormatError("unsupported model format version " + std::to_string(version) + " (this build reads version " +
                      std::to_string(kModelFormatVersion) + ")");
  if (!j.contains("payload") || !j.contains("checksum")) throw FormatError("model container lacks payload or checksum");
  const json& payload = j["payload"];
  if (sha256_hex(payload.dump()) != j["checksum"].get<std::string>())
    throw ChecksumError("model checksum mismatch: file is corrupt or was modified");
  try {
    const ClassifierKind kind = kind_from_name(payload.at("kind").get<std::string>());
    std::vector<StrategyLabel> labels;
    for (const auto& l : payload.at("labels")) labels.push_back(label_from_name(l.get<std::string>()));
    auto est = estimator_from_json(kind, payload.at("parameters"));
    return Model(kind, std::move(labels), payload.at("horizon").get<int>(), payload.at("training_manifest"),
                 std::move(est));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model payload: ") + e.what());
  }
}

void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << model_to_json(model).dump() << '\n';
}

Model load_model(const std::string& path, std::optional<StrategySet> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
  Model m = model_from_json(j);
  if (expected) {
    const auto want = expected->labels();
    if (!std::equal(want.begin(), want.end(), m.labels().begin(), m.labels().end()))
      throw LabelSetMismatch("model has " + std::to_string(m.labels().size()) + " labels but the pipeline expects " +
                             std::to_string(want.size()));
  }
  return m;
}

}  // namespace pdintent
