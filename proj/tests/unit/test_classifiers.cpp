#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>

#include "pdintent/classifiers.hpp"
#include "pdintent/hmm.hpp"
#include "pdintent/nets.hpp"

using namespace pdintent;

namespace {

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

// Small settings so every kind trains in a couple of seconds.
Hyperparams quick() {
  Hyperparams hp;
  hp.logistic.epochs = 40;
  hp.feedforward.epochs = 20;
  hp.feedforward.hidden = 16;
  hp.recurrent.epochs = 8;
  hp.recurrent.hidden = 12;
  hp.forest.trees = 20;
  hp.hmm.iterations = 15;
  return hp;
}

const Dataset& small_corpus() {
  static const Dataset d = [] {
    CorpusSpec spec;
    spec.n_per_class = 150;
    spec.epsilon_levels = {0.05};
    spec.seed = 21;
    return generate_corpus(spec);
  }();
  return d;
}

const Model& trained(ClassifierKind kind) {
  static std::map<ClassifierKind, Model> cache;
  auto it = cache.find(kind);
  if (it == cache.end()) it = cache.emplace(kind, train(kind, small_corpus().train, StrategySet(4), quick(), 3)).first;
  return it->second;
}

FeatureSequence random_sequence(Rng& rng, int horizon) {
  Trajectory t;
  for (int i = 0; i < horizon; ++i) {
    t.own.push_back(rng.bernoulli(0.5) ? Action::Cooperate : Action::Defect);
    t.opp.push_back(rng.bernoulli(0.5) ? Action::Cooperate : Action::Defect);
  }
  return encode_sequence(t);
}

void check_distribution(const std::vector<double>& p, std::size_t k) {
  REQUIRE(p.size() == k);
  double sum = 0;
  for (double v : p) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(std::abs(sum - 1.0) <= 1e-9);
}

// Forward probability by summing over every hidden path.
double brute_force_likelihood(const DiscreteHmm& h, const std::vector<int>& obs) {
  const int n = h.n_states(), m = h.n_symbols();
  const std::size_t len = obs.size();
  std::vector<int> path(len, 0);
  double total = 0;
  while (true) {
    double p = h.initial()[path[0]] * h.emission()[path[0] * m + obs[0]];
    for (std::size_t t = 1; t < len; ++t)
      p *= h.transition()[path[t - 1] * n + path[t]] * h.emission()[path[t] * m + obs[t]];
    total += p;
    std::size_t k = 0;
    while (k < len && ++path[k] == n) path[k++] = 0;
    if (k == len) break;
  }
  return std::log(total);
}

// Maximizer of sum c_i log p_i on the floored simplex: p_i = max(floor, c_i / mu).
std::vector<double> oracle_floored(const std::vector<double>& c, double floor) {
  auto mass = [&](double mu) {
    double s = 0;
    for (double x : c) s += std::max(floor, x / mu);
    return s;
  };
  double lo = 1e-300, hi = std::accumulate(c.begin(), c.end(), 0.0) * 10 + 1;
  for (int i = 0; i < 4000; ++i) {
    const double mid = std::sqrt(lo * hi);
    (mass(mid) > 1.0 ? lo : hi) = mid;
  }
  std::vector<double> p;
  for (double x : c) p.push_back(std::max(floor, x / hi));
  return p;
}

}  // namespace

TEST_CASE("kind names") {
  for (auto k : kAllKinds) CHECK(kind_from_name(kind_name(k)) == k);
  CHECK_THROWS_AS(kind_from_name("svm"), SchemaError);
  CHECK(supports_variable_length(ClassifierKind::RecurrentNet));
  CHECK(supports_variable_length(ClassifierKind::PerClassHMM));
  CHECK_FALSE(supports_variable_length(ClassifierKind::StateFactorized));
  CHECK_FALSE(supports_variable_length(ClassifierKind::RandomForest));
}

TEST_CASE("every kind outputs a valid distribution on any input") {
  Rng rng(8);
  for (auto kind : kAllKinds) {
    const Model& m = trained(kind);
    CHECK(m.labels().size() == 4);
    for (int i = 0; i < 200; ++i) check_distribution(m.predict_proba(random_sequence(rng, 10)), 4);
    for (const auto& s : small_corpus().test) check_distribution(m.predict_proba(s.features), 4);
  }
}

TEST_CASE("fixed-size kinds reject other horizons") {
  Rng rng(9);
  auto seq = random_sequence(rng, 7);
  for (auto kind : kAllKinds) {
    const Model& m = trained(kind);
    if (supports_variable_length(kind))
      check_distribution(m.predict_proba(seq), 4);
    else
      CHECK_THROWS_AS(m.predict_proba(seq), DomainError);
  }
}

TEST_CASE("small models beat chance") {
  for (auto kind : kAllKinds) {
    auto r = evaluate(trained(kind), small_corpus().test);
    INFO(kind_name(kind));
    CHECK(r.macro_f1 > 0.5);
  }
}

TEST_CASE("training is deterministic given the seed") {
  for (auto kind : kAllKinds) {
    auto a = train(kind, small_corpus().train, StrategySet(4), quick(), 3);
    CHECK(model_to_json(a).dump() == model_to_json(trained(kind)).dump());
  }
  auto other = train(ClassifierKind::RandomForest, small_corpus().train, StrategySet(4), quick(), 4);
  CHECK(model_to_json(other).dump() != model_to_json(trained(ClassifierKind::RandomForest)).dump());
}

TEST_CASE("training errors") {
  std::vector<Sample> only_allc;
  for (const auto& s : small_corpus().train)
    if (s.label == StrategyLabel::ALLC) only_allc.push_back(s);
  CHECK_THROWS_AS(train(ClassifierKind::StateFactorized, only_allc, StrategySet(4), quick(), 1), DomainError);
  CHECK_THROWS_AS(train(ClassifierKind::StateFactorized, {}, StrategySet(4), quick(), 1), DomainError);

  Hyperparams wild = quick();
  wild.logistic.learning_rate = 1e300;
  CHECK_THROWS_AS(train(ClassifierKind::LogisticRegression, small_corpus().train, StrategySet(4), wild, 1),
                  TrainingError);
}

TEST_CASE("hyperparameter overrides") {
  auto hp = Hyperparams::from_json(nlohmann::json::parse(R"({"recurrent": {"epochs": 5}, "forest": {"trees": 7}})"));
  CHECK(hp.recurrent.epochs == 5);
  CHECK(hp.forest.trees == 7);
  CHECK(hp.recurrent.hidden == 32);
  CHECK(hp.logistic.learning_rate == 0.1);
  CHECK(hp.hmm.states == 3);
  CHECK(hp.factorized.alpha == 1.0);
  CHECK_THROWS_AS(Hyperparams::from_json(nlohmann::json::parse(R"({"forest": {"trees": "many"}})")), SchemaError);
}

TEST_CASE("evaluation metrics") {
  const std::vector<StrategyLabel> labels(kAllLabels.begin(), kAllLabels.begin() + 4);
  std::vector<int> truth;
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 25; ++i) truth.push_back(k);

  auto perfect = evaluate_predictions(labels, truth, truth);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_precision == 1.0);
  CHECK(perfect.macro_recall == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(perfect.confusion[i][j] == (i == j ? 25u : 0u));

  std::vector<int> constant(truth.size(), 0);
  auto c = evaluate_predictions(labels, truth, constant);
  CHECK(c.accuracy == doctest::Approx(0.25));
  CHECK(c.macro_recall == doctest::Approx(0.25));
  CHECK(c.macro_precision == doctest::Approx(0.0625));
  CHECK(c.macro_f1 == doctest::Approx(0.1));

  // Hand-built 2-class case: tp=3 fn=1 for class 0, tp=4 fn=2 for class 1.
  const std::vector<StrategyLabel> two = {StrategyLabel::ALLC, StrategyLabel::ALLD};
  std::vector<int> t2 = {0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  std::vector<int> p2 = {0, 0, 0, 1, 1, 1, 1, 1, 0, 0};
  auto r2 = evaluate_predictions(two, t2, p2);
  const double p0 = 3.0 / 5, r0 = 3.0 / 4, p1 = 4.0 / 5, r1 = 4.0 / 6;
  CHECK(r2.accuracy == doctest::Approx(0.7));
  CHECK(r2.macro_precision == doctest::Approx((p0 + p1) / 2));
  CHECK(r2.macro_recall == doctest::Approx((r0 + r1) / 2));
  CHECK(r2.macro_f1 == doctest::Approx((2 * p0 * r0 / (p0 + r0) + 2 * p1 * r1 / (p1 + r1)) / 2));

  auto real = evaluate(trained(ClassifierKind::StateFactorized), small_corpus().test);
  std::size_t diag = 0, total = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t row = 0;
    for (auto v : real.confusion[i]) row += v;
    std::size_t expected = 0;
    for (const auto& s : small_corpus().test) expected += s.label == labels[i];
    CHECK(row == expected);
    diag += real.confusion[i][i];
    total += row;
  }
  CHECK(real.accuracy == doctest::Approx(double(diag) / double(total)));
  CHECK(nlohmann::json::parse(real.to_json().dump())["macro_f1"].get<double>() == real.macro_f1);
}

TEST_CASE("state-factorized separates noise-free ALLC and ALLD") {
  CorpusSpec spec;
  spec.n_per_class = 300;
  spec.epsilon_levels = {0.0};
  spec.seed = 6;
  auto data = generate_corpus(spec);
  auto m = train(ClassifierKind::StateFactorized, data.train, StrategySet(4), {}, 1);
  int checked = 0;
  for (const auto& s : data.test) {
    if (s.label == StrategyLabel::ALLD) {
      CHECK(m.predict(s.features) == StrategyLabel::ALLD);
      ++checked;
    }
    // An all-C opponent leaves ALLC, TFT and WSLS indistinguishable.
    bool opp_defected = false;
    for (std::size_t t = 0; t + 1 < s.trajectory.opp.size(); ++t) opp_defected |= s.trajectory.opp[t] == Action::Defect;
    if (s.label == StrategyLabel::ALLC && opp_defected) {
      CHECK(m.predict(s.features) == StrategyLabel::ALLC);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("max_relative_gradient_error detects wrong gradients") {
  LossFunction cubic = [](const std::vector<double>& x, std::vector<double>* g) {
    double f = 0;
    if (g) g->assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      f += x[i] * x[i] * x[i];
      if (g) (*g)[i] = 3 * x[i] * x[i];
    }
    return f;
  };
  CHECK(max_relative_gradient_error(cubic, {0.3, -1.2, 2.0}) < 1e-8);
  LossFunction wrong = [&](const std::vector<double>& x, std::vector<double>* g) {
    double f = cubic(x, g);
    if (g) (*g)[1] *= 1.01;
    return f;
  };
  CHECK(max_relative_gradient_error(wrong, {0.3, -1.2, 2.0}) > 5e-3);
}

TEST_CASE("analytic gradients match central differences") {
  const auto& train_set = small_corpus().train;
  for (std::uint64_t b = 0; b < 3; ++b) {
    std::vector<Sample> batch;
    for (std::size_t i = 0; i < 16; ++i) batch.push_back(train_set[(b * 97 + i * 31) % train_set.size()]);
    Hyperparams hp;
    hp.feedforward.hidden = 8;
    hp.recurrent.hidden = 6;
    CHECK(gradient_check(ClassifierKind::LogisticRegression, batch, 4, hp, b) <= 1e-6);
    CHECK(gradient_check(ClassifierKind::FeedforwardNet, batch, 4, hp, b) <= 1e-4);
    CHECK(gradient_check(ClassifierKind::RecurrentNet, batch, 4, hp, b) <= 1e-3);
  }
  CHECK_THROWS_AS(gradient_check(ClassifierKind::RandomForest, small_corpus().train, 4, {}, 0), DomainError);
}

TEST_CASE("zero-weight logistic net at a symmetric input") {
  LogisticNet net(5, 4, 0.0);
  FlatBatch batch;
  batch.x = Eigen::MatrixXd::Constant(5, 4, 0.5);
  batch.y = {0, 1, 2, 3};
  std::vector<double> grad;
  const double loss = net.loss(batch, &grad);
  CHECK(loss == doctest::Approx(std::log(4.0)));
  // Softmax is uniform and the labels are balanced, so every gradient entry vanishes.
  for (double g : grad) CHECK(std::abs(g) < 1e-15);

  batch.y = {0, 0, 0, 1};
  net.loss(batch, &grad);
  const double freq[4] = {0.75, 0.25, 0.0, 0.0};
  for (int k = 0; k < 4; ++k) CHECK(grad[20 + k] == doctest::Approx(0.25 - freq[k]));
  // Central differences on the biases, compared in absolute terms since some entries are exactly zero.
  for (int k = 0; k < 4; ++k) {
    LogisticNet up = net, down = net;
    up.params[20 + k] += 1e-5;
    down.params[20 + k] -= 1e-5;
    const double numeric = (up.loss(batch, nullptr) - down.loss(batch, nullptr)) / 2e-5;
    CHECK(std::abs(numeric - grad[20 + k]) < 1e-9);
  }
}

TEST_CASE("softmax is stable for large logits") {
  Eigen::MatrixXd z(3, 1);
  z << 1000, 1001, 999;
  auto p = softmax_columns(z);
  CHECK(std::isfinite(p(0, 0)));
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p(1, 0) > p(0, 0));
}

TEST_CASE("hmm forward pass matches path enumeration") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    DiscreteHmm h(2 + trial % 2, 3);
    h.randomize(rng, 1e-3);
    std::vector<int> obs;
    for (int t = 0; t < 1 + trial % 6; ++t) obs.push_back(static_cast<int>(rng.below(3)));
    CHECK(h.log_likelihood(obs) == doctest::Approx(brute_force_likelihood(h, obs)).epsilon(1e-10));
  }
}

TEST_CASE("floored normalization solves the constrained maximization") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> c(5);
    for (double& x : c) x = rng.bernoulli(0.3) ? 0.0 : rng.uniform() * 10;
    if (std::accumulate(c.begin(), c.end(), 0.0) == 0.0) c[0] = 1.0;
    const double floor = trial % 2 ? 1e-6 : 0.05;
    std::vector<double> p(5);
    floored_normalize(c, floor, p);
    auto want = oracle_floored(c, floor);
    double sum = 0;
    for (int i = 0; i < 5; ++i) {
      CHECK(p[i] >= floor - 1e-15);
      CHECK(p[i] == doctest::Approx(want[i]).epsilon(1e-9));
      sum += p[i];
    }
    CHECK(sum == doctest::Approx(1.0));
  }
  std::vector<double> keep = {0.2, 0.8}, zero = {0.0, 0.0};
  floored_normalize(zero, 1e-6, keep);
  CHECK(keep == std::vector<double>{0.2, 0.8});
}

TEST_CASE("EM never decreases the likelihood") {
  Rng rng(14);
  for (int corpus = 0; corpus < 10; ++corpus) {
    std::vector<std::vector<int>> seqs;
    for (int s = 0; s < 60; ++s) {
      std::vector<int> obs;
      for (int t = 0; t < 10; ++t) obs.push_back(static_cast<int>(rng.below(5)));
      seqs.push_back(obs);
    }
    DiscreteHmm h(3, 5);
    h.randomize(rng, 1e-6);
    auto trace = h.fit(seqs, 30, 1e-6);
    CHECK(trace.size() == 31);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1] - 1e-9);
  }

  TrainingTrace trace;
  train(ClassifierKind::PerClassHMM, small_corpus().train, StrategySet(4), quick(), 5, &trace);
  REQUIRE(trace.em_log_likelihood.size() == 4);
  for (const auto& per_class : trace.em_log_likelihood)
    for (std::size_t i = 1; i < per_class.size(); ++i) CHECK(per_class[i] >= per_class[i - 1] - 1e-9);
}

TEST_CASE("hmm parameters stay stochastic and floored") {
  const auto params = trained(ClassifierKind::PerClassHMM).estimator().parameters();
  REQUIRE(params.contains("per_class"));
  for (const auto& cls : params["per_class"]) {
    auto h = DiscreteHmm::from_json(cls);
    auto rows_ok = [](const std::vector<double>& v, int cols) {
      for (std::size_t r = 0; r < v.size() / cols; ++r) {
        double s = 0;
        for (int c = 0; c < cols; ++c) {
          CHECK(v[r * cols + c] >= 1e-6 - 1e-15);
          s += v[r * cols + c];
        }
        CHECK(s == doctest::Approx(1.0));
      }
    };
    rows_ok(h.initial(), h.n_states());
    rows_ok(h.transition(), h.n_states());
    rows_ok(h.emission(), h.n_symbols());
  }
}

TEST_CASE("save and load preserve predictions exactly") {
  Rng rng(15);
  std::vector<FeatureSequence> inputs;
  for (int i = 0; i < 100; ++i) inputs.push_back(random_sequence(rng, 10));
  for (auto kind : kAllKinds) {
    const auto path = tmp("pdintent_model_" + std::string(kind_name(kind)) + ".json");
    save_model(trained(kind), path);
    auto back = load_model(path, StrategySet(4));
    CHECK(back.kind() == kind);
    CHECK(back.labels() == trained(kind).labels());
    for (const auto& x : inputs) CHECK(back.predict_proba(x) == trained(kind).predict_proba(x));
    std::filesystem::remove(path);
  }
}

TEST_CASE("corrupt, foreign and mismatched model files") {
  const auto path = tmp("pdintent_model_bad.json");
  auto j = model_to_json(trained(ClassifierKind::StateFactorized));

  auto write = [&](const nlohmann::json& doc) {
    std::ofstream out(path);
    out << doc.dump();
  };

  write(j);
  CHECK_THROWS_AS(load_model(path, StrategySet(5)), LabelSetMismatch);
  CHECK_NOTHROW(load_model(path, StrategySet(4)));

  auto tampered = j;
  tampered["checksum"] = std::string(64, '0');
  write(tampered);
  CHECK_THROWS_AS(load_model(path), ChecksumError);

  auto edited = j;
  edited["payload"]["horizon"] = 11;
  write(edited);
  CHECK_THROWS_AS(load_model(path), ChecksumError);

  auto future = j;
  future["format_version"] = kModelFormatVersion + 1;
  write(future);
  CHECK_THROWS_AS(load_model(path), FormatError);

  write(nlohmann::json{{"hello", "world"}});
  CHECK_THROWS_AS(load_model(path), FormatError);

  {
    std::ofstream out(path);
    out << "{not json";
  }
  CHECK_THROWS_AS(load_model(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("training manifest records provenance") {
  auto m = train(ClassifierKind::StateFactorized, small_corpus().train, StrategySet(4), quick(), 99, nullptr,
                 {{"corpus_sha256", "abc"}});
  const auto& man = m.training_manifest();
  CHECK(man["corpus_sha256"] == "abc");
  CHECK(man["seed"] == 99);
  CHECK(man.contains("hyperparameters"));
}
