#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "pdintent/pipeline.hpp"

using namespace pdintent;

namespace {

// Always answers the same distribution.
class FixedEstimator final : public Estimator {
 public:
  explicit FixedEstimator(std::vector<double> p) : p_(std::move(p)) {}
  std::vector<double> predict_proba(const FeatureSequence&) const override { return p_; }
  nlohmann::json parameters() const override { return {{"p", p_}}; }

 private:
  std::vector<double> p_;
};

Model fixed_model(std::vector<double> p) {
  std::vector<StrategyLabel> labels(kAllLabels.begin(), kAllLabels.begin() + static_cast<long>(p.size()));
  return Model(ClassifierKind::StateFactorized, labels, 10, nlohmann::json::object(),
               std::make_shared<FixedEstimator>(std::move(p)));
}

const Dataset& corpus() {
  static const Dataset d = [] {
    CorpusSpec spec;
    spec.n_per_class = 1000;
    spec.epsilon_levels = {0.05};
    spec.seed = 31;
    return generate_corpus(spec);
  }();
  return d;
}

const Model& factorized() {
  static const Model m = train(ClassifierKind::StateFactorized, corpus().train, StrategySet(4), {}, 1);
  return m;
}

// Default corpus and hyperparameters, as the command-line train step uses them.
const Model& recurrent() {
  static const Model m = [] {
    CorpusSpec spec;
    spec.epsilon_levels = {0.05};
    spec.seed = 7;
    return train(ClassifierKind::RecurrentNet, generate_corpus(spec).train, StrategySet(4), {}, 7);
  }();
  return m;
}

Trajectory traj(const std::string& own, const std::string& opp) {
  Trajectory t;
  for (char c : own) t.own.push_back(action_from_char(c));
  for (char c : opp) t.opp.push_back(action_from_char(c));
  return t;
}

Trajectory random_traj(Rng& rng) {
  Trajectory t;
  for (int i = 0; i < 10; ++i) {
    t.own.push_back(rng.bernoulli(0.5) ? Action::Cooperate : Action::Defect);
    t.opp.push_back(rng.bernoulli(0.5) ? Action::Cooperate : Action::Defect);
  }
  return t;
}

GameLog canonical_game(StrategyLabel a, StrategyLabel b, std::uint64_t seed = 0, double eps = 0.0) {
  CanonicalPolicy pa({a, eps}), pb({b, eps});
  GameConfig cfg;
  cfg.seed = seed;
  auto log = play_game(pa, pb, cfg);
  log.game_id = std::string(label_name(a)) + ":" + std::string(label_name(b)) + "/" + std::to_string(seed);
  return log;
}

void check_source_invariants(const ClassificationResult& r, double tau) {
  switch (r.source) {
    case ResultSource::Rule:
      REQUIRE(r.label.has_value());
      CHECK(r.candidates.contains(*r.label));
      CHECK(r.confidence == 1.0);
      break;
    case ResultSource::Model:
      REQUIRE(r.distribution.has_value());
      CHECK(r.confidence == *std::max_element(r.distribution->begin(), r.distribution->end()));
      CHECK(r.confidence >= tau);
      break;
    case ResultSource::Rejected:
      CHECK_FALSE(r.label.has_value());
      CHECK(r.confidence < tau);
      break;
  }
}

}  // namespace

TEST_CASE("tau must lie in (0, 1]") {
  auto m = fixed_model({0.25, 0.25, 0.25, 0.25});
  auto t = traj("CCCCCCCCCC", "CCCCCCCCCC");
  CHECK_THROWS_AS(classify_trajectory(m, t, {0.0}), DomainError);
  CHECK_THROWS_AS(classify_trajectory(m, t, {1.5}), DomainError);
  CHECK_NOTHROW(classify_trajectory(m, t, {1.0}));
}

TEST_CASE("low-confidence model without a rule match is rejected") {
  auto m = fixed_model({0.5, 0.3, 0.1, 0.1});
  auto t = traj("CDDCDCCDCD", "DDCCCDCDDC");
  REQUIRE(rule_match(t, StrategySet(4)).empty());
  auto r = classify_trajectory(m, t, {0.9});
  CHECK(r.source == ResultSource::Rejected);
  CHECK_FALSE(r.label);
  CHECK(r.confidence == 0.5);
  for (auto mode : {PipelineMode::ModelFirst, PipelineMode::RulesFirst})
    CHECK(classify_trajectory(m, t, {0.9, mode}).source == ResultSource::Rejected);
}

TEST_CASE("mode ordering") {
  // Model confidently says TFT while the rules say ALLD.
  auto m = fixed_model({0.02, 0.02, 0.95, 0.01});
  auto t = traj("DDDDDDDDDD", "CDCDCDCDCD");
  auto model_first = classify_trajectory(m, t, {0.9, PipelineMode::ModelFirst});
  CHECK(model_first.source == ResultSource::Model);
  CHECK(model_first.label == StrategyLabel::TFT);
  CHECK(model_first.candidates == LabelSet{StrategyLabel::ALLD});

  auto rules_first = classify_trajectory(m, t, {0.9, PipelineMode::RulesFirst});
  CHECK(rules_first.source == ResultSource::Rule);
  CHECK(rules_first.label == StrategyLabel::ALLD);
  CHECK_FALSE(rules_first.distribution);

  // Below tau the rule fills in.
  auto fallback = classify_trajectory(m, t, {0.99, PipelineMode::ModelFirst});
  CHECK(fallback.source == ResultSource::Rule);
  CHECK(fallback.label == StrategyLabel::ALLD);
  CHECK(fallback.distribution.has_value());

  PipelineOptions model_only{0.99};
  model_only.use_rules = false;
  auto none = classify_trajectory(m, t, model_only);
  CHECK(none.source == ResultSource::Rejected);
  CHECK(none.candidates.empty());
}

TEST_CASE("noise-free all-D is ALLD at any tau") {
  auto t = traj("DDDDDDDDDD", "CDDCCDCDDC");
  for (double tau : {0.1, 0.5, 0.9, 0.99, 1.0})
    for (auto mode : {PipelineMode::ModelFirst, PipelineMode::RulesFirst}) {
      auto r = classify_trajectory(factorized(), t, {tau, mode});
      CHECK(r.label == StrategyLabel::ALLD);
      if (r.source == ResultSource::Rule) CHECK(r.confidence == 1.0);
    }
}

TEST_CASE("source invariants on arbitrary inputs") {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    auto t = random_traj(rng);
    for (double tau : {0.3, 0.9, 1.0})
      for (auto mode : {PipelineMode::ModelFirst, PipelineMode::RulesFirst})
        check_source_invariants(classify_trajectory(factorized(), t, {tau, mode}), tau);
  }
  for (const auto& s : corpus().test) check_source_invariants(classify_trajectory(factorized(), s.trajectory), 0.9);
}

TEST_CASE("noisy TFT is retained as TFT by a trained recurrent net") {
  int hits = 0, n = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    auto t = generate_trajectory(StrategyLabel::TFT, 10, 0.05, OpponentSpec::UniformRandom, derive_seed(77, {i}));
    PipelineOptions opts{0.9};
    opts.use_rules = false;
    auto r = classify_trajectory(recurrent(), t, opts);
    hits += r.label == StrategyLabel::TFT;
    ++n;
  }
  CHECK(hits >= 900);
}

TEST_CASE("classify_corpus examples") {
  std::vector<GameLog> logs;
  for (std::uint64_t i = 0; i < 10; ++i) logs.push_back(canonical_game(StrategyLabel::ALLD, StrategyLabel::ALLC, i));
  auto res = classify_corpus(factorized(), logs, {0.9, PipelineMode::RulesFirst});
  REQUIRE(res.size() == 20);
  int alld = 0, allc = 0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    CHECK(res[i].result.source == ResultSource::Rule);
    CHECK(res[i].agent == (i % 2 == 0 ? Seat::A : Seat::B));
    CHECK(res[i].game_id == logs[i / 2].game_id);
    alld += res[i].result.label == StrategyLabel::ALLD;
    allc += res[i].result.label == StrategyLabel::ALLC;
  }
  CHECK(alld == 10);
  CHECK(allc == 10);

  CHECK(classify_corpus(factorized(), std::span<const GameLog>{}).empty());
}

TEST_CASE("seat B equals seat A of the swapped game") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto log = canonical_game(kAllLabels[seed % 4], kAllLabels[(seed / 4) % 4], seed, 0.1);
    GameLog swapped = log;
    for (auto& r : swapped.rounds) {
      std::swap(r.action_a, r.action_b);
      std::swap(r.penalty_a, r.penalty_b);
      std::swap(r.outcome_a, r.outcome_b);
    }
    std::swap(swapped.total_a, swapped.total_b);
    std::vector<GameLog> one = {log}, other = {swapped};
    auto r = classify_corpus(factorized(), one);
    auto s = classify_corpus(factorized(), other);
    CHECK(r[1].result == s[0].result);
    CHECK(r[0].result == s[1].result);
  }
}

TEST_CASE("results do not depend on batch composition") {
  std::vector<GameLog> logs;
  for (std::uint64_t i = 0; i < 40; ++i) logs.push_back(canonical_game(kAllLabels[i % 5], kAllLabels[(i / 5) % 5], i, 0.05));
  auto full = classify_corpus(factorized(), logs);
  for (std::size_t g = 0; g < logs.size(); g += 7) {
    std::vector<GameLog> single = {logs[g]};
    auto alone = classify_corpus(factorized(), single);
    CHECK(alone[0].result == full[2 * g].result);
    CHECK(alone[1].result == full[2 * g + 1].result);
  }
}

TEST_CASE("noise-free round robin recovery is capped by indistinguishable pairings") {
  const auto set = StrategySet(4).labels();
  // Oracle: agents with identical observed trajectories must share a label, so
  // the best achievable count per trajectory is its most common generator.
  std::map<std::pair<std::vector<Action>, std::vector<Action>>, std::map<StrategyLabel, int>> by_view;
  std::vector<GameLog> logs;
  std::vector<StrategyLabel> truth;
  for (auto a : set)
    for (auto b : set) {
      logs.push_back(canonical_game(a, b));
      truth.push_back(a);
      truth.push_back(b);
      for (auto seat : {Seat::A, Seat::B}) {
        auto t = Trajectory::from_game(logs.back(), seat);
        ++by_view[{t.own, t.opp}][seat == Seat::A ? a : b];
      }
    }
  int best = 0;
  for (const auto& [view, counts] : by_view) {
    int m = 0;
    for (auto [l, c] : counts) m = std::max(m, c);
    best += m;
  }
  CHECK(truth.size() == 32);
  CHECK(best == 20);
  CHECK(double(best) / 32.0 == 0.625);

  auto res = classify_corpus(recurrent(), logs, {0.9});
  int recovered = 0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    REQUIRE(res[i].result.label.has_value());
    const auto predicted = *res[i].result.label;
    if (predicted == truth[i]) {
      ++recovered;
      continue;
    }
    // A miss must be a trajectory the predicted strategy also produces.
    auto t = Trajectory::from_game(logs[i / 2], res[i].agent);
    CHECK(by_view[{t.own, t.opp}].count(predicted) == 1);
  }
  CHECK(recovered <= best);
}

TEST_CASE("threshold sweep") {
  std::vector<Trajectory> inputs;
  for (const auto& s : corpus().test) inputs.push_back(s.trajectory);
  std::vector<double> grid = {0.0, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0};
  auto rows = threshold_sweep(factorized(), inputs, grid);
  REQUIRE(rows.size() == grid.size());
  CHECK(rows[0].retention_rate == 1.0);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].retention_rate <= rows[i - 1].retention_rate);
    CHECK(rows[i].n_retained <= rows[i - 1].n_retained);
  }

  // Direct recount from the model's distributions.
  for (const auto& row : rows) {
    std::size_t kept = 0;
    double conf = 0;
    std::set<StrategyLabel> labels;
    for (const auto& t : inputs) {
      auto p = factorized().predict_proba(encode_sequence(t));
      auto it = std::max_element(p.begin(), p.end());
      if (*it >= row.tau) {
        ++kept;
        conf += *it;
        labels.insert(factorized().labels()[static_cast<std::size_t>(it - p.begin())]);
      }
    }
    CHECK(row.n_retained == kept);
    CHECK(row.retention_rate == doctest::Approx(double(kept) / double(inputs.size())));
    CHECK(row.avg_confidence == doctest::Approx(kept ? conf / double(kept) : 0.0));
    CHECK(row.diversity == labels.size());
    CHECK(row.diversity <= 4);
  }

  // Subset property per input: anything kept at a higher tau was kept at every lower one.
  Rng rng(5);
  std::vector<Trajectory> noise;
  for (int i = 0; i < 300; ++i) noise.push_back(random_traj(rng));
  auto noisy = threshold_sweep(factorized(), noise, grid);
  for (std::size_t i = 1; i < noisy.size(); ++i) CHECK(noisy[i].n_retained <= noisy[i - 1].n_retained);

  std::vector<double> bad = {0.9, 0.5};
  CHECK_THROWS_AS(threshold_sweep(factorized(), inputs, bad), DomainError);

  SweepOptions with_rules;
  with_rules.include_rules = true;
  auto hybrid = threshold_sweep(factorized(), inputs, grid, with_rules);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(hybrid[i].n_retained >= rows[i].n_retained);

  auto csv = sweep_to_csv(rows);
  CHECK(csv.rfind("tau,retention_rate,avg_confidence,n_retained,diversity\n", 0) == 0);
  CHECK(sweep_to_json(rows).size() == rows.size());
}

TEST_CASE("retention accounting and classification files") {
  std::vector<GameLog> logs;
  for (std::uint64_t i = 0; i < 30; ++i) logs.push_back(canonical_game(kAllLabels[i % 5], kAllLabels[(i + 2) % 5], i, 0.1));
  auto res = classify_corpus(factorized(), logs, {0.9});
  auto all = summarize_retention(res, true);
  auto model_only = summarize_retention(res, false);
  CHECK(all.n_total == 60);
  CHECK(all.n_retained == all.n_rule + all.n_model);
  CHECK(model_only.n_retained == all.n_model);
  CHECK(all.retention_rate == doctest::Approx(double(all.n_retained) / 60.0));

  const auto path = (std::filesystem::temp_directory_path() / "pdintent_classifications.jsonl").string();
  write_classifications(path, res, factorized().labels());
  auto back = read_classifications(path);
  REQUIRE(back.size() == res.size());
  for (std::size_t i = 0; i < res.size(); ++i) {
    CHECK(back[i].game_id == res[i].game_id);
    CHECK(back[i].agent == res[i].agent);
    CHECK(back[i].result == res[i].result);
    CHECK(back[i].lambda == res[i].lambda);
  }
  auto j = to_json(res[0], factorized().labels());
  for (const char* key : {"game_id", "agent", "label", "confidence", "source"}) CHECK(j.contains(key));
  std::filesystem::remove(path);
}
