#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pdintent/game.hpp"
#include "pdintent/strategies.hpp"

using namespace pdintent;

namespace {

GameLog play(StrategyLabel a, StrategyLabel b, double lambda = 1.0, double eps = 0.0, std::uint64_t seed = 1,
             int horizon = 10) {
  CanonicalPolicy pa({a, eps}), pb({b, eps});
  GameConfig cfg;
  cfg.horizon = horizon;
  cfg.lambda = lambda;
  cfg.seed = seed;
  return play_game(pa, pb, cfg);
}

// Independent scorer: penalties straight from the baseline table.
std::pair<double, double> oracle_totals(const std::vector<char>& a, const std::vector<char>& b, double lambda) {
  auto pen = [](char self, char opp) {
    if (self == 'C') return opp == 'C' ? 2.0 : 10.0;
    return opp == 'C' ? 0.0 : 6.0;
  };
  double ta = 0, tb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ta += pen(a[i], b[i]) * lambda;
    tb += pen(b[i], a[i]) * lambda;
  }
  return {ta, tb};
}

}  // namespace

TEST_CASE("scale_matrix multiplies every penalty") {
  auto m = scale_matrix(PenaltyMatrix::baseline(), 0.1);
  CHECK(m.t == doctest::Approx(0.0));
  CHECK(m.r == doctest::Approx(0.2));
  CHECK(m.p == doctest::Approx(0.6));
  CHECK(m.s == doctest::Approx(1.0));
  CHECK(m.lambda == doctest::Approx(0.1));

  CHECK(scale_matrix(PenaltyMatrix::baseline(), 1.0) == PenaltyMatrix::baseline());

  m = scale_matrix(PenaltyMatrix::baseline(), 10.0);
  CHECK(m.r == 20.0);
  CHECK(m.p == 60.0);
  CHECK(m.s == 100.0);
  CHECK(m.ordered());

  auto twice = scale_matrix(scale_matrix(PenaltyMatrix::baseline(), 2.0), 5.0);
  CHECK(twice.lambda == doctest::Approx(10.0));
  CHECK(twice.s == doctest::Approx(100.0));
}

TEST_CASE("scale_matrix rejects non-positive lambda") {
  CHECK_THROWS_AS(scale_matrix(PenaltyMatrix::baseline(), 0.0), DomainError);
  CHECK_THROWS_AS(scale_matrix(PenaltyMatrix::baseline(), -1.0), DomainError);
}

TEST_CASE("outcome_of and mirror") {
  CHECK(outcome_of(Action::Cooperate, Action::Cooperate) == OutcomeState::R);
  CHECK(outcome_of(Action::Defect, Action::Cooperate) == OutcomeState::T);
  CHECK(outcome_of(Action::Cooperate, Action::Defect) == OutcomeState::S);
  CHECK(outcome_of(Action::Defect, Action::Defect) == OutcomeState::P);
  for (auto a : {Action::Cooperate, Action::Defect})
    for (auto b : {Action::Cooperate, Action::Defect}) CHECK(mirror(outcome_of(a, b)) == outcome_of(b, a));
}

TEST_CASE("option labels") {
  CHECK(option_label(Action::Defect) == "A");
  CHECK(option_label(Action::Cooperate) == "B");
  CHECK(action_from_option("A") == Action::Defect);
  CHECK(action_from_option("B") == Action::Cooperate);
}

TEST_CASE("play_game totals for forced matchups") {
  auto log = play(StrategyLabel::ALLC, StrategyLabel::ALLD);
  CHECK(log.total_a == 100.0);
  CHECK(log.total_b == 0.0);

  log = play(StrategyLabel::ALLC, StrategyLabel::ALLC);
  CHECK(log.total_a == 20.0);
  CHECK(log.total_b == 20.0);

  log = play(StrategyLabel::TFT, StrategyLabel::ALLD);
  std::vector<char> a, b;
  for (const auto& r : log.rounds) {
    a.push_back(action_char(r.action_a));
    b.push_back(action_char(r.action_b));
  }
  CHECK(std::string(a.begin(), a.end()) == "CDDDDDDDDD");
  auto [oa, ob] = oracle_totals(a, b, 1.0);
  CHECK(oa == 64.0);
  CHECK(ob == 54.0);
  CHECK(log.total_a == 64.0);
  CHECK(log.total_b == 54.0);
}

TEST_CASE("accounting, horizon and mirror hold on noisy games") {
  for (auto la : kAllLabels)
    for (auto lb : kAllLabels)
      for (double lambda : {0.1, 1.0, 10.0}) {
        auto log = play(la, lb, lambda, 0.1, 42);
        REQUIRE(log.rounds.size() == 10);
        double sa = 0, sb = 0;
        for (const auto& r : log.rounds) {
          sa += r.penalty_a;
          sb += r.penalty_b;
          CHECK((r.outcome_a == OutcomeState::S) == (r.outcome_b == OutcomeState::T));
          CHECK(r.outcome_b == mirror(r.outcome_a));
        }
        CHECK(log.total_a == sa);
        CHECK(log.total_b == sb);
      }
}

TEST_CASE("lambda changes magnitudes only") {
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (auto la : kAllLabels)
      for (auto lb : kAllLabels) {
        auto base = play(la, lb, 1.0, 0.05, seed);
        for (double lambda : {0.1, 10.0}) {
          auto other = play(la, lb, lambda, 0.05, seed);
          CHECK(other.actions(Seat::A) == base.actions(Seat::A));
          CHECK(other.actions(Seat::B) == base.actions(Seat::B));
          CHECK(std::abs(normalized_penalty_ratio(other, Seat::A) - normalized_penalty_ratio(base, Seat::A)) <= 1e-12);
          CHECK(std::abs(normalized_penalty_ratio(other, Seat::B) - normalized_penalty_ratio(base, Seat::B)) <= 1e-12);
        }
      }
}

TEST_CASE("normalized_penalty_ratio examples") {
  for (double lambda : {0.1, 1.0, 10.0}) {
    auto cc = play(StrategyLabel::ALLC, StrategyLabel::ALLC, lambda);
    CHECK(normalized_penalty_ratio(cc, Seat::A) == 0.2);
    auto cd = play(StrategyLabel::ALLC, StrategyLabel::ALLD, lambda);
    CHECK(normalized_penalty_ratio(cd, Seat::A) == 1.0);
    CHECK(normalized_penalty_ratio(cd, Seat::B) == 0.0);
  }
  auto cc10 = play(StrategyLabel::ALLC, StrategyLabel::ALLC, 10.0);
  CHECK(cc10.total_a == 200.0);
}

TEST_CASE("avg_choice_trajectory") {
  std::vector<GameLog> dd = {play(StrategyLabel::ALLD, StrategyLabel::ALLD)};
  for (double v : avg_choice_trajectory(dd)) CHECK(v == 1.0);
  std::vector<GameLog> cd = {play(StrategyLabel::ALLC, StrategyLabel::ALLD)};
  for (double v : avg_choice_trajectory(cd)) CHECK(v == 0.0);
  std::vector<GameLog> two = {play(StrategyLabel::ALLC, StrategyLabel::ALLC), play(StrategyLabel::ALLD, StrategyLabel::ALLD)};
  auto traj = avg_choice_trajectory(two);
  CHECK(traj.size() == 10);
  for (double v : traj) CHECK(v == 0.0);

  CHECK_THROWS_AS(avg_choice_trajectory(std::span<const GameLog>{}), DomainError);
  std::vector<GameLog> mixed = {play(StrategyLabel::ALLC, StrategyLabel::ALLC, 1.0, 0.0, 1, 10),
                                play(StrategyLabel::ALLC, StrategyLabel::ALLC, 1.0, 0.0, 1, 5)};
  CHECK_THROWS_AS(avg_choice_trajectory(mixed), DomainError);
}

TEST_CASE("same seed gives byte-identical logs") {
  auto a = play(StrategyLabel::RND, StrategyLabel::WSLS, 1.0, 0.2, 99);
  auto b = play(StrategyLabel::RND, StrategyLabel::WSLS, 1.0, 0.2, 99);
  CHECK(a == b);
  CHECK(to_json(a).dump() == to_json(b).dump());
  auto c = play(StrategyLabel::RND, StrategyLabel::WSLS, 1.0, 0.2, 100);
  CHECK(to_json(a).dump() != to_json(c).dump());
}

TEST_CASE("adding rounds leaves earlier rounds untouched") {
  auto short_log = play(StrategyLabel::RND, StrategyLabel::RND, 1.0, 0.0, 5, 6);
  auto long_log = play(StrategyLabel::RND, StrategyLabel::RND, 1.0, 0.0, 5, 12);
  for (std::size_t i = 0; i < short_log.rounds.size(); ++i) {
    CHECK(short_log.rounds[i].action_a == long_log.rounds[i].action_a);
    CHECK(short_log.rounds[i].action_b == long_log.rounds[i].action_b);
  }
}

TEST_CASE("invalid config is rejected") {
  GameConfig cfg;
  cfg.horizon = 0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg.horizon = 10;
  cfg.lambda = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}

namespace {
struct Exploding final : Policy {
  int fail_at;
  explicit Exploding(int r) : fail_at(r) {}
  Action step(const StepContext& ctx) override {
    if (ctx.round_index == fail_at) throw std::runtime_error("boom");
    return Action::Cooperate;
  }
  std::string describe() const override { return "exploding"; }
};
}  // namespace

TEST_CASE("policy failure aborts with the partial log") {
  Exploding bad(4);
  CanonicalPolicy good({StrategyLabel::ALLD, 0.0});
  GameConfig cfg;
  try {
    play_game(bad, good, cfg);
    FAIL("expected AbortedGame");
  } catch (const AbortedGame& e) {
    CHECK(e.partial_log().rounds.size() == 3);
    CHECK(e.partial_log().total_a == 30.0);
  }
}

TEST_CASE("policies see exactly the prior history") {
  struct Probe final : Policy {
    std::vector<std::size_t> seen;
    Action step(const StepContext& ctx) override {
      seen.push_back(ctx.history.size());
      CHECK(ctx.horizon == 7);
      return Action::Defect;
    }
    std::string describe() const override { return "probe"; }
  } a, b;
  GameConfig cfg;
  cfg.horizon = 7;
  play_game(a, b, cfg);
  CHECK(a.seen == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK(b.seen == a.seen);
}

TEST_CASE("game log JSON round trip and file format") {
  auto log = play(StrategyLabel::TFT, StrategyLabel::RND, 10.0, 0.05, 3);
  log.game_id = "g1";
  log.config.metadata = {"m", "en", PersonalityPair::CS};
  auto j = to_json(log);
  CHECK(j.contains("config"));
  CHECK(j.contains("totals"));
  CHECK(j["rounds"][0].contains("action_a"));
  const auto a0 = j["rounds"][0]["action_a"].get<std::string>();
  CHECK((a0 == "A" || a0 == "B"));
  CHECK(game_log_from_json(j) == log);

  auto path = (std::filesystem::temp_directory_path() / "pdintent_test_games.jsonl").string();
  std::vector<GameLog> logs = {log, play(StrategyLabel::ALLC, StrategyLabel::ALLD)};
  write_game_logs(path, logs);
  CHECK(read_game_logs(path) == logs);
  std::filesystem::remove(path);
}
