#pragma once

// Repeated Prisoner's Dilemma engine over a fixed, known horizon. Penalties
// scale with the stake multiplier.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdintent/error.hpp"
#include "pdintent/rng.hpp"

namespace pdintent {

/// Defect is offered to agents as "Option A", Cooperate as "Option B".
enum class Action : std::uint8_t { Cooperate, Defect };

/// Outcome from the focal agent's perspective.
enum class OutcomeState : std::uint8_t { R, S, T, P };

enum class Seat : std::uint8_t { A, B };

constexpr Action flip(Action a) { return a == Action::Cooperate ? Action::Defect : Action::Cooperate; }

/// "A" for Defect, "B" for Cooperate.
std::string_view option_label(Action a);
Action action_from_option(std::string_view label);
/// 'C' / 'D'.
char action_char(Action a);
Action action_from_char(char c);
std::string_view outcome_name(OutcomeState o);

constexpr OutcomeState outcome_of(Action self, Action opp) {
  if (self == Action::Cooperate) return opp == Action::Cooperate ? OutcomeState::R : OutcomeState::S;
  return opp == Action::Cooperate ? OutcomeState::T : OutcomeState::P;
}

/// R and P are symmetric, S and T swap.
constexpr OutcomeState mirror(OutcomeState o) {
  switch (o) {
    case OutcomeState::S: return OutcomeState::T;
    case OutcomeState::T: return OutcomeState::S;
    default: return o;
  }
}

/// Penalties (lower is better). Ordering t < r < p < s.
struct PenaltyMatrix {
  double t = 0.0;
  double r = 2.0;
  double p = 6.0;
  double s = 10.0;
  double lambda = 1.0;

  static PenaltyMatrix baseline() { return {}; }

  double penalty(OutcomeState o) const;
  bool ordered() const { return t < r && r < p && p < s; }
  bool operator==(const PenaltyMatrix&) const = default;
};

/// Multiplies every penalty by lambda; the lambda field accumulates the product.
PenaltyMatrix scale_matrix(const PenaltyMatrix& base, double lambda);

enum class PersonalityPair : std::uint8_t { CC, CS, SC, SS };
std::string_view personality_name(PersonalityPair p);
PersonalityPair personality_from_name(std::string_view name);

struct GameMetadata {
  std::string model = "none";
  std::string language = "none";
  PersonalityPair personality = PersonalityPair::CC;
  bool operator==(const GameMetadata&) const = default;
};

struct GameConfig {
  int horizon = 10;
  double lambda = 1.0;
  int repetitions = 1;
  std::uint64_t seed = 0;
  GameMetadata metadata;

  void validate() const;
  bool operator==(const GameConfig&) const = default;
};

struct RoundRecord {
  int round = 0;  // 1-based
  Action action_a = Action::Cooperate;
  Action action_b = Action::Cooperate;
  double penalty_a = 0.0;
  double penalty_b = 0.0;
  OutcomeState outcome_a = OutcomeState::R;
  OutcomeState outcome_b = OutcomeState::R;

  Action own(Seat seat) const { return seat == Seat::A ? action_a : action_b; }
  Action opp(Seat seat) const { return seat == Seat::A ? action_b : action_a; }
  OutcomeState outcome(Seat seat) const { return seat == Seat::A ? outcome_a : outcome_b; }
  bool operator==(const RoundRecord&) const = default;
};

struct GameLog {
  std::string game_id;
  GameConfig config;
  std::vector<RoundRecord> rounds;
  double total_a = 0.0;
  double total_b = 0.0;

  double total(Seat seat) const { return seat == Seat::A ? total_a : total_b; }
  std::vector<Action> actions(Seat seat) const;
  bool operator==(const GameLog&) const = default;
};

/// What a policy sees before choosing its action for one round.
struct StepContext {
  int round_index;  // 1-based
  int horizon;
  Seat seat;
  std::span<const RoundRecord> history;  // exactly round_index - 1 records
  const PenaltyMatrix& matrix;
  Rng& rng;  // substream keyed by (seed, seat, round)
};

/// Contract for anything that can sit at the table. Implementations may
/// throw; the engine wraps failures into AbortedGame.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action step(const StepContext& ctx) = 0;
  virtual std::string describe() const = 0;
};

/// A policy failed mid-game. Carries the rounds played so far.
class AbortedGame : public Error {
 public:
  AbortedGame(const std::string& what, GameLog partial) : Error(what), partial_(std::move(partial)) {}
  const GameLog& partial_log() const { return partial_; }

 private:
  GameLog partial_;
};

/// Plays config.horizon simultaneous-move rounds. Deterministic given the
/// policies and config.seed.
GameLog play_game(Policy& policy_a, Policy& policy_b, const GameConfig& config);

/// Total penalty over the worst case s * lambda * horizon.
double normalized_penalty_ratio(const GameLog& log, Seat seat);

/// Per-round mean of Defect=+1 / Cooperate=-1 over both agents of every log.
std::vector<double> avg_choice_trajectory(std::span<const GameLog> logs);

nlohmann::json to_json(const GameConfig& config);
GameConfig game_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GameLog& log);
GameLog game_log_from_json(const nlohmann::json& j);

void write_game_logs(const std::string& path, std::span<const GameLog> logs);
std::vector<GameLog> read_game_logs(const std::string& path);

}  // namespace pdintent
