#include "pdintent/game.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace pdintent {

std::string_view option_label(Action a) { return a == Action::Defect ? "A" : "B"; }

Action action_from_option(std::string_view label) {
  if (label == "A") return Action::Defect;
  if (label == "B") return Action::Cooperate;
  throw SchemaError("action must be \"A\" or \"B\", got \"" + std::string(label) + "\"");
}

char action_char(Action a) { return a == Action::Cooperate ? 'C' : 'D'; }

Action action_from_char(char c) {
  if (c == 'C') return Action::Cooperate;
  if (c == 'D') return Action::Defect;
  throw SchemaError(std::string("action must be 'C' or 'D', got '") + c + "'");
}

std::string_view outcome_name(OutcomeState o) {
  switch (o) {
    case OutcomeState::R: return "R";
    case OutcomeState::S: return "S";
    case OutcomeState::T: return "T";
    case OutcomeState::P: return "P";
  }
  return "?";
}

double PenaltyMatrix::penalty(OutcomeState o) const {
  switch (o) {
    case OutcomeState::R: return r;
    case OutcomeState::S: return s;
    case OutcomeState::T: return t;
    case OutcomeState::P: return p;
  }
  return 0.0;
}

PenaltyMatrix scale_matrix(const PenaltyMatrix& base, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw DomainError("scale factor must be positive, got " + std::to_string(lambda));
  if (!base.ordered()) throw DomainError("base matrix violates t < r < p < s");
  return {base.t * lambda, base.r * lambda, base.p * lambda, base.s * lambda, base.lambda * lambda};
}

std::string_view personality_name(PersonalityPair p) {
  switch (p) {
    case PersonalityPair::CC: return "CC";
    case PersonalityPair::CS: return "CS";
    case PersonalityPair::SC: return "SC";
    case PersonalityPair::SS: return "SS";
  }
  return "?";
}

PersonalityPair personality_from_name(std::string_view name) {
  if (name == "CC") return PersonalityPair::CC;
  if (name == "CS") return PersonalityPair::CS;
  if (name == "SC") return PersonalityPair::SC;
  if (name == "SS") return PersonalityPair::SS;
  throw SchemaError("personality pair must be one of CC, CS, SC, SS; got \"" + std::string(name) + "\"");
}

void GameConfig::validate() const {
  if (horizon < 1) throw DomainError("horizon must be >= 1");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("lambda must be > 0");
  if (repetitions < 1) throw DomainError("repetitions must be >= 1");
}

std::vector<Action> GameLog::actions(Seat seat) const {
  std::vector<Action> out;
  out.reserve(rounds.size());
  for (const auto& r : rounds) out.push_back(r.own(seat));
  return out;
}

GameLog play_game(Policy& policy_a, Policy& policy_b, const GameConfig& config) {
  config.validate();
  const PenaltyMatrix matrix = scale_matrix(PenaltyMatrix::baseline(), config.lambda);

  GameLog log;
  log.config = config;
  log.rounds.reserve(static_cast<std::size_t>(config.horizon));

  for (int round = 1; round <= config.horizon; ++round) {
    const std::span<const RoundRecord> history(log.rounds);
    Action a{}, b{};
    try {
      Rng rng_a(derive_seed(config.seed, {0, static_cast<std::uint64_t>(round)}));
      Rng rng_b(derive_seed(config.seed, {1, static_cast<std::uint64_t>(round)}));
      a = policy_a.step({round, config.horizon, Seat::A, history, matrix, rng_a});
      b = policy_b.step({round, config.horizon, Seat::B, history, matrix, rng_b});
    } catch (const AbortedGame&) {
      throw;
    } catch (const std::exception& e) {
      throw AbortedGame("policy failed in round " + std::to_string(round) + ": " + e.what(), log);
    }
    RoundRecord rec;
    rec.round = round;
    rec.action_a = a;
    rec.action_b = b;
    rec.outcome_a = outcome_of(a, b);
    rec.outcome_b = outcome_of(b, a);
    rec.penalty_a = matrix.penalty(rec.outcome_a);
    rec.penalty_b = matrix.penalty(rec.outcome_b);
    log.total_a += rec.penalty_a;
    log.total_b += rec.penalty_b;
    log.rounds.push_back(rec);
  }
  return log;
}

double normalized_penalty_ratio(const GameLog& log, Seat seat) {
  // Baseline units: the ratio is then exactly the same at every lambda.
  const PenaltyMatrix base = PenaltyMatrix::baseline();
  double total = 0.0;
  for (const auto& r : log.rounds) total += base.penalty(r.outcome(seat));
  return total / (base.s * static_cast<double>(log.rounds.size()));
}

std::vector<double> avg_choice_trajectory(std::span<const GameLog> logs) {
  if (logs.empty()) throw DomainError("avg_choice_trajectory needs at least one log");
  const std::size_t horizon = logs.front().rounds.size();
  std::vector<double> sum(horizon, 0.0);
  for (const auto& log : logs) {
    if (log.rounds.size() != horizon) throw DomainError("avg_choice_trajectory: logs have mixed horizons");
    for (std::size_t t = 0; t < horizon; ++t) {
      sum[t] += log.rounds[t].action_a == Action::Defect ? 1.0 : -1.0;
      sum[t] += log.rounds[t].action_b == Action::Defect ? 1.0 : -1.0;
    }
  }
  const double n = 2.0 * static_cast<double>(logs.size());
  for (double& v : sum) v /= n;
  return sum;
}

nlohmann::json to_json(const GameConfig& c) {
  return {{"horizon", c.horizon},
          {"lambda", c.lambda},
          {"repetitions", c.repetitions},
          {"seed", c.seed},
          {"model", c.metadata.model},
          {"language", c.metadata.language},
          {"personality_pair", personality_name(c.metadata.personality)}};
}

GameConfig game_config_from_json(const nlohmann::json& j) {
  GameConfig c;
  try {
    c.horizon = j.at("horizon").get<int>();
    c.lambda = j.at("lambda").get<double>();
    c.repetitions = j.value("repetitions", 1);
    c.seed = j.value("seed", std::uint64_t{0});
    c.metadata.model = j.value("model", std::string("none"));
    c.metadata.language = j.value("language", std::string("none"));
    c.metadata.personality = personality_from_name(j.value("personality_pair", std::string("CC")));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const GameLog& log) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : log.rounds) {
    rounds.push_back({{"round", r.round},
                      {"action_a", option_label(r.action_a)},
                      {"action_b", option_label(r.action_b)},
                      {"penalty_a", r.penalty_a},
                      {"penalty_b", r.penalty_b}});
  }
  nlohmann::json j = {{"config", to_json(log.config)},
                      {"rounds", std::move(rounds)},
                      {"totals", {log.total_a, log.total_b}}};
  if (!log.game_id.empty()) j["game_id"] = log.game_id;
  return j;
}

GameLog game_log_from_json(const nlohmann::json& j) {
  GameLog log;
  try {
    log.game_id = j.value("game_id", std::string());
    log.config = game_config_from_json(j.at("config"));
    for (const auto& r : j.at("rounds")) {
      RoundRecord rec;
      rec.round = r.at("round").get<int>();
      rec.action_a = action_from_option(r.at("action_a").get<std::string>());
      rec.action_b = action_from_option(r.at("action_b").get<std::string>());
      rec.penalty_a = r.at("penalty_a").get<double>();
      rec.penalty_b = r.at("penalty_b").get<double>();
      rec.outcome_a = outcome_of(rec.action_a, rec.action_b);
      rec.outcome_b = outcome_of(rec.action_b, rec.action_a);
      log.rounds.push_back(rec);
    }
    const auto& totals = j.at("totals");
    log.total_a = totals.at(0).get<double>();
    log.total_b = totals.at(1).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("game log: ") + e.what());
  }
  return log;
}

void write_game_logs(const std::string& path, std::span<const GameLog> logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& log : logs) out << to_json(log).dump() << '\n';
}

std::vector<GameLog> read_game_logs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::vector<GameLog> logs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      logs.push_back(game_log_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(path + ": " + e.what());
    }
  }
  return logs;
}

}  // namespace pdintent
