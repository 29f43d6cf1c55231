#include "pdintent/strategies.hpp"

#include <cmath>

namespace pdintent {

std::string_view label_name(StrategyLabel l) {
  switch (l) {
    case StrategyLabel::ALLC: return "ALLC";
    case StrategyLabel::ALLD: return "ALLD";
    case StrategyLabel::TFT: return "TFT";
    case StrategyLabel::WSLS: return "WSLS";
    case StrategyLabel::RND: return "RND";
  }
  return "?";
}

StrategyLabel label_from_name(std::string_view name) {
  for (auto l : kAllLabels)
    if (label_name(l) == name) return l;
  throw SchemaError("unknown strategy label \"" + std::string(name) + "\"");
}

StrategySet::StrategySet(int size) : size_(size) {
  if (size < 3 || size > 5) throw DomainError("strategy set size must be 3, 4 or 5");
}

std::vector<StrategyLabel> LabelSet::to_vector() const {
  std::vector<StrategyLabel> out;
  for (auto l : kAllLabels)
    if (contains(l)) out.push_back(l);
  return out;
}

void Trajectory::validate() const {
  if (own.size() != opp.size()) throw DomainError("trajectory action lists differ in length");
  if (own.empty()) throw DomainError("trajectory is empty");
}

Trajectory Trajectory::from_game(const GameLog& log, Seat seat) {
  Trajectory t;
  t.own.reserve(log.rounds.size());
  t.opp.reserve(log.rounds.size());
  for (const auto& r : log.rounds) {
    t.own.push_back(r.own(seat));
    t.opp.push_back(r.opp(seat));
  }
  return t;
}

Action intended_action(const PolicyState& state, int round_index, std::span<const Action> own,
                       std::span<const Action> opp, Rng& rng) {
  switch (state.label) {
    case StrategyLabel::ALLC: return Action::Cooperate;
    case StrategyLabel::ALLD: return Action::Defect;
    case StrategyLabel::TFT: return round_index == 1 ? Action::Cooperate : opp.back();
    case StrategyLabel::WSLS: {
      if (round_index == 1)
        return state.wsls_random_start && rng.bernoulli(0.5) ? Action::Defect : Action::Cooperate;
      // Stay after R or T (opponent cooperated), shift after S or P.
      return opp.back() == Action::Cooperate ? own.back() : flip(own.back());
    }
    case StrategyLabel::RND: return rng.bernoulli(0.5) ? Action::Defect : Action::Cooperate;
  }
  return Action::Cooperate;
}

Action policy_step(const PolicyState& state, int round_index, int horizon, std::span<const Action> own,
                   std::span<const Action> opp, Rng& rng) {
  if (round_index < 1 || round_index > horizon) throw DomainError("round index outside [1, horizon]");
  if (own.size() != static_cast<std::size_t>(round_index - 1) || opp.size() != own.size())
    throw DomainError("history must contain exactly round_index - 1 rounds");
  if (!(state.epsilon >= 0.0 && state.epsilon <= 1.0)) throw DomainError("epsilon must lie in [0, 1]");
  const Action intended = intended_action(state, round_index, own, opp, rng);
  return rng.bernoulli(state.epsilon) ? flip(intended) : intended;
}

Action CanonicalPolicy::step(const StepContext& ctx) {
  std::vector<Action> own, opp;
  own.reserve(ctx.history.size());
  opp.reserve(ctx.history.size());
  for (const auto& r : ctx.history) {
    own.push_back(r.own(ctx.seat));
    opp.push_back(r.opp(ctx.seat));
  }
  return policy_step(state_, ctx.round_index, ctx.horizon, own, opp, ctx.rng);
}

std::string CanonicalPolicy::describe() const {
  return std::string(label_name(state_.label)) + "(eps=" + std::to_string(state_.epsilon) + ")";
}

namespace {

bool within_tolerance(std::size_t deviations, std::size_t n, const RuleOptions& opts) {
  const double bound = opts.eps_noise * static_cast<double>(n - 1);
  if (opts.tolerance == ToleranceMode::Ceil) return static_cast<double>(deviations) <= std::ceil(bound - 1e-12);
  return static_cast<double>(deviations) <= bound;
}

}  // namespace

LabelSet rule_match(const Trajectory& traj, const StrategySet& set, const RuleOptions& opts) {
  traj.validate();
  const std::size_t n = traj.size();
  const auto& a = traj.own;
  const auto& o = traj.opp;
  LabelSet out;

  bool all_c = true, all_d = true;
  for (Action x : a) {
    all_c &= x == Action::Cooperate;
    all_d &= x == Action::Defect;
  }
  if (all_c) out.insert(StrategyLabel::ALLC);
  if (all_d) out.insert(StrategyLabel::ALLD);
  if (n < 2) return out;

  if (a[0] == Action::Cooperate) {
    std::size_t dev = 0;
    for (std::size_t t = 1; t < n; ++t) dev += a[t] != o[t - 1];
    if (within_tolerance(dev, n, opts)) out.insert(StrategyLabel::TFT);
  }
  if (set.contains(StrategyLabel::WSLS)) {
    std::size_t dev = 0;
    for (std::size_t t = 1; t < n; ++t) {
      const Action predicted = o[t - 1] == Action::Cooperate ? a[t - 1] : flip(a[t - 1]);
      dev += a[t] != predicted;
    }
    if (within_tolerance(dev, n, opts)) out.insert(StrategyLabel::WSLS);
  }
  return out;
}

std::optional<StrategyLabel> resolve_priority(LabelSet labels) {
  static constexpr std::array<StrategyLabel, 5> order = {StrategyLabel::ALLD, StrategyLabel::ALLC,
                                                         StrategyLabel::TFT, StrategyLabel::WSLS,
                                                         StrategyLabel::RND};
  for (auto l : order)
    if (labels.contains(l)) return l;
  return std::nullopt;
}

}  // namespace pdintent
