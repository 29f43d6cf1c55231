#pragma once

// Canonical strategies: noisy generating policies and the tolerance-based
// rule matcher that recognizes them in observed trajectories.

#include <array>
#include <bit>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdintent/game.hpp"

namespace pdintent {

/// Order matters: it is the class index used by every classifier.
enum class StrategyLabel : std::uint8_t { ALLC, ALLD, TFT, WSLS, RND };

inline constexpr std::array<StrategyLabel, 5> kAllLabels = {StrategyLabel::ALLC, StrategyLabel::ALLD,
                                                           StrategyLabel::TFT, StrategyLabel::WSLS,
                                                           StrategyLabel::RND};

std::string_view label_name(StrategyLabel l);
StrategyLabel label_from_name(std::string_view name);

/// Set of admissible labels: 3 -> {ALLC, ALLD, TFT}, 4 adds WSLS, 5 adds RND.
class StrategySet {
 public:
  explicit StrategySet(int size = 4);
  int size() const { return size_; }
  std::span<const StrategyLabel> labels() const { return {kAllLabels.data(), static_cast<std::size_t>(size_)}; }
  bool contains(StrategyLabel l) const { return static_cast<int>(l) < size_; }
  bool operator==(const StrategySet&) const = default;

 private:
  int size_;
};

/// Small bitset over StrategyLabel.
class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(std::initializer_list<StrategyLabel> ls) {
    for (auto l : ls) insert(l);
  }
  static LabelSet from_bits(unsigned bits) {
    LabelSet s;
    s.bits_ = bits & 0x1fu;
    return s;
  }
  void insert(StrategyLabel l) { bits_ |= 1u << static_cast<unsigned>(l); }
  bool contains(StrategyLabel l) const { return (bits_ >> static_cast<unsigned>(l)) & 1u; }
  bool empty() const { return bits_ == 0; }
  std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits_)); }
  unsigned bits() const { return bits_; }
  std::vector<StrategyLabel> to_vector() const;
  bool operator==(const LabelSet&) const = default;

 private:
  unsigned bits_ = 0;
};

/// Own and opponent action sequences from one agent's point of view.
struct Trajectory {
  std::vector<Action> own;
  std::vector<Action> opp;
  std::optional<StrategyLabel> label;

  std::size_t size() const { return own.size(); }
  void validate() const;
  /// Agent's view of a finished game.
  static Trajectory from_game(const GameLog& log, Seat seat);
  bool operator==(const Trajectory&) const = default;
};

struct PolicyState {
  StrategyLabel label = StrategyLabel::ALLC;
  double epsilon = 0.0;
  /// WSLS opens with a fair coin instead of C.
  bool wsls_random_start = false;
};

/// Intended action of a canonical strategy, before execution noise.
/// `own` and `opp` hold exactly round_index - 1 past actions.
Action intended_action(const PolicyState& state, int round_index, std::span<const Action> own,
                       std::span<const Action> opp, Rng& rng);

/// Intended action flipped with probability epsilon.
Action policy_step(const PolicyState& state, int round_index, int horizon, std::span<const Action> own,
                   std::span<const Action> opp, Rng& rng);

/// Adapter that seats a canonical strategy in the game engine.
class CanonicalPolicy final : public Policy {
 public:
  explicit CanonicalPolicy(PolicyState state) : state_(state) {}
  Action step(const StepContext& ctx) override;
  std::string describe() const override;
  const PolicyState& state() const { return state_; }

 private:
  PolicyState state_;
};

enum class ToleranceMode : std::uint8_t {
  Literal,  // deviations <= eps * (N - 1)
  Ceil,     // deviations <= ceil(eps * (N - 1))
};

struct RuleOptions {
  double eps_noise = 0.1;
  ToleranceMode tolerance = ToleranceMode::Literal;
};

/// Every label in `set` whose defining rule holds for the trajectory. RND has
/// no rule and is never returned.
LabelSet rule_match(const Trajectory& traj, const StrategySet& set, const RuleOptions& opts = {});

/// Fixed precedence ALLD > ALLC > TFT > WSLS > RND.
std::optional<StrategyLabel> resolve_priority(LabelSet labels);

}  // namespace pdintent
