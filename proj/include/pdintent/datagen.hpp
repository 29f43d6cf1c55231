#pragma once

// Synthetic labeled corpora of noisy canonical-strategy trajectories and
// their encoding into per-round feature vectors.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdintent/strategies.hpp"

namespace pdintent {

enum class OpponentSpec : std::uint8_t {
  UniformRandom,    // i.i.d. fair coin
  MixOfCanonical,   // one of ALLC/ALLD/TFT/WSLS, uniformly, with the same epsilon
};

std::string_view opponent_name(OpponentSpec o);
OpponentSpec opponent_from_name(std::string_view name);

struct CorpusSpec {
  int n_per_class = 2500;
  int horizon = 10;
  std::vector<double> epsilon_levels = {0.0, 0.05};
  int strategy_set = 4;
  OpponentSpec opponent = OpponentSpec::UniformRandom;
  double split_fraction = 0.2;
  std::uint64_t seed = 0;
  bool wsls_random_start = false;

  void validate() const;
  bool operator==(const CorpusSpec&) const = default;
};

nlohmann::json to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);

inline constexpr int kFeatureWidth = 5;

/// Per round: own-action bit (C = 1) followed by a one-hot over R, S, T, P.
struct FeatureSequence {
  std::vector<std::array<double, kFeatureWidth>> rounds;

  int horizon() const { return static_cast<int>(rounds.size()); }
  bool operator==(const FeatureSequence&) const = default;
};

using FeatureVector = std::vector<double>;

/// One labeled example. `seed_path` identifies the random stream that made it.
struct Sample {
  Trajectory trajectory;
  FeatureSequence features;
  StrategyLabel label = StrategyLabel::ALLC;
  double epsilon = 0.0;
  std::vector<std::uint64_t> seed_path;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  CorpusSpec spec;
};

Trajectory generate_trajectory(StrategyLabel label, int horizon, double epsilon, OpponentSpec opponent,
                               std::uint64_t seed, bool wsls_random_start = false);

/// n_per_class trajectories per label per noise level, stratified train/test
/// split. Deterministic given spec.seed.
Dataset generate_corpus(const CorpusSpec& spec);

FeatureSequence encode_sequence(const Trajectory& traj);
Trajectory decode_sequence(const FeatureSequence& seq);

FeatureVector flatten(const FeatureSequence& seq);
FeatureSequence unflatten(std::span<const double> vec);

/// Keeps only samples generated at the given noise level.
std::vector<Sample> filter_by_epsilon(std::span<const Sample> samples, double epsilon);

/// One JSON object per trajectory: split, label, epsilon, own, opp, seed_path.
void write_corpus(const std::string& path, const Dataset& data);
Dataset read_corpus(const std::string& path);

}  // namespace pdintent
