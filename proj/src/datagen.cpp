#include "pdintent/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pdintent {

std::string_view opponent_name(OpponentSpec o) {
  return o == OpponentSpec::UniformRandom ? "uniform" : "mix";
}

OpponentSpec opponent_from_name(std::string_view name) {
  if (name == "uniform") return OpponentSpec::UniformRandom;
  if (name == "mix") return OpponentSpec::MixOfCanonical;
  throw SchemaError("opponent must be \"uniform\" or \"mix\", got \"" + std::string(name) + "\"");
}

void CorpusSpec::validate() const {
  if (n_per_class < 1) throw DomainError("n_per_class must be >= 1");
  if (horizon < 1) throw DomainError("horizon must be >= 1");
  if (epsilon_levels.empty()) throw DomainError("at least one noise level is required");
  for (double e : epsilon_levels)
    if (!(e >= 0.0 && e <= 1.0)) throw DomainError("noise levels must lie in [0, 1]");
  StrategySet{strategy_set};
  if (!(split_fraction >= 0.0 && split_fraction < 1.0)) throw DomainError("split fraction must lie in [0, 1)");
}

nlohmann::json to_json(const CorpusSpec& s) {
  return {{"n_per_class", s.n_per_class},       {"horizon", s.horizon},
          {"epsilon_levels", s.epsilon_levels}, {"strategy_set", s.strategy_set},
          {"opponent", opponent_name(s.opponent)}, {"split_fraction", s.split_fraction},
          {"seed", s.seed},                     {"wsls_random_start", s.wsls_random_start}};
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  try {
    s.n_per_class = j.value("n_per_class", s.n_per_class);
    s.horizon = j.value("horizon", s.horizon);
    s.epsilon_levels = j.value("epsilon_levels", s.epsilon_levels);
    s.strategy_set = j.value("strategy_set", s.strategy_set);
    s.opponent = opponent_from_name(j.value("opponent", std::string("uniform")));
    s.split_fraction = j.value("split_fraction", s.split_fraction);
    s.seed = j.value("seed", s.seed);
    s.wsls_random_start = j.value("wsls_random_start", s.wsls_random_start);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("corpus spec: ") + e.what());
  }
  s.validate();
  return s;
}

Trajectory generate_trajectory(StrategyLabel label, int horizon, double epsilon, OpponentSpec opponent,
                               std::uint64_t seed, bool wsls_random_start) {
  CanonicalPolicy own({label, epsilon, wsls_random_start});
  PolicyState opp_state{StrategyLabel::RND, 0.0, wsls_random_start};
  if (opponent == OpponentSpec::MixOfCanonical) {
    Rng pick(derive_seed(seed, {2}));
    opp_state.label = kAllLabels[pick.below(4)];
    opp_state.epsilon = epsilon;
  }
  CanonicalPolicy opp(opp_state);

  GameConfig config;
  config.horizon = horizon;
  config.seed = seed;
  Trajectory traj = Trajectory::from_game(play_game(own, opp, config), Seat::A);
  traj.label = label;
  return traj;
}

FeatureSequence encode_sequence(const Trajectory& traj) {
  traj.validate();
  FeatureSequence seq;
  seq.rounds.resize(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t) {
    auto& row = seq.rounds[t];
    row.fill(0.0);
    row[0] = traj.own[t] == Action::Cooperate ? 1.0 : 0.0;
    row[1 + static_cast<std::size_t>(outcome_of(traj.own[t], traj.opp[t]))] = 1.0;
  }
  return seq;
}

Trajectory decode_sequence(const FeatureSequence& seq) {
  Trajectory traj;
  for (const auto& row : seq.rounds) {
    int slot = -1;
    for (int k = 0; k < 4; ++k) {
      if (row[1 + k] == 1.0) {
        if (slot >= 0) throw DomainError("feature row has more than one outcome slot set");
        slot = k;
      }
    }
    if (slot < 0) throw DomainError("feature row has no outcome slot set");
    const auto o = static_cast<OutcomeState>(slot);
    const bool own_c = o == OutcomeState::R || o == OutcomeState::S;
    const bool opp_c = o == OutcomeState::R || o == OutcomeState::T;
    traj.own.push_back(own_c ? Action::Cooperate : Action::Defect);
    traj.opp.push_back(opp_c ? Action::Cooperate : Action::Defect);
  }
  return traj;
}

FeatureVector flatten(const FeatureSequence& seq) {
  FeatureVector v;
  v.reserve(seq.rounds.size() * kFeatureWidth);
  for (const auto& row : seq.rounds) v.insert(v.end(), row.begin(), row.end());
  return v;
}

FeatureSequence unflatten(std::span<const double> vec) {
  if (vec.size() % kFeatureWidth != 0) throw DomainError("feature vector length is not a multiple of 5");
  FeatureSequence seq;
  seq.rounds.resize(vec.size() / kFeatureWidth);
  for (std::size_t t = 0; t < seq.rounds.size(); ++t)
    std::copy_n(vec.begin() + static_cast<std::ptrdiff_t>(t * kFeatureWidth), kFeatureWidth, seq.rounds[t].begin());
  return seq;
}

Dataset generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const StrategySet set(spec.strategy_set);
  Dataset data;
  data.spec = spec;

  const auto n = static_cast<std::size_t>(spec.n_per_class);
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.split_fraction));

  for (std::size_t e = 0; e < spec.epsilon_levels.size(); ++e) {
    const double eps = spec.epsilon_levels[e];
    for (StrategyLabel label : set.labels()) {
      const auto li = static_cast<std::uint64_t>(label);
      std::vector<Sample> block(n);
      for (std::size_t i = 0; i < n; ++i) {
        Sample& s = block[i];
        s.seed_path = {spec.seed, e, li, i};
        const std::uint64_t seed = derive_seed(spec.seed, {e, li, i});
        s.trajectory = generate_trajectory(label, spec.horizon, eps, spec.opponent, seed, spec.wsls_random_start);
        s.features = encode_sequence(s.trajectory);
        s.label = label;
        s.epsilon = eps;
      }
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      Rng split_rng(derive_seed(spec.seed, {0x5917, e, li}));
      split_rng.shuffle(order.begin(), order.end());
      std::vector<bool> is_test(n, false);
      for (std::size_t k = 0; k < n_test; ++k) is_test[order[k]] = true;
      for (std::size_t i = 0; i < n; ++i) (is_test[i] ? data.test : data.train).push_back(std::move(block[i]));
    }
  }
  return data;
}

std::vector<Sample> filter_by_epsilon(std::span<const Sample> samples, double epsilon) {
  std::vector<Sample> out;
  for (const auto& s : samples)
    if (s.epsilon == epsilon) out.push_back(s);
  return out;
}

namespace {

std::string actions_string(const std::vector<Action>& actions) {
  std::string s;
  s.reserve(actions.size());
  for (Action a : actions) s.push_back(action_char(a));
  return s;
}

std::vector<Action> parse_actions(const std::string& s) {
  std::vector<Action> out;
  out.reserve(s.size());
  for (char c : s) out.push_back(action_from_char(c));
  return out;
}

nlohmann::json sample_json(const Sample& s, std::string_view split) {
  return {{"split", split},
          {"label", label_name(s.label)},
          {"epsilon", s.epsilon},
          {"own", actions_string(s.trajectory.own)},
          {"opp", actions_string(s.trajectory.opp)},
          {"seed_path", s.seed_path}};
}

}  // namespace

void write_corpus(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& s : data.train) out << sample_json(s, "train").dump() << '\n';
  for (const auto& s : data.test) out << sample_json(s, "test").dump() << '\n';
}

Dataset read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  Dataset data;
  std::vector<double> eps_levels;
  int max_label = 0;
  int horizon = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Sample s;
      s.label = label_from_name(j.at("label").get<std::string>());
      s.epsilon = j.at("epsilon").get<double>();
      s.trajectory.own = parse_actions(j.at("own").get<std::string>());
      s.trajectory.opp = parse_actions(j.at("opp").get<std::string>());
      s.trajectory.label = s.label;
      s.seed_path = j.value("seed_path", std::vector<std::uint64_t>{});
      s.features = encode_sequence(s.trajectory);
      max_label = std::max(max_label, static_cast<int>(s.label));
      horizon = std::max(horizon, static_cast<int>(s.trajectory.size()));
      if (std::find(eps_levels.begin(), eps_levels.end(), s.epsilon) == eps_levels.end())
        eps_levels.push_back(s.epsilon);
      const auto split = j.at("split").get<std::string>();
      if (split == "train")
        data.train.push_back(std::move(s));
      else if (split == "test")
        data.test.push_back(std::move(s));
      else
        throw SchemaError("split must be \"train\" or \"test\"");
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DomainError& e) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  data.spec.horizon = horizon;
  data.spec.epsilon_levels = eps_levels;
  data.spec.strategy_set = std::max(3, max_label + 1);
  return data;
}

}  // namespace pdintent
