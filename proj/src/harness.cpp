#include "pdintent/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "pdintent/agent_gateway.hpp"
#include "pdintent/analytics.hpp"
#include "pdintent/hashing.hpp"
#include "pdintent/pipeline.hpp"
#include "text.hpp"

namespace pdintent {

namespace fs = std::filesystem;
using nlohmann::json;

std::string manifest_name(const std::string& subcommand) { return subcommand + ".manifest.json"; }

F1Band acceptance_band(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::RecurrentNet: return {0.95, 1.0};
    case ClassifierKind::RandomForest: return {0.95, 1.0};
    case ClassifierKind::StateFactorized: return {0.92, 1.0};
    case ClassifierKind::FeedforwardNet: return {0.90, 1.0};
    case ClassifierKind::PerClassHMM: return {0.70, 0.86};
    case ClassifierKind::LogisticRegression: return {0.70, 0.84};
  }
  return {};
}

namespace {

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {};

// Registers options so their resolved values can be dumped into a manifest
// and injected back from a config file.
class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* option(const std::string& name, T& var, const std::string& help) {
    getters_.emplace_back(name, [&var] { return json(var); });
    auto* o = app_->add_option("--" + name, var, help);
    if constexpr (is_vector<T>::value) o->delimiter(',');
    return o;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    getters_.emplace_back(name, [&var] { return json(var); });
    flags_.insert(name);
    return app_->add_flag("--" + name, var, help);
  }

  CLI::App* app() const { return app_; }
  bool has(const std::string& name) const {
    return std::any_of(getters_.begin(), getters_.end(), [&](const auto& g) { return g.first == name; });
  }
  bool is_flag(const std::string& name) const { return flags_.count(name) > 0; }

  json resolved() const {
    json j = json::object();
    for (const auto& [name, get] : getters_) j[name] = get();
    return j;
  }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<json()>>> getters_;
  std::set<std::string> flags_;
};

std::string iso_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Artifact bookkeeping for one subcommand run.
class Run {
 public:
  Run(fs::path out_dir, std::string format, std::ostream& out)
      : out_dir_(std::move(out_dir)), format_(std::move(format)), out(out) {
    if (format_ != "csv" && format_ != "json") throw DomainError("--format must be csv or json");
    fs::create_directories(out_dir_);
  }

  bool json_format() const { return format_ == "json"; }
  fs::path path(const std::string& name) const { return out_dir_ / name; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream f(path(name), std::ios::binary);
    if (!f) throw Error("cannot write " + path(name).string());
    f << content;
    f.close();
    outputs_[name] = sha256_hex(content);
  }
  /// For artifacts written by library functions.
  void record(const std::string& name) { outputs_[name] = sha256_file(path(name).string()); }
  void input(const std::string& p) { inputs_[p] = sha256_file(p); }
  void input(const std::string& p, const std::string& content) { inputs_[p] = sha256_hex(content); }
  void seed(const std::string& name, std::uint64_t v) { seeds_[name] = v; }

  json manifest_fields() const { return {{"inputs", inputs_}, {"outputs", outputs_}, {"seeds", seeds_}}; }

 private:
  fs::path out_dir_;
  std::string format_;
  json inputs_ = json::object(), outputs_ = json::object(), seeds_ = json::object();

 public:
  std::ostream& out;
};

Hyperparams load_hyperparams(const std::string& path, Run& run) {
  if (path.empty()) return {};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  run.input(path, text);
  try {
    return Hyperparams::from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

std::vector<ClassifierKind> parse_kinds(const std::vector<std::string>& names) {
  if (names.empty() || (names.size() == 1 && names[0] == "all")) return {kAllKinds.begin(), kAllKinds.end()};
  std::vector<ClassifierKind> kinds;
  for (const auto& n : names) kinds.push_back(kind_from_name(n));
  return kinds;
}

std::vector<std::pair<StrategyLabel, StrategyLabel>> parse_pairings(const std::vector<std::string>& specs) {
  std::vector<std::pair<StrategyLabel, StrategyLabel>> out;
  for (const auto& s : specs) {
    if (s == "all") {
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) out.emplace_back(kAllLabels[static_cast<std::size_t>(i)], kAllLabels[static_cast<std::size_t>(j)]);
      continue;
    }
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw DomainError("pairing must look like X:Y, got '" + s + "'");
    out.emplace_back(label_from_name(s.substr(0, colon)), label_from_name(s.substr(colon + 1)));
  }
  if (out.empty()) throw DomainError("no pairings given");
  return out;
}

std::string pairing_name(const std::pair<StrategyLabel, StrategyLabel>& p) {
  return std::string(label_name(p.first)) + ":" + std::string(label_name(p.second));
}

std::vector<GroupField> parse_fields(const std::vector<std::string>& names) {
  std::vector<GroupField> f;
  for (const auto& n : names) f.push_back(group_field_from_name(n));
  return f;
}

RuleOptions rule_options(double eps_noise, bool ceil) {
  return {eps_noise, ceil ? ToleranceMode::Ceil : ToleranceMode::Literal};
}

// Noise slice recorded at training time, if any.
std::optional<double> model_train_noise(const Model& m) {
  const auto& man = m.training_manifest();
  if (man.contains("train_noise") && man["train_noise"].is_number()) return man["train_noise"].get<double>();
  return std::nullopt;
}

std::vector<Sample> select_noise(std::span<const Sample> samples, std::optional<double> noise) {
  if (!noise) return {samples.begin(), samples.end()};
  return filter_by_epsilon(samples, *noise);
}

std::vector<GameLog> simulate_canonical(const std::vector<std::pair<StrategyLabel, StrategyLabel>>& pairings,
                                        const std::vector<double>& lambdas, int reps, int horizon, double epsilon,
                                        bool wsls_random_start, std::uint64_t seed) {
  if (lambdas.empty()) throw DomainError("no lambda values given");
  if (reps < 1) throw DomainError("--reps must be >= 1");
  std::vector<GameLog> logs;
  for (std::uint64_t pi = 0; pi < pairings.size(); ++pi)
    for (std::uint64_t li = 0; li < lambdas.size(); ++li)
      for (std::uint64_t r = 0; r < static_cast<std::uint64_t>(reps); ++r) {
        GameConfig cfg;
        cfg.horizon = horizon;
        cfg.lambda = lambdas[li];
        cfg.repetitions = reps;
        cfg.seed = derive_seed(seed, {pi, li, r});
        cfg.metadata.model = pairing_name(pairings[pi]);
        CanonicalPolicy a({pairings[pi].first, epsilon, wsls_random_start});
        CanonicalPolicy b({pairings[pi].second, epsilon, wsls_random_start});
        GameLog log = play_game(a, b, cfg);
        log.game_id = cfg.metadata.model + "/" + detail::fmt(cfg.lambda) + "/" + std::to_string(r);
        logs.push_back(std::move(log));
      }
  return logs;
}

std::string game_logs_text(std::span<const GameLog> logs) {
  std::string s;
  for (const auto& l : logs) s += to_json(l).dump() + '\n';
  return s;
}

std::string test_result_row(const std::string& name, const TestResult& t) {
  return name + ',' + detail::fmt(t.statistic) + ',' + detail::fmt(t.df1) + ',' + (t.df2 ? detail::fmt(*t.df2) : "") +
         ',' + detail::fmt(t.p_value) + ',' + t.effect_name + ',' + detail::fmt(t.effect_size) + ',' +
         (t.degenerate ? "true" : "false") + '\n';
}

// ---- subcommands ----------------------------------------------------------

struct DatagenOpts {
  int strategies = 4;
  std::vector<double> noise = {0.0, 0.05};
  int n_per_class = 2500;
  int horizon = 10;
  std::string opponent = "uniform";
  double split = 0.2;
  bool wsls_random_start = false;
  std::string output = "corpus.jsonl";
};

void cmd_datagen(Run& run, const DatagenOpts& o, std::uint64_t seed) {
  CorpusSpec spec;
  spec.strategy_set = o.strategies;
  spec.epsilon_levels = o.noise;
  spec.n_per_class = o.n_per_class;
  spec.horizon = o.horizon;
  spec.opponent = opponent_from_name(o.opponent);
  spec.split_fraction = o.split;
  spec.wsls_random_start = o.wsls_random_start;
  spec.seed = seed;
  run.seed("corpus", seed);
  const Dataset data = generate_corpus(spec);
  write_corpus(run.path(o.output).string(), data);
  run.record(o.output);
  run.out << "wrote " << data.train.size() + data.test.size() << " trajectories (train " << data.train.size()
          << ", test " << data.test.size() << ") to " << run.path(o.output).string() << '\n';
}

struct TrainOpts {
  std::string kind;
  std::string corpus;
  double noise = 0.05;
  bool joint_noise = false;
  int strategies = 0;
  std::string hyperparams;
  std::string output;
};

void cmd_train(Run& run, const TrainOpts& o, std::uint64_t seed) {
  const ClassifierKind kind = kind_from_name(o.kind);
  run.input(o.corpus);
  const Dataset data = read_corpus(o.corpus);
  const auto noise = o.joint_noise ? std::nullopt : std::optional<double>(o.noise);
  const auto samples = select_noise(data.train, noise);
  if (samples.empty()) throw DomainError("no training samples at noise " + detail::fmt(o.noise) + " in " + o.corpus);
  const StrategySet set(o.strategies > 0 ? o.strategies : data.spec.strategy_set);
  const Hyperparams hp = load_hyperparams(o.hyperparams, run);
  run.seed("train", seed);

  json provenance = {{"corpus_sha256", sha256_file(o.corpus)}};
  provenance["train_noise"] = noise ? json(*noise) : json("all");
  TrainingTrace trace;
  const Model model = train(kind, samples, set, hp, seed, &trace, provenance);

  const std::string name = o.output.empty() ? std::string(kind_name(kind)) + ".model.json" : o.output;
  save_model(model, run.path(name).string());
  run.record(name);

  std::string csv;
  if (!trace.loss.empty()) {
    csv = "epoch,loss\n";
    for (std::size_t e = 0; e < trace.loss.size(); ++e) csv += std::to_string(e + 1) + ',' + detail::fmt(trace.loss[e]) + '\n';
  } else if (!trace.em_log_likelihood.empty()) {
    csv = "label,iteration,mean_log_likelihood\n";
    for (std::size_t k = 0; k < trace.em_log_likelihood.size(); ++k)
      for (std::size_t i = 0; i < trace.em_log_likelihood[k].size(); ++i)
        csv += std::string(label_name(set.labels()[k])) + ',' + std::to_string(i) + ',' +
               detail::fmt(trace.em_log_likelihood[k][i]) + '\n';
  }
  if (!csv.empty()) run.write(std::string(kind_name(kind)) + ".trace.csv", csv);
  run.out << "trained " << kind_name(kind) << " on " << samples.size() << " trajectories -> "
          << run.path(name).string() << '\n';
}

struct EvaluateOpts {
  std::string model;
  std::string corpus;
  double noise = -1.0;
  bool all_noise = false;
};

void cmd_evaluate(Run& run, const EvaluateOpts& o) {
  run.input(o.model);
  run.input(o.corpus);
  const Model model = load_model(o.model);
  const Dataset data = read_corpus(o.corpus);
  std::optional<double> noise;
  if (!o.all_noise) noise = o.noise >= 0.0 ? std::optional<double>(o.noise) : model_train_noise(model);
  const auto test = select_noise(data.test, noise);
  if (test.empty()) throw DomainError("no test samples selected from " + o.corpus);
  const EvalReport r = evaluate(model, test);
  const std::string stem = std::string(kind_name(model.kind())) + ".eval";
  if (run.json_format())
    run.write(stem + ".json", r.to_json().dump(2) + '\n');
  else
    run.write(stem + ".csv", r.to_csv());
  run.out << kind_name(model.kind()) << " n=" << test.size() << " accuracy=" << detail::fmt(r.accuracy)
          << " macro_f1=" << detail::fmt(r.macro_f1) << '\n';
}

struct PipelineFlags {
  double tau = 0.9;
  std::string mode = "model-first";
  bool no_rules = false;
  double eps_noise = 0.1;
  bool rule_tolerance_ceil = false;

  PipelineOptions options() const {
    return {tau, mode_from_name(mode), !no_rules, rule_options(eps_noise, rule_tolerance_ceil)};
  }
};

struct ClassifyOpts {
  std::string model;
  std::string logs;
  PipelineFlags pipe;
  std::vector<std::string> group_by;
  bool exclude_rule_labels = false;
};

void cmd_classify(Run& run, const ClassifyOpts& o) {
  run.input(o.model);
  run.input(o.logs);
  const Model model = load_model(o.model);
  const auto logs = read_game_logs(o.logs);
  const auto results = classify_corpus(model, logs, o.pipe.options());
  write_classifications(run.path("classifications.jsonl").string(), results, model.labels());
  run.record("classifications.jsonl");

  const auto summary = summarize_retention(results, !o.exclude_rule_labels);
  const json retention = {{"mode", o.pipe.mode},
                          {"tau", o.pipe.tau},
                          {"rules", !o.pipe.no_rules},
                          {"count_rule_labels", !o.exclude_rule_labels},
                          {"n_total", summary.n_total},
                          {"n_retained", summary.n_retained},
                          {"n_rule", summary.n_rule},
                          {"n_model", summary.n_model},
                          {"retention_rate", summary.retention_rate},
                          {"avg_confidence", summary.avg_confidence}};
  run.write("retention.json", retention.dump(2) + '\n');

  if (summary.n_rule + summary.n_model > 0) {
    const auto fields = parse_fields(o.group_by);
    const auto table = strategy_distribution(results, fields);
    const StrategySet set(static_cast<int>(model.labels().size()));
    if (run.json_format())
      run.write("distribution.json", table.to_json(set).dump(2) + '\n');
    else
      run.write("distribution.csv", table.to_csv(set));
    for (const auto& w : table.warnings) run.out << "warning: " << w << '\n';
  }
  run.out << "classified " << results.size() << " agents; retained " << summary.n_retained << " ("
          << detail::fmt(summary.retention_rate) << ")\n";
}

struct SimulateOpts {
  std::vector<std::string> pairing;
  std::vector<double> lambda = {1.0};
  int reps = 1;
  int horizon = 10;
  double epsilon = 0.0;
  bool wsls_random_start = false;
  std::string remote;
  std::string replay;
  std::string parse_policy = "first-token";
};

void simulate_remote(Run& run, const SimulateOpts& o) {
  run.input(o.remote);
  const ExperimentConfig cfg = load_config(o.remote);
  run.seed("experiment", cfg.seed);
  Throttle throttle(cfg.rate_limit);
  GatewayOptions gw;
  gw.max_retries = cfg.max_retries;
  gw.template_text = cfg.template_text;
  gw.throttle = &throttle;
  if (o.parse_policy == "strict")
    gw.parse_policy = ParsePolicy::Strict;
  else if (o.parse_policy != "first-token")
    throw DomainError("--parse-policy must be first-token or strict");

  std::map<std::string, std::vector<TranscriptEntry>> recorded;
  for (const auto& m : cfg.models)
    if (m.endpoint.rfind("replay:", 0) == 0 && !recorded.count(m.endpoint)) {
      const std::string path = m.endpoint.substr(7);
      run.input(path);
      recorded[m.endpoint] = read_transcript(path);
    }

  std::vector<GameLog> logs, aborted;
  std::vector<TranscriptEntry> transcript;
  std::vector<int> rep_of;
  const auto games = cfg.expand();
  for (std::size_t g = 0; g < games.size(); ++g) {
    const GameConfig& game = games[g];
    const ModelConfig& mc = *std::find_if(cfg.models.begin(), cfg.models.end(),
                                          [&](const ModelConfig& m) { return m.tag == game.metadata.model; });
    const std::string id = ExperimentConfig::game_id(game, static_cast<int>(g % static_cast<std::size_t>(cfg.repetitions)));
    gw.generation = {mc.temperature, mc.top_p};
    const std::string pers(personality_name(game.metadata.personality));

    auto make_endpoint = [&](char seat) -> std::unique_ptr<Endpoint> {
      if (mc.endpoint.rfind("replay:", 0) == 0) {
        std::vector<TranscriptEntry> mine;
        for (const auto& e : recorded[mc.endpoint])
          if (e.game_id == id && e.seat == seat) mine.push_back(e);
        std::stable_sort(mine.begin(), mine.end(), [](const auto& a, const auto& b) { return a.round < b.round; });
        return std::make_unique<ReplayEndpoint>(std::move(mine));
      }
      if (mc.endpoint.empty()) throw SchemaError("field 'models[].endpoint' is required for remote play");
      return std::make_unique<HttpEndpoint>(mc.endpoint, cfg.api_key_env);
    };
    auto ep_a = make_endpoint('A');
    auto ep_b = make_endpoint('B');
    RemoteAgentPolicy a(*ep_a, gw, id, cfg.template_id, game.metadata.language, pers[0]);
    RemoteAgentPolicy b(*ep_b, gw, id, cfg.template_id, game.metadata.language, pers[1]);
    try {
      GameLog log = play_game(a, b, game);
      log.game_id = id;
      logs.push_back(std::move(log));
    } catch (const AbortedGame& e) {
      GameLog partial = e.partial_log();
      partial.game_id = id;
      aborted.push_back(std::move(partial));
      run.out << "aborted " << id << ": " << e.what() << '\n';
    }
    for (const auto* p : {&a, &b}) transcript.insert(transcript.end(), p->transcript().begin(), p->transcript().end());
  }
  run.write("games.jsonl", game_logs_text(logs));
  if (!aborted.empty()) run.write("aborted.jsonl", game_logs_text(aborted));
  std::string t;
  for (const auto& e : transcript) t += e.to_json().dump() + '\n';
  run.write("transcripts.jsonl", t);
  run.out << "played " << logs.size() << " of " << games.size() << " games\n";
}

void cmd_simulate(Run& run, const SimulateOpts& o, std::uint64_t seed) {
  const int sources = (!o.pairing.empty()) + (!o.remote.empty()) + (!o.replay.empty());
  if (sources != 1) throw DomainError("give exactly one of --pairing, --remote, --replay");
  if (!o.remote.empty()) return simulate_remote(run, o);

  std::vector<GameLog> logs;
  if (!o.replay.empty()) {
    run.input(o.replay);
    for (const auto& rec : read_game_logs(o.replay)) {
      auto a = replay_policy(rec, Seat::A, rec.config.horizon);
      auto b = replay_policy(rec, Seat::B, rec.config.horizon);
      GameLog log = play_game(*a, *b, rec.config);
      log.game_id = rec.game_id;
      logs.push_back(std::move(log));
    }
  } else {
    run.seed("games", seed);
    logs = simulate_canonical(parse_pairings(o.pairing), o.lambda, o.reps, o.horizon, o.epsilon, o.wsls_random_start,
                              seed);
  }
  run.write("games.jsonl", game_logs_text(logs));
  if (logs.size() <= 20)
    for (const auto& l : logs)
      run.out << l.game_id << " totals " << detail::fmt(l.total_a) << " " << detail::fmt(l.total_b) << '\n';
  run.out << "wrote " << logs.size() << " games to " << run.path("games.jsonl").string() << '\n';
}

struct SweepThresholdOpts {
  std::string model;
  std::string corpus;
  std::string logs;
  double noise = -1.0;
  std::vector<double> taus = {0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  bool include_rules = false;
  std::string mode = "model-first";
  double eps_noise = 0.1;
  bool rule_tolerance_ceil = false;
};

void cmd_sweep_threshold(Run& run, const SweepThresholdOpts& o) {
  if (o.corpus.empty() == o.logs.empty()) throw DomainError("give exactly one of --corpus, --logs");
  run.input(o.model);
  const Model model = load_model(o.model);
  std::vector<Trajectory> inputs;
  if (!o.corpus.empty()) {
    run.input(o.corpus);
    const Dataset data = read_corpus(o.corpus);
    const auto noise = o.noise >= 0.0 ? std::optional<double>(o.noise) : model_train_noise(model);
    for (const auto& s : select_noise(data.test, noise)) inputs.push_back(s.trajectory);
  } else {
    run.input(o.logs);
    for (const auto& log : read_game_logs(o.logs))
      for (Seat seat : {Seat::A, Seat::B}) inputs.push_back(Trajectory::from_game(log, seat));
  }
  SweepOptions so{o.include_rules, mode_from_name(o.mode), rule_options(o.eps_noise, o.rule_tolerance_ceil)};
  const auto rows = threshold_sweep(model, inputs, o.taus, so);
  if (run.json_format())
    run.write("sweep.json", sweep_to_json(rows).dump(2) + '\n');
  else
    run.write("sweep.csv", sweep_to_csv(rows));
  for (const auto& r : rows)
    run.out << "tau=" << detail::fmt(r.tau) << " retention=" << detail::fmt(r.retention_rate)
            << " avg_confidence=" << detail::fmt(r.avg_confidence) << '\n';
}

struct SweepPayoffOpts {
  std::vector<std::string> pairing = {"all"};
  std::vector<double> lambda = {0.1, 1.0, 10.0};
  int reps = 10;
  int horizon = 10;
  double epsilon = 0.05;
  int n_boot = 2000;
  double level = 0.95;
};

void cmd_sweep_payoff(Run& run, const SweepPayoffOpts& o, std::uint64_t seed) {
  const auto pairings = parse_pairings(o.pairing);
  run.seed("games", seed);
  const auto logs = simulate_canonical(pairings, o.lambda, o.reps, o.horizon, o.epsilon, false, seed);
  run.write("payoff_games.jsonl", game_logs_text(logs));

  // Per (lambda, pairing, seat): mean normalized penalty ratio with a
  // bootstrap interval over repetitions.
  json rows = json::array();
  std::string csv = "lambda,pairing,seat,strategy,n,mean_ratio,ci_low,ci_high\n";
  std::uint64_t cell = 0;
  for (double lambda : o.lambda)
    for (const auto& p : pairings)
      for (Seat seat : {Seat::A, Seat::B}) {
        std::vector<double> ratios;
        for (const auto& l : logs)
          if (l.config.lambda == lambda && l.config.metadata.model == pairing_name(p))
            ratios.push_back(normalized_penalty_ratio(l, seat));
        double mean = 0.0;
        for (double r : ratios) mean += r;
        mean /= static_cast<double>(ratios.size());
        std::optional<std::pair<double, double>> ci;
        if (ratios.size() >= 2) ci = bootstrap_ci(ratios, o.n_boot, o.level, derive_seed(seed, {0xb007, cell}));
        ++cell;
        const std::string strategy(label_name(seat == Seat::A ? p.first : p.second));
        csv += detail::fmt(lambda) + ',' + pairing_name(p) + ',' + (seat == Seat::A ? "A" : "B") + ',' + strategy +
               ',' + std::to_string(ratios.size()) + ',' + detail::fmt(mean) + ',' +
               (ci ? detail::fmt(ci->first) : "") + ',' + (ci ? detail::fmt(ci->second) : "") + '\n';
        rows.push_back({{"lambda", lambda},
                        {"pairing", pairing_name(p)},
                        {"seat", seat == Seat::A ? "A" : "B"},
                        {"strategy", strategy},
                        {"n", ratios.size()},
                        {"mean_ratio", mean},
                        {"ci", ci ? json::array({ci->first, ci->second}) : json(nullptr)}});
      }

  std::string choices = "lambda,round,avg_choice\n";
  json choice_json = json::object();
  for (double lambda : o.lambda) {
    std::vector<GameLog> subset;
    for (const auto& l : logs)
      if (l.config.lambda == lambda) subset.push_back(l);
    const auto traj = avg_choice_trajectory(subset);
    choice_json[detail::fmt(lambda)] = traj;
    for (std::size_t t = 0; t < traj.size(); ++t)
      choices += detail::fmt(lambda) + ',' + std::to_string(t + 1) + ',' + detail::fmt(traj[t]) + '\n';
  }
  const std::string metrics = behavioral_metrics_csv(logs, GroupField::Lambda);

  if (run.json_format()) {
    run.write("payoff.json", json({{"ratios", rows},
                                   {"avg_choice", choice_json},
                                   {"metrics", behavioral_metrics(logs).to_json()}})
                                     .dump(2) +
                                 '\n');
  } else {
    run.write("payoff.csv", csv);
    run.write("choices.csv", choices);
    run.write("payoff_metrics.csv", metrics);
  }
  run.out << "simulated " << logs.size() << " games over " << o.lambda.size() << " lambda values\n";
}

struct StatsOpts {
  std::string classifications;
  std::string logs;
  std::string factor = "lambda";
  std::vector<std::string> factors = {"lambda", "language"};
  int n_boot = 2000;
  double level = 0.95;
};

// Runs one test, keeping a failure message instead of aborting the command.
template <class Fn>
json guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const DomainError& e) {
    return {{"error", e.what()}};
  }
}

void cmd_stats(Run& run, const StatsOpts& o, std::uint64_t seed) {
  if (o.classifications.empty() && o.logs.empty()) throw DomainError("give --classifications and/or --logs");
  json report = json::object();
  std::string tests_csv = "test,statistic,df1,df2,p_value,effect_name,effect_size,degenerate\n";

  if (!o.classifications.empty()) {
    run.input(o.classifications);
    const auto results = read_classifications(o.classifications);
    const GroupField f = group_field_from_name(o.factor);

    // Contingency of retained labels by group; unobserved labels dropped.
    std::map<std::string, std::array<double, 5>> counts;
    std::map<std::string, std::vector<double>> codes;
    for (const auto& a : results) {
      if (!a.result.label) continue;
      const auto key = ConditionKey::of(a).field(f);
      counts[key][static_cast<std::size_t>(*a.result.label)] += 1.0;
      if (const auto c = ordinal_code(*a.result.label)) codes[key].push_back(*c);
    }
    report["chi_square"] = guarded([&]() -> json {
      std::array<double, 5> col{};
      for (const auto& [k, row] : counts)
        for (std::size_t l = 0; l < 5; ++l) col[l] += row[l];
      std::vector<std::vector<double>> table;
      for (const auto& [k, row] : counts) {
        std::vector<double> r;
        for (std::size_t l = 0; l < 5; ++l)
          if (col[l] > 0.0) r.push_back(row[l]);
        table.push_back(std::move(r));
      }
      if (table.empty()) throw DomainError("no retained labels");
      const auto t = chi_square_test(table);
      tests_csv += test_result_row("chi_square_label_by_" + o.factor, t);
      return t.to_json();
    });
    report["one_way_anova"] = guarded([&]() -> json {
      std::vector<std::vector<double>> groups;
      for (const auto& [k, v] : codes) groups.push_back(v);
      const auto t = one_way_anova(groups);
      tests_csv += test_result_row("anova_code_by_" + o.factor, t);
      return t.to_json();
    });
    report["two_way_anova"] = guarded([&]() -> json {
      if (o.factors.size() != 2) throw DomainError("--factors needs exactly two fields");
      const GroupField fa = group_field_from_name(o.factors[0]), fb = group_field_from_name(o.factors[1]);
      std::map<std::string, int> la, lb;
      std::vector<TwoWayObservation> obs;
      for (const auto& a : results) {
        if (!a.result.label) continue;
        const auto c = ordinal_code(*a.result.label);
        if (!c) continue;
        const auto key = ConditionKey::of(a);
        const int ia = la.emplace(key.field(fa), static_cast<int>(la.size())).first->second;
        const int ib = lb.emplace(key.field(fb), static_cast<int>(lb.size())).first->second;
        obs.push_back({ia, ib, *c});
      }
      const auto t = two_way_anova(obs);
      tests_csv += test_result_row("two_way_" + o.factors[0], t.factor_a);
      tests_csv += test_result_row("two_way_" + o.factors[1], t.factor_b);
      tests_csv += test_result_row("two_way_interaction", t.interaction);
      json j = t.to_json();
      j["factors"] = o.factors;
      return j;
    });
  }

  std::string boot_csv, metrics_csv;
  if (!o.logs.empty()) {
    run.input(o.logs);
    const auto logs = read_game_logs(o.logs);
    run.seed("bootstrap", seed);
    std::map<ConditionKey, std::vector<double>> by_condition;
    for (const auto& l : logs)
      by_condition[ConditionKey::of(l.config)].push_back(
          0.5 * (normalized_penalty_ratio(l, Seat::A) + normalized_penalty_ratio(l, Seat::B)));
    boot_csv = "model,language,lambda,personality_pair,n,mean_ratio,ci_low,ci_high\n";
    json boot = json::array();
    std::uint64_t cell = 0;
    for (const auto& [key, ratios] : by_condition) {
      double mean = 0.0;
      for (double r : ratios) mean += r;
      mean /= static_cast<double>(ratios.size());
      std::optional<std::pair<double, double>> ci;
      if (ratios.size() >= 2) ci = bootstrap_ci(ratios, o.n_boot, o.level, derive_seed(seed, {cell}));
      ++cell;
      boot_csv += key.model + ',' + key.language + ',' + detail::fmt(key.lambda) + ',' +
                  std::string(personality_name(key.personality)) + ',' + std::to_string(ratios.size()) + ',' +
                  detail::fmt(mean) + ',' + (ci ? detail::fmt(ci->first) : "") + ',' +
                  (ci ? detail::fmt(ci->second) : "") + '\n';
      boot.push_back({{"model", key.model},
                      {"language", key.language},
                      {"lambda", key.lambda},
                      {"personality_pair", personality_name(key.personality)},
                      {"n", ratios.size()},
                      {"mean_ratio", mean},
                      {"ci", ci ? json::array({ci->first, ci->second}) : json(nullptr)}});
    }
    report["bootstrap"] = std::move(boot);
    report["behavioral_metrics"] = behavioral_metrics(logs).to_json();
    metrics_csv = behavioral_metrics_csv(logs, GroupField::Model);
  }

  if (run.json_format()) {
    run.write("stats.json", report.dump(2) + '\n');
  } else {
    if (!o.classifications.empty()) run.write("tests.csv", tests_csv);
    if (!o.logs.empty()) {
      run.write("bootstrap.csv", boot_csv);
      run.write("metrics.csv", metrics_csv);
    }
  }
  for (const char* key : {"chi_square", "one_way_anova", "two_way_anova"})
    if (report.contains(key)) run.out << key << ": " << report[key].dump() << '\n';
}

struct ReportOpts {
  std::string classifications;
  std::string logs;
  std::vector<std::string> group_by = {"model", "lambda", "language", "personality_pair"};
};

void cmd_report(Run& run, const ReportOpts& o) {
  run.input(o.classifications);
  const auto results = read_classifications(o.classifications);
  json report = json::object();

  const auto overall = strategy_distribution(results, {});
  report["distribution"]["overall"] = overall.to_json();
  if (!run.json_format()) run.write("distribution_overall.csv", overall.to_csv());
  for (const auto& name : o.group_by) {
    const GroupField f = group_field_from_name(name);
    const auto t = strategy_distribution(results, std::span(&f, 1));
    report["distribution"][std::string(group_field_name(f))] = t.to_json();
    if (!run.json_format()) run.write("distribution_by_" + std::string(group_field_name(f)) + ".csv", t.to_csv());
  }
  for (bool count_rules : {true, false}) {
    const auto s = summarize_retention(results, count_rules);
    report["retention"][count_rules ? "with_rule_labels" : "model_only"] = {{"n_total", s.n_total},
                                                                            {"n_retained", s.n_retained},
                                                                            {"retention_rate", s.retention_rate},
                                                                            {"avg_confidence", s.avg_confidence}};
  }

  if (!o.logs.empty()) {
    run.input(o.logs);
    const auto logs = read_game_logs(o.logs);
    // Radar values: per lambda, min-max normalize IV/CI/VR across model tags;
    // SP (a cross-lambda quantity) is normalized across model tags once.
    std::map<std::string, std::vector<GameLog>> by_model;
    std::map<double, std::map<std::string, std::vector<GameLog>>> by_lambda_model;
    for (const auto& l : logs) {
      by_model[l.config.metadata.model].push_back(l);
      by_lambda_model[l.config.lambda][l.config.metadata.model].push_back(l);
    }
    auto normalize = [](std::map<std::string, std::optional<double>> v) {
      double lo = 1e300, hi = -1e300;
      for (const auto& [k, x] : v)
        if (x) lo = std::min(lo, *x), hi = std::max(hi, *x);
      for (auto& [k, x] : v)
        if (x) x = hi > lo ? (*x - lo) / (hi - lo) : 0.0;
      return v;
    };
    std::map<std::string, std::optional<double>> sp;
    for (const auto& [m, subset] : by_model) sp[m] = behavioral_metrics(subset).sp;
    sp = normalize(sp);
    std::string csv = "lambda,model,iv,ci,vr,sp\n";
    json radar = json::array();
    for (const auto& [lambda, models] : by_lambda_model) {
      std::map<std::string, std::optional<double>> iv, ci, vr;
      for (const auto& [m, subset] : models) {
        const auto bm = behavioral_metrics(subset);
        iv[m] = bm.iv;
        ci[m] = bm.ci;
        vr[m] = bm.vr;
      }
      iv = normalize(iv);
      ci = normalize(ci);
      vr = normalize(vr);
      for (const auto& [m, subset] : models) {
        auto cell = [](const std::optional<double>& x) { return x ? detail::fmt(*x) : std::string(); };
        csv += detail::fmt(lambda) + ',' + m + ',' + cell(iv[m]) + ',' + cell(ci[m]) + ',' + cell(vr[m]) + ',' +
               cell(sp[m]) + '\n';
        auto js = [](const std::optional<double>& x) { return x ? json(*x) : json(nullptr); };
        radar.push_back({{"lambda", lambda}, {"model", m}, {"iv", js(iv[m])}, {"ci", js(ci[m])}, {"vr", js(vr[m])},
                         {"sp", js(sp[m])}});
      }
    }
    report["radar"] = std::move(radar);
    if (!run.json_format()) run.write("radar.csv", csv);
  }
  if (run.json_format())
    run.write("report.json", report.dump(2) + '\n');
  else
    run.write("report_retention.json", report["retention"].dump(2) + '\n');
  run.out << overall.to_csv();
}

struct TableBOpts {
  int strategies = 4;
  double noise = 0.05;
  int n_per_class = 2500;
  int horizon = 10;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> kinds = {"all"};
  std::string hyperparams;
};

void cmd_reproduce_table_b(Run& run, const TableBOpts& o, std::uint64_t seed) {
  const auto kinds = parse_kinds(o.kinds);
  const Hyperparams hp = load_hyperparams(o.hyperparams, run);
  const auto seeds = o.seeds.empty() ? std::vector<std::uint64_t>{seed} : o.seeds;
  std::string csv = "seed,kind,accuracy,precision,recall,f1,band_low,band_high,pass,status\n";
  std::string checks = "seed,check,pass\n";
  json rows = json::array(), check_rows = json::array();
  for (std::uint64_t s : seeds) {
    run.seed("corpus_" + std::to_string(s), s);
    CorpusSpec spec;
    spec.strategy_set = o.strategies;
    spec.epsilon_levels = {o.noise};
    spec.n_per_class = o.n_per_class;
    spec.horizon = o.horizon;
    spec.seed = s;
    const Dataset data = generate_corpus(spec);
    std::map<ClassifierKind, double> f1;
    for (auto kind : kinds) {
      const F1Band band = acceptance_band(kind);
      json row = {{"seed", s}, {"kind", kind_name(kind)}, {"band", {band.low, band.high}}};
      try {
        const Model m = train(kind, data.train, StrategySet(o.strategies), hp, s);
        const EvalReport r = evaluate(m, data.test);
        f1[kind] = r.macro_f1;
        const bool pass = band.contains(r.macro_f1);
        csv += std::to_string(s) + ',' + std::string(kind_name(kind)) + ',' + detail::fmt(r.accuracy) + ',' +
               detail::fmt(r.macro_precision) + ',' + detail::fmt(r.macro_recall) + ',' + detail::fmt(r.macro_f1) +
               ',' + detail::fmt(band.low) + ',' + detail::fmt(band.high) + ',' + (pass ? "true" : "false") +
               ",ok\n";
        row.update({{"accuracy", r.accuracy},
                    {"precision", r.macro_precision},
                    {"recall", r.macro_recall},
                    {"f1", r.macro_f1},
                    {"pass", pass},
                    {"status", "ok"}});
        run.out << s << ' ' << kind_name(kind) << " f1=" << detail::fmt(r.macro_f1) << (pass ? " PASS" : " FAIL")
                << '\n';
      } catch (const Error& e) {
        csv += std::to_string(s) + ',' + std::string(kind_name(kind)) + ",,,,," + detail::fmt(band.low) + ',' +
               detail::fmt(band.high) + ",false,failed\n";
        row.update({{"pass", false}, {"status", "failed"}, {"error", e.what()}});
        run.out << s << ' ' << kind_name(kind) << " failed: " << e.what() << '\n';
      }
      rows.push_back(std::move(row));
    }
    const bool have_all = f1.count(ClassifierKind::RecurrentNet) && f1.count(ClassifierKind::RandomForest) &&
                          f1.count(ClassifierKind::PerClassHMM) && f1.count(ClassifierKind::LogisticRegression);
    if (have_all) {
      bool ranking = true;
      for (auto top : {ClassifierKind::RecurrentNet, ClassifierKind::RandomForest})
        for (auto low : {ClassifierKind::PerClassHMM, ClassifierKind::LogisticRegression})
          ranking = ranking && f1[top] > f1[low];
      checks += std::to_string(s) + ",ranking," + (ranking ? "true" : "false") + '\n';
      check_rows.push_back({{"seed", s}, {"check", "ranking"}, {"pass", ranking}});
    }
  }
  if (run.json_format()) {
    run.write("table_b.json", json({{"rows", rows}, {"checks", check_rows}}).dump(2) + '\n');
  } else {
    run.write("table_b.csv", csv);
    run.write("table_b_checks.csv", checks);
  }
}

// ---- argument handling ----------------------------------------------------

std::optional<std::string> find_flag_value(const std::vector<std::string>& args, const std::string& flag) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == flag && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind(flag + "=", 0) == 0) return args[i].substr(flag.size() + 1);
  }
  return std::nullopt;
}

bool mentions(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

std::string scalar_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// Appends "--key value" for config entries the user did not pass explicitly.
void inject(std::vector<std::string>& args, const json& values, const Binder& binder) {
  for (const auto& [key, v] : values.items()) {
    if (!binder.has(key) || mentions(args, "--" + key)) continue;
    if (binder.is_flag(key)) {
      if (v.is_boolean() ? v.get<bool>() : false) args.push_back("--" + key);
      continue;
    }
    if (v.is_null()) continue;
    if (v.is_array()) {
      if (v.empty()) continue;
      std::string joined;
      for (std::size_t i = 0; i < v.size(); ++i) joined += (i ? "," : "") + scalar_text(v[i]);
      args.push_back("--" + key);
      args.push_back(joined);
      continue;
    }
    args.push_back("--" + key);
    args.push_back(scalar_text(v));
  }
}

void print_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  err << json({{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}).dump() << '\n';
}

}  // namespace

int run_command(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  const auto started = std::chrono::steady_clock::now();
  const std::string started_at = iso_now();

  CLI::App app{"Repeated prisoner's dilemma strategy-intent toolkit", "pdintent"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 7;
  std::string out_dir = ".";
  std::string format = "csv";
  std::string config_path;
  Binder globals(&app);
  globals.option("seed", seed, "Root random seed");
  globals.option("out-dir", out_dir, "Directory for artifacts and the run manifest");
  globals.option("format", format, "Report format: csv or json");
  app.add_option("--config", config_path, "JSON config (flag name -> value) or a run manifest to rerun");

  std::map<std::string, Binder> binders;
  auto sub = [&](const std::string& name, const std::string& help) -> Binder& {
    return binders.emplace(name, Binder(app.add_subcommand(name, help))).first->second;
  };

  DatagenOpts dg;
  {
    auto& b = sub("datagen", "Generate a labeled synthetic trajectory corpus");
    b.option("strategies", dg.strategies, "Strategy set size (3, 4 or 5)");
    b.option("noise", dg.noise, "Execution noise levels, comma separated");
    b.option("n-per-class", dg.n_per_class, "Trajectories per label per noise level");
    b.option("horizon", dg.horizon, "Rounds per trajectory");
    b.option("opponent", dg.opponent, "Opponent model: uniform or mix");
    b.option("split", dg.split, "Test fraction per class");
    b.flag("wsls-random-start", dg.wsls_random_start, "WSLS opens with a fair coin");
    b.option("output", dg.output, "Corpus file name inside --out-dir");
  }
  TrainOpts tr;
  {
    auto& b = sub("train", "Train a classifier on a corpus");
    b.option("kind", tr.kind, "logistic, forest, feedforward, recurrent, hmm or factorized")->required();
    b.option("corpus", tr.corpus, "Corpus JSONL")->required();
    b.option("noise", tr.noise, "Noise slice to train on");
    b.flag("joint-noise", tr.joint_noise, "Train on every noise level");
    b.option("strategies", tr.strategies, "Strategy set size (default: from the corpus)");
    b.option("hyperparams", tr.hyperparams, "JSON hyperparameter overrides");
    b.option("output", tr.output, "Model file name inside --out-dir");
  }
  EvaluateOpts ev;
  {
    auto& b = sub("evaluate", "Evaluate a model on a corpus test split");
    b.option("model", ev.model, "Model file")->required();
    b.option("corpus", ev.corpus, "Corpus JSONL")->required();
    b.option("noise", ev.noise, "Noise slice (default: the model's training slice)");
    b.flag("all-noise", ev.all_noise, "Use every noise level");
  }
  ClassifyOpts cl;
  {
    auto& b = sub("classify", "Classify both agents of every game in a log file");
    b.option("model", cl.model, "Model file")->required();
    b.option("logs", cl.logs, "Game log JSONL")->required();
    b.option("tau", cl.pipe.tau, "Confidence threshold");
    b.option("mode", cl.pipe.mode, "model-first or rules-first");
    b.flag("no-rules", cl.pipe.no_rules, "Model only, no rule path");
    b.option("eps-noise", cl.pipe.eps_noise, "Rule tolerance per transition");
    b.flag("rule-tolerance-ceil", cl.pipe.rule_tolerance_ceil, "Round the rule tolerance up");
    b.option("group-by", cl.group_by, "Distribution grouping fields");
    b.flag("exclude-rule-labels", cl.exclude_rule_labels, "Retention counts model labels only");
  }
  SimulateOpts sm;
  {
    auto& b = sub("simulate", "Play games between canonical, remote or replayed agents");
    b.option("pairing", sm.pairing, "X:Y pairings of canonical strategies, or 'all'");
    b.option("lambda", sm.lambda, "Payoff scale factors");
    b.option("reps", sm.reps, "Repetitions per condition");
    b.option("horizon", sm.horizon, "Rounds per game");
    b.option("epsilon", sm.epsilon, "Execution noise of canonical agents");
    b.flag("wsls-random-start", sm.wsls_random_start, "WSLS opens with a fair coin");
    b.option("remote", sm.remote, "Experiment config for endpoint-backed agents");
    b.option("replay", sm.replay, "Game log JSONL to replay");
    b.option("parse-policy", sm.parse_policy, "first-token or strict");
  }
  SweepThresholdOpts st;
  {
    auto& b = sub("sweep-threshold", "Retention and confidence across thresholds");
    b.option("model", st.model, "Model file")->required();
    b.option("corpus", st.corpus, "Corpus JSONL (test split)");
    b.option("logs", st.logs, "Game log JSONL");
    b.option("noise", st.noise, "Noise slice of the corpus");
    b.option("taus", st.taus, "Ascending thresholds");
    b.flag("include-rules", st.include_rules, "Count rule labels as retained");
    b.option("mode", st.mode, "model-first or rules-first");
    b.option("eps-noise", st.eps_noise, "Rule tolerance per transition");
    b.flag("rule-tolerance-ceil", st.rule_tolerance_ceil, "Round the rule tolerance up");
  }
  SweepPayoffOpts sp;
  {
    auto& b = sub("sweep-payoff", "Penalty ratios and behavior across payoff scales");
    b.option("pairing", sp.pairing, "X:Y pairings or 'all'");
    b.option("lambda", sp.lambda, "Payoff scale factors");
    b.option("reps", sp.reps, "Repetitions per condition");
    b.option("horizon", sp.horizon, "Rounds per game");
    b.option("epsilon", sp.epsilon, "Execution noise");
    b.option("n-boot", sp.n_boot, "Bootstrap replicates");
    b.option("level", sp.level, "Confidence level");
  }
  StatsOpts ss;
  {
    auto& b = sub("stats", "Chi-square, ANOVA and bootstrap statistics");
    b.option("classifications", ss.classifications, "Classification JSONL from classify");
    b.option("logs", ss.logs, "Game log JSONL");
    b.option("factor", ss.factor, "Grouping field for chi-square and one-way ANOVA");
    b.option("factors", ss.factors, "Two fields for two-way ANOVA");
    b.option("n-boot", ss.n_boot, "Bootstrap replicates");
    b.option("level", ss.level, "Confidence level");
  }
  ReportOpts rp;
  {
    auto& b = sub("report", "Strategy distributions, retention and radar metrics");
    b.option("classifications", rp.classifications, "Classification JSONL from classify")->required();
    b.option("logs", rp.logs, "Game log JSONL for behavioral metrics");
    b.option("group-by", rp.group_by, "Fields to tabulate by");
  }
  TableBOpts tb;
  {
    auto& b = sub("reproduce-table-b", "Train and score every classifier kind on fresh corpora");
    b.option("strategies", tb.strategies, "Strategy set size");
    b.option("noise", tb.noise, "Execution noise");
    b.option("n-per-class", tb.n_per_class, "Trajectories per label");
    b.option("horizon", tb.horizon, "Rounds per trajectory");
    b.option("seeds", tb.seeds, "Corpus and training seeds (default: --seed)");
    b.option("kinds", tb.kinds, "Kinds to run, or 'all'");
    b.option("hyperparams", tb.hyperparams, "JSON hyperparameter overrides");
  }

  std::vector<std::string> args = args_in;
  std::string subcommand;
  try {
    json config;
    if (const auto path = find_flag_value(args, "--config")) {
      std::ifstream in(*path);
      if (!in) throw CLI::ValidationError("--config", "cannot open " + *path);
      try {
        config = json::parse(in);
      } catch (const json::parse_error& e) {
        throw CLI::ValidationError("--config", *path + ": " + e.what());
      }
      if (!config.is_object()) throw CLI::ValidationError("--config", *path + ": expected a JSON object");
    }
    for (const auto& a : args)
      if (binders.count(a)) {
        subcommand = a;
        break;
      }
    if (subcommand.empty() && config.contains("subcommand")) {
      subcommand = config["subcommand"].get<std::string>();
      if (!binders.count(subcommand)) throw CLI::ValidationError("--config", "unknown subcommand " + subcommand);
      args.insert(args.begin(), subcommand);
    }
    if (config.contains("inputs") && config["inputs"].is_object())
      for (const auto& [path, hash] : config["inputs"].items())
        if (!std::filesystem::exists(path) || sha256_file(path) != hash.get<std::string>())
          err << json({{"warning", "input " + path + " differs from the manifest"}}).dump() << '\n';
    if (!config.is_null() && !subcommand.empty()) {
      const json& values = config.contains("config") && config["config"].is_object() ? config["config"] : config;
      inject(args, values, binders.at(subcommand));
      inject(args, values, globals);
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (subcommand.empty() ? app.help() : app.get_subcommand(subcommand)->help());
    return kExitOk;
  } catch (const CLI::ValidationError& e) {
    print_error(err, "validation", e.what(), kExitValidation);
    return kExitValidation;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what(), kExitUsage);
    return kExitUsage;
  } catch (const json::exception& e) {
    print_error(err, "validation", e.what(), kExitValidation);
    return kExitValidation;
  }
  subcommand = app.get_subcommands().front()->get_name();

  try {
    Run run(out_dir, format, out);
    if (subcommand == "datagen") cmd_datagen(run, dg, seed);
    else if (subcommand == "train") cmd_train(run, tr, seed);
    else if (subcommand == "evaluate") cmd_evaluate(run, ev);
    else if (subcommand == "classify") cmd_classify(run, cl);
    else if (subcommand == "simulate") cmd_simulate(run, sm, seed);
    else if (subcommand == "sweep-threshold") cmd_sweep_threshold(run, st);
    else if (subcommand == "sweep-payoff") cmd_sweep_payoff(run, sp, seed);
    else if (subcommand == "stats") cmd_stats(run, ss, seed);
    else if (subcommand == "report") cmd_report(run, rp);
    else if (subcommand == "reproduce-table-b") cmd_reproduce_table_b(run, tb, seed);

    json config = binders.at(subcommand).resolved();
    config.update(globals.resolved());
    json manifest = {{"manifest_version", 1},
                     {"tool", "pdintent"},
                     {"version", kToolVersion},
                     {"subcommand", subcommand},
                     {"argv", args_in},
                     {"config", std::move(config)},
                     {"started_at", started_at},
                     {"wall_clock_seconds",
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}};
    manifest.update(run.manifest_fields());
    std::ofstream f(run.path(manifest_name(subcommand)), std::ios::binary);
    f << manifest.dump(2) << '\n';
    if (!f) throw Error("cannot write manifest");
    return kExitOk;
  } catch (const DomainError& e) {
    print_error(err, "validation", e.what(), kExitValidation);
    return kExitValidation;
  } catch (const SchemaError& e) {
    print_error(err, "validation", e.what(), kExitValidation);
    return kExitValidation;
  } catch (const FormatError& e) {
    print_error(err, "validation", e.what(), kExitValidation);
    return kExitValidation;
  } catch (const ChecksumError& e) {
    print_error(err, "validation", e.what(), kExitValidation);
    return kExitValidation;
  } catch (const LabelSetMismatch& e) {
    print_error(err, "validation", e.what(), kExitValidation);
    return kExitValidation;
  } catch (const std::exception& e) {
    print_error(err, "runtime", e.what(), kExitRuntime);
    return kExitRuntime;
  }
}

int run_command(const std::vector<std::string>& args) { return run_command(args, std::cout, std::cerr); }

}  // namespace pdintent
