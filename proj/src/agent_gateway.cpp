#include "pdintent/agent_gateway.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "pdintent/hashing.hpp"
#include "text.hpp"

namespace pdintent {

using nlohmann::json;

namespace {

template <class T>
T field(const json& j, const char* name, const std::string& where) {
  if (!j.contains(name)) throw SchemaError(where + ": missing field '" + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(where + ": field '" + name + "' has the wrong type");
  }
}

template <class T>
T field_or(const json& j, const char* name, T fallback, const std::string& where) {
  return j.contains(name) ? field<T>(j, name, where) : fallback;
}

}  // namespace

std::size_t ExperimentConfig::game_count() const {
  return models.size() * languages.size() * lambdas.size() * personality_pairs.size() *
         static_cast<std::size_t>(std::max(repetitions, 0));
}

std::string ExperimentConfig::game_id(const GameConfig& g, int repetition) {
  return g.metadata.model + '/' + g.metadata.language + '/' + detail::fmt(g.lambda) + '/' +
         std::string(personality_name(g.metadata.personality)) + '/' + std::to_string(repetition);
}

std::vector<GameConfig> ExperimentConfig::expand() const {
  validate();
  std::vector<GameConfig> out;
  out.reserve(game_count());
  for (std::uint64_t mi = 0; mi < models.size(); ++mi)
    for (std::uint64_t li = 0; li < languages.size(); ++li)
      for (std::uint64_t xi = 0; xi < lambdas.size(); ++xi)
        for (std::uint64_t pi = 0; pi < personality_pairs.size(); ++pi)
          for (std::uint64_t rep = 0; rep < static_cast<std::uint64_t>(repetitions); ++rep) {
            GameConfig g;
            g.horizon = horizon;
            g.lambda = lambdas[xi];
            g.repetitions = 1;
            g.seed = derive_seed(seed, {mi, li, xi, pi, rep});
            g.metadata = {models[mi].tag, languages[li], personality_pairs[pi]};
            out.push_back(g);
          }
  return out;
}

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion)
    throw SchemaError("field 'schema_version': unsupported version " + std::to_string(schema_version));
  if (models.empty()) throw SchemaError("field 'models' must be a non-empty list");
  for (const auto& m : models) {
    if (m.tag.empty()) throw SchemaError("field 'models[].tag' must be non-empty");
    if (!(m.temperature >= 0.0)) throw SchemaError("field 'models[].temperature' must be >= 0");
    if (!(m.top_p > 0.0 && m.top_p <= 1.0)) throw SchemaError("field 'models[].top_p' must lie in (0, 1]");
  }
  if (languages.empty()) throw SchemaError("field 'languages' must be a non-empty list");
  if (lambdas.empty()) throw SchemaError("field 'lambdas' must be a non-empty list");
  for (double l : lambdas)
    if (!(l > 0.0) || !std::isfinite(l)) throw DomainError("field 'lambdas': lambda must be > 0, got " + detail::fmt(l));
  if (personality_pairs.empty()) throw SchemaError("field 'personality_pairs' must be a non-empty list");
  if (repetitions < 1) throw SchemaError("field 'repetitions' must be >= 1");
  if (horizon < 1) throw SchemaError("field 'horizon' must be >= 1");
  if (max_retries < 1) throw SchemaError("field 'max_retries' must be >= 1");
  if (!(rate_limit >= 0.0)) throw SchemaError("field 'rate_limit' must be >= 0");
}

json ExperimentConfig::to_json() const {
  json ms = json::array();
  for (const auto& m : models)
    ms.push_back({{"tag", m.tag}, {"endpoint", m.endpoint}, {"temperature", m.temperature}, {"top_p", m.top_p}});
  json pairs = json::array();
  for (auto p : personality_pairs) pairs.push_back(personality_name(p));
  return {{"schema_version", schema_version},
          {"models", std::move(ms)},
          {"languages", languages},
          {"lambdas", lambdas},
          {"personality_pairs", std::move(pairs)},
          {"repetitions", repetitions},
          {"horizon", horizon},
          {"seed", seed},
          {"template_id", template_id},
          {"template_text", template_text},
          {"rate_limit", rate_limit},
          {"max_retries", max_retries},
          {"api_key_env", api_key_env}};
}

ExperimentConfig config_from_json(const json& j) {
  const std::string where = "experiment config";
  if (!j.is_object()) throw SchemaError(where + ": expected a JSON object");
  ExperimentConfig c;
  c.schema_version = field_or<int>(j, "schema_version", kConfigSchemaVersion, where);
  const auto models = field<json>(j, "models", where);
  if (!models.is_array()) throw SchemaError(where + ": field 'models' must be a list");
  for (const auto& m : models) {
    if (!m.is_object()) throw SchemaError(where + ": field 'models[]' entries must be objects");
    ModelConfig mc;
    mc.tag = field<std::string>(m, "tag", where + " models[]");
    mc.endpoint = field_or<std::string>(m, "endpoint", "", where + " models[]");
    mc.temperature = field_or<double>(m, "temperature", 1.0, where + " models[]");
    mc.top_p = field_or<double>(m, "top_p", 1.0, where + " models[]");
    c.models.push_back(std::move(mc));
  }
  c.languages = field<std::vector<std::string>>(j, "languages", where);
  c.lambdas = field<std::vector<double>>(j, "lambdas", where);
  for (const auto& p : field<std::vector<std::string>>(j, "personality_pairs", where)) {
    try {
      c.personality_pairs.push_back(personality_from_name(p));
    } catch (const SchemaError& e) {
      throw SchemaError(where + ": field 'personality_pairs': " + e.what());
    }
  }
  c.repetitions = field<int>(j, "repetitions", where);
  c.horizon = field_or<int>(j, "horizon", 10, where);
  c.seed = field_or<std::uint64_t>(j, "seed", 0, where);
  c.template_id = field_or<std::string>(j, "template_id", "default", where);
  c.template_text = field_or<std::string>(j, "template_text", "", where);
  c.rate_limit = field_or<double>(j, "rate_limit", 0.0, where);
  c.max_retries = field_or<int>(j, "max_retries", 3, where);
  c.api_key_env = field_or<std::string>(j, "api_key_env", "PDINTENT_API_KEY", where);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return config_from_json(j);
}

json PromptContext::to_json() const {
  std::string own_s, opp_s;
  for (auto a : own) own_s += option_label(a);
  for (auto a : opp) opp_s += option_label(a);
  return {{"template_id", template_id},
          {"language", language},
          {"personality", std::string(1, personality)},
          {"horizon", horizon},
          {"round", round_index},
          {"own", own_s},
          {"opp", opp_s},
          {"own_penalty", own_penalty},
          {"opp_penalty", opp_penalty},
          {"matrix", {matrix.t, matrix.r, matrix.p, matrix.s, matrix.lambda}}};
}

PromptContext PromptContext::from_json(const json& j) {
  const std::string where = "prompt context";
  PromptContext c;
  c.template_id = field<std::string>(j, "template_id", where);
  c.language = field<std::string>(j, "language", where);
  const auto p = field<std::string>(j, "personality", where);
  if (p != "C" && p != "S") throw SchemaError(where + ": field 'personality' must be \"C\" or \"S\"");
  c.personality = p[0];
  c.horizon = field<int>(j, "horizon", where);
  c.round_index = field<int>(j, "round", where);
  for (char ch : field<std::string>(j, "own", where)) c.own.push_back(action_from_option(std::string_view(&ch, 1)));
  for (char ch : field<std::string>(j, "opp", where)) c.opp.push_back(action_from_option(std::string_view(&ch, 1)));
  c.own_penalty = field<std::vector<double>>(j, "own_penalty", where);
  c.opp_penalty = field<std::vector<double>>(j, "opp_penalty", where);
  const auto m = field<std::vector<double>>(j, "matrix", where);
  if (m.size() != 5) throw SchemaError(where + ": field 'matrix' must hold t, r, p, s, lambda");
  c.matrix = {m[0], m[1], m[2], m[3], m[4]};
  return c;
}

PromptContext PromptContext::from_step(const StepContext& ctx, std::string template_id, std::string language,
                                       char personality) {
  PromptContext c;
  c.template_id = std::move(template_id);
  c.language = std::move(language);
  c.personality = personality;
  c.horizon = ctx.horizon;
  c.round_index = ctx.round_index;
  c.matrix = ctx.matrix;
  const Seat other = ctx.seat == Seat::A ? Seat::B : Seat::A;
  for (const auto& r : ctx.history) {
    c.own.push_back(r.own(ctx.seat));
    c.opp.push_back(r.opp(ctx.seat));
    c.own_penalty.push_back(ctx.matrix.penalty(r.outcome(ctx.seat)));
    c.opp_penalty.push_back(ctx.matrix.penalty(r.outcome(other)));
  }
  return c;
}

const std::string& builtin_template(const std::string& id) {
  static const std::map<std::string, std::string> templates = {
      {"default",
       "You are playing a repeated game against another agent. Your personality is {{personality}}.\n"
       "Each round you both choose Option A or Option B at the same time.\n"
       "Penalties (years) for you and the other agent:\n{{matrix}}\n"
       "History so far:\n{{history}}\n"
       "This is round {{round}} of {{horizon}} ({{rounds_left}} left after this one).\n"
       "Answer with a single letter: A or B."},
      {"minimal", "Round {{round}} of {{horizon}}.\n{{matrix}}\n{{history}}\nReply A or B."},
  };
  const auto it = templates.find(id);
  if (it == templates.end()) throw DomainError("unknown prompt template '" + id + "'");
  return it->second;
}

std::string render_prompt(const PromptContext& ctx, const std::string& template_text) {
  std::string matrix;
  const PenaltyMatrix& m = ctx.matrix;
  matrix += "- you A, other A: (" + detail::fmt(m.p) + ", " + detail::fmt(m.p) + ")\n";
  matrix += "- you A, other B: (" + detail::fmt(m.t) + ", " + detail::fmt(m.s) + ")\n";
  matrix += "- you B, other A: (" + detail::fmt(m.s) + ", " + detail::fmt(m.t) + ")\n";
  matrix += "- you B, other B: (" + detail::fmt(m.r) + ", " + detail::fmt(m.r) + ")";

  std::string history;
  if (ctx.own.empty()) history = "(no rounds played yet)";
  for (std::size_t t = 0; t < ctx.own.size(); ++t) {
    if (t) history += '\n';
    history += "round " + std::to_string(t + 1) + ": you " + std::string(option_label(ctx.own[t])) + ", other " +
               std::string(option_label(ctx.opp[t]));
    if (t < ctx.own_penalty.size() && t < ctx.opp_penalty.size())
      history += "; penalties you " + detail::fmt(ctx.own_penalty[t]) + ", other " + detail::fmt(ctx.opp_penalty[t]);
  }

  const std::map<std::string, std::string> vars = {
      {"horizon", std::to_string(ctx.horizon)},
      {"round", std::to_string(ctx.round_index)},
      {"rounds_left", std::to_string(ctx.horizon - ctx.round_index)},
      {"language", ctx.language},
      {"personality", ctx.personality == 'S' ? "selfish" : "cooperative"},
      {"matrix", matrix},
      {"history", history},
  };

  std::string out = "The game lasts " + std::to_string(ctx.horizon) +
                    " rounds in total. Penalties are costs: lower penalties are better outcomes.\n";
  std::size_t pos = 0;
  while (pos < template_text.size()) {
    const auto open = template_text.find("{{", pos);
    if (open == std::string::npos) {
      out.append(template_text, pos);
      break;
    }
    const auto close = template_text.find("}}", open + 2);
    if (close == std::string::npos) throw DomainError("unterminated placeholder in prompt template");
    out.append(template_text, pos, open - pos);
    const auto name = template_text.substr(open + 2, close - open - 2);
    const auto it = vars.find(name);
    if (it == vars.end()) throw DomainError("unknown placeholder {{" + name + "}} in prompt template");
    out += it->second;
    pos = close + 2;
  }
  return out;
}

void Throttle::acquire() {
  if (!(per_second_ > 0.0)) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / per_second_));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + interval;
  }
  std::this_thread::sleep_until(slot);
}

std::optional<Action> parse_action(const std::string& response, ParsePolicy policy) {
  std::optional<Action> found;
  std::size_t i = 0;
  const auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  while (i < response.size()) {
    if (!is_word(response[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < response.size() && is_word(response[j])) ++j;
    if (j - i == 1 && (response[i] == 'A' || response[i] == 'B')) {
      const Action a = response[i] == 'A' ? Action::Defect : Action::Cooperate;
      if (policy == ParsePolicy::FirstToken) return a;
      if (found && *found != a) return std::nullopt;
      found = a;
    }
    i = j;
  }
  return found;
}

json TranscriptEntry::to_json() const {
  return {{"game_id", game_id},
          {"seat", std::string(1, seat)},
          {"round", round},
          {"context", context.to_json()},
          {"prompt_hash", prompt_hash},
          {"attempts", attempts},
          {"raw_response", attempts.empty() ? std::string() : attempts.back()},
          {"action", option_label(action)},
          {"retries", retries}};
}

TranscriptEntry TranscriptEntry::from_json(const json& j) {
  const std::string where = "transcript entry";
  TranscriptEntry e;
  e.game_id = field_or<std::string>(j, "game_id", "", where);
  const auto seat = field_or<std::string>(j, "seat", "A", where);
  if (seat != "A" && seat != "B") throw SchemaError(where + ": field 'seat' must be \"A\" or \"B\"");
  e.seat = seat[0];
  e.round = field<int>(j, "round", where);
  e.context = PromptContext::from_json(field<json>(j, "context", where));
  e.prompt_hash = field<std::string>(j, "prompt_hash", where);
  e.attempts = field<std::vector<std::string>>(j, "attempts", where);
  if (e.attempts.empty()) throw SchemaError(where + ": field 'attempts' must be non-empty");
  e.action = action_from_option(field<std::string>(j, "action", where));
  e.retries = field<int>(j, "retries", where);
  return e;
}

TranscriptEntry next_action(Endpoint& endpoint, const PromptContext& context, const GatewayOptions& opts) {
  const std::string& text = opts.template_text.empty() ? builtin_template(context.template_id) : opts.template_text;
  const std::string prompt = render_prompt(context, text);
  auto sleep = opts.sleep ? opts.sleep : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };

  TranscriptEntry e;
  e.round = context.round_index;
  e.context = context;
  e.prompt_hash = sha256_hex(prompt);
  for (int attempt = 0; attempt < std::max(opts.max_retries, 1); ++attempt) {
    std::string reply;
    auto backoff = opts.backoff;
    for (int failures = 0;; ++failures) {
      try {
        if (opts.throttle) opts.throttle->acquire();
        reply = endpoint.complete(prompt, opts.generation);
        break;
      } catch (const TransportError& err) {
        if (failures >= opts.max_transport_retries)
          throw AgentFailure(std::string("endpoint unreachable after retries: ") + err.what());
        sleep(backoff);
        backoff = std::min(backoff * 2, opts.max_backoff);
      }
    }
    e.attempts.push_back(reply);
    if (const auto a = parse_action(reply, opts.parse_policy)) {
      e.action = *a;
      e.retries = attempt;
      return e;
    }
  }
  throw AgentFailure("no parseable action after " + std::to_string(e.attempts.size()) + " attempts; last response: " +
                     e.attempts.back().substr(0, 200));
}

RemoteAgentPolicy::RemoteAgentPolicy(Endpoint& endpoint, GatewayOptions opts, std::string game_id,
                                     std::string template_id, std::string language, char personality)
    : endpoint_(endpoint),
      opts_(std::move(opts)),
      game_id_(std::move(game_id)),
      template_id_(std::move(template_id)),
      language_(std::move(language)),
      personality_(personality) {}

Action RemoteAgentPolicy::step(const StepContext& ctx) {
  auto e = next_action(endpoint_, PromptContext::from_step(ctx, template_id_, language_, personality_), opts_);
  e.game_id = game_id_;
  e.seat = ctx.seat == Seat::A ? 'A' : 'B';
  transcript_.push_back(std::move(e));
  return transcript_.back().action;
}

std::string RemoteAgentPolicy::describe() const { return "remote(" + template_id_ + "," + language_ + ")"; }

namespace {

class ReplayPolicy final : public Policy {
 public:
  explicit ReplayPolicy(std::vector<Action> actions) : actions_(std::move(actions)) {}
  Action step(const StepContext& ctx) override {
    const auto i = static_cast<std::size_t>(ctx.round_index - 1);
    if (i >= actions_.size())
      throw DomainError("replay has " + std::to_string(actions_.size()) + " rounds, asked for round " +
                        std::to_string(ctx.round_index));
    return actions_[i];
  }
  std::string describe() const override { return "replay(" + std::to_string(actions_.size()) + ")"; }

 private:
  std::vector<Action> actions_;
};

void check_length(std::size_t recorded, int horizon) {
  if (horizon < 1) throw DomainError("horizon must be >= 1");
  if (recorded < static_cast<std::size_t>(horizon))
    throw DomainError("recording has " + std::to_string(recorded) + " rounds but the horizon is " +
                      std::to_string(horizon));
}

}  // namespace

std::unique_ptr<Policy> replay_policy(const GameLog& log, Seat seat, int horizon) {
  check_length(log.rounds.size(), horizon);
  return std::make_unique<ReplayPolicy>(log.actions(seat));
}

std::unique_ptr<Policy> replay_policy(std::span<const TranscriptEntry> entries, int horizon) {
  std::vector<const TranscriptEntry*> sorted;
  for (const auto& e : entries) sorted.push_back(&e);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->round < b->round; });
  std::vector<Action> actions;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i]->round != static_cast<int>(i) + 1) throw DomainError("transcript rounds are not 1..n");
    actions.push_back(sorted[i]->action);
  }
  check_length(actions.size(), horizon);
  return std::make_unique<ReplayPolicy>(std::move(actions));
}

ReplayEndpoint::ReplayEndpoint(std::vector<TranscriptEntry> entries) {
  for (auto& e : entries)
    for (auto& a : e.attempts) responses_.push_back(std::move(a));
}

std::string ReplayEndpoint::complete(const std::string&, const GenerationParams&) {
  if (next_ >= responses_.size()) throw AgentFailure("replay transcript exhausted");
  return responses_[next_++];
}

void write_transcript(const std::string& path, std::span<const TranscriptEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& e : entries) out << e.to_json().dump() << '\n';
}

std::vector<TranscriptEntry> read_transcript(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::vector<TranscriptEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(TranscriptEntry::from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw SchemaError(path + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pdintent
