#pragma once

// External agents: experiment configs, prompt rendering, a generic
// request/response endpoint contract, action parsing with retries, and
// record/replay of transcripts and game logs.

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdintent/error.hpp"
#include "pdintent/game.hpp"

namespace pdintent {

inline constexpr int kConfigSchemaVersion = 1;

struct ModelConfig {
  std::string tag;
  /// Endpoint URL, or "replay:<transcript path>".
  std::string endpoint;
  double temperature = 1.0;
  double top_p = 1.0;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::vector<ModelConfig> models;
  std::vector<std::string> languages;
  std::vector<double> lambdas;
  std::vector<PersonalityPair> personality_pairs;
  int repetitions = 1;
  int horizon = 10;
  std::uint64_t seed = 0;
  std::string template_id = "default";
  /// Overrides the built-in body for template_id when non-empty.
  std::string template_text;
  /// Requests per second shared by all games; 0 disables the limit.
  double rate_limit = 0.0;
  int max_retries = 3;
  /// Environment variable holding the bearer token for HTTP endpoints.
  std::string api_key_env = "PDINTENT_API_KEY";

  /// |models| * |languages| * |lambdas| * |pairs| * repetitions.
  std::size_t game_count() const;
  /// One GameConfig per game with its own derived seed. Index order is
  /// model, language, lambda, pair, repetition.
  std::vector<GameConfig> expand() const;
  /// Game id "model/language/lambda/pair/rep".
  static std::string game_id(const GameConfig& g, int repetition);
  void validate() const;
  nlohmann::json to_json() const;
};

/// Fills defaults and validates. Throws SchemaError naming the bad field and
/// DomainError for a non-positive lambda.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Everything one agent sees when asked for its move.
struct PromptContext {
  std::string template_id = "default";
  std::string language = "none";
  /// 'C' (cooperative) or 'S' (selfish).
  char personality = 'C';
  int horizon = 10;
  int round_index = 1;
  /// Past rounds from this agent's point of view.
  std::vector<Action> own;
  std::vector<Action> opp;
  std::vector<double> own_penalty;
  std::vector<double> opp_penalty;
  PenaltyMatrix matrix;

  nlohmann::json to_json() const;
  static PromptContext from_json(const nlohmann::json& j);
  /// Context for `seat` at the start of ctx.round_index.
  static PromptContext from_step(const StepContext& ctx, std::string template_id, std::string language,
                                 char personality);
};

/// Built-in template text for an id; throws DomainError for unknown ids.
const std::string& builtin_template(const std::string& id);

/// Substitutes {{horizon}}, {{round}}, {{rounds_left}}, {{language}},
/// {{personality}}, {{matrix}} and {{history}}. The result always opens with
/// the total round count and the reminder that lower penalties are better.
std::string render_prompt(const PromptContext& ctx, const std::string& template_text);

struct GenerationParams {
  double temperature = 1.0;
  double top_p = 1.0;
};

/// Network or server failure; next_action retries these with backoff.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The agent never produced a parseable action.
class AgentFailure : public Error {
 public:
  using Error::Error;
};

class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual std::string complete(const std::string& prompt, const GenerationParams& params) = 0;
};

/// POSTs {"prompt", "temperature", "top_p"} as JSON and reads {"text"}. A
/// bearer token is sent when the named environment variable is set.
class HttpEndpoint final : public Endpoint {
 public:
  explicit HttpEndpoint(std::string url, std::string api_key_env = "PDINTENT_API_KEY",
                        std::chrono::seconds timeout = std::chrono::seconds(60));
  std::string complete(const std::string& prompt, const GenerationParams& params) override;

 private:
  std::string base_;
  std::string path_;
  std::string api_key_env_;
  std::chrono::seconds timeout_;
};

/// Wraps a callable; handy for tests and scripted agents.
class CallbackEndpoint final : public Endpoint {
 public:
  using Fn = std::function<std::string(const std::string&, const GenerationParams&)>;
  explicit CallbackEndpoint(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(const std::string& prompt, const GenerationParams& params) override {
    return fn_(prompt, params);
  }

 private:
  Fn fn_;
};

/// Shared requests-per-second limit.
class Throttle {
 public:
  explicit Throttle(double per_second) : per_second_(per_second) {}
  /// Blocks until the next request slot.
  void acquire();

 private:
  double per_second_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_{};
};

enum class ParsePolicy : std::uint8_t {
  FirstToken,  // first standalone "A" or "B"
  Strict,      // every standalone "A"/"B" token must agree
};

/// Standalone uppercase tokens "A" / "B" ("Option B" -> Cooperate).
std::optional<Action> parse_action(const std::string& response, ParsePolicy policy);

struct TranscriptEntry {
  std::string game_id;
  char seat = 'A';
  int round = 1;
  PromptContext context;
  std::string prompt_hash;
  /// Every raw response, in order; the last one was parsed.
  std::vector<std::string> attempts;
  Action action = Action::Cooperate;
  /// Re-asks after a parse failure.
  int retries = 0;

  const std::string& raw_response() const { return attempts.back(); }
  nlohmann::json to_json() const;
  static TranscriptEntry from_json(const nlohmann::json& j);
};

struct GatewayOptions {
  ParsePolicy parse_policy = ParsePolicy::FirstToken;
  /// Total attempts allowed for parse failures.
  int max_retries = 3;
  /// Transport failures tolerated per request before giving up.
  int max_transport_retries = 5;
  std::chrono::milliseconds backoff{200};
  std::chrono::milliseconds max_backoff{10000};
  GenerationParams generation;
  std::string template_text;
  Throttle* throttle = nullptr;
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Renders, sends, parses. Throws AgentFailure when every attempt fails to
/// parse or transport keeps failing.
TranscriptEntry next_action(Endpoint& endpoint, const PromptContext& context, const GatewayOptions& opts = {});

/// Policy backed by an endpoint; records a transcript of every round.
class RemoteAgentPolicy final : public Policy {
 public:
  RemoteAgentPolicy(Endpoint& endpoint, GatewayOptions opts, std::string game_id, std::string template_id,
                    std::string language, char personality);
  Action step(const StepContext& ctx) override;
  std::string describe() const override;
  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }

 private:
  Endpoint& endpoint_;
  GatewayOptions opts_;
  std::string game_id_;
  std::string template_id_;
  std::string language_;
  char personality_;
  std::vector<TranscriptEntry> transcript_;
};

/// Replays recorded actions verbatim. Throws DomainError when fewer than
/// `horizon` actions were recorded, or when asked past the recording.
std::unique_ptr<Policy> replay_policy(const GameLog& log, Seat seat, int horizon);
/// Entries of one seat, in round order.
std::unique_ptr<Policy> replay_policy(std::span<const TranscriptEntry> entries, int horizon);

/// Serves the recorded raw responses in order, for re-running a transcript
/// through next_action without network access.
class ReplayEndpoint final : public Endpoint {
 public:
  explicit ReplayEndpoint(std::vector<TranscriptEntry> entries);
  std::string complete(const std::string& prompt, const GenerationParams& params) override;

 private:
  std::vector<std::string> responses_;
  std::size_t next_ = 0;
};

void write_transcript(const std::string& path, std::span<const TranscriptEntry> entries);
std::vector<TranscriptEntry> read_transcript(const std::string& path);

}  // namespace pdintent
