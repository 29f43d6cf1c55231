#pragma once

// Hybrid rule + model classification gated by a confidence threshold.
// Also sweeps that threshold.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdintent/classifiers.hpp"
#include "pdintent/strategies.hpp"

namespace pdintent {

enum class ResultSource : std::uint8_t { Rule, Model, Rejected };
std::string_view source_name(ResultSource s);
ResultSource source_from_name(std::string_view name);

enum class PipelineMode : std::uint8_t {
  ModelFirst,  // model above tau, rules as fallback
  RulesFirst,  // unambiguous rule match, model otherwise
};
std::string_view mode_name(PipelineMode m);
PipelineMode mode_from_name(std::string_view name);

struct PipelineOptions {
  double tau = 0.9;
  PipelineMode mode = PipelineMode::ModelFirst;
  /// Disables the rule path entirely (model-only mode).
  bool use_rules = true;
  RuleOptions rules;
};

struct ClassificationResult {
  std::optional<StrategyLabel> label;
  double confidence = 0.0;
  ResultSource source = ResultSource::Rejected;
  LabelSet candidates;
  /// Over the model's labels; absent when the model was never queried.
  std::optional<std::vector<double>> distribution;

  bool operator==(const ClassificationResult&) const = default;
};

/// Throws DomainError unless tau is in (0, 1].
ClassificationResult classify_trajectory(const Model& model, const Trajectory& traj,
                                         const PipelineOptions& opts = {});

/// One classified seat of one game, with the grouping fields of its game.
struct AgentClassification {
  std::string game_id;
  Seat agent = Seat::A;
  GameMetadata metadata;
  double lambda = 1.0;
  ClassificationResult result;
};

/// Two results per game in log order, seat A then seat B. Seat B is
/// classified from its own point of view.
std::vector<AgentClassification> classify_corpus(const Model& model, std::span<const GameLog> logs,
                                                 const PipelineOptions& opts = {});

struct SweepRow {
  double tau = 0.0;
  double retention_rate = 0.0;
  /// Mean confidence over retained inputs; 0 when nothing is retained.
  double avg_confidence = 0.0;
  std::size_t n_retained = 0;
  std::size_t diversity = 0;
};

struct SweepOptions {
  /// Count rule-sourced labels as retained with confidence 1 instead of
  /// sweeping the model alone.
  bool include_rules = false;
  PipelineMode mode = PipelineMode::ModelFirst;
  RuleOptions rules;
};

/// One row per tau. The grid must be ascending; tau = 0 retains everything.
std::vector<SweepRow> threshold_sweep(const Model& model, std::span<const Trajectory> inputs,
                                      std::span<const double> tau_grid, const SweepOptions& opts = {});

struct RetentionSummary {
  std::size_t n_total = 0;
  std::size_t n_retained = 0;
  std::size_t n_rule = 0;
  std::size_t n_model = 0;
  double retention_rate = 0.0;
  double avg_confidence = 0.0;
};

/// With count_rule_labels false, rule-sourced results count as not retained.
RetentionSummary summarize_retention(std::span<const AgentClassification> results, bool count_rule_labels = true);

nlohmann::json to_json(const ClassificationResult& r, std::span<const StrategyLabel> model_labels);
nlohmann::json to_json(const AgentClassification& a, std::span<const StrategyLabel> model_labels);
AgentClassification agent_classification_from_json(const nlohmann::json& j);

void write_classifications(const std::string& path, std::span<const AgentClassification> results,
                           std::span<const StrategyLabel> model_labels);
std::vector<AgentClassification> read_classifications(const std::string& path);

/// Columns: tau,retention_rate,avg_confidence,n_retained,diversity.
std::string sweep_to_csv(std::span<const SweepRow> rows);
nlohmann::json sweep_to_json(std::span<const SweepRow> rows);

}  // namespace pdintent
