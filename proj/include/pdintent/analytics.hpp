#pragma once

// Strategy distributions, behavioral metrics and the hypothesis tests used to
// validate them, with self-contained special functions for p-values.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdintent/pipeline.hpp"

namespace pdintent {

/// Grouping fields of a game's condition.
enum class GroupField : std::uint8_t { Model, Language, Lambda, Personality };
std::string_view group_field_name(GroupField f);
GroupField group_field_from_name(std::string_view name);

struct ConditionKey {
  std::string model;
  std::string language;
  double lambda = 1.0;
  PersonalityPair personality = PersonalityPair::CC;

  static ConditionKey of(const GameConfig& config);
  static ConditionKey of(const AgentClassification& a);
  /// Rendered value of one field ("10", "CS", ...).
  std::string field(GroupField f) const;
  auto operator<=>(const ConditionKey&) const = default;
};

struct DistributionRow {
  std::vector<std::string> group;
  std::size_t n = 0;
  /// Percent per label in kAllLabels order.
  std::array<double, 5> percent{};
};

struct DistributionTable {
  std::vector<GroupField> group_by;
  std::vector<DistributionRow> rows;
  /// Groups that had no retained labels and were omitted.
  std::vector<std::string> warnings;

  /// Columns: one per group field (or "group"), n, then one per label.
  std::string to_csv(const StrategySet& set = StrategySet(5)) const;
  nlohmann::json to_json(const StrategySet& set = StrategySet(5)) const;
};

/// Percentages over retained labels per group. An empty group_by gives one
/// "overall" row. Throws DomainError when nothing is retained at all.
DistributionTable strategy_distribution(std::span<const AgentClassification> results,
                                        std::span<const GroupField> group_by);

/// Absent entries mean the input had too few groups for that metric.
struct BehavioralMetrics {
  /// Mean over conditions of the sample variance of per-game normalized
  /// penalty ratios (mean of both seats). Needs a condition with >= 2 games.
  std::optional<double> iv;
  /// Sample standard deviation of per-language mean ratios. Needs >= 2 languages.
  std::optional<double> ci;
  /// Mean per-agent fraction of consecutive rounds with an action switch.
  std::optional<double> vr;
  /// Max minus min of per-lambda mean ratios. Needs >= 2 lambda values.
  std::optional<double> sp;

  nlohmann::json to_json() const;
};

BehavioralMetrics behavioral_metrics(std::span<const GameLog> logs);

/// Metrics for each value of `field`, in sorted order, plus an "overall" row.
/// Columns: group,n_games,iv,ci,vr,sp (empty cell when absent).
std::string behavioral_metrics_csv(std::span<const GameLog> logs, std::optional<GroupField> field);

// Special functions.
double log_gamma(double x);
/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
double gamma_q(double a, double x);
/// Regularized incomplete beta I_x(a, b).
double beta_inc(double a, double b, double x);
/// Upper tail of the chi-square distribution.
double chi_square_sf(double x, double df);
/// Upper tail of the F distribution.
double f_sf(double f, double df1, double df2);

struct TestResult {
  std::string test;
  double statistic = 0.0;
  double df1 = 0.0;
  std::optional<double> df2;
  double p_value = 1.0;
  std::string effect_name;
  double effect_size = 0.0;
  /// Zero residual variance; statistic is +inf and p is 0.
  bool degenerate = false;

  nlohmann::json to_json() const;
};

/// Pearson chi-square with Cramer's V. Throws DomainError on a ragged or
/// too-small table or a zero row/column total.
TestResult chi_square_test(const std::vector<std::vector<double>>& table);

/// One-way ANOVA with eta squared. Needs >= 2 groups of >= 2 values. Throws
/// DomainError when every value is identical.
TestResult one_way_anova(const std::vector<std::vector<double>>& groups);

struct TwoWayObservation {
  int a = 0;
  int b = 0;
  double y = 0.0;
};

struct TwoWayAnova {
  /// Effect size of each row is partial eta squared.
  TestResult factor_a;
  TestResult factor_b;
  TestResult interaction;
  double r_squared = 0.0;

  nlohmann::json to_json() const;
};

/// Two-factor ANOVA with interaction, Type II sums of squares from
/// sum-to-zero coded least squares. Every (a, b) cell must be populated and
/// the residual must have positive degrees of freedom.
TwoWayAnova two_way_anova(std::span<const TwoWayObservation> obs);

/// ALLC=1, TFT=2, WSLS=3, ALLD=4; RND has no code.
std::optional<double> ordinal_code(StrategyLabel l);

/// Percentile interval of the bootstrapped mean. Values are sorted first, so
/// the result does not depend on input order. Replicate b draws from the
/// substream derive_seed(seed, {b}).
std::pair<double, double> bootstrap_ci(std::span<const double> values, int n_boot = 2000, double level = 0.95,
                                       std::uint64_t seed = 0);

}  // namespace pdintent
