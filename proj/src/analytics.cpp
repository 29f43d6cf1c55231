#include "pdintent/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include <Eigen/Dense>

#include "parallel.hpp"
#include "pdintent/error.hpp"
#include "text.hpp"

namespace pdintent {

using nlohmann::json;

std::string_view group_field_name(GroupField f) {
  switch (f) {
    case GroupField::Model: return "model";
    case GroupField::Language: return "language";
    case GroupField::Lambda: return "lambda";
    case GroupField::Personality: return "personality_pair";
  }
  return "?";
}

GroupField group_field_from_name(std::string_view name) {
  if (name == "model") return GroupField::Model;
  if (name == "language") return GroupField::Language;
  if (name == "lambda") return GroupField::Lambda;
  if (name == "personality_pair" || name == "personality") return GroupField::Personality;
  throw DomainError("unknown grouping field '" + std::string(name) + "'");
}

ConditionKey ConditionKey::of(const GameConfig& config) {
  return {config.metadata.model, config.metadata.language, config.lambda, config.metadata.personality};
}

ConditionKey ConditionKey::of(const AgentClassification& a) {
  return {a.metadata.model, a.metadata.language, a.lambda, a.metadata.personality};
}

std::string ConditionKey::field(GroupField f) const {
  switch (f) {
    case GroupField::Model: return model;
    case GroupField::Language: return language;
    case GroupField::Lambda: return detail::fmt(lambda);
    case GroupField::Personality: return std::string(personality_name(personality));
  }
  return {};
}

namespace {

// Keeps only the grouped fields so that keys compare by group.
ConditionKey project(const ConditionKey& k, std::span<const GroupField> fields) {
  ConditionKey p{"", "", 0.0, PersonalityPair::CC};
  for (auto f : fields) {
    switch (f) {
      case GroupField::Model: p.model = k.model; break;
      case GroupField::Language: p.language = k.language; break;
      case GroupField::Lambda: p.lambda = k.lambda; break;
      case GroupField::Personality: p.personality = k.personality; break;
    }
  }
  return p;
}

std::vector<std::string> group_values(const ConditionKey& k, std::span<const GroupField> fields) {
  if (fields.empty()) return {"overall"};
  std::vector<std::string> v;
  for (auto f : fields) v.push_back(k.field(f));
  return v;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += sep;
    s += parts[i];
  }
  return s;
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_variance(std::span<const double> v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

std::string opt_cell(const std::optional<double>& v) { return v ? detail::fmt(*v) : std::string(); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

DistributionTable strategy_distribution(std::span<const AgentClassification> results,
                                        std::span<const GroupField> group_by) {
  struct Counts {
    std::size_t n = 0;
    std::array<std::size_t, 5> by_label{};
  };
  std::map<ConditionKey, Counts> groups;
  std::size_t retained = 0;
  for (const auto& a : results) {
    Counts& c = groups[project(ConditionKey::of(a), group_by)];
    if (!a.result.label) continue;
    ++c.n;
    ++c.by_label[static_cast<std::size_t>(*a.result.label)];
    ++retained;
  }
  if (retained == 0) throw DomainError("no retained labels to tabulate");

  DistributionTable t;
  t.group_by.assign(group_by.begin(), group_by.end());
  for (const auto& [key, c] : groups) {
    const auto values = group_values(key, group_by);
    if (c.n == 0) {
      t.warnings.push_back("group " + join(values, '/') + " has no retained labels; row omitted");
      continue;
    }
    DistributionRow row;
    row.group = values;
    row.n = c.n;
    for (std::size_t l = 0; l < 5; ++l)
      row.percent[l] = 100.0 * static_cast<double>(c.by_label[l]) / static_cast<double>(c.n);
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string DistributionTable::to_csv(const StrategySet& set) const {
  std::vector<std::string> header;
  if (group_by.empty()) header.emplace_back("group");
  for (auto f : group_by) header.emplace_back(group_field_name(f));
  header.emplace_back("n");
  for (auto l : set.labels()) header.emplace_back(label_name(l));
  std::string s = join(header, ',') + '\n';
  for (const auto& r : rows) {
    std::vector<std::string> cells = r.group;
    cells.push_back(std::to_string(r.n));
    for (auto l : set.labels()) cells.push_back(detail::fmt(r.percent[static_cast<std::size_t>(l)]));
    s += join(cells, ',') + '\n';
  }
  return s;
}

json DistributionTable::to_json(const StrategySet& set) const {
  json fields = json::array();
  for (auto f : group_by) fields.push_back(group_field_name(f));
  json out_rows = json::array();
  for (const auto& r : rows) {
    json pct = json::object();
    for (auto l : set.labels()) pct[std::string(label_name(l))] = r.percent[static_cast<std::size_t>(l)];
    out_rows.push_back({{"group", r.group}, {"n", r.n}, {"percent", std::move(pct)}});
  }
  return {{"group_by", std::move(fields)}, {"rows", std::move(out_rows)}, {"warnings", warnings}};
}

BehavioralMetrics behavioral_metrics(std::span<const GameLog> logs) {
  BehavioralMetrics m;
  std::map<ConditionKey, std::vector<double>> by_condition;
  std::map<std::string, std::vector<double>> by_language;
  std::map<double, std::vector<double>> by_lambda;
  std::vector<double> switch_rates;
  for (const auto& log : logs) {
    const double ratio = 0.5 * (normalized_penalty_ratio(log, Seat::A) + normalized_penalty_ratio(log, Seat::B));
    by_condition[ConditionKey::of(log.config)].push_back(ratio);
    by_language[log.config.metadata.language].push_back(ratio);
    by_lambda[log.config.lambda].push_back(ratio);
    if (log.rounds.size() >= 2) {
      for (Seat seat : {Seat::A, Seat::B}) {
        std::size_t switches = 0;
        for (std::size_t t = 1; t < log.rounds.size(); ++t)
          if (log.rounds[t].own(seat) != log.rounds[t - 1].own(seat)) ++switches;
        switch_rates.push_back(static_cast<double>(switches) / static_cast<double>(log.rounds.size() - 1));
      }
    }
  }

  std::vector<double> variances;
  for (const auto& [key, ratios] : by_condition)
    if (ratios.size() >= 2) variances.push_back(sample_variance(ratios));
  if (!variances.empty()) m.iv = mean(variances);

  if (by_language.size() >= 2) {
    std::vector<double> means;
    for (const auto& [lang, ratios] : by_language) means.push_back(mean(ratios));
    m.ci = std::sqrt(sample_variance(means));
  }

  if (!switch_rates.empty()) m.vr = mean(switch_rates);

  if (by_lambda.size() >= 2) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [lambda, ratios] : by_lambda) {
      const double mu = mean(ratios);
      lo = std::min(lo, mu);
      hi = std::max(hi, mu);
    }
    m.sp = hi - lo;
  }
  return m;
}

json BehavioralMetrics::to_json() const {
  return {{"iv", opt_json(iv)}, {"ci", opt_json(ci)}, {"vr", opt_json(vr)}, {"sp", opt_json(sp)}};
}

std::string behavioral_metrics_csv(std::span<const GameLog> logs, std::optional<GroupField> field) {
  std::string s = "group,n_games,iv,ci,vr,sp\n";
  auto row = [&](const std::string& name, std::span<const GameLog> subset) {
    const auto m = behavioral_metrics(subset);
    s += name + ',' + std::to_string(subset.size()) + ',' + opt_cell(m.iv) + ',' + opt_cell(m.ci) + ',' +
         opt_cell(m.vr) + ',' + opt_cell(m.sp) + '\n';
  };
  if (field) {
    const GroupField f = *field;
    std::map<ConditionKey, std::vector<GameLog>> groups;
    for (const auto& log : logs) groups[project(ConditionKey::of(log.config), std::span(&f, 1))].push_back(log);
    for (const auto& [key, subset] : groups) row(key.field(f), subset);
  }
  row("overall", logs);
  return s;
}

// Lanczos approximation, g = 7, n = 9.
double log_gamma(double x) {
  static constexpr double kCoef[] = {0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
                                     771.32342877765313,   -176.61502916214059,   12.507343278686905,
                                     -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
  if (!(x > 0.0)) throw DomainError("log_gamma needs a positive argument");
  if (x < 0.5) return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma(1.0 - x);
  x -= 1.0;
  double a = kCoef[0];
  const double t = x + 7.5;
  for (int i = 1; i < 9; ++i) a += kCoef[i] / (x + i);
  return 0.5 * std::log(2.0 * std::numbers::pi) + (x + 0.5) * std::log(t) - t + std::log(a);
}

namespace {

constexpr double kEps = 1e-16;
constexpr double kTiny = 1e-300;
constexpr int kMaxIter = 10000;

double gamma_series(double a, double x) {
  double ap = a, sum = 1.0 / a, del = sum;
  for (int n = 0; n < kMaxIter; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - log_gamma(a));
}

// Lentz continued fraction for Q(a, x).
double gamma_cf(double a, double x) {
  double b = x + 1.0 - a, c = 1.0 / kTiny, d = 1.0 / b, h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - log_gamma(a)) * h;
}

double beta_cf(double a, double b, double x) {
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m < kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw DomainError("gamma_p needs a > 0 and x >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  return x < a + 1.0 ? gamma_series(a, x) : 1.0 - gamma_cf(a, x);
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw DomainError("gamma_q needs a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return x < a + 1.0 ? 1.0 - gamma_series(a, x) : gamma_cf(a, x);
}

double beta_inc(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0) || x < 0.0 || x > 1.0) throw DomainError("beta_inc needs a, b > 0 and x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double front =
      std::exp(log_gamma(a + b) - log_gamma(a) - log_gamma(b) + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw DomainError("chi-square needs positive degrees of freedom");
  if (x <= 0.0) return 1.0;
  return gamma_q(0.5 * df, 0.5 * x);
}

double f_sf(double f, double df1, double df2) {
  if (!(df1 > 0.0 && df2 > 0.0)) throw DomainError("F needs positive degrees of freedom");
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  return beta_inc(0.5 * df2, 0.5 * df1, df2 / (df2 + df1 * f));
}

json TestResult::to_json() const {
  json j = {{"test", test}, {"statistic", statistic}, {"p_value", p_value}, {"effect_name", effect_name},
            {"effect_size", effect_size}, {"degenerate", degenerate}};
  j["df"] = df2 ? json::array({df1, *df2}) : json(df1);
  return j;
}

TestResult chi_square_test(const std::vector<std::vector<double>>& table) {
  const std::size_t r = table.size();
  if (r < 2) throw DomainError("contingency table needs at least 2 rows");
  const std::size_t c = table[0].size();
  if (c < 2) throw DomainError("contingency table needs at least 2 columns");
  std::vector<double> row(r, 0.0), col(c, 0.0);
  double n = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (table[i].size() != c) throw DomainError("contingency table rows differ in length");
    for (std::size_t j = 0; j < c; ++j) {
      const double v = table[i][j];
      if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("contingency counts must be finite and nonnegative");
      row[i] += v;
      col[j] += v;
      n += v;
    }
  }
  for (double v : row)
    if (v == 0.0) throw DomainError("contingency table has a zero row total");
  for (double v : col)
    if (v == 0.0) throw DomainError("contingency table has a zero column total");

  double chi2 = 0.0;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double e = row[i] * col[j] / n;
      chi2 += (table[i][j] - e) * (table[i][j] - e) / e;
    }
  TestResult t;
  t.test = "chi_square";
  t.statistic = chi2;
  t.df1 = static_cast<double>((r - 1) * (c - 1));
  t.p_value = chi_square_sf(chi2, t.df1);
  t.effect_name = "cramers_v";
  t.effect_size = std::min(1.0, std::sqrt(chi2 / (n * static_cast<double>(std::min(r, c) - 1))));
  return t;
}

TestResult one_way_anova(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw DomainError("ANOVA needs at least 2 groups");
  double grand = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw DomainError("ANOVA needs at least 2 observations per group");
    for (double v : g) grand += v;
    n += g.size();
  }
  grand /= static_cast<double>(n);
  double ss_between = 0.0, ss_within = 0.0;
  for (const auto& g : groups) {
    const double m = mean(g);
    ss_between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double v : g) ss_within += (v - m) * (v - m);
  }
  const double ss_total = ss_between + ss_within;
  if (ss_total <= 0.0) throw DomainError("degenerate ANOVA input: every value is identical");

  TestResult t;
  t.test = "one_way_anova";
  t.df1 = static_cast<double>(groups.size() - 1);
  t.df2 = static_cast<double>(n - groups.size());
  t.effect_name = "eta_squared";
  t.effect_size = ss_between / ss_total;
  if (ss_within <= ss_total * 1e-15) {
    t.degenerate = true;
    t.statistic = std::numeric_limits<double>::infinity();
    t.p_value = 0.0;
    t.effect_size = 1.0;
    return t;
  }
  t.statistic = (ss_between / t.df1) / (ss_within / *t.df2);
  t.p_value = f_sf(t.statistic, t.df1, *t.df2);
  return t;
}

namespace {

// Sum-to-zero code of `level` among `levels`: column i is 1 for level i,
// -1 for the last level.
Eigen::RowVectorXd effect_code(int level, int levels) {
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(levels - 1);
  if (level == levels - 1)
    out.setConstant(-1.0);
  else
    out(level) = 1.0;
  return out;
}

double residual_ss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd beta = x.colPivHouseholderQr().solve(y);
  return (y - x * beta).squaredNorm();
}

}  // namespace

TwoWayAnova two_way_anova(std::span<const TwoWayObservation> obs) {
  std::set<int> a_set, b_set;
  for (const auto& o : obs) {
    a_set.insert(o.a);
    b_set.insert(o.b);
  }
  const int la = static_cast<int>(a_set.size()), lb = static_cast<int>(b_set.size());
  if (la < 2 || lb < 2) throw DomainError("two-way ANOVA needs at least 2 levels per factor");
  std::map<int, int> a_idx, b_idx;
  for (int v : a_set) a_idx.emplace(v, static_cast<int>(a_idx.size()));
  for (int v : b_set) b_idx.emplace(v, static_cast<int>(b_idx.size()));

  std::vector<int> cell(static_cast<std::size_t>(la * lb), 0);
  for (const auto& o : obs) ++cell[static_cast<std::size_t>(a_idx[o.a] * lb + b_idx[o.b])];
  for (int c : cell)
    if (c == 0) throw DomainError("two-way ANOVA needs every factor cell populated");
  const auto n = static_cast<Eigen::Index>(obs.size());
  const int da = la - 1, db = lb - 1, dab = da * db;
  const Eigen::Index df_res = n - la * lb;
  if (df_res < 1) throw DomainError("two-way ANOVA needs replication within cells");

  Eigen::VectorXd y(n);
  Eigen::MatrixXd ca(n, da), cb(n, db), cab(n, dab);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = obs[static_cast<std::size_t>(i)];
    y(i) = o.y;
    ca.row(i) = effect_code(a_idx[o.a], la);
    cb.row(i) = effect_code(b_idx[o.b], lb);
    for (int p = 0; p < da; ++p)
      for (int q = 0; q < db; ++q) cab(i, p * db + q) = ca(i, p) * cb(i, q);
  }
  auto design = [&](bool with_a, bool with_b, bool with_ab) {
    Eigen::MatrixXd x(n, 1 + (with_a ? da : 0) + (with_b ? db : 0) + (with_ab ? dab : 0));
    x.col(0).setOnes();
    Eigen::Index col = 1;
    if (with_a) x.middleCols(col, da) = ca, col += da;
    if (with_b) x.middleCols(col, db) = cb, col += db;
    if (with_ab) x.middleCols(col, dab) = cab;
    return x;
  };
  const double rss_full = residual_ss(design(true, true, true), y);
  const double rss_ab = residual_ss(design(true, true, false), y);
  const double rss_a = residual_ss(design(true, false, false), y);
  const double rss_b = residual_ss(design(false, true, false), y);
  const double ss_total = (y.array() - y.mean()).square().sum();
  if (ss_total <= 0.0) throw DomainError("degenerate ANOVA input: every value is identical");

  const double ms_res = rss_full / static_cast<double>(df_res);
  const bool degenerate = rss_full <= ss_total * 1e-15;
  auto effect = [&](const char* name, double ss, int df) {
    TestResult t;
    t.test = name;
    t.df1 = df;
    t.df2 = static_cast<double>(df_res);
    t.effect_name = "partial_eta_squared";
    ss = std::max(ss, 0.0);
    t.effect_size = ss + rss_full > 0.0 ? ss / (ss + rss_full) : 0.0;
    if (degenerate) {
      t.degenerate = true;
      t.statistic = ss > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
      t.p_value = ss > 0.0 ? 0.0 : 1.0;
    } else {
      t.statistic = (ss / df) / ms_res;
      t.p_value = f_sf(t.statistic, df, static_cast<double>(df_res));
    }
    return t;
  };
  TwoWayAnova r;
  r.factor_a = effect("factor_a", rss_b - rss_ab, da);
  r.factor_b = effect("factor_b", rss_a - rss_ab, db);
  r.interaction = effect("interaction", rss_ab - rss_full, dab);
  r.r_squared = 1.0 - rss_full / ss_total;
  return r;
}

json TwoWayAnova::to_json() const {
  return {{"factor_a", factor_a.to_json()},
          {"factor_b", factor_b.to_json()},
          {"interaction", interaction.to_json()},
          {"r_squared", r_squared}};
}

std::optional<double> ordinal_code(StrategyLabel l) {
  switch (l) {
    case StrategyLabel::ALLC: return 1.0;
    case StrategyLabel::TFT: return 2.0;
    case StrategyLabel::WSLS: return 3.0;
    case StrategyLabel::ALLD: return 4.0;
    case StrategyLabel::RND: return std::nullopt;
  }
  return std::nullopt;
}

std::pair<double, double> bootstrap_ci(std::span<const double> values, int n_boot, double level, std::uint64_t seed) {
  if (values.size() < 2) throw DomainError("bootstrap needs at least 2 values");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("confidence level must lie in (0, 1)");
  if (n_boot < 1) throw DomainError("bootstrap needs at least one replicate");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  std::vector<double> means(static_cast<std::size_t>(n_boot));
  detail::parallel_for(means.size(), [&](std::size_t b) {
    Rng rng(derive_seed(seed, {b}));
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += sorted[rng.below(n)];
    means[b] = s / static_cast<double>(n);
  });
  std::sort(means.begin(), means.end());

  auto quantile = [&](double q) {
    const double h = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (h - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  const double alpha = 0.5 * (1.0 - level);
  return {quantile(alpha), quantile(1.0 - alpha)};
}

}  // namespace pdintent
