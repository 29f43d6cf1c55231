#include "pdintent/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "parallel.hpp"
#include "pdintent/error.hpp"
#include "text.hpp"

namespace pdintent {

using nlohmann::json;

std::string_view source_name(ResultSource s) {
  switch (s) {
    case ResultSource::Rule: return "rule";
    case ResultSource::Model: return "model";
    case ResultSource::Rejected: return "rejected";
  }
  return "?";
}

ResultSource source_from_name(std::string_view name) {
  if (name == "rule") return ResultSource::Rule;
  if (name == "model") return ResultSource::Model;
  if (name == "rejected") return ResultSource::Rejected;
  throw SchemaError("unknown result source '" + std::string(name) + "'");
}

std::string_view mode_name(PipelineMode m) { return m == PipelineMode::ModelFirst ? "model-first" : "rules-first"; }

PipelineMode mode_from_name(std::string_view name) {
  if (name == "model-first") return PipelineMode::ModelFirst;
  if (name == "rules-first") return PipelineMode::RulesFirst;
  throw DomainError("unknown pipeline mode '" + std::string(name) + "'");
}

namespace {

StrategySet model_set(const Model& model) { return StrategySet(static_cast<int>(model.labels().size())); }

std::pair<int, double> argmax(const std::vector<double>& p) {
  const auto it = std::max_element(p.begin(), p.end());
  return {static_cast<int>(it - p.begin()), *it};
}

}  // namespace

ClassificationResult classify_trajectory(const Model& model, const Trajectory& traj, const PipelineOptions& opts) {
  if (!(opts.tau > 0.0 && opts.tau <= 1.0)) throw DomainError("tau must lie in (0, 1]");
  traj.validate();

  ClassificationResult r;
  if (opts.use_rules) r.candidates = rule_match(traj, model_set(model), opts.rules);
  const auto rule_label = opts.use_rules ? resolve_priority(r.candidates) : std::nullopt;

  auto from_rule = [&] {
    r.label = rule_label;
    r.confidence = 1.0;
    r.source = ResultSource::Rule;
  };

  if (opts.mode == PipelineMode::RulesFirst && rule_label) {
    from_rule();
    return r;
  }

  r.distribution = model.predict_proba(encode_sequence(traj));
  const auto [best, conf] = argmax(*r.distribution);
  if (conf >= opts.tau) {
    r.label = model.labels()[static_cast<std::size_t>(best)];
    r.confidence = conf;
    r.source = ResultSource::Model;
  } else if (rule_label) {
    from_rule();
  } else {
    r.confidence = conf;
    r.source = ResultSource::Rejected;
  }
  return r;
}

std::vector<AgentClassification> classify_corpus(const Model& model, std::span<const GameLog> logs,
                                                 const PipelineOptions& opts) {
  std::vector<AgentClassification> out(2 * logs.size());
  detail::parallel_for(out.size(), [&](std::size_t i) {
    const GameLog& log = logs[i / 2];
    const Seat seat = i % 2 == 0 ? Seat::A : Seat::B;
    AgentClassification& a = out[i];
    a.game_id = log.game_id;
    a.agent = seat;
    a.metadata = log.config.metadata;
    a.lambda = log.config.lambda;
    a.result = classify_trajectory(model, Trajectory::from_game(log, seat), opts);
  });
  return out;
}

std::vector<SweepRow> threshold_sweep(const Model& model, std::span<const Trajectory> inputs,
                                      std::span<const double> tau_grid, const SweepOptions& opts) {
  if (!std::is_sorted(tau_grid.begin(), tau_grid.end())) throw DomainError("tau grid must be ascending");

  const std::size_t n = inputs.size();
  std::vector<std::vector<double>> dist(n);
  std::vector<std::optional<StrategyLabel>> rule_label(n);
  detail::parallel_for(n, [&](std::size_t i) {
    inputs[i].validate();
    dist[i] = model.predict_proba(encode_sequence(inputs[i]));
    if (opts.include_rules) rule_label[i] = resolve_priority(rule_match(inputs[i], model_set(model), opts.rules));
  });

  std::vector<SweepRow> rows;
  rows.reserve(tau_grid.size());
  for (double tau : tau_grid) {
    SweepRow row;
    row.tau = tau;
    double conf_sum = 0.0;
    LabelSet seen;
    for (std::size_t i = 0; i < n; ++i) {
      const auto [best, conf] = argmax(dist[i]);
      const bool rule_first = opts.include_rules && opts.mode == PipelineMode::RulesFirst && rule_label[i];
      if (!rule_first && conf >= tau) {
        ++row.n_retained;
        conf_sum += conf;
        seen.insert(model.labels()[static_cast<std::size_t>(best)]);
      } else if (opts.include_rules && rule_label[i]) {
        ++row.n_retained;
        conf_sum += 1.0;
        seen.insert(*rule_label[i]);
      }
    }
    row.retention_rate = n == 0 ? 0.0 : static_cast<double>(row.n_retained) / static_cast<double>(n);
    row.avg_confidence = row.n_retained == 0 ? 0.0 : conf_sum / static_cast<double>(row.n_retained);
    row.diversity = seen.size();
    rows.push_back(row);
  }
  return rows;
}

RetentionSummary summarize_retention(std::span<const AgentClassification> results, bool count_rule_labels) {
  RetentionSummary s;
  s.n_total = results.size();
  double conf_sum = 0.0;
  for (const auto& a : results) {
    const auto src = a.result.source;
    if (src == ResultSource::Rule) ++s.n_rule;
    if (src == ResultSource::Model) ++s.n_model;
    if (src == ResultSource::Model || (src == ResultSource::Rule && count_rule_labels)) {
      ++s.n_retained;
      conf_sum += a.result.confidence;
    }
  }
  if (s.n_total > 0) s.retention_rate = static_cast<double>(s.n_retained) / static_cast<double>(s.n_total);
  if (s.n_retained > 0) s.avg_confidence = conf_sum / static_cast<double>(s.n_retained);
  return s;
}

json to_json(const ClassificationResult& r, std::span<const StrategyLabel> model_labels) {
  json j;
  j["label"] = r.label ? json(label_name(*r.label)) : json(nullptr);
  j["confidence"] = r.confidence;
  j["source"] = source_name(r.source);
  json cands = json::array();
  for (auto l : r.candidates.to_vector()) cands.push_back(label_name(l));
  j["candidates"] = std::move(cands);
  if (r.distribution) {
    json d = json::object();
    for (std::size_t k = 0; k < r.distribution->size() && k < model_labels.size(); ++k)
      d[std::string(label_name(model_labels[k]))] = (*r.distribution)[k];
    j["distribution"] = std::move(d);
  }
  return j;
}

json to_json(const AgentClassification& a, std::span<const StrategyLabel> model_labels) {
  json j = {{"game_id", a.game_id}, {"agent", a.agent == Seat::A ? "A" : "B"}};
  j.update(to_json(a.result, model_labels));
  j["model"] = a.metadata.model;
  j["language"] = a.metadata.language;
  j["personality_pair"] = personality_name(a.metadata.personality);
  j["lambda"] = a.lambda;
  return j;
}

AgentClassification agent_classification_from_json(const json& j) {
  try {
    AgentClassification a;
    a.game_id = j.at("game_id").get<std::string>();
    const auto agent = j.at("agent").get<std::string>();
    if (agent != "A" && agent != "B") throw SchemaError("field 'agent' must be \"A\" or \"B\"");
    a.agent = agent == "A" ? Seat::A : Seat::B;
    a.metadata.model = j.value("model", std::string("none"));
    a.metadata.language = j.value("language", std::string("none"));
    a.metadata.personality = personality_from_name(j.value("personality_pair", std::string("CC")));
    a.lambda = j.value("lambda", 1.0);
    ClassificationResult& r = a.result;
    if (!j.at("label").is_null()) r.label = label_from_name(j.at("label").get<std::string>());
    r.confidence = j.at("confidence").get<double>();
    r.source = source_from_name(j.at("source").get<std::string>());
    for (const auto& c : j.value("candidates", json::array())) r.candidates.insert(label_from_name(c.get<std::string>()));
    if (j.contains("distribution")) {
      std::vector<double> d;
      for (auto l : kAllLabels) {
        const auto key = std::string(label_name(l));
        if (j["distribution"].contains(key)) d.push_back(j["distribution"][key].get<double>());
      }
      r.distribution = std::move(d);
    }
    return a;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("classification record: ") + e.what());
  }
}

void write_classifications(const std::string& path, std::span<const AgentClassification> results,
                           std::span<const StrategyLabel> model_labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& a : results) out << to_json(a, model_labels).dump() << '\n';
}

std::vector<AgentClassification> read_classifications(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::vector<AgentClassification> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(agent_classification_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw SchemaError(path + ": " + e.what());
    }
  }
  return out;
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
  std::string s = "tau,retention_rate,avg_confidence,n_retained,diversity\n";
  for (const auto& r : rows)
    s += detail::fmt(r.tau) + ',' + detail::fmt(r.retention_rate) + ',' + detail::fmt(r.avg_confidence) + ',' +
         std::to_string(r.n_retained) + ',' + std::to_string(r.diversity) + '\n';
  return s;
}

json sweep_to_json(std::span<const SweepRow> rows) {
  json a = json::array();
  for (const auto& r : rows)
    a.push_back({{"tau", r.tau},
                 {"retention_rate", r.retention_rate},
                 {"avg_confidence", r.avg_confidence},
                 {"n_retained", r.n_retained},
                 {"diversity", r.diversity}});
  return a;
}

}  // namespace pdintent
