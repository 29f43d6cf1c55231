// Structured values cross the boundary as JSON text; the pdintent package
// decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "pdintent/analytics.hpp"
#include "pdintent/classifiers.hpp"
#include "pdintent/datagen.hpp"
#include "pdintent/harness.hpp"
#include "pdintent/hashing.hpp"
#include "pdintent/pipeline.hpp"

namespace py = pybind11;
using namespace pdintent;
using nlohmann::json;

namespace {

std::vector<Action> parse_actions(const std::string& s) {
  std::vector<Action> out;
  for (char c : s) out.push_back(action_from_char(c));
  return out;
}

Trajectory make_trajectory(const std::string& own, const std::string& opp) {
  Trajectory t{parse_actions(own), parse_actions(opp), std::nullopt};
  t.validate();
  return t;
}

std::vector<std::string> label_names(LabelSet labels) {
  std::vector<std::string> out;
  for (auto l : kAllLabels)
    if (labels.contains(l)) out.emplace_back(label_name(l));
  return out;
}

Seat seat_from(const std::string& s) {
  if (s == "A") return Seat::A;
  if (s == "B") return Seat::B;
  throw DomainError("seat must be 'A' or 'B', got '" + s + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of pdintent";

  // Translators run newest first, so the base class goes in first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);

  m.def("play_game",
        [](const std::string& a, const std::string& b, double lambda, std::uint64_t seed, double epsilon, int horizon) {
          CanonicalPolicy pa({label_from_name(a), epsilon}), pb({label_from_name(b), epsilon});
          GameConfig cfg;
          cfg.lambda = lambda;
          cfg.seed = seed;
          cfg.horizon = horizon;
          cfg.metadata.model = a + ":" + b;
          return to_json(play_game(pa, pb, cfg)).dump();
        },
        py::arg("a"), py::arg("b"), py::arg("lam") = 1.0, py::arg("seed") = 0, py::arg("epsilon") = 0.0,
        py::arg("horizon") = 10);

  m.def("normalized_penalty_ratio",
        [](const std::string& log, const std::string& seat) {
          return normalized_penalty_ratio(game_log_from_json(json::parse(log)), seat_from(seat));
        },
        py::arg("log"), py::arg("seat") = "A");

  m.def("rule_match",
        [](const std::string& own, const std::string& opp, int strategies) {
          return label_names(rule_match(make_trajectory(own, opp), StrategySet(strategies)));
        },
        py::arg("own"), py::arg("opp"), py::arg("strategies") = 4);

  m.def("resolve_priority", [](const std::vector<std::string>& names) -> std::optional<std::string> {
    LabelSet set;
    for (const auto& n : names) set.insert(label_from_name(n));
    if (auto l = resolve_priority(set)) return std::string(label_name(*l));
    return std::nullopt;
  });

  m.def("generate_corpus",
        [](const std::string& spec, const std::string& path) {
          const auto data = generate_corpus(corpus_spec_from_json(json::parse(spec)));
          write_corpus(path, data);
          return std::make_pair(data.train.size(), data.test.size());
        },
        py::arg("spec"), py::arg("path"));

  py::class_<Model>(m, "Model")
      .def_static(
          "train",
          [](const std::string& kind, const std::string& corpus, std::uint64_t seed, const std::string& hyperparams) {
            py::gil_scoped_release release;
            const auto data = read_corpus(corpus);
            return train(kind_from_name(kind), data.train, StrategySet(data.spec.strategy_set),
                         Hyperparams::from_json(json::parse(hyperparams)), seed, nullptr,
                         json{{"corpus_sha256", sha256_file(corpus)}});
          },
          py::arg("kind"), py::arg("corpus"), py::arg("seed") = 0, py::arg("hyperparams") = "{}")
      .def_static("load", [](const std::string& path) { return load_model(path); })
      .def("save", [](const Model& model, const std::string& path) { save_model(model, path); })
      .def_property_readonly("kind", [](const Model& model) { return std::string(kind_name(model.kind())); })
      .def_property_readonly("labels",
                             [](const Model& model) {
                               std::vector<std::string> out;
                               for (auto l : model.labels()) out.emplace_back(label_name(l));
                               return out;
                             })
      .def("predict_proba",
           [](const Model& model, const std::string& own, const std::string& opp) {
             return model.predict_proba(encode_sequence(make_trajectory(own, opp)));
           })
      .def(
          "classify",
          [](const Model& model, const std::string& own, const std::string& opp, double tau, const std::string& mode,
             bool use_rules) {
            PipelineOptions opts;
            opts.tau = tau;
            opts.mode = mode_from_name(mode);
            opts.use_rules = use_rules;
            return to_json(classify_trajectory(model, make_trajectory(own, opp), opts), model.labels()).dump();
          },
          py::arg("own"), py::arg("opp"), py::arg("tau") = 0.9, py::arg("mode") = "model-first",
          py::arg("use_rules") = true)
      .def("evaluate", [](const Model& model, const std::string& corpus) {
        py::gil_scoped_release release;
        return evaluate(model, read_corpus(corpus).test).to_json().dump();
      });

  m.def("chi_square_test",
        [](const std::vector<std::vector<double>>& table) { return chi_square_test(table).to_json().dump(); });
  m.def("one_way_anova",
        [](const std::vector<std::vector<double>>& groups) { return one_way_anova(groups).to_json().dump(); });
  m.def("bootstrap_ci",
        [](const std::vector<double>& values, int n_boot, double level, std::uint64_t seed) {
          return bootstrap_ci(values, n_boot, level, seed);
        },
        py::arg("values"), py::arg("n_boot") = 2000, py::arg("level") = 0.95, py::arg("seed") = 0);
  m.def("chi_square_sf", &chi_square_sf, py::arg("x"), py::arg("df"));
  m.def("f_sf", &f_sf, py::arg("f"), py::arg("df1"), py::arg("df2"));

  m.def("run_command", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run_command(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  });
}
