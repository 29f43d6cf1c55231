#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "pdintent/agent_gateway.hpp"
#include "pdintent/hashing.hpp"
#include "pdintent/pipeline.hpp"
#include "pdintent/strategies.hpp"

using namespace pdintent;
using nlohmann::json;

namespace {

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

json full_grid_config() {
  json models = json::array();
  for (const char* tag : {"m1", "m2", "m3"}) models.push_back({{"tag", tag}, {"endpoint", "http://localhost:1/v1"}});
  return {{"schema_version", 1},
          {"models", models},
          {"languages", {"en", "fr", "de", "es", "zh"}},
          {"lambdas", {0.1, 1.0, 10.0}},
          {"personality_pairs", {"CC", "CS", "SC", "SS"}},
          {"repetitions", 10},
          {"horizon", 10},
          {"seed", 3}};
}

// Scripted endpoint: returns the queued replies in order.
CallbackEndpoint scripted(std::vector<std::string> replies, std::vector<std::string>* prompts = nullptr) {
  auto state = std::make_shared<std::pair<std::vector<std::string>, std::size_t>>(std::move(replies), 0);
  return CallbackEndpoint([state, prompts](const std::string& prompt, const GenerationParams&) {
    if (prompts) prompts->push_back(prompt);
    if (state->second >= state->first.size()) throw AgentFailure("script exhausted");
    return state->first[state->second++];
  });
}

GatewayOptions no_sleep(std::vector<std::chrono::milliseconds>* slept = nullptr) {
  GatewayOptions o;
  o.sleep = [slept](std::chrono::milliseconds d) {
    if (slept) slept->push_back(d);
  };
  return o;
}

PromptContext context_at(int round) {
  PromptContext c;
  c.horizon = 10;
  c.round_index = round;
  c.matrix = scale_matrix(PenaltyMatrix::baseline(), 10.0);
  for (int t = 1; t < round; ++t) {
    c.own.push_back(t % 2 ? Action::Cooperate : Action::Defect);
    c.opp.push_back(Action::Defect);
    c.own_penalty.push_back(t % 2 ? 100.0 : 60.0);
    c.opp_penalty.push_back(t % 2 ? 0.0 : 60.0);
  }
  return c;
}

}  // namespace

TEST_CASE("config product sizes") {
  auto cfg = config_from_json(full_grid_config());
  CHECK(cfg.game_count() == 1800);
  auto games = cfg.expand();
  CHECK(games.size() == 1800);
  std::set<std::uint64_t> seeds;
  for (const auto& g : games) seeds.insert(g.seed);
  CHECK(seeds.size() == 1800);
  CHECK(games.front().metadata.model == "m1");
  CHECK(games.back().metadata.language == "zh");
  CHECK(games.back().lambda == 10.0);
  CHECK(ExperimentConfig::game_id(games.front(), 0) == "m1/en/0.1/CC/0");

  json single = full_grid_config();
  single["models"] = json::array({single["models"][0]});
  single["languages"] = {"en"};
  single["lambdas"] = {1.0};
  single["personality_pairs"] = {"CS"};
  single["repetitions"] = 1;
  CHECK(config_from_json(single).game_count() == 1);

  // Expansion is a pure function of the config.
  CHECK(config_from_json(full_grid_config()).expand() == games);
}

TEST_CASE("config validation") {
  json bad = full_grid_config();
  bad["lambdas"] = {1.0, 0.0};
  CHECK_THROWS_AS(config_from_json(bad), DomainError);

  bad = full_grid_config();
  bad["repetitions"] = "ten";
  try {
    config_from_json(bad);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("repetitions") != std::string::npos);
  }

  bad = full_grid_config();
  bad.erase("models");
  try {
    config_from_json(bad);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("models") != std::string::npos);
  }

  bad = full_grid_config();
  bad["schema_version"] = 2;
  CHECK_THROWS_AS(config_from_json(bad), SchemaError);

  bad = full_grid_config();
  bad["personality_pairs"] = {"CX"};
  CHECK_THROWS_AS(config_from_json(bad), SchemaError);

  auto cfg = config_from_json(full_grid_config());
  CHECK(cfg.max_retries == 3);
  CHECK(cfg.template_id == "default");
  auto again = config_from_json(cfg.to_json());
  CHECK(again.to_json() == cfg.to_json());

  const auto path = tmp("pdintent_config.json");
  {
    std::ofstream out(path);
    out << full_grid_config().dump(2);
  }
  CHECK(load_config(path).game_count() == 1800);
  std::filesystem::remove(path);
}

TEST_CASE("prompts state the horizon and that lower is better") {
  for (const char* id : {"default", "minimal"})
    for (int round : {1, 4, 10}) {
      auto ctx = context_at(round);
      auto p = render_prompt(ctx, builtin_template(id));
      CHECK(p.find("10 rounds in total") != std::string::npos);
      CHECK(p.find("lower penalties are better") != std::string::npos);
      CHECK(p.find("{{") == std::string::npos);
    }
  auto p = render_prompt(context_at(3), "{{round}}/{{horizon}} left={{rounds_left}} lang={{language}} {{personality}}");
  CHECK(p.find("3/10 left=7 lang=none cooperative") != std::string::npos);
  auto h = render_prompt(context_at(3), "{{history}}");
  CHECK(h.find("round 1: you B, other A") != std::string::npos);
  CHECK(h.find("round 2: you A, other A") != std::string::npos);
  auto m = render_prompt(context_at(1), "{{matrix}}");
  CHECK(m.find("(60, 60)") != std::string::npos);
  CHECK_THROWS_AS(builtin_template("nope"), DomainError);
}

TEST_CASE("parse examples") {
  CHECK(parse_action("Option B", ParsePolicy::FirstToken) == Action::Cooperate);
  CHECK(parse_action("I choose A because it is safer", ParsePolicy::FirstToken) == Action::Defect);
  CHECK(parse_action("A", ParsePolicy::Strict) == Action::Defect);
  CHECK(parse_action("Answer: B.", ParsePolicy::FirstToken) == Action::Cooperate);
  CHECK_FALSE(parse_action("no idea", ParsePolicy::FirstToken));
  CHECK_FALSE(parse_action("a or b", ParsePolicy::FirstToken));
  CHECK_FALSE(parse_action("ABBA", ParsePolicy::FirstToken));
  CHECK(parse_action("A or B? I pick B", ParsePolicy::FirstToken) == Action::Defect);
  CHECK_FALSE(parse_action("A or B? I pick B", ParsePolicy::Strict));
  CHECK(parse_action("B. Final answer: B", ParsePolicy::Strict) == Action::Cooperate);
  for (int i = 0; i < 3; ++i) CHECK(parse_action("Option B", ParsePolicy::Strict) == Action::Cooperate);
}

TEST_CASE("parse failures are re-asked up to the attempt limit") {
  auto ep = scripted({"hmm", "let me think", "B"});
  auto e = next_action(ep, context_at(2), no_sleep());
  CHECK(e.action == Action::Cooperate);
  CHECK(e.retries == 2);
  CHECK(e.attempts.size() == 3);
  CHECK(e.raw_response() == "B");

  auto never = scripted({"x", "y", "z", "A"});
  CHECK_THROWS_AS(next_action(never, context_at(2), no_sleep()), AgentFailure);

  auto strict = scripted({"A then B", "A"});
  auto opts = no_sleep();
  opts.parse_policy = ParsePolicy::Strict;
  auto s = next_action(strict, context_at(1), opts);
  CHECK(s.action == Action::Defect);
  CHECK(s.retries == 1);
}

TEST_CASE("transport errors back off exponentially") {
  int calls = 0;
  CallbackEndpoint flaky([&](const std::string&, const GenerationParams&) -> std::string {
    if (++calls <= 3) throw TransportError("503");
    return "A";
  });
  std::vector<std::chrono::milliseconds> slept;
  auto e = next_action(flaky, context_at(1), no_sleep(&slept));
  CHECK(e.action == Action::Defect);
  CHECK(e.retries == 0);
  REQUIRE(slept.size() == 3);
  CHECK(slept[0].count() == 200);
  CHECK(slept[1].count() == 400);
  CHECK(slept[2].count() == 800);

  CallbackEndpoint down([](const std::string&, const GenerationParams&) -> std::string { throw TransportError("down"); });
  slept.clear();
  auto opts = no_sleep(&slept);
  opts.max_transport_retries = 2;
  CHECK_THROWS_AS(next_action(down, context_at(1), opts), AgentFailure);
  CHECK(slept.size() == 2);
}

TEST_CASE("transcript hashes match re-rendered prompts") {
  std::vector<std::string> prompts;
  auto ep = scripted({"A", "B", "A"}, &prompts);
  for (int r : {1, 2, 3}) {
    auto e = next_action(ep, context_at(r), no_sleep());
    auto back = TranscriptEntry::from_json(json::parse(e.to_json().dump()));
    CHECK(back.prompt_hash == sha256_hex(render_prompt(back.context, builtin_template(back.context.template_id))));
    CHECK(back.prompt_hash == sha256_hex(prompts.back()));
    CHECK(back.attempts == e.attempts);
    CHECK(back.action == e.action);
  }
}

TEST_CASE("remote agents play full games and record transcripts") {
  std::atomic<int> calls = 0;
  CallbackEndpoint always_b([&](const std::string& prompt, const GenerationParams& g) {
    ++calls;
    CHECK(g.temperature == 0.7);
    CHECK(prompt.find("lower penalties are better") != std::string::npos);
    return std::string("B");
  });
  auto opts = no_sleep();
  opts.generation.temperature = 0.7;
  RemoteAgentPolicy remote(always_b, opts, "g0", "default", "en", 'C');
  CanonicalPolicy alld({StrategyLabel::ALLD, 0.0});
  GameConfig cfg;
  cfg.lambda = 10.0;
  auto log = play_game(remote, alld, cfg);
  CHECK(calls == 10);
  CHECK(log.total_a == 1000.0);
  REQUIRE(remote.transcript().size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(remote.transcript()[i].round == i + 1);
    CHECK(remote.transcript()[i].seat == 'A');
    CHECK(remote.transcript()[i].game_id == "g0");
    CHECK(remote.transcript()[i].context.own.size() == static_cast<std::size_t>(i));
  }

  const auto path = tmp("pdintent_transcript.jsonl");
  write_transcript(path, remote.transcript());
  auto back = read_transcript(path);
  REQUIRE(back.size() == 10);
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].to_json() == remote.transcript()[i].to_json());

  // Replaying the recorded responses reproduces the game without the endpoint.
  ReplayEndpoint replay(back);
  RemoteAgentPolicy again(replay, no_sleep(), "g0", "default", "en", 'C');
  CanonicalPolicy alld2({StrategyLabel::ALLD, 0.0});
  CHECK(play_game(again, alld2, cfg) == log);
  std::filesystem::remove(path);
}

TEST_CASE("agent failure aborts the game with a partial log") {
  int n = 0;
  CallbackEndpoint dies([&](const std::string&, const GenerationParams&) { return ++n <= 4 ? std::string("A") : std::string("?"); });
  RemoteAgentPolicy remote(dies, no_sleep(), "g", "default", "en", 'S');
  CanonicalPolicy allc({StrategyLabel::ALLC, 0.0});
  try {
    play_game(remote, allc, GameConfig{});
    FAIL("expected AbortedGame");
  } catch (const AbortedGame& e) {
    CHECK(e.partial_log().rounds.size() == 4);
  }
}

TEST_CASE("replay policies") {
  CanonicalPolicy alld({StrategyLabel::ALLD, 0.0}), rnd({StrategyLabel::RND, 0.0});
  GameConfig cfg;
  cfg.seed = 5;
  auto original = play_game(alld, rnd, cfg);

  auto ra = replay_policy(original, Seat::A, 10);
  auto rb = replay_policy(original, Seat::B, 10);
  auto replayed = play_game(*ra, *rb, cfg);
  CHECK(replayed.rounds == original.rounds);

  // Classification of replayed games is reproducible and recovers ALLD.
  CorpusSpec spec;
  spec.n_per_class = 100;
  spec.epsilon_levels = {0.05};
  auto model = train(ClassifierKind::StateFactorized, generate_corpus(spec).train, StrategySet(4), {}, 1);
  std::vector<GameLog> once = {replayed};
  auto r1 = classify_corpus(model, once);
  auto ra2 = replay_policy(original, Seat::A, 10);
  auto rb2 = replay_policy(original, Seat::B, 10);
  std::vector<GameLog> twice = {play_game(*ra2, *rb2, cfg)};
  auto r2 = classify_corpus(model, twice);
  CHECK(r1[0].result == r2[0].result);
  CHECK(r1[1].result == r2[1].result);
  CHECK(r1[0].result.label == StrategyLabel::ALLD);

  CHECK_THROWS_AS(replay_policy(original, Seat::A, 12), DomainError);
  auto shorter = replay_policy(original, Seat::A, 10);
  CanonicalPolicy other({StrategyLabel::ALLC, 0.0});
  GameConfig longer = cfg;
  longer.horizon = 11;
  CHECK_THROWS_AS(play_game(*shorter, other, longer), AbortedGame);
}

TEST_CASE("throttle spaces requests") {
  Throttle t(50.0);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 6; ++i) t.acquire();
  const auto elapsed = std::chrono::steady_clock::now() - start;
  CHECK(elapsed >= std::chrono::milliseconds(95));
}

TEST_CASE("http endpoint against a local server") {
  httplib::Server server;
  std::atomic<int> hits = 0;
  std::string seen_auth;
  json seen_body;
  server.Post("/v1/complete", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    seen_auth = req.get_header_value("Authorization");
    seen_body = json::parse(req.body);
    res.set_content(json{{"text", "I pick B"}}.dump(), "application/json");
  });
  server.Post("/busy", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  server.Post("/garbled", [](const httplib::Request&, httplib::Response& res) { res.set_content("[]", "application/json"); });
  server.Post("/forbidden", [](const httplib::Request&, httplib::Response& res) { res.status = 403; });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string base = "http://127.0.0.1:" + std::to_string(port);

  setenv("PDINTENT_TEST_KEY", "secret", 1);
  HttpEndpoint ep(base + "/v1/complete", "PDINTENT_TEST_KEY", std::chrono::seconds(5));
  auto opts = no_sleep();
  opts.generation = {0.3, 0.9};
  auto e = next_action(ep, context_at(2), opts);
  CHECK(e.action == Action::Cooperate);
  CHECK(seen_auth == "Bearer secret");
  CHECK(seen_body["temperature"] == 0.3);
  CHECK(seen_body["top_p"] == 0.9);
  CHECK(sha256_hex(seen_body["prompt"].get<std::string>()) == e.prompt_hash);
  unsetenv("PDINTENT_TEST_KEY");

  HttpEndpoint busy(base + "/busy", "PDINTENT_TEST_KEY", std::chrono::seconds(5));
  CHECK_THROWS_AS(busy.complete("p", {}), TransportError);
  hits = 0;
  opts.max_transport_retries = 2;
  CHECK_THROWS_AS(next_action(busy, context_at(1), opts), AgentFailure);
  CHECK(hits == 3);

  HttpEndpoint garbled(base + "/garbled", "PDINTENT_TEST_KEY", std::chrono::seconds(5));
  CHECK_THROWS_AS(garbled.complete("p", {}), AgentFailure);
  HttpEndpoint forbidden(base + "/forbidden", "PDINTENT_TEST_KEY", std::chrono::seconds(5));
  CHECK_THROWS_AS(forbidden.complete("p", {}), AgentFailure);

  server.stop();
  th.join();

  HttpEndpoint closed(base + "/v1/complete", "PDINTENT_TEST_KEY", std::chrono::seconds(1));
  CHECK_THROWS_AS(closed.complete("p", {}), TransportError);
  CHECK_THROWS_AS(HttpEndpoint("localhost:8080"), DomainError);
}
