#include "support.hpp"

#include "q20/service.hpp"

#include <httplib.h>

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

using namespace q20;
using nlohmann::json;

namespace {

std::shared_ptr<const KnowledgeBase> shared_kb() {
  static const auto kb = std::make_shared<const KnowledgeBase>(test::coded_kb(16, 24, 4, 0.05));
  return kb;
}

Net random_policy(std::uint64_t seed = 1) {
  return nn::init_params<Real>(16, 8, 24, nn::Head::MaskedSoftmax, seed);
}

std::unique_ptr<GameService> make_service(ServiceOptions opt = {}) {
  auto s = std::make_unique<GameService>(shared_kb(), opt);
  s->load_model(random_policy());
  return s;
}

ServiceError::Code error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.code();
  }
  FAIL("expected a service error");
  return ServiceError::Code::BadRequest;
}

// Answers the pending question of a session truthfully for `target`.
Answer truthful(const GameService& svc, int target, int question) {
  return answer(svc.kb(), target, question);
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("no model means 503 on create") {
    GameService svc(shared_kb(), {});
    CHECK_FALSE(svc.has_model());
    CHECK(error_code([&] { svc.create_session(); }) == ServiceError::Code::NoModel);
    CHECK(ServiceError(ServiceError::Code::NoModel, "").http_status() == 503);
    CHECK(ServiceError(ServiceError::Code::NotFound, "").http_status() == 404);
    CHECK(ServiceError(ServiceError::Code::Conflict, "").http_status() == 409);
    CHECK(ServiceError(ServiceError::Code::InvalidAnswer, "").http_status() == 400);
  }

  TEST_CASE("model must match the knowledge base") {
    GameService svc(shared_kb(), {});
    CHECK_THROWS_AS(svc.load_model(nn::init_params<Real>(15, 8, 24, nn::Head::MaskedSoftmax, 0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(svc.load_model(nn::init_params<Real>(16, 8, 24, nn::Head::Scalar, 0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(GameService(shared_kb(), ServiceOptions{25}), std::invalid_argument);
  }

  TEST_CASE("creations give distinct ids and the same greedy first question") {
    auto svc = make_service();
    std::set<std::string> ids;
    std::set<int> first;
    for (int k = 0; k < 20; ++k) {
      const CreatedGame g = svc->create_session();
      CHECK(g.id.size() == 32);
      ids.insert(g.id);
      first.insert(g.question.index);
      CHECK(g.question.text == svc->kb().question(g.question.index));
    }
    CHECK(ids.size() == 20);
    CHECK(first.size() == 1);
    CHECK(svc->session_count() == 20);
  }

  TEST_CASE("sample mode draws first questions from the policy") {
    auto svc = make_service();
    std::set<int> first;
    for (int k = 0; k < 50; ++k) first.insert(svc->create_session(SelectMode::Sample).question.index);
    CHECK(first.size() > 1);
  }

  TEST_CASE("a full game: 20 distinct questions, a guess, then the result") {
    test::TempDir dir;
    ServiceOptions opt;
    opt.transcript_log = dir.path / "games.log";
    auto svc = make_service(opt);
    const int target = 11;
    const CreatedGame g = svc->create_session();
    CHECK(svc->get_session(g.id).history.empty());
    REQUIRE(svc->get_session(g.id).pending.has_value());

    std::set<int> asked;
    int pending = g.question.index;
    AnswerOutcome out;
    for (int t = 0; t < 20; ++t) {
      CHECK(asked.insert(pending).second);
      CHECK_THROWS(svc->submit_result(g.id, true));  // no guess yet
      out = svc->submit_answer(g.id, truthful(*svc, target, pending));
      if (t == 2) CHECK(svc->get_session(g.id).history.size() == 3);
      if (t < 19) {
        REQUIRE(out.question.has_value());
        pending = out.question->index;
      }
    }
    CHECK(asked.size() == 20);
    REQUIRE(out.guess_index.has_value());
    CHECK_FALSE(out.question.has_value());
    CHECK(svc->get_session(g.id).status == SessionStatus::Guessing);
    CHECK(error_code([&] { svc->submit_answer(g.id, Answer::Yes); }) == ServiceError::Code::Conflict);

    const bool correct = *out.guess_index == target;
    const GameSummary summary = svc->submit_result(g.id, correct);
    CHECK(summary.won == correct);
    CHECK(summary.reward == (correct ? 30.0 : -30.0));
    CHECK(summary.questions_asked == 20);
    CHECK(error_code([&] { svc->submit_result(g.id, correct); }) == ServiceError::Code::Conflict);
    CHECK(error_code([&] { svc->submit_answer(g.id, Answer::No); }) == ServiceError::Code::Conflict);

    std::ifstream log(opt.transcript_log);
    const auto games = read_transcripts(log);
    REQUIRE(games.size() == 1);
    CHECK(games[0].id == g.id);
    CHECK(games[0].steps.size() == 20);
    CHECK(games[0].won == correct);
  }

  TEST_CASE("losing results log an unknown target") {
    test::TempDir dir;
    ServiceOptions opt;
    opt.transcript_log = dir.path / "games.log";
    opt.horizon = 3;
    auto svc = make_service(opt);
    for (int round = 0; round < 2; ++round) {
      const CreatedGame g = svc->create_session();
      for (int t = 0; t < 3; ++t) svc->submit_answer(g.id, Answer::Unknown);
      CHECK(svc->submit_result(g.id, false).reward == -30.0);
    }
    std::ifstream in(opt.transcript_log);
    std::stringstream text;
    text << in.rdbuf();
    CHECK(text.str().rfind(kTranscriptHeader, 0) == 0);
    std::istringstream again(text.str());
    const auto games = read_transcripts(again);
    REQUIRE(games.size() == 2);
    CHECK_FALSE(games[1].target.has_value());
    CHECK(games[1].reward == -30.0);
  }

  TEST_CASE("unknown sessions and debug views") {
    auto svc = make_service();
    CHECK(error_code([&] { svc->get_session("nope"); }) == ServiceError::Code::NotFound);
    CHECK(error_code([&] { svc->submit_answer("nope", Answer::Yes); }) == ServiceError::Code::NotFound);
    const CreatedGame g = svc->create_session();
    CHECK(svc->get_session(g.id).top_beliefs.empty());

    ServiceOptions dbg;
    dbg.debug = true;
    auto debug_svc = make_service(dbg);
    const CreatedGame h = debug_svc->create_session();
    CHECK(debug_svc->get_session(h.id).top_beliefs.size() == 5);
  }

  TEST_CASE("reads have no side effects") {
    auto svc = make_service();
    const CreatedGame g = svc->create_session();
    svc->submit_answer(g.id, Answer::Yes);
    const json a = to_json(svc->get_session(g.id));
    const json b = to_json(svc->get_session(g.id));
    CHECK(a == b);
    CHECK(a["history"].size() == 1);
  }

  TEST_CASE("expired sessions are purged") {
    ServiceOptions opt;
    opt.ttl = std::chrono::seconds(60);
    auto svc = make_service(opt);
    svc->create_session();
    svc->create_session();
    CHECK(svc->purge_expired(GameService::Clock::now()) == 0);
    CHECK(svc->purge_expired(GameService::Clock::now() + std::chrono::seconds(61)) == 2);
    CHECK(svc->session_count() == 0);
  }

  TEST_CASE("interleaved sessions stay isolated") {
    auto svc = make_service();
    Rng rng(13);
    struct Track {
      std::string id;
      int target;
      int pending;
      std::vector<std::pair<int, Answer>> answers;
    };
    std::vector<Track> games;
    for (int k = 0; k < 6; ++k) {
      const CreatedGame g = svc->create_session();
      games.push_back({g.id, k * 2, g.question.index, {}});
    }
    for (int step = 0; step < 6 * 20; ++step) {
      std::vector<std::size_t> open;
      for (std::size_t k = 0; k < games.size(); ++k)
        if (games[k].answers.size() < 20) open.push_back(k);
      Track& t = games[open[rng() % open.size()]];
      const Answer a = truthful(*svc, t.target, t.pending);
      t.answers.emplace_back(t.pending, a);
      const AnswerOutcome out = svc->submit_answer(t.id, a);
      if (out.question) t.pending = out.question->index;
    }
    // Replaying each game alone must give the same guess.
    for (const Track& t : games) {
      Belief s = initial_belief(svc->kb(), PriorMode::Uniform);
      for (auto [j, a] : t.answers) s = update_belief(s, j, a, svc->kb());
      const SessionView v = svc->get_session(t.id);
      CHECK(v.history.size() == 20);
      CHECK(v.guess_index == make_guess(s));
    }
  }

  TEST_CASE("concurrent answers on separate sessions") {
    auto svc = make_service();
    std::vector<std::string> ids;
    for (int k = 0; k < 8; ++k) ids.push_back(svc->create_session().id);
    std::vector<std::thread> pool;
    for (const auto& id : ids)
      pool.emplace_back([&svc, id] {
        for (int t = 0; t < 20; ++t) svc->submit_answer(id, Answer::No);
      });
    for (auto& th : pool) th.join();
    for (const auto& id : ids) CHECK(svc->get_session(id).status == SessionStatus::Guessing);
  }

  TEST_CASE("model hot swap applies to new decisions") {
    auto svc = make_service();
    const CreatedGame g = svc->create_session();
    Net other = random_policy(99);
    other.b2.setConstant(-50);
    other.b2[23] = 50;
    svc->load_model(other);
    CHECK(svc->create_session().question.index == 23);
    CHECK(svc->submit_answer(g.id, Answer::Yes).question->index == 23);
  }
}

TEST_SUITE("http") {
  struct LiveServer {
    std::unique_ptr<GameService> service;
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit LiveServer(ServiceOptions opt = {}, bool with_model = true) {
      service = std::make_unique<GameService>(shared_kb(), opt);
      if (with_model) service->load_model(random_policy());
      register_routes(server, *service);
      port = server.bind_to_any_port("127.0.0.1");
      thread = std::thread([this] { server.listen_after_bind(); });
      server.wait_until_ready();
    }
    ~LiveServer() {
      server.stop();
      thread.join();
    }
    httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
  };

  json post(httplib::Client& c, const std::string& path, const std::string& body, int expect) {
    const auto res = c.Post(path, body, "application/json");
    REQUIRE(res);
    CHECK(res->status == expect);
    CHECK(res->get_header_value("Content-Type").find("application/json") == 0);
    return json::parse(res->body);
  }

  TEST_CASE("health endpoint") {
    LiveServer live({}, false);
    auto c = live.client();
    const auto res = c.Get("/healthz");
    REQUIRE(res);
    CHECK(res->status == 200);
    const json j = json::parse(res->body);
    CHECK(j["status"] == "ok");
    CHECK(j["model_loaded"] == false);
    const json err = post(c, "/games", "", 503);
    CHECK(err["code"] == "no_model");
    CHECK(err.contains("message"));
  }

  TEST_CASE("full game over HTTP with a mid-game refresh") {
    test::TempDir dir;
    ServiceOptions opt;
    opt.transcript_log = dir.path / "games.log";
    LiveServer live(opt);
    auto c = live.client();

    const json created = post(c, "/games", R"({"policy_mode": "greedy"})", 201);
    const std::string id = created["id"];
    CHECK(created.contains("question_index"));
    CHECK(created.contains("question_text"));

    int pending = created["question_index"];
    json last;
    for (int t = 0; t < 20; ++t) {
      const char* tokens[] = {"YES", "no", "Unknown"};
      last = post(c, "/games/" + id + "/answer",
                  json{{"answer", tokens[t % 3]}}.dump(), 200);
      if (t == 9) {
        const auto a = c.Get("/games/" + id);
        const auto b = c.Get("/games/" + id);
        REQUIRE(a);
        REQUIRE(b);
        CHECK(a->body == b->body);
        const json view = json::parse(a->body);
        CHECK(view["history"].size() == 10);
        CHECK(view["history"][0]["question_index"] == created["question_index"]);
        CHECK(view["history"][1]["answer"] == "no");
        CHECK(view["question"]["question_index"] == last["question_index"]);
        CHECK(view["status"] == "awaiting_answer");
      }
      if (t < 19) pending = last["question_index"];
    }
    (void)pending;
    CHECK(last.contains("guess"));
    CHECK_FALSE(last.contains("question_index"));

    const json summary = post(c, "/games/" + id + "/result", R"({"correct": true})", 200);
    CHECK(summary["won"] == true);
    CHECK(summary["reward"] == 30.0);
    CHECK(post(c, "/games/" + id + "/result", R"({"correct": true})", 409)["code"] == "conflict");
    CHECK(post(c, "/games/" + id + "/answer", R"({"answer": "yes"})", 409)["code"] == "conflict");

    std::ifstream log(opt.transcript_log);
    const auto games = read_transcripts(log);
    REQUIRE(games.size() == 1);
    CHECK(games[0].steps.size() == 20);
    CHECK(games[0].won);
  }

  TEST_CASE("client errors") {
    LiveServer live;
    auto c = live.client();
    const std::string id = post(c, "/games", "", 201)["id"];
    CHECK(post(c, "/games/" + id + "/answer", R"({"answer": "maybe"})", 400)["code"] == "invalid_answer");
    CHECK(post(c, "/games/" + id + "/answer", R"({})", 400)["code"] == "invalid_answer");
    CHECK(post(c, "/games/" + id + "/answer", "not json", 400)["code"] == "bad_request");
    CHECK(post(c, "/games/" + id + "/result", R"({"correct": "yes"})", 400)["code"] == "bad_request");
    CHECK(post(c, "/games/" + id + "/result", R"({"correct": true})", 409)["code"] == "conflict");
    CHECK(post(c, "/games/deadbeef/answer", R"({"answer": "yes"})", 404)["code"] == "not_found");
    CHECK(post(c, "/games", R"({"policy_mode": "random"})", 400)["code"] == "bad_request");
    const auto missing = c.Get("/games/deadbeef");
    REQUIRE(missing);
    CHECK(missing->status == 404);
  }
}
