#include "support.hpp"

#include "q20/agents.hpp"
#include "q20/engine.hpp"
#include "q20/simulator.hpp"

#include <cmath>
#include <set>
#include <sstream>

using namespace q20;
using q20::test::labels;

namespace {

// Two objects, one question, given R and W entries in tenths.
KnowledgeBase two_object_kb(double r0, double r1, double w0, double w1) {
  // Counts chosen so (c + 1) / (total + 3) hits the requested values with total = 7.
  CountGrid c = CountGrid::zeros(2, 1);
  const auto tenths = [](double p) { return std::round(p * 10); };
  c.set(0, 0, {tenths(r0) - 1, tenths(w0) - 1, 10 - tenths(r0) - tenths(w0) - 1});
  c.set(1, 0, {tenths(r1) - 1, tenths(w1) - 1, 10 - tenths(r1) - tenths(w1) - 1});
  return KnowledgeBase::create(labels("o", 2), labels("q", 1), c, Vector::Ones(2));
}

Questioner smallest_unasked() {
  return [](const Belief&, const AskedMask& mask) {
    for (int j = 0; j < mask.size(); ++j)
      if (!mask.asked(j)) return j;
    return -1;
  };
}

Answerer truthful(const KnowledgeBase& kb) {
  return [&kb](int target, int question) { return answer(kb, target, question); };
}

}  // namespace

TEST_SUITE("engine") {
  TEST_CASE("one-step Bayes update by hand") {
    const KnowledgeBase kb = two_object_kb(0.8, 0.2, 0.1, 0.1);
    REQUIRE(kb.model().yes(0, 0) == doctest::Approx(0.8));
    REQUIRE(kb.model().yes(1, 0) == doctest::Approx(0.2));
    Belief s(2);
    s << 0.5, 0.5;
    const Belief yes = update_belief(s, 0, Answer::Yes, kb);
    CHECK(yes[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(yes[1] == doctest::Approx(0.2).epsilon(1e-12));
    // W column is constant: a No answer carries no information.
    const Belief no = update_belief(s, 0, Answer::No, kb);
    CHECK(no[0] == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("constant likelihood column is the identity") {
    const KnowledgeBase kb = two_object_kb(0.7, 0.7, 0.1, 0.1);
    Belief s(2);
    s << 0.3, 0.7;
    const Belief out = update_belief(s, 0, Answer::Yes, kb);
    CHECK((out - s).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("update matches brute-force posterior and stays normalized") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 2 + trial % 9;
      const KnowledgeBase kb = test::random_kb(n, 1 + trial % 5, rng);
      const Belief s = test::random_belief(n, rng);
      const int j = static_cast<int>(rng() % kb.num_questions());
      const Answer a = kAllAnswers[rng() % 3];
      const Belief out = update_belief(s, j, a, kb);
      const Matrix& col = kb.model()[a];
      double z = 0.0;
      for (int i = 0; i < n; ++i) z += s[i] * col(i, j);
      for (int i = 0; i < n; ++i) CHECK(std::abs(out[i] - s[i] * col(i, j) / z) < 1e-12);
      CHECK(std::abs(out.sum() - 1.0) < 1e-9);
      CHECK(out.minCoeff() >= 0.0);
    }
  }

  TEST_CASE("degenerate belief is reported") {
    const KnowledgeBase kb = two_object_kb(0.8, 0.2, 0.1, 0.1);
    CHECK_THROWS_AS(update_belief(Belief::Zero(2), 0, Answer::Yes, kb), DegenerateBeliefError);
    CHECK_THROWS_AS(update_belief(Belief::Constant(2, 0.5), 1, Answer::Yes, kb), std::out_of_range);
  }

  TEST_CASE("guess is the argmax with lowest-index ties") {
    Belief a(3), b(2), c = Belief::Zero(5);
    a << 0.1, 0.7, 0.2;
    b << 0.5, 0.5;
    c[3] = 1.0;
    CHECK(make_guess(a) == 1);
    CHECK(make_guess(b) == 0);
    CHECK(make_guess(c) == 3);
  }

  TEST_CASE("terminal rewards") {
    CHECK(terminal_reward(true) == 30.0);
    CHECK(terminal_reward(false) == -30.0);
  }

  TEST_CASE("info-gain questioner wins every target of a 4-object coded KB") {
    const KnowledgeBase kb = test::coded_kb(4, 24, 2);
    const Policy agent = make_info_gain_agent(kb);
    Rng rng(0);
    const Questioner ask = [&](const Belief& s, const AskedMask& m) { return agent(s, m, rng); };
    for (int target = 0; target < 4; ++target) {
      const EpisodeRecord ep = run_episode(ask, truthful(kb), kb, PriorMode::Uniform, target, 20);
      CHECK(ep.won);
      CHECK(ep.guess == target);
      CHECK(ep.terminal_reward == 30.0);
    }
  }

  TEST_CASE("episode records distinct actions and pre-answer states") {
    const KnowledgeBase kb = test::coded_kb(8, 24, 3);
    const EpisodeRecord ep = run_episode(smallest_unasked(), truthful(kb), kb, PriorMode::Uniform, 5);
    REQUIRE(ep.steps.size() == 20);
    std::set<int> seen;
    for (int t = 0; t < 20; ++t) {
      CHECK(ep.steps[t].action == t);
      seen.insert(ep.steps[t].action);
    }
    CHECK(seen.size() == 20);
    CHECK(ep.steps[0].state == initial_belief(kb, PriorMode::Uniform));
    Belief s = ep.steps[0].state;
    for (const auto& step : ep.steps) {
      CHECK(step.state == s);
      s = update_belief(s, step.action, step.answer, kb);
    }
    CHECK(ep.final_state == s);
    CHECK(ep.won == (ep.guess == ep.target));
    CHECK(ep.won == (ep.terminal_reward == 30.0));
    const AskedMask m3 = ep.mask_before(3, kb.num_questions());
    CHECK(m3.count() == 3);
    CHECK(m3.asked(2));
    CHECK_FALSE(m3.asked(3));
  }

  TEST_CASE("unknown answers on uniform U columns leave the prior unchanged") {
    // Counts depend on the question only, so every U column is constant.
    CountGrid c = CountGrid::zeros(3, 20);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 20; ++j) c.set(i, j, {double(j), 1, 4});
    Vector pop(3);
    pop << 1, 5, 2;
    const KnowledgeBase kb = KnowledgeBase::create(labels("o", 3), labels("q", 20), c, pop);
    const Answerer unknown = [](int, int) { return Answer::Unknown; };
    const EpisodeRecord ep = run_episode(smallest_unasked(), unknown, kb, PriorMode::Popularity, 0);
    const Belief s0 = initial_belief(kb, PriorMode::Popularity);
    CHECK((ep.final_state - s0).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(ep.guess == 1);
  }

  TEST_CASE("misbehaving questioners fail fast") {
    const KnowledgeBase kb = test::coded_kb(4, 20, 2);
    const Questioner repeat = [](const Belief&, const AskedMask&) { return 0; };
    const Questioner out_of_range = [](const Belief&, const AskedMask&) { return 20; };
    CHECK_THROWS_AS(run_episode(repeat, truthful(kb), kb, PriorMode::Uniform, 0), std::logic_error);
    CHECK_THROWS_AS(run_episode(out_of_range, truthful(kb), kb, PriorMode::Uniform, 0),
                    std::logic_error);
    const KnowledgeBase small = test::coded_kb(4, 5, 2);
    CHECK_THROWS_AS(run_episode(smallest_unasked(), truthful(small), small, PriorMode::Uniform, 0),
                    std::invalid_argument);
  }

  TEST_CASE("episodes are deterministic") {
    const KnowledgeBase kb = test::coded_kb(16, 24, 4, 0.05);
    const auto play = [&] {
      Rng noise(9);
      return run_episode(smallest_unasked(), make_answerer(kb, 0.3, noise), kb, PriorMode::Uniform, 7);
    };
    const EpisodeRecord a = play(), b = play();
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t t = 0; t < a.steps.size(); ++t) CHECK(a.steps[t].answer == b.steps[t].answer);
    CHECK(a.final_state == b.final_state);
  }

  TEST_CASE("top_k orders by probability then index") {
    Belief s(5);
    s << 0.1, 0.3, 0.3, 0.05, 0.25;
    CHECK(top_k(s, 3) == std::vector<int>{1, 2, 4});
    CHECK(top_k(s, 10).size() == 5);
  }

  TEST_CASE("transcripts round trip") {
    const KnowledgeBase kb = test::coded_kb(8, 24, 3);
    const EpisodeRecord won = run_episode(smallest_unasked(), truthful(kb), kb, PriorMode::Uniform, 6);
    EpisodeRecord anon = won;
    anon.target = -1;
    std::stringstream ss;
    ss << kTranscriptHeader << '\n';
    write_transcript(ss, kb, won, "g1");
    write_transcript(ss, kb, anon, "g2");
    const std::string text = ss.str();
    CHECK(text.find("game\tg1\ttarget=6\tObject 6") != std::string::npos);
    CHECK(text.find("target=?") != std::string::npos);

    const auto entries = read_transcripts(ss);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].id == "g1");
    CHECK(entries[0].target == 6);
    CHECK_FALSE(entries[1].target.has_value());
    REQUIRE(entries[0].steps.size() == 20);
    for (int t = 0; t < 20; ++t) {
      CHECK(entries[0].steps[t].first == won.steps[t].action);
      CHECK(entries[0].steps[t].second == won.steps[t].answer);
    }
    CHECK(entries[0].guess == won.guess);
    CHECK(entries[0].won == won.won);
    CHECK(entries[0].reward == won.terminal_reward);
  }

  TEST_CASE("malformed transcripts are rejected") {
    std::istringstream orphan("guess\t1\twon\t+30\tx\n");
    CHECK_THROWS_AS(read_transcripts(orphan), std::runtime_error);
    std::istringstream open_game("game\tg\ttarget=1\tx\n1\tq=0\tyes\ttop=\tq\n");
    CHECK_THROWS_AS(read_transcripts(open_game), std::runtime_error);
  }
}
