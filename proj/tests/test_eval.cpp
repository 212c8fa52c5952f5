#include "support.hpp"

#include "q20/eval.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace q20;

namespace {

// Never asks a code question: only the filler questions, which carry no
// information on a KB built with filler density 0.
Policy filler_only(int n_code) {
  return [n_code](const Belief&, const AskedMask& mask, Rng&) {
    for (int j = n_code; j < mask.size(); ++j)
      if (!mask.asked(j)) return j;
    throw std::logic_error("no filler left");
  };
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("info-gain agent solves the coded KB") {
    const KnowledgeBase kb = test::coded_kb(64, 32, 6);
    const WinRate wr = evaluate_win_rate(make_info_gain_agent(kb), kb, SimulatorConfig{}, 300);
    CHECK(wr.rate() == 1.0);
    CHECK(wr.episodes == 300);
  }

  TEST_CASE("uninformative questions leave only the prior's argmax") {
    const KnowledgeBase kb = test::coded_kb(16, 24, 4);
    const Belief s0 = initial_belief(kb, PriorMode::Popularity);
    SimulatorConfig sim{PriorMode::Popularity, 0.0, 17};
    const int episodes = 20000;
    const WinRate wr = evaluate_win_rate(filler_only(4), kb, sim, episodes, 20, PriorMode::Popularity);
    const double p = s0.maxCoeff();
    CHECK(std::abs(wr.rate() - p) < 4 * std::sqrt(p * (1 - p) / episodes));
  }

  TEST_CASE("noise never helps on the coded KB") {
    const KnowledgeBase kb = test::coded_kb(32, 24, 5, 0.05);
    const Policy agent = make_info_gain_agent(kb);
    for (std::uint64_t seed : {1, 2, 3}) {
      SimulatorConfig clean{PriorMode::Uniform, 0.0, seed}, noisy{PriorMode::Uniform, 1.0, seed};
      CHECK(evaluate_win_rate(agent, kb, noisy, 200).rate() <=
            evaluate_win_rate(agent, kb, clean, 200).rate());
    }
  }

  TEST_CASE("evaluation is paired, reproducible and thread independent") {
    const KnowledgeBase kb = test::coded_kb(32, 24, 5, 0.05);
    const Policy agent = make_info_gain_agent(kb);
    SimulatorConfig sim{PriorMode::Uniform, 0.2, 99};
    const WinRate a = evaluate_win_rate(agent, kb, sim, 300, 10);
    const WinRate b = evaluate_win_rate(agent, kb, sim, 300, 10, PriorMode::Uniform, 4);
    CHECK(a.wins == b.wins);

    // Targets depend on the seed only, never on the agent.
    const auto first = play_episodes(agent, kb, sim, 50, 10);
    const auto second = play_episodes(filler_only(5), kb, sim, 50, 10);
    for (int i = 0; i < 50; ++i) CHECK(first[i].target == second[i].target);
    CHECK_THROWS_AS(evaluate_win_rate(agent, kb, sim, 0), std::invalid_argument);
  }

  TEST_CASE("wilson half width") {
    const WinRate half{50, 100};
    CHECK(half.wilson_half_width() == doctest::Approx(0.09617).epsilon(1e-3));
    const WinRate all{100, 100};
    CHECK(all.wilson_half_width() > 0.0);
    CHECK(all.wilson_half_width() < 0.03);
    CHECK(WinRate{}.wilson_half_width() == 0.0);
  }

  TEST_CASE("budget curve") {
    const KnowledgeBase kb = test::coded_kb(64, 32, 6);
    const auto series = win_rate_vs_budget(make_info_gain_agent(kb), kb, SimulatorConfig{},
                                           {20, 0, 6, 3}, 256);
    REQUIRE(series.size() == 4);
    CHECK(series[0].budget == 0);
    CHECK(series[0].result.rate() < 0.05);
    CHECK(series[1].budget == 3);
    CHECK(series[2].budget == 6);
    CHECK(series[2].result.rate() == 1.0);
    CHECK(series[3].result.rate() == 1.0);
    for (std::size_t k = 1; k < series.size(); ++k)
      CHECK(series[k].result.rate() >= series[k - 1].result.rate() - 0.02);
    CHECK_THROWS_AS(win_rate_vs_budget(make_info_gain_agent(kb), kb, SimulatorConfig{}, {21}, 10),
                    std::invalid_argument);
  }

  TEST_CASE("noise sweep is sorted") {
    const KnowledgeBase kb = test::coded_kb(16, 24, 4, 0.05);
    const auto series =
        win_rate_vs_noise(make_info_gain_agent(kb), kb, SimulatorConfig{}, {0.3, 0.0, 0.1}, 100);
    REQUIRE(series.size() == 3);
    CHECK(series[0].epsilon == 0.0);
    CHECK(series[2].epsilon == 0.3);
    CHECK(series[0].result.rate() >= series[2].result.rate());
  }

  TEST_CASE("ablation grid and convergence helper") {
    const KnowledgeBase kb = test::coded_kb(8, 20, 3, 0.05);
    TrainingConfig cfg;
    cfg.episodes = 20;
    cfg.hidden_size = 8;
    cfg.d1_capacity = cfg.d2_capacity = 200;
    cfg.d1_threshold = cfg.d2_threshold = 50;
    cfg.batch_size = 8;
    cfg.eval_interval = 100;
    cfg.eval_episodes = 20;
    const AblationReport single = run_ablation(kb, SimulatorConfig{}, cfg, {RewardMode::Direct}, {1});
    REQUIRE(single.runs.size() == 1);
    CHECK(single.runs[0].curve.size() == 4);
    CHECK(single.runs[0].final_win_rate == single.runs[0].curve.back().win_rate);

    const AblationReport dup =
        run_ablation(kb, SimulatorConfig{}, cfg, {RewardMode::RewardNet, RewardMode::RewardNet}, {4});
    REQUIRE(dup.runs.size() == 2);
    std::ostringstream a, b;
    write_metrics_csv(a, dup.runs[0].curve);
    write_metrics_csv(b, dup.runs[1].curve);
    CHECK(a.str() == b.str());
    CHECK(dup.runs_for(RewardMode::RewardNet).size() == 2);
    CHECK(dup.mean_final(RewardMode::RewardNet) == dup.runs[0].final_win_rate);

    std::ostringstream csv;
    write_ablation_csv(csv, dup);
    CHECK(csv.str().rfind("mode,seed,step,episodes,win_rate\nrewardnet,4,100,5,", 0) == 0);

    std::vector<MetricsRow> curve = {{100, 5, 0.2}, {200, 10, 0.7}, {300, 15, 0.9}};
    CHECK(episodes_to_reach(curve, 0.7) == 10);
    CHECK(episodes_to_reach(curve, 0.95) == std::nullopt);
  }

  TEST_CASE("report files") {
    EvalReport report;
    report.config_json = R"({"hidden": 128})";
    report.curve = {{5000, 250, 0.5}, {10000, 500, 0.75}};
    report.budget_series = {{0, {1, 64}}, {20, {60, 64}}};
    report.noise_series = {{0.0, {60, 64}}, {0.1, {50, 64}}};
    report.seeds = {1, 2};
    test::TempDir dir;
    write_report(dir.path / "out", report);
    CHECK(slurp(dir.path / "out" / "budget.csv").rfind("num_questions,episodes,win_rate,wilson_half_width\n0,64,0.015625,", 0) == 0);
    CHECK(slurp(dir.path / "out" / "noise.csv").find("\n0.1000,64,0.781250,") != std::string::npos);
    CHECK(slurp(dir.path / "out" / "curve.csv").rfind(kMetricsHeader, 0) == 0);
    const auto j = nlohmann::json::parse(slurp(dir.path / "out" / "summary.json"));
    CHECK(j["config"]["hidden"] == 128);
    CHECK(j["final_win_rate"] == 0.75);
    CHECK(j["budget"].size() == 2);
    CHECK(j["noise"][1]["noise"] == 0.1);
    CHECK(j["seeds"].size() == 2);
  }

  TEST_CASE("transcript dumps") {
    const KnowledgeBase kb = test::coded_kb(16, 24, 4);
    test::TempDir dir;
    dump_transcripts({}, kb, dir.path / "empty.txt");
    CHECK(slurp(dir.path / "empty.txt") == std::string(kTranscriptHeader) + "\n");

    const auto episodes = play_episodes(make_info_gain_agent(kb), kb, SimulatorConfig{}, 1, 20);
    dump_transcripts(episodes, kb, dir.path / "one.txt");
    const std::string text = slurp(dir.path / "one.txt");
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 1 + 20 + 1);
    std::istringstream in(text);
    const auto parsed = read_transcripts(in);
    REQUIRE(parsed.size() == 1);
    CHECK(parsed[0].id == "1");
    REQUIRE(parsed[0].steps.size() == 20);
    for (int t = 0; t < 20; ++t) {
      CHECK(parsed[0].steps[t].first == episodes[0].steps[t].action);
      CHECK(parsed[0].steps[t].second == episodes[0].steps[t].answer);
    }
    CHECK_THROWS(dump_transcripts(episodes, kb, dir.path / "no" / "such" / "dir.txt"));
  }
}
