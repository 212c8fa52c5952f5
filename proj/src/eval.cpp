#include "q20/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace q20 {

double WinRate::wilson_half_width(double z) const {
  if (episodes == 0) return 0.0;
  const double nn = static_cast<double>(episodes);
  const double p = rate();
  const double z2 = z * z;
  return z / (1.0 + z2 / nn) * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
}

namespace {

EpisodeRecord play_one(const Policy& agent, const KnowledgeBase& kb, const SimulatorConfig& config,
                       const Belief& s0, std::uint64_t index, int horizon) {
  Rng target_rng = derive_rng(config.seed, index, 0);
  Rng noise_rng = derive_rng(config.seed, index, 1);
  Rng policy_rng = derive_rng(config.seed, index, 2);
  const int target = sample_target(kb, config, target_rng);
  const Questioner ask = [&](const Belief& s, const AskedMask& mask) {
    return agent(s, mask, policy_rng);
  };
  return run_episode(ask, make_answerer(kb, config.noise_epsilon, noise_rng), kb, s0, target, horizon);
}

}  // namespace

WinRate evaluate_win_rate(const Policy& agent, const KnowledgeBase& kb,
                          const SimulatorConfig& config, int episodes, int horizon,
                          PriorMode s0_mode, int threads) {
  if (episodes < 1) throw std::invalid_argument("episodes must be at least 1");
  config.validate();
  const Belief s0 = initial_belief(kb, s0_mode);
  threads = std::clamp(threads, 1, episodes);

  std::vector<std::int64_t> wins(static_cast<std::size_t>(threads), 0);
  auto work = [&](int worker) {
    for (int i = worker; i < episodes; i += threads)
      if (play_one(agent, kb, config, s0, static_cast<std::uint64_t>(i), horizon).won)
        ++wins[static_cast<std::size_t>(worker)];
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  return {std::accumulate(wins.begin(), wins.end(), std::int64_t{0}), episodes};
}

std::vector<EpisodeRecord> play_episodes(const Policy& agent, const KnowledgeBase& kb,
                                         const SimulatorConfig& config, int episodes, int horizon,
                                         PriorMode s0_mode) {
  config.validate();
  const Belief s0 = initial_belief(kb, s0_mode);
  std::vector<EpisodeRecord> out;
  out.reserve(static_cast<std::size_t>(std::max(episodes, 0)));
  for (int i = 0; i < episodes; ++i)
    out.push_back(play_one(agent, kb, config, s0, static_cast<std::uint64_t>(i), horizon));
  return out;
}

std::vector<BudgetPoint> win_rate_vs_budget(const Policy& agent, const KnowledgeBase& kb,
                                            const SimulatorConfig& config,
                                            const std::vector<int>& budgets, int episodes,
                                            int horizon, PriorMode s0_mode) {
  std::vector<int> sorted = budgets;
  std::sort(sorted.begin(), sorted.end());
  std::vector<BudgetPoint> out;
  for (int b : sorted) {
    if (b < 0 || b > horizon) throw std::invalid_argument("budget outside [0, horizon]");
    out.push_back({b, evaluate_win_rate(agent, kb, config, episodes, b, s0_mode)});
  }
  return out;
}

std::vector<NoisePoint> win_rate_vs_noise(const Policy& agent, const KnowledgeBase& kb,
                                          const SimulatorConfig& config,
                                          const std::vector<double>& epsilons, int episodes,
                                          int horizon, PriorMode s0_mode) {
  std::vector<double> sorted = epsilons;
  std::sort(sorted.begin(), sorted.end());
  std::vector<NoisePoint> out;
  for (double eps : sorted) {
    SimulatorConfig c = config;
    c.noise_epsilon = eps;
    out.push_back({eps, evaluate_win_rate(agent, kb, c, episodes, horizon, s0_mode)});
  }
  return out;
}

std::vector<const AblationRun*> AblationReport::runs_for(RewardMode mode) const {
  std::vector<const AblationRun*> out;
  for (const auto& r : runs)
    if (r.mode == mode) out.push_back(&r);
  return out;
}

double AblationReport::mean_final(RewardMode mode) const {
  const auto rs = runs_for(mode);
  if (rs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto* r : rs) sum += r->final_win_rate;
  return sum / static_cast<double>(rs.size());
}

AblationReport run_ablation(const KnowledgeBase& kb, const SimulatorConfig& sim,
                            const TrainingConfig& base, const std::vector<RewardMode>& modes,
                            const std::vector<std::uint64_t>& seeds) {
  AblationReport report;
  for (RewardMode mode : modes)
    for (std::uint64_t seed : seeds) {
      TrainingConfig cfg = base;
      cfg.reward_mode = mode;
      cfg.seed = seed;
      SimulatorConfig s = sim;
      s.seed = seed;
      TrainingResult res = run_training(kb, s, cfg);
      AblationRun run;
      run.mode = mode;
      run.seed = seed;
      run.final_win_rate = res.metrics.empty() ? 0.0 : res.metrics.back().win_rate;
      run.curve = std::move(res.metrics);
      report.runs.push_back(std::move(run));
    }
  return report;
}

std::optional<std::int64_t> episodes_to_reach(const std::vector<MetricsRow>& curve, double threshold) {
  for (const auto& row : curve)
    if (row.win_rate >= threshold) return row.episodes;
  return std::nullopt;
}

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

void write_budget_csv(std::ostream& out, const std::vector<BudgetPoint>& series) {
  out << "num_questions,episodes,win_rate,wilson_half_width\n";
  for (const auto& p : series)
    out << p.budget << ',' << p.result.episodes << ',' << fmt(p.result.rate()) << ','
        << fmt(p.result.wilson_half_width()) << '\n';
}

void write_noise_csv(std::ostream& out, const std::vector<NoisePoint>& series) {
  out << "noise,episodes,win_rate,wilson_half_width\n";
  for (const auto& p : series)
    out << fmt(p.epsilon, "%.4f") << ',' << p.result.episodes << ',' << fmt(p.result.rate()) << ','
        << fmt(p.result.wilson_half_width()) << '\n';
}

void write_ablation_csv(std::ostream& out, const AblationReport& report) {
  out << "mode,seed,step,episodes,win_rate\n";
  for (const auto& run : report.runs)
    for (const auto& row : run.curve)
      out << to_string(run.mode) << ',' << run.seed << ',' << row.step << ',' << row.episodes << ','
          << fmt(row.win_rate) << '\n';
}

std::string summary_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["config"] = report.config_json.empty() ? nlohmann::ordered_json::object()
                                           : nlohmann::ordered_json::parse(report.config_json);
  j["seeds"] = report.seeds;
  auto& curve = j["learning_curve"] = nlohmann::ordered_json::array();
  for (const auto& r : report.curve)
    curve.push_back({{"step", r.step}, {"episodes", r.episodes}, {"win_rate", r.win_rate}});
  auto& budget = j["budget"] = nlohmann::ordered_json::array();
  for (const auto& p : report.budget_series)
    budget.push_back({{"num_questions", p.budget},
                      {"win_rate", p.result.rate()},
                      {"wilson_half_width", p.result.wilson_half_width()},
                      {"episodes", p.result.episodes}});
  auto& noise = j["noise"] = nlohmann::ordered_json::array();
  for (const auto& p : report.noise_series)
    noise.push_back({{"noise", p.epsilon},
                     {"win_rate", p.result.rate()},
                     {"wilson_half_width", p.result.wilson_half_width()},
                     {"episodes", p.result.episodes}});
  if (!report.curve.empty()) j["final_win_rate"] = report.curve.back().win_rate;
  return j.dump(2);
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("curve.csv");
    write_metrics_csv(out, report.curve);
  }
  {
    auto out = open("budget.csv");
    write_budget_csv(out, report.budget_series);
  }
  {
    auto out = open("noise.csv");
    write_noise_csv(out, report.noise_series);
  }
  auto out = open("summary.json");
  out << summary_json(report) << '\n';
}

void dump_transcripts(const std::vector<EpisodeRecord>& episodes, const KnowledgeBase& kb,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kTranscriptHeader << '\n';
  for (std::size_t i = 0; i < episodes.size(); ++i)
    write_transcript(out, kb, episodes[i], std::to_string(i + 1));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace q20
