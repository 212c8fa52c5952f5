#pragma once

#include "q20/agents.hpp"
#include "q20/engine.hpp"
#include "q20/simulator.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace q20 {

struct WinRate {
  std::int64_t wins = 0;
  std::int64_t episodes = 0;

  double rate() const { return episodes ? static_cast<double>(wins) / episodes : 0.0; }
  /// Half-width of the 95% Wilson score interval.
  double wilson_half_width(double z = 1.96) const;
};

/// Episode i draws its target, answer noise and policy randomness from
/// independent streams of (config.seed, i), so any agent evaluated with the same
/// seed faces the same targets. Results do not depend on `threads`.
WinRate evaluate_win_rate(const Policy& agent, const KnowledgeBase& kb,
                          const SimulatorConfig& config, int episodes,
                          int horizon = kDefaultHorizon, PriorMode s0_mode = PriorMode::Uniform,
                          int threads = 1);

/// Evaluation that keeps every episode (for transcripts).
std::vector<EpisodeRecord> play_episodes(const Policy& agent, const KnowledgeBase& kb,
                                         const SimulatorConfig& config, int episodes,
                                         int horizon = kDefaultHorizon,
                                         PriorMode s0_mode = PriorMode::Uniform);

struct BudgetPoint {
  int budget = 0;
  WinRate result;
};

/// Win rate when guessing after exactly b questions, for each b in `budgets`.
std::vector<BudgetPoint> win_rate_vs_budget(const Policy& agent, const KnowledgeBase& kb,
                                            const SimulatorConfig& config,
                                            const std::vector<int>& budgets, int episodes,
                                            int horizon = kDefaultHorizon,
                                            PriorMode s0_mode = PriorMode::Uniform);

struct NoisePoint {
  double epsilon = 0.0;
  WinRate result;
};

std::vector<NoisePoint> win_rate_vs_noise(const Policy& agent, const KnowledgeBase& kb,
                                          const SimulatorConfig& config,
                                          const std::vector<double>& epsilons, int episodes,
                                          int horizon = kDefaultHorizon,
                                          PriorMode s0_mode = PriorMode::Uniform);

struct AblationRun {
  RewardMode mode = RewardMode::Direct;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> curve;
  double final_win_rate = 0.0;
};

struct AblationReport {
  std::vector<AblationRun> runs;

  std::vector<const AblationRun*> runs_for(RewardMode mode) const;
  double mean_final(RewardMode mode) const;
};

/// Trains every (mode, seed) pair with otherwise identical settings and the
/// same evaluation seed, so learning curves are paired.
AblationReport run_ablation(const KnowledgeBase& kb, const SimulatorConfig& sim,
                            const TrainingConfig& base, const std::vector<RewardMode>& modes,
                            const std::vector<std::uint64_t>& seeds);

/// Episodes of the first checkpoint whose win rate is >= threshold, or nullopt.
std::optional<std::int64_t> episodes_to_reach(const std::vector<MetricsRow>& curve,
                                              double threshold);

/// Full report of one experiment, serialized as CSV series plus a JSON summary.
struct EvalReport {
  std::string config_json;  // free-form echo of the settings used
  std::vector<MetricsRow> curve;
  std::vector<BudgetPoint> budget_series;
  std::vector<NoisePoint> noise_series;
  std::vector<std::uint64_t> seeds;
};

void write_budget_csv(std::ostream& out, const std::vector<BudgetPoint>& series);
void write_noise_csv(std::ostream& out, const std::vector<NoisePoint>& series);
void write_ablation_csv(std::ostream& out, const AblationReport& report);
std::string summary_json(const EvalReport& report);
/// Writes curve.csv, budget.csv, noise.csv and summary.json into `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

/// Header line followed by one transcript per episode, numbered from 1.
void dump_transcripts(const std::vector<EpisodeRecord>& episodes, const KnowledgeBase& kb,
                      const std::filesystem::path& path);

}  // namespace q20
