#pragma once

#include "q20/engine.hpp"
#include "q20/kb.hpp"
#include "q20/nn.hpp"
#include "q20/simulator.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace q20 {

using Real = double;
using Net = nn::Mlp<Real>;
using Adam = nn::AdamState<Real>;

enum class RewardMode : std::uint8_t { Direct, RewardNet, ObjectAware };
std::string_view to_string(RewardMode mode);
RewardMode parse_reward_mode(std::string_view token);

enum class SelectMode : std::uint8_t { Sample, Greedy };
std::string_view to_string(SelectMode mode);
SelectMode parse_select_mode(std::string_view token);

struct TrainingConfig {
  double gamma = 0.99;
  std::int64_t episodes = 200'000;
  int horizon = kDefaultHorizon;
  int hidden_size = 1000;
  double lr_policy = 1e-3;
  double lr_value = 1e-2;
  double lr_reward = 1e-2;
  std::size_t d1_capacity = 100'000;
  std::size_t d2_capacity = 100'000;
  std::size_t d1_threshold = 1'000;
  std::size_t d2_threshold = 1'000;
  std::size_t batch_size = 64;
  /// Environment steps (questions asked) between greedy evaluations.
  std::int64_t eval_interval = 5'000;
  int eval_episodes = 2'000;
  /// Shared by every run so evaluation targets are paired across settings.
  std::uint64_t eval_seed = 20'180'101;
  RewardMode reward_mode = RewardMode::RewardNet;
  PriorMode s0_mode = PriorMode::Uniform;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/// RewardNet training tuple: target = sigmoid(G_t).
struct D1Entry {
  Belief state;
  int action = -1;
  int object = -1;
  double target = 0.5;
};

/// Policy/value training tuple. The asked mask at step t is kept so the policy
/// gradient is taken through the same masked softmax that produced the action.
struct D2Entry {
  Belief state;
  int action = -1;
  AskedMask mask;
  double ret = 0.0;
};

/// Bounded FIFO ring. Pushing past capacity evicts the oldest entry.
template <typename Entry>
class ReplayMemory {
public:
  explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }

  void push(Entry e) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(e));
  }

  /// 0 is the oldest entry still held.
  const Entry& at(std::size_t i) const { return items_.at(i); }

  /// `count` distinct entries drawn uniformly (partial Fisher-Yates over indices).
  std::vector<const Entry*> sample(std::size_t count, Rng& rng) const {
    if (count > items_.size()) throw std::invalid_argument("batch larger than replay memory");
    scratch_.resize(items_.size());
    for (std::size_t i = 0; i < scratch_.size(); ++i) scratch_[i] = i;
    std::vector<const Entry*> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t span = scratch_.size() - k;
      const std::size_t pick = k + static_cast<std::size_t>(rng() % span);
      std::swap(scratch_[k], scratch_[pick]);
      out.push_back(&items_[scratch_[k]]);
    }
    return out;
  }

private:
  std::size_t capacity_;
  std::deque<Entry> items_;
  mutable std::vector<std::size_t> scratch_;
};

/// Sample from, or take the argmax (lowest index on ties) of, the masked policy.
int select_action(const Net& policy, const Belief& state, const AskedMask& mask, SelectMode mode,
                  Rng& rng);

/// G_t = sum_k gamma^k r_{t+k+1} up to the end of the episode. rewards[t] is r_{t+1}.
std::vector<double> compute_returns(const std::vector<double>& rewards, double gamma);

/// RewardNet input: belief || one_hot(action) [|| one_hot(object)].
Vector reward_features(const Belief& state, int action, int num_questions,
                       std::optional<int> object = std::nullopt);

/// Input width of the reward network for a mode (0 for Direct).
int reward_input_size(RewardMode mode, int num_objects, int num_questions);

/// Per-step rewards r_1..r_T. Direct: zeros then +-30. RewardNet modes: network
/// outputs for every step but the last, which carries the environment's +-30.
std::vector<double> assign_rewards(const EpisodeRecord& episode, RewardMode mode,
                                   const Net* reward_net, int num_questions);

/// One ADAM step of the RewardNet on a minibatch from D1. Returns the
/// pre-step batch loss, or nullopt (no update) while size <= threshold.
std::optional<double> train_rewardnet_step(const ReplayMemory<D1Entry>& d1, Net& reward_net,
                                           Adam& opt, std::size_t batch_size,
                                           std::size_t threshold, RewardMode mode,
                                           int num_questions, Rng& rng);

struct PolicyValueLoss {
  double policy = 0.0;
  double value = 0.0;
};

/// One minibatch step on D2: value net toward G_t, policy along
/// -log pi(a_t|s_t) (G_t - b_t) with b_t from the pre-update value net.
/// nullopt while size <= threshold.
std::optional<PolicyValueLoss> train_policy_value_step(const ReplayMemory<D2Entry>& d2,
                                                       Net& policy, Net& value, Adam& policy_opt,
                                                       Adam& value_opt, std::size_t batch_size,
                                                       std::size_t threshold, Rng& rng);

/// Expected Shannon entropy (nats) of the posterior after asking question j.
double expected_posterior_entropy(const KnowledgeBase& kb, const Belief& belief, int question);

/// Unasked question with the lowest expected posterior entropy (lowest index on ties).
int info_gain_select(const KnowledgeBase& kb, const Belief& belief, const AskedMask& mask);

/// Frozen copy of a policy network as an evaluation agent.
Policy make_policy_agent(Net policy, SelectMode mode);
/// Expected-information-gain baseline agent. `kb` must outlive the agent.
Policy make_info_gain_agent(const KnowledgeBase& kb);

struct MetricsRow {
  std::int64_t step = 0;
  std::int64_t episodes = 0;
  double win_rate = 0.0;
  double loss_policy = 0.0;  // NaN when no update happened since the last row
  double loss_value = 0.0;
  double loss_reward = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,episodes,win_rate,loss_policy,loss_value,loss_reward";
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

struct TrainingResult {
  Net policy;
  Net value;
  Net reward;  // unused (but initialized) in Direct mode
  std::vector<MetricsRow> metrics;
  std::int64_t steps = 0;
  std::int64_t episodes = 0;
};

/// Streaming observer for metrics rows as they are produced.
using MetricsSink = std::function<void(const MetricsRow&)>;

/// REINFORCE with a value baseline and an optional RewardNet against the
/// simulator. Every `eval_interval` steps (and once at the end) the greedy
/// policy is evaluated on `eval_episodes` paired episodes. Deterministic per seed.
TrainingResult run_training(const KnowledgeBase& kb, const SimulatorConfig& sim,
                            const TrainingConfig& config, const MetricsSink& sink = {});

/// Writes policy.mlp, value.mlp, reward.mlp and manifest.json into `dir`.
void save_training_checkpoint(const std::filesystem::path& dir, const TrainingResult& result,
                              const TrainingConfig& config, const SimulatorConfig& sim);

struct PolicyCheckpoint {
  Net policy;
  int horizon = kDefaultHorizon;
  PriorMode s0_mode = PriorMode::Uniform;
  std::int64_t steps = 0;
};

/// Loads the policy net plus the settings it was trained with.
PolicyCheckpoint load_policy_checkpoint(const std::filesystem::path& dir);

}  // namespace q20
