#include "q20/agents.hpp"

#include "q20/eval.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <ostream>

namespace q20 {

std::string_view to_string(RewardMode mode) {
  switch (mode) {
    case RewardMode::Direct: return "direct";
    case RewardMode::RewardNet: return "rewardnet";
    case RewardMode::ObjectAware: return "object_aware";
  }
  return "direct";
}

RewardMode parse_reward_mode(std::string_view token) {
  if (token == "direct") return RewardMode::Direct;
  if (token == "rewardnet") return RewardMode::RewardNet;
  if (token == "object_aware") return RewardMode::ObjectAware;
  throw std::invalid_argument("unknown reward mode '" + std::string(token) + "'");
}

std::string_view to_string(SelectMode mode) { return mode == SelectMode::Sample ? "sample" : "greedy"; }

SelectMode parse_select_mode(std::string_view token) {
  if (token == "sample") return SelectMode::Sample;
  if (token == "greedy") return SelectMode::Greedy;
  throw std::invalid_argument("unknown policy mode '" + std::string(token) + "'");
}

void TrainingConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  };
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
  require(episodes >= 0, "episodes must be nonnegative");
  require(horizon >= 0, "horizon must be nonnegative");
  require(hidden_size > 0, "hidden_size must be positive");
  require(lr_policy > 0 && lr_value > 0 && lr_reward > 0, "learning rates must be positive");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(d1_threshold >= batch_size && d2_threshold >= batch_size,
          "replay thresholds must be at least batch_size");
  require(d1_capacity >= d1_threshold && d2_capacity >= d2_threshold,
          "replay capacities must be at least their thresholds");
  require(eval_interval >= 1, "eval_interval must be positive");
  require(eval_episodes >= 1, "eval_episodes must be positive");
}

int select_action(const Net& policy, const Belief& state, const AskedMask& mask, SelectMode mode,
                  Rng& rng) {
  const nn::VectorT<Real> pi = nn::forward_policy(policy, state, mask);
  if (mode == SelectMode::Greedy) return argmax_lowest(pi.cast<double>());
  return sample_categorical(pi.cast<double>(), rng);
}

std::vector<double> compute_returns(const std::vector<double>& rewards, double gamma) {
  if (rewards.empty()) throw std::invalid_argument("compute_returns needs at least one reward");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    g[t] = acc;
  }
  return g;
}

Vector reward_features(const Belief& state, int action, int num_questions,
                       std::optional<int> object) {
  const auto n = state.size();
  Vector f = Vector::Zero(n + num_questions + (object ? n : 0));
  f.head(n) = state;
  f[n + action] = 1.0;
  if (object) f[n + num_questions + *object] = 1.0;
  return f;
}

int reward_input_size(RewardMode mode, int num_objects, int num_questions) {
  switch (mode) {
    case RewardMode::Direct: return 0;
    case RewardMode::RewardNet: return num_objects + num_questions;
    case RewardMode::ObjectAware: return 2 * num_objects + num_questions;
  }
  return 0;
}

std::vector<double> assign_rewards(const EpisodeRecord& episode, RewardMode mode,
                                   const Net* reward_net, int num_questions) {
  const std::size_t T = episode.steps.size();
  std::vector<double> r(T, 0.0);
  if (T == 0) return r;
  if (mode != RewardMode::Direct) {
    if (!reward_net) throw std::invalid_argument("reward network required for this reward mode");
    std::optional<int> object;
    if (mode == RewardMode::ObjectAware) {
      if (episode.target < 0) throw std::invalid_argument("object-aware rewards need the target");
      object = episode.target;
    }
    for (std::size_t t = 0; t + 1 < T; ++t) {
      const auto& step = episode.steps[t];
      r[t] = nn::forward_reward(*reward_net,
                                reward_features(step.state, step.action, num_questions, object));
    }
  }
  r[T - 1] = episode.terminal_reward;
  return r;
}

std::optional<double> train_rewardnet_step(const ReplayMemory<D1Entry>& d1, Net& reward_net,
                                           Adam& opt, std::size_t batch_size,
                                           std::size_t threshold, RewardMode mode,
                                           int num_questions, Rng& rng) {
  if (d1.size() <= threshold) return std::nullopt;
  const auto batch = d1.sample(batch_size, rng);
  const bool with_object = mode == RewardMode::ObjectAware;
  const auto n = batch.front()->state.size();
  const auto width = n + num_questions + (with_object ? n : 0);
  if (width != reward_net.input_size())
    throw std::invalid_argument("reward network input does not match reward mode");

  nn::MatrixT<Real> x = nn::MatrixT<Real>::Zero(width, static_cast<Eigen::Index>(batch.size()));
  nn::VectorT<Real> y(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const D1Entry& e = *batch[b];
    const auto col = static_cast<Eigen::Index>(b);
    x.col(col).head(n) = e.state.cast<Real>();
    x(n + e.action, col) = 1;
    if (with_object) x(n + num_questions + e.object, col) = 1;
    y(col) = static_cast<Real>(e.target);
  }
  auto [loss, grad] = nn::reward_loss(reward_net, x, y);
  nn::adam_step(reward_net, grad, opt);
  return static_cast<double>(loss);
}

std::optional<PolicyValueLoss> train_policy_value_step(const ReplayMemory<D2Entry>& d2,
                                                       Net& policy, Net& value, Adam& policy_opt,
                                                       Adam& value_opt, std::size_t batch_size,
                                                       std::size_t threshold, Rng& rng) {
  if (d2.size() <= threshold) return std::nullopt;
  const auto batch = d2.sample(batch_size, rng);
  const auto n = batch.front()->state.size();
  const auto m = policy.output_size();
  const auto B = static_cast<Eigen::Index>(batch.size());

  nn::MatrixT<Real> x(n, B);
  nn::MatrixT<Real> allowed(m, B);
  nn::VectorT<Real> returns(B);
  std::vector<int> actions(batch.size());
  for (Eigen::Index b = 0; b < B; ++b) {
    const D2Entry& e = *batch[static_cast<std::size_t>(b)];
    x.col(b) = e.state.cast<Real>();
    allowed.col(b) = nn::allowed_vector<Real>(e.mask);
    returns(b) = static_cast<Real>(e.ret);
    actions[static_cast<std::size_t>(b)] = e.action;
  }

  // Baseline from the value net before its update; no gradient flows into it
  // from the policy loss.
  const nn::VectorT<Real> baseline = nn::forward(value, x).logits.row(0).transpose();
  auto [value_loss, value_grad] = nn::value_loss(value, x, returns);
  nn::adam_step(value, value_grad, value_opt);

  const nn::VectorT<Real> advantage = returns - baseline;
  auto [policy_loss, policy_grad] = nn::policy_loss(policy, x, actions, allowed, advantage);
  nn::adam_step(policy, policy_grad, policy_opt);
  return PolicyValueLoss{static_cast<double>(policy_loss), static_cast<double>(value_loss)};
}

namespace {

double entropy_of(const Vector& q, double mass) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    const double p = q[i] / mass;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

double expected_posterior_entropy(const KnowledgeBase& kb, const Belief& belief, int question) {
  const double total = belief.sum();
  if (!(total > 0.0)) throw std::invalid_argument("belief has no mass");
  const Vector s = belief / total;
  double expected = 0.0;
  for (Answer x : kAllAnswers) {
    const Vector q = s.cwiseProduct(kb.likelihood(x, question));
    const double px = q.sum();
    if (px > 0.0) expected += px * entropy_of(q, px);
  }
  return expected;
}

int info_gain_select(const KnowledgeBase& kb, const Belief& belief, const AskedMask& mask) {
  int best = -1;
  double best_h = std::numeric_limits<double>::infinity();
  for (int j = 0; j < kb.num_questions(); ++j) {
    if (mask.asked(j)) continue;
    const double h = expected_posterior_entropy(kb, belief, j);
    if (best < 0 || h < best_h) {
      best = j;
      best_h = h;
    }
  }
  if (best < 0) throw std::logic_error("info_gain_select with every question asked");
  return best;
}

Policy make_policy_agent(Net policy, SelectMode mode) {
  auto frozen = std::make_shared<const Net>(std::move(policy));
  return [frozen, mode](const Belief& s, const AskedMask& mask, Rng& rng) {
    return select_action(*frozen, s, mask, mode, rng);
  };
}

Policy make_info_gain_agent(const KnowledgeBase& kb) {
  return [&kb](const Belief& s, const AskedMask& mask, Rng&) { return info_gain_select(kb, s, mask); };
}

namespace {

std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// Running mean of losses between metrics rows.
struct LossMean {
  double sum = 0.0;
  std::int64_t count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  double take() {
    const double out = count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
    sum = 0.0;
    count = 0;
    return out;
  }
};

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows)
    out << r.step << ',' << r.episodes << ',' << format_metric(r.win_rate) << ','
        << format_metric(r.loss_policy) << ',' << format_metric(r.loss_value) << ','
        << format_metric(r.loss_reward) << '\n';
}

TrainingResult run_training(const KnowledgeBase& kb, const SimulatorConfig& sim,
                            const TrainingConfig& config, const MetricsSink& sink) {
  config.validate();
  sim.validate();
  const int n = kb.num_objects();
  const int m = kb.num_questions();
  if (m < config.horizon) throw std::invalid_argument("fewer questions than the horizon");

  auto net_seed = [&](std::uint64_t k) { return derive_rng(config.seed, k, 9)(); };
  TrainingResult res;
  res.policy = nn::init_params<Real>(n, config.hidden_size, m, nn::Head::MaskedSoftmax, net_seed(0));
  res.value = nn::init_params<Real>(n, config.hidden_size, 1, nn::Head::Scalar, net_seed(1));
  const int reward_in = std::max(1, reward_input_size(config.reward_mode, n, m));
  res.reward = nn::init_params<Real>(reward_in, config.hidden_size, 1, nn::Head::Sigmoid, net_seed(2));

  Adam policy_opt = Adam::fresh(res.policy, static_cast<Real>(config.lr_policy));
  Adam value_opt = Adam::fresh(res.value, static_cast<Real>(config.lr_value));
  Adam reward_opt = Adam::fresh(res.reward, static_cast<Real>(config.lr_reward));
  ReplayMemory<D1Entry> d1(config.d1_capacity);
  ReplayMemory<D2Entry> d2(config.d2_capacity);
  Rng batch_rng = derive_rng(config.seed, 0, 7);

  const Belief s0 = initial_belief(kb, config.s0_mode);
  SimulatorConfig eval_sim = sim;
  eval_sim.seed = config.eval_seed;
  LossMean lp, lv, lr;

  auto evaluate = [&] {
    MetricsRow row;
    row.step = res.steps;
    row.episodes = res.episodes;
    row.win_rate = evaluate_win_rate(make_policy_agent(res.policy, SelectMode::Greedy), kb,
                                     eval_sim, config.eval_episodes, config.horizon,
                                     config.s0_mode)
                       .rate();
    row.loss_policy = lp.take();
    row.loss_value = lv.take();
    row.loss_reward = lr.take();
    res.metrics.push_back(row);
    if (sink) sink(row);
  };

  const bool learned_reward = config.reward_mode != RewardMode::Direct;
  for (std::int64_t e = 0; e < config.episodes; ++e) {
    const auto ep = static_cast<std::uint64_t>(e);
    Rng target_rng = derive_rng(config.seed, ep, 0);
    Rng noise_rng = derive_rng(config.seed, ep, 1);
    Rng policy_rng = derive_rng(config.seed, ep, 2);
    const int target = sample_target(kb, sim, target_rng);
    const Questioner ask = [&](const Belief& s, const AskedMask& mask) {
      return select_action(res.policy, s, mask, SelectMode::Sample, policy_rng);
    };
    const EpisodeRecord rec =
        run_episode(ask, make_answerer(kb, sim.noise_epsilon, noise_rng), kb, s0, target, config.horizon);
    const auto rewards = assign_rewards(rec, config.reward_mode, &res.reward, m);
    const auto returns = rewards.empty() ? std::vector<double>{} : compute_returns(rewards, config.gamma);
    ++res.episodes;

    AskedMask mask(m);
    for (std::size_t t = 0; t < rec.steps.size(); ++t) {
      const auto& step = rec.steps[t];
      if (learned_reward) {
        d1.push({step.state, step.action, rec.target, nn::sigmoid(returns[t])});
        if (auto loss = train_rewardnet_step(d1, res.reward, reward_opt, config.batch_size,
                                             config.d1_threshold, config.reward_mode, m, batch_rng))
          lr.add(*loss);
      }
      d2.push({step.state, step.action, mask, returns[t]});
      mask.mark(step.action);
      if (auto loss = train_policy_value_step(d2, res.policy, res.value, policy_opt, value_opt,
                                              config.batch_size, config.d2_threshold, batch_rng)) {
        lp.add(loss->policy);
        lv.add(loss->value);
      }
      ++res.steps;
      if (res.steps % config.eval_interval == 0) evaluate();
    }
  }
  if (config.episodes > 0 && (res.metrics.empty() || res.metrics.back().step != res.steps)) evaluate();
  return res;
}

void save_training_checkpoint(const std::filesystem::path& dir, const TrainingResult& result,
                              const TrainingConfig& config, const SimulatorConfig& sim) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(result.policy, dir / "policy.mlp");
  nn::save_checkpoint(result.value, dir / "value.mlp");
  nn::save_checkpoint(result.reward, dir / "reward.mlp");
  nlohmann::ordered_json manifest = {
      {"format", "q20-training v1"},
      {"steps", result.steps},
      {"episodes", result.episodes},
      {"seed", config.seed},
      {"config",
       {{"gamma", config.gamma},
        {"episodes", config.episodes},
        {"horizon", config.horizon},
        {"hidden_size", config.hidden_size},
        {"lr_policy", config.lr_policy},
        {"lr_value", config.lr_value},
        {"lr_reward", config.lr_reward},
        {"d1_capacity", config.d1_capacity},
        {"d2_capacity", config.d2_capacity},
        {"d1_threshold", config.d1_threshold},
        {"d2_threshold", config.d2_threshold},
        {"batch_size", config.batch_size},
        {"eval_interval", config.eval_interval},
        {"eval_episodes", config.eval_episodes},
        {"eval_seed", config.eval_seed},
        {"reward_mode", to_string(config.reward_mode)},
        {"s0_mode", to_string(config.s0_mode)}}},
      {"simulator",
       {{"target_mode", to_string(sim.target_mode)},
        {"noise_epsilon", sim.noise_epsilon},
        {"seed", sim.seed}}},
      {"files", {{"policy", "policy.mlp"}, {"value", "value.mlp"}, {"reward", "reward.mlp"}}}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

PolicyCheckpoint load_policy_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "q20-training v1")
    throw std::runtime_error("unsupported training manifest");
  PolicyCheckpoint cp;
  cp.policy = nn::load_checkpoint<Real>(dir / manifest.at("files").at("policy").get<std::string>());
  cp.horizon = manifest.at("config").at("horizon").get<int>();
  cp.s0_mode = parse_prior_mode(manifest.at("config").at("s0_mode").get<std::string>());
  cp.steps = manifest.at("steps").get<std::int64_t>();
  return cp;
}

}  // namespace q20
