// q20: command-line front end for knowledge-base generation, training,
// evaluation and live play.

#include "q20/agents.hpp"
#include "q20/eval.hpp"
#include "q20/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace q20;

template <typename T, typename Parse>
CLI::Option* add_enum(CLI::App* app, const std::string& name, T& target, Parse parse,
                      const std::string& help) {
  return app->add_option_function<std::string>(name, [&target, parse, name](const std::string& v) {
    try {
      target = parse(v);
    } catch (const std::invalid_argument& e) {
      throw CLI::ValidationError(name, e.what());
    }
  }, help);
}

std::vector<int> default_budgets(int horizon) {
  std::vector<int> out;
  for (int b = 0; b <= horizon; b += 2) out.push_back(b);
  if (out.back() != horizon) out.push_back(horizon);
  return out;
}

struct GenKbArgs {
  SyntheticKbSpec spec;
  std::string out;
  bool with_model = false;
};

void cmd_gen_kb(const GenKbArgs& a) {
  const KnowledgeBase kb = generate_synthetic_kb(a.spec);
  save_kb(kb, a.out, a.with_model);
  std::cout << "wrote " << a.out << ": " << kb.num_objects() << " objects, " << kb.num_questions()
            << " questions\n";
}

struct TrainArgs {
  std::string kb;
  std::string out = "checkpoint";
  std::string metrics;
  TrainingConfig cfg;
  SimulatorConfig sim;
  bool quiet = false;
};

void cmd_train(TrainArgs a) {
  const KnowledgeBase kb = load_kb(a.kb);
  std::ofstream metrics;
  if (!a.metrics.empty()) {
    metrics.open(a.metrics);
    if (!metrics) throw std::runtime_error("cannot write " + a.metrics);
    metrics << kMetricsHeader << '\n' << std::flush;
  }
  auto sink = [&](const MetricsRow& row) {
    if (metrics.is_open()) {
      std::ostringstream line;
      write_metrics_csv(line, {row});
      const std::string s = line.str();
      metrics << s.substr(s.find('\n') + 1) << std::flush;
    }
    if (!a.quiet)
      std::fprintf(stderr, "step %lld  episodes %lld  win_rate %.4f\n",
                   static_cast<long long>(row.step), static_cast<long long>(row.episodes),
                   row.win_rate);
  };
  const TrainingResult res = run_training(kb, a.sim, a.cfg, sink);
  save_training_checkpoint(a.out, res, a.cfg, a.sim);
  std::cout << "trained " << res.episodes << " episodes (" << res.steps << " steps); checkpoint in "
            << a.out << '\n';
}

// Learning curve saved next to a checkpoint by `train`; empty if absent.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::vector<MetricsRow> rows;
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    MetricsRow r;
    long long step = 0, episodes = 0;
    if (std::sscanf(line.c_str(), "%lld,%lld,%lf,%lf,%lf,%lf", &step, &episodes, &r.win_rate,
                    &r.loss_policy, &r.loss_value, &r.loss_reward) >= 3) {
      r.step = step;
      r.episodes = episodes;
      rows.push_back(r);
    }
  }
  return rows;
}

struct EvalArgs {
  std::string kb;
  std::string checkpoint;
  std::string agent = "policy";
  SelectMode mode = SelectMode::Greedy;
  SimulatorConfig sim{PriorMode::Uniform, 0.0, 20'180'101};
  int episodes = 1000;
  int threads = 1;
  std::vector<int> budgets;
  std::vector<double> noises{0.0, 0.05, 0.1, 0.2, 0.3};
  std::string report;
  std::string transcripts;
  int transcript_count = 20;
};

void cmd_eval(const EvalArgs& a) {
  const KnowledgeBase kb = load_kb(a.kb);
  int horizon = kDefaultHorizon;
  PriorMode s0 = PriorMode::Uniform;
  Policy agent;
  EvalReport report;
  if (a.agent == "info-gain") {
    agent = make_info_gain_agent(kb);
  } else {
    if (a.checkpoint.empty()) throw std::runtime_error("--checkpoint is required for the policy agent");
    const PolicyCheckpoint ck = load_policy_checkpoint(a.checkpoint);
    horizon = ck.horizon;
    s0 = ck.s0_mode;
    agent = make_policy_agent(ck.policy, a.mode);
    std::ifstream manifest(std::filesystem::path(a.checkpoint) / "manifest.json");
    if (manifest) report.config_json = nlohmann::json::parse(manifest).dump();
  }
  horizon = std::min(horizon, kb.num_questions());

  const WinRate wr = evaluate_win_rate(agent, kb, a.sim, a.episodes, horizon, s0, a.threads);
  std::printf("win_rate %.4f +/- %.4f (%lld/%lld, noise %.3f)\n", wr.rate(), wr.wilson_half_width(),
              static_cast<long long>(wr.wins), static_cast<long long>(wr.episodes),
              a.sim.noise_epsilon);

  if (!a.report.empty()) {
    report.seeds = {a.sim.seed};
    report.budget_series = win_rate_vs_budget(
        agent, kb, a.sim, a.budgets.empty() ? default_budgets(horizon) : a.budgets, a.episodes,
        horizon, s0);
    report.noise_series = win_rate_vs_noise(agent, kb, a.sim, a.noises, a.episodes, horizon, s0);
    if (!a.checkpoint.empty()) report.curve = read_metrics(std::filesystem::path(a.checkpoint) / "metrics.csv");
    write_report(a.report, report);
    std::cout << "report written to " << a.report << '\n';
  }
  if (!a.transcripts.empty()) {
    dump_transcripts(play_episodes(agent, kb, a.sim, a.transcript_count, horizon, s0), kb,
                     a.transcripts);
    std::cout << "transcripts written to " << a.transcripts << '\n';
  }
}

struct ServiceArgs {
  std::string kb;
  std::string checkpoint;
  SelectMode mode = SelectMode::Greedy;
  std::string transcript_log;
  bool debug = false;
  std::uint64_t seed = 0;
  // serve only
  std::string addr = "127.0.0.1:8020";
  std::string static_dir;
  int ttl_minutes = 30;
};

std::unique_ptr<GameService> make_service(const ServiceArgs& a) {
  auto kb = std::make_shared<const KnowledgeBase>(load_kb(a.kb));
  PolicyCheckpoint ck = load_policy_checkpoint(a.checkpoint);
  ServiceOptions opt;
  opt.horizon = std::min(ck.horizon, kb->num_questions());
  opt.s0_mode = ck.s0_mode;
  opt.default_policy_mode = a.mode;
  opt.ttl = std::chrono::minutes(a.ttl_minutes);
  opt.transcript_log = a.transcript_log;
  opt.debug = a.debug;
  opt.seed = a.seed;
  auto service = std::make_unique<GameService>(std::move(kb), opt);
  service->load_model(std::move(ck.policy));
  return service;
}

std::optional<Answer> prompt_answer(const std::string& question, int number, int horizon) {
  for (;;) {
    std::cout << '[' << number << '/' << horizon << "] " << question << " (y/n/u, q to quit) "
              << std::flush;
    std::string line;
    if (!std::getline(std::cin, line) || line == "q" || line == "quit") return std::nullopt;
    if (line == "y") return Answer::Yes;
    if (line == "n") return Answer::No;
    if (line == "u") return Answer::Unknown;
    try {
      return parse_answer(line);
    } catch (const std::invalid_argument&) {
      std::cout << "please answer yes, no or unknown\n";
    }
  }
}

void cmd_play(const ServiceArgs& a) {
  const auto owned = make_service(a);
  GameService& service = *owned;
  const int horizon = service.options().horizon;
  std::cout << "Think of one of the " << service.kb().num_objects() << " objects.\n";
  CreatedGame game = service.create_session();
  QuestionRef q = game.question;
  for (int number = 1;; ++number) {
    const auto ans = prompt_answer(q.text, number, horizon);
    if (!ans) return;
    const AnswerOutcome out = service.submit_answer(game.id, *ans);
    if (out.question) {
      q = *out.question;
      continue;
    }
    std::cout << "Is it " << out.guess_label << "? (y/n) " << std::flush;
    std::string line;
    const bool correct = std::getline(std::cin, line) && !line.empty() &&
                         (line[0] == 'y' || line[0] == 'Y');
    const GameSummary s = service.submit_result(game.id, correct);
    std::cout << (s.won ? "I win" : "You win") << " after " << s.questions_asked << " questions.\n";
    return;
  }
}

void cmd_serve(const ServiceArgs& a) {
  const auto colon = a.addr.rfind(':');
  if (colon == std::string::npos) throw std::runtime_error("--addr must be host:port");
  const std::string host = a.addr.substr(0, colon);
  const int port = std::stoi(a.addr.substr(colon + 1));
  const auto service = make_service(a);
  std::cerr << "serving on http://" << a.addr << '\n';
  serve(*service, host, port, a.static_dir);
}

void add_service_flags(CLI::App* cmd, ServiceArgs& a) {
  cmd->add_option("--kb", a.kb, "knowledge base file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--checkpoint", a.checkpoint, "training checkpoint directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  add_enum(cmd, "--policy-mode", a.mode, parse_select_mode, "greedy or sample (default greedy)");
  cmd->add_option("--transcript-log", a.transcript_log, "append finished games to this file");
  cmd->add_flag("--debug", a.debug, "expose top beliefs in session views");
  cmd->add_option("--seed", a.seed, "seed for sample-mode sessions");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twenty questions with a policy-gradient questioner"};
  app.require_subcommand(1);

  GenKbArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-kb", "write a seeded synthetic knowledge base");
  gen_cmd->add_option("-o,--out", gen.out, "output file")->required();
  gen_cmd->add_option("--objects", gen.spec.n_objects);
  gen_cmd->add_option("--questions", gen.spec.n_questions);
  gen_cmd->add_option("--code-questions", gen.spec.n_code_questions);
  gen_cmd->add_option("--count-scale", gen.spec.count_scale);
  gen_cmd->add_option("--ambiguity", gen.spec.answer_ambiguity);
  gen_cmd->add_option("--filler-density", gen.spec.filler_density);
  gen_cmd->add_option("--popularity-exponent", gen.spec.popularity_exponent);
  gen_cmd->add_option("--delta", gen.spec.delta);
  gen_cmd->add_option("--lambda", gen.spec.lambda);
  gen_cmd->add_option("--seed", gen.spec.seed);
  gen_cmd->add_flag("--with-model", gen.with_model, "also write derived R/W/U lines");

  TrainArgs tr;
  tr.cfg.seed = 1;
  auto* tr_cmd = app.add_subcommand("train", "train policy, value and reward networks");
  tr_cmd->add_option("--kb", tr.kb)->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("-o,--out", tr.out, "checkpoint directory");
  tr_cmd->add_option("--metrics", tr.metrics, "metrics CSV path");
  tr_cmd->add_option("--episodes", tr.cfg.episodes);
  tr_cmd->add_option("--horizon", tr.cfg.horizon);
  tr_cmd->add_option("--hidden", tr.cfg.hidden_size);
  tr_cmd->add_option("--gamma", tr.cfg.gamma);
  tr_cmd->add_option("--lr-policy", tr.cfg.lr_policy);
  tr_cmd->add_option("--lr-value", tr.cfg.lr_value);
  tr_cmd->add_option("--lr-reward", tr.cfg.lr_reward);
  tr_cmd->add_option_function<std::size_t>("--capacity", [&](std::size_t n) {
    tr.cfg.d1_capacity = tr.cfg.d2_capacity = n;
  }, "capacity of both replay memories");
  tr_cmd->add_option_function<std::size_t>("--threshold", [&](std::size_t n) {
    tr.cfg.d1_threshold = tr.cfg.d2_threshold = n;
  }, "replay size before updates start");
  tr_cmd->add_option("--batch", tr.cfg.batch_size);
  tr_cmd->add_option("--eval-interval", tr.cfg.eval_interval, "steps between evaluations");
  tr_cmd->add_option("--eval-episodes", tr.cfg.eval_episodes);
  tr_cmd->add_option("--eval-seed", tr.cfg.eval_seed);
  add_enum(tr_cmd, "--reward-mode", tr.cfg.reward_mode, parse_reward_mode,
           "direct, rewardnet or object_aware");
  add_enum(tr_cmd, "--s0", tr.cfg.s0_mode, parse_prior_mode, "uniform or popularity");
  add_enum(tr_cmd, "--targets", tr.sim.target_mode, parse_prior_mode, "uniform or popularity");
  tr_cmd->add_option("--noise", tr.sim.noise_epsilon, "simulator answer noise");
  tr_cmd->add_option("--seed", tr.cfg.seed);
  tr_cmd->add_flag("-q,--quiet", tr.quiet);

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "evaluate an agent against the simulator");
  ev_cmd->add_option("--kb", ev.kb)->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--checkpoint", ev.checkpoint)->check(CLI::ExistingDirectory);
  ev_cmd->add_option("--agent", ev.agent)->check(CLI::IsMember({"policy", "info-gain"}));
  add_enum(ev_cmd, "--policy-mode", ev.mode, parse_select_mode, "greedy or sample");
  ev_cmd->add_option("--episodes", ev.episodes);
  ev_cmd->add_option("--noise", ev.sim.noise_epsilon);
  add_enum(ev_cmd, "--targets", ev.sim.target_mode, parse_prior_mode, "uniform or popularity");
  ev_cmd->add_option("--seed", ev.sim.seed, "evaluation seed");
  ev_cmd->add_option("--threads", ev.threads);
  ev_cmd->add_option("--budgets", ev.budgets)->delimiter(',');
  ev_cmd->add_option("--noises", ev.noises)->delimiter(',');
  ev_cmd->add_option("--report", ev.report, "directory for CSV and JSON report");
  ev_cmd->add_option("--transcripts", ev.transcripts, "write sample game transcripts here");
  ev_cmd->add_option("--transcript-count", ev.transcript_count);

  ServiceArgs pl;
  auto* pl_cmd = app.add_subcommand("play", "play in the terminal as the answerer");
  add_service_flags(pl_cmd, pl);

  ServiceArgs sv;
  auto* sv_cmd = app.add_subcommand("serve", "serve the JSON game API over HTTP");
  add_service_flags(sv_cmd, sv);
  sv_cmd->add_option("--addr", sv.addr, "host:port");
  sv_cmd->add_option("--static", sv.static_dir, "directory of web UI assets to serve at /");
  sv_cmd->add_option("--ttl-minutes", sv.ttl_minutes);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) cmd_gen_kb(gen);
    if (*tr_cmd) {
      if (tr.metrics.empty()) tr.metrics = (std::filesystem::path(tr.out) / "metrics.csv").string();
      std::filesystem::create_directories(tr.out);
      cmd_train(tr);
    }
    if (*ev_cmd) cmd_eval(ev);
    if (*pl_cmd) cmd_play(pl);
    if (*sv_cmd) cmd_serve(sv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
