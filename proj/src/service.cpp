#include "q20/service.hpp"

#include <cstdio>
#include <fstream>

namespace q20 {

int ServiceError::http_status() const {
  switch (code_) {
    case Code::NotFound: return 404;
    case Code::InvalidAnswer: return 400;
    case Code::BadRequest: return 400;
    case Code::Conflict: return 409;
    case Code::NoModel: return 503;
  }
  return 500;
}

std::string_view ServiceError::code_name() const {
  switch (code_) {
    case Code::NotFound: return "not_found";
    case Code::InvalidAnswer: return "invalid_answer";
    case Code::BadRequest: return "bad_request";
    case Code::Conflict: return "conflict";
    case Code::NoModel: return "no_model";
  }
  return "internal";
}

std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::AwaitingAnswer: return "awaiting_answer";
    case SessionStatus::Guessing: return "guessing";
    case SessionStatus::Finished: return "finished";
  }
  return "finished";
}

nlohmann::json to_json(const CreatedGame& g) {
  return {{"id", g.id}, {"question_index", g.question.index}, {"question_text", g.question.text}};
}

nlohmann::json to_json(const AnswerOutcome& o) {
  if (o.question) return {{"question_index", o.question->index}, {"question_text", o.question->text}};
  return {{"guess", o.guess_label}, {"guess_index", o.guess_index.value_or(-1)}};
}

nlohmann::json to_json(const GameSummary& s) {
  return {{"id", s.id},
          {"won", s.won},
          {"reward", s.reward},
          {"guess", s.guess_label},
          {"guess_index", s.guess_index},
          {"questions_asked", s.questions_asked}};
}

nlohmann::json to_json(const SessionView& v) {
  nlohmann::json j = {{"id", v.id},
                      {"status", to_string(v.status)},
                      {"policy_mode", to_string(v.policy_mode)},
                      {"horizon", v.horizon},
                      {"asked", v.history.size()}};
  auto& hist = j["history"] = nlohmann::json::array();
  for (const auto& h : v.history)
    hist.push_back({{"number", h.number},
                    {"question_index", h.question.index},
                    {"question_text", h.question.text},
                    {"answer", to_string(h.answer)}});
  if (v.pending)
    j["question"] = {{"question_index", v.pending->index}, {"question_text", v.pending->text}};
  else
    j["question"] = nullptr;
  if (v.guess_index) {
    j["guess"] = v.guess_label;
    j["guess_index"] = *v.guess_index;
  }
  if (v.won) j["won"] = *v.won;
  if (v.reward) j["reward"] = *v.reward;
  if (!v.top_beliefs.empty()) {
    auto& top = j["top_beliefs"] = nlohmann::json::array();
    for (const auto& [i, p] : v.top_beliefs) top.push_back({{"object_index", i}, {"probability", p}});
  }
  return j;
}

struct GameService::Session {
  std::mutex mutex;
  std::string id;
  SelectMode mode = SelectMode::Greedy;
  Belief belief;
  AskedMask mask;
  EpisodeRecord record;
  SessionStatus status = SessionStatus::AwaitingAnswer;
  int pending = -1;
  Rng rng;
  Clock::time_point created_at;
  Clock::time_point last_access;
};

GameService::GameService(std::shared_ptr<const KnowledgeBase> kb, ServiceOptions options)
    : kb_(std::move(kb)), options_(std::move(options)), id_rng_(derive_rng(options_.seed, 0, 11)) {
  if (!kb_) throw std::invalid_argument("service needs a knowledge base");
  if (options_.horizon < 1 || options_.horizon > kb_->num_questions())
    throw std::invalid_argument("service horizon must lie in [1, number of questions]");
  // Fresh ids across restarts.
  std::random_device rd;
  id_rng_.seed(id_rng_() ^ (static_cast<std::uint64_t>(rd()) << 32 | rd()));
}

void GameService::load_model(Net policy) {
  if (policy.head != nn::Head::MaskedSoftmax || policy.input_size() != kb_->num_objects() ||
      policy.output_size() != kb_->num_questions())
    throw std::invalid_argument("policy network does not match the knowledge base");
  auto snap = std::make_shared<const Net>(std::move(policy));
  std::lock_guard lock(model_mutex_);
  model_ = std::move(snap);
}

bool GameService::has_model() const { return snapshot() != nullptr; }

std::shared_ptr<const Net> GameService::snapshot() const {
  std::lock_guard lock(model_mutex_);
  return model_;
}

int GameService::choose_question(Session& s, const Net& policy) const {
  return select_action(policy, s.belief, s.mask, s.mode, s.rng);
}

CreatedGame GameService::create_session(std::optional<SelectMode> mode) {
  const auto model = snapshot();
  if (!model) throw ServiceError(ServiceError::Code::NoModel, "no model loaded");
  purge_expired();

  auto s = std::make_shared<Session>();
  s->mode = mode.value_or(options_.default_policy_mode);
  s->belief = initial_belief(*kb_, options_.s0_mode);
  s->mask = AskedMask(kb_->num_questions());
  s->record.horizon = options_.horizon;
  s->created_at = s->last_access = Clock::now();

  {
    std::lock_guard lock(sessions_mutex_);
    char buf[40];
    do {
      std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(id_rng_()),
                    static_cast<unsigned long long>(id_rng_()));
    } while (sessions_.count(buf));
    s->id = buf;
    s->rng = derive_rng(options_.seed, ++created_, 12);
  }
  s->pending = choose_question(*s, *model);
  CreatedGame out{s->id, {s->pending, kb_->question(s->pending)}};
  std::lock_guard lock(sessions_mutex_);
  sessions_.emplace(s->id, std::move(s));
  return out;
}

std::shared_ptr<GameService::Session> GameService::find(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(ServiceError::Code::NotFound, "unknown game '" + id + "'");
  return it->second;
}

AnswerOutcome GameService::submit_answer(const std::string& id, Answer answer) {
  const auto s = find(id);
  std::lock_guard lock(s->mutex);
  s->last_access = Clock::now();
  if (s->status != SessionStatus::AwaitingAnswer)
    throw ServiceError(ServiceError::Code::Conflict,
                       "game is " + std::string(to_string(s->status)) + ", not awaiting an answer");

  s->mask.mark(s->pending);
  s->record.steps.push_back({s->belief, s->pending, answer});
  s->belief = update_belief(s->belief, s->pending, answer, *kb_);

  AnswerOutcome out;
  if (s->mask.count() < options_.horizon) {
    const auto model = snapshot();
    if (!model) throw ServiceError(ServiceError::Code::NoModel, "no model loaded");
    s->pending = choose_question(*s, *model);
    out.question = QuestionRef{s->pending, kb_->question(s->pending)};
  } else {
    s->pending = -1;
    s->record.final_state = s->belief;
    s->record.guess = make_guess(s->belief);
    s->status = SessionStatus::Guessing;
    out.guess_index = s->record.guess;
    out.guess_label = kb_->object(s->record.guess);
  }
  return out;
}

GameSummary GameService::submit_result(const std::string& id, bool correct) {
  const auto s = find(id);
  std::lock_guard lock(s->mutex);
  s->last_access = Clock::now();
  if (s->status == SessionStatus::AwaitingAnswer)
    throw ServiceError(ServiceError::Code::Conflict, "no guess has been made yet");
  if (s->status == SessionStatus::Finished)
    throw ServiceError(ServiceError::Code::Conflict, "result already recorded");

  s->record.won = correct;
  s->record.terminal_reward = terminal_reward(correct);
  s->record.target = correct ? s->record.guess : -1;
  s->status = SessionStatus::Finished;
  log_transcript(*s);
  return {s->id,
          correct,
          s->record.terminal_reward,
          s->record.guess,
          kb_->object(s->record.guess),
          static_cast<int>(s->record.steps.size())};
}

SessionView GameService::get_session(const std::string& id) const {
  const auto s = find(id);
  std::lock_guard lock(s->mutex);
  SessionView v;
  v.id = s->id;
  v.status = s->status;
  v.policy_mode = s->mode;
  v.horizon = options_.horizon;
  for (std::size_t t = 0; t < s->record.steps.size(); ++t) {
    const auto& step = s->record.steps[t];
    v.history.push_back({static_cast<int>(t + 1), {step.action, kb_->question(step.action)}, step.answer});
  }
  if (s->status == SessionStatus::AwaitingAnswer)
    v.pending = QuestionRef{s->pending, kb_->question(s->pending)};
  if (s->status != SessionStatus::AwaitingAnswer) {
    v.guess_index = s->record.guess;
    v.guess_label = kb_->object(s->record.guess);
  }
  if (s->status == SessionStatus::Finished) {
    v.won = s->record.won;
    v.reward = s->record.terminal_reward;
  }
  if (options_.debug)
    for (int i : top_k(s->belief, 5)) v.top_beliefs.emplace_back(i, s->belief[i]);
  return v;
}

std::size_t GameService::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

std::size_t GameService::purge_expired(Clock::time_point now) {
  std::lock_guard lock(sessions_mutex_);
  std::size_t removed = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock session_lock(it->second->mutex, std::try_to_lock);
    if (session_lock.owns_lock() && now - it->second->last_access > options_.ttl) {
      session_lock.unlock();
      it = sessions_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

void GameService::log_transcript(const Session& s) {
  if (options_.transcript_log.empty()) return;
  std::lock_guard lock(log_mutex_);
  const bool fresh = !std::filesystem::exists(options_.transcript_log) ||
                     std::filesystem::file_size(options_.transcript_log) == 0;
  std::ofstream out(options_.transcript_log, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + options_.transcript_log.string());
  if (fresh) out << kTranscriptHeader << '\n';
  write_transcript(out, *kb_, s.record, s.id);
}

}  // namespace q20
