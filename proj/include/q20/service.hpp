#pragma once

#include "q20/agents.hpp"
#include "q20/engine.hpp"
#include "q20/kb.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace httplib {
class Server;
}

namespace q20 {

class ServiceError : public std::runtime_error {
public:
  enum class Code { NotFound, InvalidAnswer, Conflict, NoModel, BadRequest };

  ServiceError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }
  /// HTTP status for this error class.
  int http_status() const;
  std::string_view code_name() const;

private:
  Code code_;
};

enum class SessionStatus { AwaitingAnswer, Guessing, Finished };
std::string_view to_string(SessionStatus s);

struct QuestionRef {
  int index = -1;
  std::string text;
};

struct CreatedGame {
  std::string id;
  QuestionRef question;
};

/// Either the next question or the final guess.
struct AnswerOutcome {
  std::optional<QuestionRef> question;
  std::optional<int> guess_index;
  std::string guess_label;
};

struct GameSummary {
  std::string id;
  bool won = false;
  double reward = 0.0;
  int guess_index = -1;
  std::string guess_label;
  int questions_asked = 0;
};

struct HistoryItem {
  int number = 0;
  QuestionRef question;
  Answer answer = Answer::Unknown;
};

struct SessionView {
  std::string id;
  SessionStatus status = SessionStatus::AwaitingAnswer;
  SelectMode policy_mode = SelectMode::Greedy;
  int horizon = kDefaultHorizon;
  std::vector<HistoryItem> history;
  std::optional<QuestionRef> pending;
  std::optional<int> guess_index;
  std::string guess_label;
  std::optional<bool> won;
  std::optional<double> reward;
  /// Only filled when the service runs with debug on.
  std::vector<std::pair<int, double>> top_beliefs;
};

nlohmann::json to_json(const CreatedGame& g);
nlohmann::json to_json(const AnswerOutcome& o);
nlohmann::json to_json(const GameSummary& s);
nlohmann::json to_json(const SessionView& v);

struct ServiceOptions {
  int horizon = kDefaultHorizon;
  PriorMode s0_mode = PriorMode::Uniform;
  SelectMode default_policy_mode = SelectMode::Greedy;
  std::chrono::seconds ttl{30 * 60};
  /// Finished games are appended here; empty path disables logging.
  std::filesystem::path transcript_log;
  bool debug = false;
  std::uint64_t seed = 0;
};

/// Live-play sessions for human answerers. Thread-safe: each session is
/// serialized by its own lock, the KB is shared read-only and the model
/// snapshot is swapped atomically.
class GameService {
public:
  using Clock = std::chrono::steady_clock;

  GameService(std::shared_ptr<const KnowledgeBase> kb, ServiceOptions options);

  void load_model(Net policy);
  bool has_model() const;
  const KnowledgeBase& kb() const { return *kb_; }
  const ServiceOptions& options() const { return options_; }

  CreatedGame create_session(std::optional<SelectMode> mode = std::nullopt);
  AnswerOutcome submit_answer(const std::string& id, Answer answer);
  GameSummary submit_result(const std::string& id, bool correct);
  SessionView get_session(const std::string& id) const;

  std::size_t session_count() const;
  /// Drops sessions idle for longer than the TTL. Returns how many were removed.
  std::size_t purge_expired(Clock::time_point now = Clock::now());

private:
  struct Session;

  std::shared_ptr<Session> find(const std::string& id) const;
  std::shared_ptr<const Net> snapshot() const;
  int choose_question(Session& s, const Net& policy) const;
  void log_transcript(const Session& s);

  std::shared_ptr<const KnowledgeBase> kb_;
  ServiceOptions options_;

  mutable std::mutex model_mutex_;
  std::shared_ptr<const Net> model_;

  mutable std::mutex sessions_mutex_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
  Rng id_rng_;
  std::uint64_t created_ = 0;

  std::mutex log_mutex_;
};

/// Installs the JSON API routes on an httplib server.
void register_routes(httplib::Server& server, GameService& service);

/// Blocking HTTP server on host:port. Serves `static_dir` at / when non-empty.
void serve(GameService& service, const std::string& host, int port,
           const std::filesystem::path& static_dir = {});

}  // namespace q20
