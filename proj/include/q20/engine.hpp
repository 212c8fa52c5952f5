#pragma once

#include "q20/kb.hpp"
#include "q20/types.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace q20 {

inline constexpr int kDefaultHorizon = 20;
inline constexpr double kWinReward = 30.0;
inline constexpr double kLossReward = -30.0;

class DegenerateBeliefError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Bayes step: s' = normalize(s .* alpha), alpha the R/W/U column of question j
/// for the given answer. Throws DegenerateBeliefError if s .* alpha has no mass.
Belief update_belief(const Eigen::Ref<const Belief>& s, int question, Answer answer,
                     const KnowledgeBase& kb);

/// argmax of the belief, lowest index on ties.
int make_guess(const Eigen::Ref<const Belief>& s);

constexpr double terminal_reward(bool won) { return won ? kWinReward : kLossReward; }

struct EpisodeStep {
  Belief state;  // belief before the question was asked
  int action = -1;
  Answer answer = Answer::Unknown;
};

struct EpisodeRecord {
  std::vector<EpisodeStep> steps;
  Belief final_state;
  int target = -1;  // -1 when the answerer never revealed it
  int guess = -1;
  bool won = false;
  double terminal_reward = kLossReward;
  int horizon = kDefaultHorizon;

  /// Asked mask as it stood before step t.
  AskedMask mask_before(int t, int num_questions) const;
};

/// Picks the next question from (belief, asked mask). Must return an unasked index.
using Questioner = std::function<int(const Belief&, const AskedMask&)>;
/// Questioner that may draw randomness, e.g. a sampled policy.
using Policy = std::function<int(const Belief&, const AskedMask&, Rng&)>;
/// Answers question j about the target object.
using Answerer = std::function<Answer(int target, int question)>;

/// Plays `horizon` questions then guesses argmax. Requires m >= horizon.
/// A questioner returning an asked or out-of-range index raises std::logic_error.
EpisodeRecord run_episode(const Questioner& questioner, const Answerer& answerer,
                          const KnowledgeBase& kb, const Belief& s0, int target,
                          int horizon = kDefaultHorizon);

EpisodeRecord run_episode(const Questioner& questioner, const Answerer& answerer,
                          const KnowledgeBase& kb, PriorMode s0_mode, int target,
                          int horizon = kDefaultHorizon);

/// Indices of the k largest entries, largest first, lowest index on ties.
std::vector<int> top_k(const Eigen::Ref<const Belief>& s, int k);

// ---------------------------------------------------------------------------
// Transcripts: human-readable, tab-separated case logs.
//
//   #q20-transcripts v1
//   game  <id>  target=<i|?>  <target label>
//   <k>  q=<j>  <answer>  top=<i>:<p>,<i>:<p>,<i>:<p>  <question text>
//   guess  <i>  <won|lost>  <+30|-30>  <guess label>

inline constexpr const char* kTranscriptHeader = "#q20-transcripts v1";

void write_transcript(std::ostream& out, const KnowledgeBase& kb, const EpisodeRecord& episode,
                      const std::string& game_id);

struct TranscriptEntry {
  std::string id;
  std::optional<int> target;
  std::vector<std::pair<int, Answer>> steps;
  int guess = -1;
  bool won = false;
  double reward = 0.0;
};

/// Parses a transcript stream written by write_transcript (header optional).
/// Throws std::runtime_error on malformed input.
std::vector<TranscriptEntry> read_transcripts(std::istream& in);

}  // namespace q20
