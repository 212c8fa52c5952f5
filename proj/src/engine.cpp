#include "q20/engine.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace q20 {

Belief update_belief(const Eigen::Ref<const Belief>& s, int question, Answer answer,
                     const KnowledgeBase& kb) {
  if (question < 0 || question >= kb.num_questions())
    throw std::out_of_range("question index out of range");
  if (s.size() != kb.num_objects()) throw std::invalid_argument("belief length != object count");
  Belief next = s.cwiseProduct(kb.likelihood(answer, question));
  const double mass = next.sum();
  if (!(mass > 0.0)) throw DegenerateBeliefError("belief lost all mass after update");
  next /= mass;
  return next;
}

int make_guess(const Eigen::Ref<const Belief>& s) { return argmax_lowest(s); }

AskedMask EpisodeRecord::mask_before(int t, int num_questions) const {
  AskedMask mask(num_questions);
  for (int k = 0; k < t; ++k) mask.mark(steps.at(k).action);
  return mask;
}

EpisodeRecord run_episode(const Questioner& questioner, const Answerer& answerer,
                          const KnowledgeBase& kb, const Belief& s0, int target, int horizon) {
  const int m = kb.num_questions();
  if (horizon < 0 || horizon > m)
    throw std::invalid_argument("horizon must lie in [0, number of questions]");
  if (target < 0 || target >= kb.num_objects()) throw std::out_of_range("target out of range");

  EpisodeRecord rec;
  rec.horizon = horizon;
  rec.target = target;
  rec.steps.reserve(horizon);
  AskedMask mask(m);
  Belief s = s0;
  for (int t = 0; t < horizon; ++t) {
    const int a = questioner(s, mask);
    if (a < 0 || a >= m) throw std::logic_error("questioner returned out-of-range index");
    if (mask.asked(a)) throw std::logic_error("questioner repeated question " + std::to_string(a));
    mask.mark(a);
    const Answer x = answerer(target, a);
    rec.steps.push_back({s, a, x});
    s = update_belief(s, a, x, kb);
  }
  rec.final_state = std::move(s);
  rec.guess = make_guess(rec.final_state);
  rec.won = rec.guess == target;
  rec.terminal_reward = terminal_reward(rec.won);
  return rec;
}

EpisodeRecord run_episode(const Questioner& questioner, const Answerer& answerer,
                          const KnowledgeBase& kb, PriorMode s0_mode, int target, int horizon) {
  return run_episode(questioner, answerer, kb, initial_belief(kb, s0_mode), target, horizon);
}

std::vector<int> top_k(const Eigen::Ref<const Belief>& s, int k) {
  std::vector<int> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::clamp(k, 0, static_cast<int>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](int a, int b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
  idx.resize(k);
  return idx;
}

void write_transcript(std::ostream& out, const KnowledgeBase& kb, const EpisodeRecord& episode,
                      const std::string& game_id) {
  out << "game\t" << game_id << "\ttarget=";
  if (episode.target >= 0)
    out << episode.target << '\t' << kb.object(episode.target);
  else
    out << "?\t";
  out << '\n';
  char buf[32];
  for (std::size_t t = 0; t < episode.steps.size(); ++t) {
    const auto& step = episode.steps[t];
    const Belief& after = t + 1 < episode.steps.size() ? episode.steps[t + 1].state : episode.final_state;
    out << (t + 1) << "\tq=" << step.action << '\t' << to_string(step.answer) << "\ttop=";
    const auto top = top_k(after, 3);
    for (std::size_t r = 0; r < top.size(); ++r) {
      std::snprintf(buf, sizeof(buf), "%d:%.4f", top[r], after[top[r]]);
      out << (r ? "," : "") << buf;
    }
    out << '\t' << kb.question(step.action) << '\n';
  }
  out << "guess\t" << episode.guess << '\t' << (episode.won ? "won" : "lost") << '\t'
      << (episode.terminal_reward > 0 ? "+30" : "-30") << '\t' << kb.object(episode.guess) << '\n';
}

namespace {

std::vector<std::string> split_tab(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

int to_int(const std::string& s, int lineno) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("transcript line " + std::to_string(lineno) + ": bad integer '" + s + "'");
  return v;
}

}  // namespace

std::vector<TranscriptEntry> read_transcripts(std::istream& in) {
  std::vector<TranscriptEntry> out;
  std::string line;
  int lineno = 0;
  TranscriptEntry* open = nullptr;
  auto bad = [&](const std::string& msg) {
    return std::runtime_error("transcript line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tab(line);
    if (f[0] == "game") {
      if (open) throw bad("game started before previous guess line");
      if (f.size() < 3 || f[2].rfind("target=", 0) != 0) throw bad("malformed game line");
      TranscriptEntry e;
      e.id = f[1];
      const std::string tgt = f[2].substr(7);
      if (tgt != "?") e.target = to_int(tgt, lineno);
      out.push_back(std::move(e));
      open = &out.back();
    } else if (f[0] == "guess") {
      if (!open) throw bad("guess line outside a game");
      if (f.size() < 4) throw bad("malformed guess line");
      open->guess = to_int(f[1], lineno);
      if (f[2] != "won" && f[2] != "lost") throw bad("outcome must be won or lost");
      open->won = f[2] == "won";
      if (f[3] != "+30" && f[3] != "-30") throw bad("reward must be +30 or -30");
      open->reward = f[3] == "+30" ? kWinReward : kLossReward;
      open = nullptr;
    } else {
      if (!open) throw bad("step line outside a game");
      if (f.size() < 3 || f[1].rfind("q=", 0) != 0) throw bad("malformed step line");
      const int k = to_int(f[0], lineno);
      if (k != static_cast<int>(open->steps.size()) + 1) throw bad("steps out of order");
      open->steps.emplace_back(to_int(f[1].substr(2), lineno), parse_answer(f[2]));
    }
  }
  if (open) throw std::runtime_error("transcript ended inside game '" + open->id + "'");
  return out;
}

}  // namespace q20
