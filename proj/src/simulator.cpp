#include "q20/simulator.hpp"

namespace q20 {

void SimulatorConfig::validate() const {
  if (!(noise_epsilon >= 0.0 && noise_epsilon <= 1.0))
    throw std::invalid_argument("noise_epsilon must lie in [0, 1]");
}

int sample_target(const KnowledgeBase& kb, const SimulatorConfig& config, Rng& rng) {
  if (config.target_mode == PriorMode::Uniform) {
    const auto n = static_cast<std::uint64_t>(kb.num_objects());
    return static_cast<int>(uniform01(rng) * static_cast<double>(n)) % kb.num_objects();
  }
  return sample_categorical(kb.popularity(), rng);
}

Answer answer(const KnowledgeBase& kb, int target, int question) {
  // Compare smoothed numerators: U as a complement picks up rounding that would
  // break exact ties.
  const AnswerCounts c = kb.counts(target, question);
  const double total = c.yes + c.no + c.unknown;
  const double r = c.yes + kb.delta();
  const double w = c.no + kb.delta();
  const double u = total + kb.lambda() - r - w;
  if (r >= w && r >= u) return Answer::Yes;
  if (w >= u) return Answer::No;
  return Answer::Unknown;
}

Answer noisy_answer(const KnowledgeBase& kb, int target, int question, double epsilon, Rng& rng) {
  const Answer truth = answer(kb, target, question);
  if (epsilon <= 0.0) return truth;
  if (uniform01(rng) >= epsilon) return truth;
  const int shift = uniform01(rng) < 0.5 ? 1 : 2;
  return static_cast<Answer>((static_cast<int>(truth) + shift) % kNumAnswers);
}

Answerer make_answerer(const KnowledgeBase& kb, double epsilon, Rng& rng) {
  return [&kb, epsilon, &rng](int target, int question) {
    return noisy_answer(kb, target, question, epsilon, rng);
  };
}

}  // namespace q20
