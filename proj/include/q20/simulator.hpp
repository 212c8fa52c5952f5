#pragma once

#include "q20/engine.hpp"
#include "q20/kb.hpp"

namespace q20 {

struct SimulatorConfig {
  PriorMode target_mode = PriorMode::Uniform;
  /// Probability that an answer is replaced by one of the other two answers.
  double noise_epsilon = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Target object drawn from the uniform or popularity prior.
int sample_target(const KnowledgeBase& kb, const SimulatorConfig& config, Rng& rng);

/// The answer whose R/W/U entry is largest at (target, question).
/// Ties resolve Yes > No > Unknown.
Answer answer(const KnowledgeBase& kb, int target, int question);

/// answer() with probability 1 - epsilon, otherwise one of the two other answers
/// chosen uniformly.
Answer noisy_answer(const KnowledgeBase& kb, int target, int question, double epsilon, Rng& rng);

/// Answerer callback over a KB with the given noise; draws from `rng` only when
/// epsilon > 0. The referenced objects must outlive the callback.
Answerer make_answerer(const KnowledgeBase& kb, double epsilon, Rng& rng);

}  // namespace q20
