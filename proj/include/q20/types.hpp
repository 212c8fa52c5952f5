#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace q20 {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Probability distribution over objects (the MDP state).
using Belief = Eigen::VectorXd;

using Rng = std::mt19937_64;

enum class Answer : std::uint8_t { Yes = 0, No = 1, Unknown = 2 };

inline constexpr int kNumAnswers = 3;
inline constexpr Answer kAllAnswers[kNumAnswers] = {Answer::Yes, Answer::No, Answer::Unknown};

/// Canonical lowercase token: "yes", "no" or "unknown".
std::string_view to_string(Answer a);

/// Case-insensitive, whitespace-trimmed parse of "yes|no|unknown".
/// Throws std::invalid_argument on anything else.
Answer parse_answer(std::string_view token);

/// Which initial belief to start an episode from.
enum class PriorMode : std::uint8_t { Uniform, Popularity };

std::string_view to_string(PriorMode mode);
PriorMode parse_prior_mode(std::string_view token);

/// Questions already asked in the current episode.
class AskedMask {
public:
  AskedMask() = default;
  explicit AskedMask(int num_questions) : asked_(num_questions, false) {}

  int size() const { return static_cast<int>(asked_.size()); }
  int count() const { return count_; }
  bool asked(int j) const { return asked_.at(j); }
  bool all_asked() const { return count_ == size(); }

  /// Throws std::logic_error if j is out of range or already asked.
  void mark(int j);

  const std::vector<bool>& bits() const { return asked_; }

  bool operator==(const AskedMask&) const = default;

private:
  std::vector<bool> asked_;
  int count_ = 0;
};

/// Independent RNG stream for (seed, index, lane). Uses splitmix64 mixing so
/// neighbouring indices give unrelated streams.
Rng derive_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t lane = 0);

/// Uniform draw in [0, 1).
double uniform01(Rng& rng);

/// Draw an index from a (not necessarily normalized) nonnegative weight vector.
/// Entries with zero weight are never returned.
int sample_categorical(const Eigen::Ref<const Vector>& weights, Rng& rng);

/// Index of the largest entry; ties go to the lowest index.
int argmax_lowest(const Eigen::Ref<const Vector>& v);

}  // namespace q20
