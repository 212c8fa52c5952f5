#pragma once

#include "q20/types.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace q20 {

/// Raw answer frequencies for one object-question pair.
struct AnswerCounts {
  double yes = 0.0;
  double no = 0.0;
  double unknown = 0.0;

  bool operator==(const AnswerCounts&) const = default;
};

/// n x m grids of raw answer frequencies.
struct CountGrid {
  Matrix yes;
  Matrix no;
  Matrix unknown;

  static CountGrid zeros(Eigen::Index n, Eigen::Index m) {
    return {Matrix::Zero(n, m), Matrix::Zero(n, m), Matrix::Zero(n, m)};
  }
  Eigen::Index rows() const { return yes.rows(); }
  Eigen::Index cols() const { return yes.cols(); }
  AnswerCounts at(Eigen::Index i, Eigen::Index j) const { return {yes(i, j), no(i, j), unknown(i, j)}; }
  void set(Eigen::Index i, Eigen::Index j, const AnswerCounts& c) {
    yes(i, j) = c.yes;
    no(i, j) = c.no;
    unknown(i, j) = c.unknown;
  }
  bool operator==(const CountGrid& o) const {
    return yes == o.yes && no == o.no && unknown == o.unknown;
  }
};

/// Smoothed answer probabilities: yes = R, no = W, unknown = U (the complement).
struct AnswerModel {
  Matrix yes;
  Matrix no;
  Matrix unknown;

  const Matrix& operator[](Answer a) const {
    switch (a) {
      case Answer::Yes: return yes;
      case Answer::No: return no;
      default: return unknown;
    }
  }
};

/// R = (c_yes + delta) / (total + lambda), W likewise with c_no, U = 1 - R - W.
/// Requires delta > 0 and lambda >= 2 delta; throws std::invalid_argument otherwise.
AnswerModel derive_answer_model(const CountGrid& counts, double delta, double lambda);

class KbError : public std::runtime_error {
public:
  enum class Kind { Malformed, DuplicateLabel, NegativeCount, ShapeMismatch, Integrity, InvalidParameter };

  KbError(Kind kind, int line, const std::string& what)
      : std::runtime_error(what), kind_(kind), line_(line) {}

  Kind kind() const { return kind_; }
  /// 1-based line number for parse errors, 0 when not tied to a file line.
  int line() const { return line_; }

private:
  Kind kind_;
  int line_;
};

/// Object/question universe with answer statistics and the derived answer model.
/// Immutable after construction.
class KnowledgeBase {
public:
  /// Validates shapes, label uniqueness and count signs, then derives the model.
  /// Throws KbError.
  static KnowledgeBase create(std::vector<std::string> objects, std::vector<std::string> questions,
                              CountGrid counts, Vector popularity, double delta = 1.0,
                              double lambda = 3.0);

  int num_objects() const { return static_cast<int>(objects_.size()); }
  int num_questions() const { return static_cast<int>(questions_.size()); }

  const std::vector<std::string>& objects() const { return objects_; }
  const std::vector<std::string>& questions() const { return questions_; }
  const std::string& object(int i) const { return objects_.at(i); }
  const std::string& question(int j) const { return questions_.at(j); }

  const CountGrid& counts() const { return counts_; }
  AnswerCounts counts(int i, int j) const { return counts_.at(i, j); }
  const Vector& popularity() const { return popularity_; }
  double delta() const { return delta_; }
  double lambda() const { return lambda_; }

  const AnswerModel& model() const { return model_; }

  /// Column j of R, W or U: the likelihood of `answer` to question j for every object.
  auto likelihood(Answer answer, int j) const { return model_[answer].col(j); }

  bool operator==(const KnowledgeBase& o) const {
    return objects_ == o.objects_ && questions_ == o.questions_ && counts_ == o.counts_ &&
           popularity_ == o.popularity_ && delta_ == o.delta_ && lambda_ == o.lambda_;
  }

private:
  KnowledgeBase() = default;

  std::vector<std::string> objects_;
  std::vector<std::string> questions_;
  CountGrid counts_;
  Vector popularity_;
  double delta_ = 1.0;
  double lambda_ = 3.0;
  AnswerModel model_;
};

class InvalidPriorError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Uniform 1/n, or popularity counts normalized to sum to one.
/// Throws InvalidPriorError when popularity mode has no mass.
Belief initial_belief(const KnowledgeBase& kb, PriorMode mode);

struct SyntheticKbSpec {
  int n_objects = 64;
  int n_questions = 32;
  /// Questions 0..n_code_questions-1 encode each object's index in binary
  /// (bit b of object k is its designated answer to question b: Yes for 1, No for 0).
  int n_code_questions = 6;
  /// Total answers per object-question pair.
  double count_scale = 1000.0;
  /// Fraction of answers that disagree with the designated answer, in [0, 0.5].
  double answer_ambiguity = 0.05;
  /// Probability that an object's designated answer to a filler question is Yes.
  double filler_density = 1.0 / 32.0;
  /// Popularity follows count ~ 1 / rank^exponent over a seeded random ranking.
  double popularity_exponent = 1.0;
  /// Reject specs whose code questions cannot give every object a distinct code.
  bool require_identifiable = true;
  double delta = 1.0;
  double lambda = 3.0;
  std::uint64_t seed = 0;
};

/// Seeded synthetic knowledge base. The same spec reproduces the same KB exactly.
KnowledgeBase generate_synthetic_kb(const SyntheticKbSpec& spec);

/// Text format, one record per line:
///   q20kb v1 n=<n> m=<m> delta=<d> lambda=<l>
///   object <i> <popularity> <label>
///   question <j> <text>
///   count <i> <j> <yes> <no> <unknown>      (only nonzero pairs)
///   model <i> <j> <R> <W> <U>               (optional; checked against the counts)
/// Fields are tab-separated.
void write_kb(const KnowledgeBase& kb, std::ostream& out, bool include_model = false);
KnowledgeBase read_kb(std::istream& in);

void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path, bool include_model = false);
KnowledgeBase load_kb(const std::filesystem::path& path);

}  // namespace q20
