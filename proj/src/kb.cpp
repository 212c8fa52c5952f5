#include "q20/kb.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace q20 {

AnswerModel derive_answer_model(const CountGrid& counts, double delta, double lambda) {
  if (!(delta > 0.0)) throw std::invalid_argument("smoothing delta must be positive");
  if (!(lambda >= 2.0 * delta))
    throw std::invalid_argument("smoothing lambda must be at least 2 * delta");
  if (counts.no.rows() != counts.rows() || counts.no.cols() != counts.cols() ||
      counts.unknown.rows() != counts.rows() || counts.unknown.cols() != counts.cols())
    throw std::invalid_argument("count grids differ in shape");

  const Matrix denom = (counts.yes + counts.no + counts.unknown).array() + lambda;
  AnswerModel model;
  model.yes = (counts.yes.array() + delta) / denom.array();
  model.no = (counts.no.array() + delta) / denom.array();
  model.unknown = 1.0 - model.yes.array() - model.no.array();
  return model;
}

namespace {

void check_unique(const std::vector<std::string>& labels, const char* what) {
  std::unordered_set<std::string> seen;
  for (const auto& l : labels)
    if (!seen.insert(l).second)
      throw KbError(KbError::Kind::DuplicateLabel, 0,
                    std::string("duplicate ") + what + " label '" + l + "'");
}

}  // namespace

KnowledgeBase KnowledgeBase::create(std::vector<std::string> objects,
                                    std::vector<std::string> questions, CountGrid counts,
                                    Vector popularity, double delta, double lambda) {
  using K = KbError::Kind;
  const auto n = static_cast<Eigen::Index>(objects.size());
  const auto m = static_cast<Eigen::Index>(questions.size());
  if (n < 2) throw KbError(K::ShapeMismatch, 0, "knowledge base needs at least 2 objects");
  if (m < 1) throw KbError(K::ShapeMismatch, 0, "knowledge base needs at least 1 question");
  for (const Matrix* g : {&counts.yes, &counts.no, &counts.unknown})
    if (g->rows() != n || g->cols() != m)
      throw KbError(K::ShapeMismatch, 0, "count grid shape does not match object/question lists");
  if (popularity.size() != n)
    throw KbError(K::ShapeMismatch, 0, "popularity length does not match object count");
  check_unique(objects, "object");
  check_unique(questions, "question");

  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(popularity[i] >= 0.0) || !std::isfinite(popularity[i]))
      throw KbError(K::NegativeCount, 0, "negative popularity for object " + std::to_string(i));
    for (Eigen::Index j = 0; j < m; ++j) {
      const AnswerCounts c = counts.at(i, j);
      for (double v : {c.yes, c.no, c.unknown})
        if (!(v >= 0.0) || !std::isfinite(v))
          throw KbError(K::NegativeCount, 0,
                        "negative count at row " + std::to_string(i) + " column " +
                            std::to_string(j));
    }
  }

  KnowledgeBase kb;
  try {
    kb.model_ = derive_answer_model(counts, delta, lambda);
  } catch (const std::invalid_argument& e) {
    throw KbError(K::InvalidParameter, 0, e.what());
  }
  kb.objects_ = std::move(objects);
  kb.questions_ = std::move(questions);
  kb.counts_ = std::move(counts);
  kb.popularity_ = std::move(popularity);
  kb.delta_ = delta;
  kb.lambda_ = lambda;
  return kb;
}

Belief initial_belief(const KnowledgeBase& kb, PriorMode mode) {
  const int n = kb.num_objects();
  if (mode == PriorMode::Uniform) return Belief::Constant(n, 1.0 / n);
  const double total = kb.popularity().sum();
  if (!(total > 0.0))
    throw InvalidPriorError("popularity prior requires a positive total popularity count");
  return kb.popularity() / total;
}

KnowledgeBase generate_synthetic_kb(const SyntheticKbSpec& spec) {
  auto invalid = [](const std::string& msg) {
    return KbError(KbError::Kind::InvalidParameter, 0, msg);
  };
  if (spec.n_objects < 2) throw invalid("n_objects must be at least 2");
  if (spec.n_questions < 1) throw invalid("n_questions must be at least 1");
  if (spec.n_code_questions < 0 || spec.n_code_questions > spec.n_questions)
    throw invalid("n_code_questions must lie in [0, n_questions]");
  if (!(spec.count_scale >= 1.0)) throw invalid("count_scale must be at least 1");
  if (!(spec.answer_ambiguity >= 0.0 && spec.answer_ambiguity <= 0.5))
    throw invalid("answer_ambiguity must lie in [0, 0.5]");
  if (!(spec.filler_density >= 0.0 && spec.filler_density <= 1.0))
    throw invalid("filler_density must lie in [0, 1]");
  if (spec.require_identifiable) {
    const bool enough = spec.n_code_questions >= 63 ||
                        (std::uint64_t{1} << spec.n_code_questions) >=
                            static_cast<std::uint64_t>(spec.n_objects);
    if (!enough)
      throw invalid("2^" + std::to_string(spec.n_code_questions) + " codes cannot distinguish " +
                    std::to_string(spec.n_objects) + " objects");
  }

  const int n = spec.n_objects;
  const int m = spec.n_questions;
  const double scale = spec.count_scale;
  const double amb = spec.answer_ambiguity;
  Rng rng(spec.seed);

  std::vector<std::string> objects(n);
  for (int i = 0; i < n; ++i) objects[i] = "Object " + std::to_string(i);
  std::vector<std::string> questions(m);
  for (int j = 0; j < m; ++j) {
    questions[j] = j < spec.n_code_questions
                       ? "Is bit " + std::to_string(j) + " of the object's code set?"
                       : "Does the object have attribute " + std::to_string(j) + "?";
  }

  // Designated answer gets `share` of the counts, the remainder is split
  // between the other two answers by `split`.
  auto make_counts = [scale](bool positive, double share, double split) {
    const double main = std::round(scale * share);
    const double rest = scale - main;
    const double other = std::round(rest * split);
    const double unk = rest - other;
    return positive ? AnswerCounts{main, other, unk} : AnswerCounts{other, main, unk};
  };

  CountGrid counts = CountGrid::zeros(n, m);
  for (int j = 0; j < spec.n_code_questions; ++j)
    for (int i = 0; i < n; ++i) {
      const bool bit = j < 63 && ((static_cast<std::uint64_t>(i) >> j) & 1U);
      counts.set(i, j, make_counts(bit, 1.0 - amb, 0.5));
    }
  for (int j = spec.n_code_questions; j < m; ++j)
    for (int i = 0; i < n; ++i) {
      const bool positive = uniform01(rng) < spec.filler_density;
      const double share = 1.0 - amb * (0.5 + uniform01(rng));
      counts.set(i, j, make_counts(positive, share, uniform01(rng)));
    }

  std::vector<int> rank(n);
  std::iota(rank.begin(), rank.end(), 1);
  for (int i = n - 1; i > 0; --i) {
    const int k = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(rank[i], rank[k]);
  }
  Vector popularity(n);
  for (int i = 0; i < n; ++i)
    popularity[i] = std::round(1.0e6 / std::pow(static_cast<double>(rank[i]), spec.popularity_exponent));

  return KnowledgeBase::create(std::move(objects), std::move(questions), std::move(counts),
                               std::move(popularity), spec.delta, spec.lambda);
}

// ---------------------------------------------------------------------------
// File format

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::vector<std::string_view> split_tabs(std::string_view line, std::size_t max_fields) {
  std::vector<std::string_view> out;
  while (out.size() + 1 < max_fields) {
    const auto pos = line.find('\t');
    if (pos == std::string_view::npos) break;
    out.push_back(line.substr(0, pos));
    line.remove_prefix(pos + 1);
  }
  out.push_back(line);
  return out;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

[[noreturn]] void fail(KbError::Kind kind, int line, const std::string& msg) {
  throw KbError(kind, line, "line " + std::to_string(line) + ": " + msg);
}

double parse_number(std::string_view s, int line, const char* what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    fail(KbError::Kind::Malformed, line, std::string("bad ") + what + " '" + std::string(s) + "'");
  return v;
}

int parse_index(std::string_view s, int line, int bound, const char* what) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail(KbError::Kind::Malformed, line, std::string("bad ") + what + " '" + std::string(s) + "'");
  if (v < 0 || v >= bound)
    fail(KbError::Kind::ShapeMismatch, line,
         std::string(what) + " " + std::to_string(v) + " outside [0, " + std::to_string(bound) + ")");
  return static_cast<int>(v);
}

}  // namespace

void write_kb(const KnowledgeBase& kb, std::ostream& out, bool include_model) {
  const int n = kb.num_objects();
  const int m = kb.num_questions();
  out << "q20kb\tv1\tn=" << n << "\tm=" << m << "\tdelta=" << format_double(kb.delta())
      << "\tlambda=" << format_double(kb.lambda()) << '\n';
  for (int i = 0; i < n; ++i)
    out << "object\t" << i << '\t' << format_double(kb.popularity()[i]) << '\t' << kb.object(i)
        << '\n';
  for (int j = 0; j < m; ++j) out << "question\t" << j << '\t' << kb.question(j) << '\n';
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const AnswerCounts c = kb.counts(i, j);
      if (c.yes == 0.0 && c.no == 0.0 && c.unknown == 0.0) continue;
      out << "count\t" << i << '\t' << j << '\t' << format_double(c.yes) << '\t'
          << format_double(c.no) << '\t' << format_double(c.unknown) << '\n';
    }
  if (include_model) {
    const AnswerModel& am = kb.model();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        out << "model\t" << i << '\t' << j << '\t' << format_double(am.yes(i, j)) << '\t'
            << format_double(am.no(i, j)) << '\t' << format_double(am.unknown(i, j)) << '\n';
  }
}

KnowledgeBase read_kb(std::istream& in) {
  using K = KbError::Kind;
  std::string line;
  int lineno = 0;

  if (!std::getline(in, line)) fail(K::Malformed, 1, "missing header");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto head = split_ws(line);
  if (head.size() != 6 || head[0] != "q20kb" || head[1] != "v1")
    fail(K::Malformed, lineno, "expected header 'q20kb v1 n=.. m=.. delta=.. lambda=..'");
  auto keyed = [&](std::string_view tok, std::string_view key) {
    if (tok.substr(0, key.size()) != key) fail(K::Malformed, lineno, "expected " + std::string(key));
    return tok.substr(key.size());
  };
  const double n_raw = parse_number(keyed(head[2], "n="), lineno, "object count");
  const double m_raw = parse_number(keyed(head[3], "m="), lineno, "question count");
  const double delta = parse_number(keyed(head[4], "delta="), lineno, "delta");
  const double lambda = parse_number(keyed(head[5], "lambda="), lineno, "lambda");
  if (n_raw < 2 || m_raw < 1 || n_raw != std::floor(n_raw) || m_raw != std::floor(m_raw) ||
      n_raw > 1e7 || m_raw > 1e7)
    fail(K::ShapeMismatch, lineno, "invalid dimensions");
  const int n = static_cast<int>(n_raw);
  const int m = static_cast<int>(m_raw);

  std::vector<std::string> objects(n);
  std::vector<std::string> questions(m);
  std::vector<bool> have_object(n, false), have_question(m, false);
  Vector popularity = Vector::Zero(n);
  CountGrid counts = CountGrid::zeros(n, m);
  std::vector<bool> have_count(static_cast<std::size_t>(n) * m, false);
  struct StoredModel {
    int i, j, line;
    double r, w, u;
  };
  std::vector<StoredModel> stored;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto kind_end = line.find('\t');
    const std::string_view kind = std::string_view(line).substr(0, kind_end);

    if (kind == "object") {
      const auto f = split_tabs(line, 4);
      if (f.size() != 4) fail(K::Malformed, lineno, "object line needs index, popularity, label");
      const int i = parse_index(f[1], lineno, n, "object index");
      const double pop = parse_number(f[2], lineno, "popularity");
      if (pop < 0) fail(K::NegativeCount, lineno, "negative popularity for object " + std::to_string(i));
      if (have_object[i]) fail(K::Malformed, lineno, "object " + std::to_string(i) + " defined twice");
      have_object[i] = true;
      popularity[i] = pop;
      objects[i] = std::string(f[3]);
    } else if (kind == "question") {
      const auto f = split_tabs(line, 3);
      if (f.size() != 3) fail(K::Malformed, lineno, "question line needs index and text");
      const int j = parse_index(f[1], lineno, m, "question index");
      if (have_question[j])
        fail(K::Malformed, lineno, "question " + std::to_string(j) + " defined twice");
      have_question[j] = true;
      questions[j] = std::string(f[2]);
    } else if (kind == "count" || kind == "model") {
      const auto f = split_tabs(line, 7);
      if (f.size() != 6) fail(K::Malformed, lineno, std::string(kind) + " line needs 5 fields");
      const int i = parse_index(f[1], lineno, n, "row");
      const int j = parse_index(f[2], lineno, m, "column");
      const double a = parse_number(f[3], lineno, "value");
      const double b = parse_number(f[4], lineno, "value");
      const double c = parse_number(f[5], lineno, "value");
      if (kind == "count") {
        if (a < 0 || b < 0 || c < 0)
          fail(K::NegativeCount, lineno,
               "negative count at row " + std::to_string(i) + " column " + std::to_string(j));
        const std::size_t key = static_cast<std::size_t>(i) * m + j;
        if (have_count[key])
          fail(K::Malformed, lineno,
               "duplicate count for row " + std::to_string(i) + " column " + std::to_string(j));
        have_count[key] = true;
        counts.set(i, j, {a, b, c});
      } else {
        stored.push_back({i, j, lineno, a, b, c});
      }
    } else {
      fail(K::Malformed, lineno, "unknown record '" + std::string(kind) + "'");
    }
  }

  for (int i = 0; i < n; ++i)
    if (!have_object[i]) fail(K::ShapeMismatch, lineno, "object " + std::to_string(i) + " missing");
  for (int j = 0; j < m; ++j)
    if (!have_question[j])
      fail(K::ShapeMismatch, lineno, "question " + std::to_string(j) + " missing");

  KnowledgeBase kb = KnowledgeBase::create(std::move(objects), std::move(questions),
                                           std::move(counts), std::move(popularity), delta, lambda);
  constexpr double kTol = 1e-9;
  for (const auto& s : stored) {
    const AnswerModel& am = kb.model();
    if (std::abs(am.yes(s.i, s.j) - s.r) > kTol || std::abs(am.no(s.i, s.j) - s.w) > kTol ||
        std::abs(am.unknown(s.i, s.j) - s.u) > kTol)
      fail(K::Integrity, s.line,
           "stored answer model disagrees with counts at row " + std::to_string(s.i) +
               " column " + std::to_string(s.j));
  }
  return kb;
}

void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path, bool include_model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_kb(kb, out, include_model);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

KnowledgeBase load_kb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_kb(in);
}

}  // namespace q20
