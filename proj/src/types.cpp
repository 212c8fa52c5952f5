#include "q20/types.hpp"

#include <algorithm>
#include <cctype>

namespace q20 {

std::string_view to_string(Answer a) {
  switch (a) {
    case Answer::Yes: return "yes";
    case Answer::No: return "no";
    case Answer::Unknown: return "unknown";
  }
  return "unknown";
}

namespace {

std::string lower_trimmed(std::string_view token) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!token.empty() && is_space(token.front())) token.remove_prefix(1);
  while (!token.empty() && is_space(token.back())) token.remove_suffix(1);
  std::string out(token);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

Answer parse_answer(std::string_view token) {
  const std::string t = lower_trimmed(token);
  if (t == "yes") return Answer::Yes;
  if (t == "no") return Answer::No;
  if (t == "unknown") return Answer::Unknown;
  throw std::invalid_argument("invalid answer token '" + std::string(token) +
                              "' (expected yes, no or unknown)");
}

std::string_view to_string(PriorMode mode) {
  return mode == PriorMode::Uniform ? "uniform" : "popularity";
}

PriorMode parse_prior_mode(std::string_view token) {
  const std::string t = lower_trimmed(token);
  if (t == "uniform") return PriorMode::Uniform;
  if (t == "popularity") return PriorMode::Popularity;
  throw std::invalid_argument("invalid prior mode '" + std::string(token) + "'");
}

void AskedMask::mark(int j) {
  if (j < 0 || j >= size()) throw std::logic_error("question index out of range");
  if (asked_[j]) throw std::logic_error("question " + std::to_string(j) + " already asked");
  asked_[j] = true;
  ++count_;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng derive_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t lane) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ index);
  h = splitmix64(h ^ (lane * 0xd1b54a32d192ed03ULL));
  return Rng(h);
}

double uniform01(Rng& rng) {
  // 53 random bits -> [0, 1)
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int sample_categorical(const Eigen::Ref<const Vector>& weights, Rng& rng) {
  const double total = weights.sum();
  if (!(total > 0.0)) throw std::invalid_argument("categorical weights must have positive mass");
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  int last_positive = -1;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    acc += weights[i];
    if (u < acc) return last_positive;
  }
  return last_positive;
}

int argmax_lowest(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) throw std::invalid_argument("argmax of empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

}  // namespace q20
