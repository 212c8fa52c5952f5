#pragma once

#include "q20/kb.hpp"
#include "q20/types.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace q20::test {

inline std::vector<std::string> labels(const char* prefix, int k) {
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// Random counts in [0, scale) for every pair, popularity in [1, 100].
inline KnowledgeBase random_kb(int n, int m, Rng& rng, double scale = 50.0) {
  std::uniform_real_distribution<double> u(0.0, scale);
  CountGrid c = CountGrid::zeros(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) c.set(i, j, {std::floor(u(rng)), std::floor(u(rng)), std::floor(u(rng))});
  Vector pop(n);
  for (int i = 0; i < n; ++i) pop[i] = 1.0 + std::floor(u(rng) * 99.0 / scale);
  return KnowledgeBase::create(labels("obj", n), labels("q", m), std::move(c), std::move(pop));
}

/// Uniform-ish random belief with strictly positive entries.
inline Belief random_belief(int n, Rng& rng) {
  Belief s(n);
  for (int i = 0; i < n; ++i) s[i] = 0.05 + uniform01(rng);
  return s / s.sum();
}

/// Synthetic KB where only the code questions carry information.
inline KnowledgeBase coded_kb(int n_objects, int n_questions, int n_code, double ambiguity = 0.0,
                              std::uint64_t seed = 3) {
  SyntheticKbSpec spec;
  spec.n_objects = n_objects;
  spec.n_questions = n_questions;
  spec.n_code_questions = n_code;
  spec.answer_ambiguity = ambiguity;
  spec.filler_density = 0.0;
  spec.seed = seed;
  return generate_synthetic_kb(spec);
}

/// Temporary directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::uint64_t counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("q20-test-" + std::to_string(std::random_device{}()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace q20::test
