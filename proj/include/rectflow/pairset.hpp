#pragma once

// Persisted (x1, x0_hat, c) couplings: the reflow / distillation corpus.
// Fixed-width little-endian f64 records behind a fingerprinted header;
// loading against the wrong generator model is refused.

#include <cstdint>
#include <string>
#include <vector>

#include "rectflow/ode_solvers.hpp"

namespace rectflow {

enum class CondLayout : std::uint32_t { none = 0, tokens = 1, vector = 2 };

struct PairSet {
  std::size_t dim = 0;
  CondLayout cond_layout = CondLayout::none;
  std::size_t cond_len = 0;
  std::uint64_t fingerprint = 0;
  SolverConfig solver;
  std::size_t count = 0;
  std::size_t attempted = 0;
  std::size_t skipped = 0;

  std::vector<double> x1;      // count x dim
  std::vector<double> x0_hat;  // count x dim
  std::vector<double> cond;    // count x cond_len

  std::vector<int> tokens_at(std::size_t i) const;

  void save(const std::string& path) const;
  static PairSet load(const std::string& path);
  // Loads and refuses on generator mismatch.
  static PairSet load_for(const std::string& path,
                          std::uint64_t expected_fingerprint);
};

}  // namespace rectflow
