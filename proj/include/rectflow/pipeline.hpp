#pragma once

// Stage orchestration: teacher training, pair generation, annealing reflow
// into the narrow student, pair regeneration, and flow-guided distillation.
// Every random draw is a pure function of (config seeds, iteration, index),
// so reruns and resumes reproduce losses exactly.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rectflow/checkpoint.hpp"
#include "rectflow/config.hpp"
#include "rectflow/metrics.hpp"
#include "rectflow/pairset.hpp"

namespace rectflow {

struct LossRow {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  double beta = 0.0;
  double wall_time = 0.0;  // seconds since stage start
};

std::string loss_log_csv(const std::vector<LossRow>& rows);

// Called with the last consistent state when a training loss goes
// non-finite, right before TrainingDiverged is thrown.
using DivergenceSink = std::function<void(const Checkpoint&)>;

struct StageResult {
  Checkpoint checkpoint;
  std::vector<LossRow> log;
};

StageResult train_teacher(const RunConfig& cfg,
                          const Checkpoint* resume = nullptr,
                          const DivergenceSink& on_divergence = {});

// n fresh couplings (x1, x0_hat, c) through the configured solver. Samples
// whose integration exhausts the budget are skipped and counted; more than
// 1% skips fails the stage. Index-partitioned across threads with
// index-ordered writes, so the result is thread-count invariant.
PairSet generate_pairs(const RunConfig& cfg, const ModelBundle& generator,
                       std::size_t count, std::uint64_t pair_seed);

// Student trained on teacher pairs under the annealing schedule; the
// condition encoder is copied from the teacher and frozen.
StageResult train_anneal_reflow(const RunConfig& cfg, const Checkpoint& teacher,
                                const PairSet& pairs,
                                const Checkpoint* resume = nullptr,
                                const DivergenceSink& on_divergence = {});

// One-step distillation (optionally flow-guided) from pairs regenerated by
// the annealed student; the annealed model stays frozen as the two-step
// target and as the initialization.
StageResult train_distill(const RunConfig& cfg, const Checkpoint& annealed,
                          const PairSet& pairs, bool use_two_step,
                          const Checkpoint* resume = nullptr,
                          const DivergenceSink& on_divergence = {});

struct SampleRun {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> x;
  std::vector<std::vector<int>> tokens;  // conditional models only
  double mean_nfe = 0.0;
  double time_per_sample = 0.0;
};

SampleRun sample_model(const ModelBundle& bundle, const SolverConfig& solver,
                       std::size_t n, std::uint64_t seed,
                       std::size_t threads = 1);

std::string samples_to_csv(const SampleRun& run, std::size_t vocab = 0,
                           std::size_t components = 0);

// Generates metrics.n_samples through the given solver and scores them
// against a fresh reference draw; adds the straightness probe and the
// efficiency numbers from the sampling run.
MetricsReport evaluate_model(const RunConfig& cfg, const ModelBundle& bundle,
                             const SolverConfig& solver);

// Metric-only evaluation of externally produced samples.
MetricsReport evaluate_samples(const RunConfig& cfg,
                               const std::vector<double>& x, std::size_t n);

}  // namespace rectflow
