#include "rectflow/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "rectflow/flow_core.hpp"
#include "rectflow/io_util.hpp"

namespace rectflow {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor rows_tensor(std::vector<double> flat, std::size_t n, std::size_t dim) {
  return Tensor::from_values({n, dim}, std::move(flat));
}

// Restores Adam moments from a checkpoint for the given parameter order.
void restore_adam(AdamState& state, const Checkpoint& ckpt,
                  const std::vector<std::pair<std::string, Tensor>>& params) {
  if (ckpt.adam_m.empty()) return;
  std::vector<std::vector<double>> m, v;
  for (const auto& [name, t] : params) {
    auto find = [&](const auto& list) -> const std::vector<double>* {
      for (const auto& [n2, buf] : list) {
        if (n2 == name) return &buf;
      }
      return nullptr;
    };
    const auto* mb = find(ckpt.adam_m);
    const auto* vb = find(ckpt.adam_v);
    if (!mb || !vb) {
      throw IoError("checkpoint optimizer state misses parameter '" + name +
                    "'");
    }
    m.push_back(*mb);
    v.push_back(*vb);
  }
  state.restore(ckpt.adam_step, std::move(m), std::move(v));
}

Checkpoint snapshot(const std::string& stage, std::uint64_t iteration,
                    const RunConfig& cfg, const ModelBundle& bundle,
                    const std::vector<std::pair<std::string, Tensor>>& params,
                    const AdamState& opt) {
  Checkpoint ckpt;
  ckpt.stage = stage;
  ckpt.iteration = iteration;
  ckpt.config_hash = cfg.hash();
  ckpt.init_seed = cfg.seeds.init;
  ckpt.train_seed = cfg.seeds.train;
  ckpt.bundle = bundle;
  ckpt.adam_cfg = opt.config();
  ckpt.adam_step = opt.step_count();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.adam_m.emplace_back(params[i].first, opt.first_moments()[i]);
    ckpt.adam_v.emplace_back(params[i].first, opt.second_moments()[i]);
  }
  return ckpt;
}

struct TrainLoop {
  const RunConfig& cfg;
  std::string stage_name;
  TrainStageParams stage;
  ModelBundle bundle;
  std::vector<std::pair<std::string, Tensor>> named;
  std::vector<Tensor> params;
  AdamState opt;
  std::uint64_t start_iteration = 0;

  // beta(it) for the log column; identity 0 outside annealing.
  std::function<double(std::uint64_t)> beta_of;
  // builds the loss for one iteration
  std::function<Tensor(std::uint64_t)> loss_of;

  StageResult run(const DivergenceSink& on_divergence) {
    const auto t0 = Clock::now();
    StageResult result;
    for (auto& p : params) p.zero_grad();
    std::uint64_t it = start_iteration;
    try {
      for (; it < stage.iterations; ++it) {
        Tensor loss = loss_of(it);
        const double value = loss.item();
        backward(loss);
        opt.step(params);
        if ((it + 1) % stage.log_interval == 0 ||
            it + 1 == stage.iterations) {
          result.log.push_back(
              {it + 1, value, beta_of(it), seconds_since(t0)});
        }
      }
    } catch (const NumericFault& e) {
      Tape::current().clear();
      Checkpoint last = snapshot(stage_name, it, cfg, bundle, named, opt);
      if (on_divergence) on_divergence(last);
      throw TrainingDiverged(stage_name + " diverged at iteration " +
                             std::to_string(it) + ": " + e.what());
    }
    result.checkpoint =
        snapshot(stage_name, stage.iterations, cfg, bundle, named, opt);
    return result;
  }
};

}  // namespace

std::string loss_log_csv(const std::vector<LossRow>& rows) {
  std::ostringstream os;
  os << "iteration,loss,beta,wall_time\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.6f\n",
                  static_cast<unsigned long long>(r.iteration), r.loss,
                  r.beta, r.wall_time);
    os << buf;
  }
  return os.str();
}

StageResult train_teacher(const RunConfig& cfg, const Checkpoint* resume,
                          const DivergenceSink& on_divergence) {
  cfg.validate();
  TrainLoop loop{cfg,
                 "teacher",
                 cfg.teacher,
                 resume ? resume->bundle.deep_copy()
                        : make_bundle(cfg.teacher_model_config(), cfg.encoder,
                                      cfg.seeds.init),
                 {},
                 {},
                 {},
                 resume ? resume->iteration : 0,
                 {},
                 {}};
  loop.named = loop.bundle.named_parameters();
  for (auto& [name, t] : loop.named) loop.params.push_back(t);
  loop.opt = AdamState(AdamConfig{cfg.teacher.learning_rate, 0.9, 0.999, 1e-8},
                       loop.params);
  if (resume) restore_adam(loop.opt, *resume, loop.named);

  const std::size_t batch = cfg.teacher.batch_size;
  const std::size_t dim = cfg.dataset.dim;
  Distribution dist = cfg.dataset;
  TimeSampler times{cfg.seeds.train};

  loop.beta_of = [](std::uint64_t) { return 0.0; };
  loop.loss_of = [&, batch, dim, dist, times](std::uint64_t it) {
    const std::uint64_t base = it * batch;
    DataBatch db = sample_data(dist, batch, base);
    Tensor x0 = rows_tensor(std::move(db.x), batch, dim);
    Tensor x1 =
        rows_tensor(sample_noise(cfg.seeds.data, batch, dim, base), batch,
                    dim);
    const auto t = times.draw_batch(batch, base);
    Tensor cond;
    const Tensor* cond_ptr = nullptr;
    if (loop.bundle.conditional()) {
      cond = loop.bundle.encode_tokens(db.tokens);
      cond_ptr = &cond;
    }
    return rf_loss(*loop.bundle.model, x0, x1, cond_ptr, t);
  };
  return loop.run(on_divergence);
}

PairSet generate_pairs(const RunConfig& cfg, const ModelBundle& generator,
                       std::size_t count, std::uint64_t pair_seed) {
  cfg.solver.validate();
  if (count == 0) throw ContractError("generate_pairs: count must be >= 1");
  const std::size_t dim = cfg.dataset.dim;
  const bool conditional = generator.conditional();
  const std::size_t seq_len = conditional ? cfg.dataset.seq_len : 0;

  std::vector<double> x0_hat(count * dim, 0.0);
  std::vector<double> x1(count * dim, 0.0);
  std::vector<double> cond(count * seq_len, 0.0);
  std::vector<unsigned char> ok(count, 0);

  auto worker = [&](std::size_t lo, std::size_t hi) {
    NoGradGuard no_grad;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto noise = sample_noise_point(pair_seed, i, dim);
      std::copy(noise.begin(), noise.end(), x1.begin() + i * dim);
      Tensor cond_row;
      const Tensor* cond_ptr = nullptr;
      std::vector<int> tokens;
      if (conditional) {
        tokens = sample_tokens(pair_seed, i, cfg.dataset.vocab,
                               cfg.dataset.seq_len);
        cond_row = generator.encode_tokens({tokens});
        cond_ptr = &cond_row;
        for (std::size_t j = 0; j < seq_len; ++j) {
          cond[i * seq_len + j] = static_cast<double>(tokens[j]);
        }
      }
      try {
        const auto report = solve(*generator.model, noise, cond_ptr,
                                  cfg.solver);
        std::copy(report.endpoint.begin(), report.endpoint.end(),
                  x0_hat.begin() + i * dim);
        ok[i] = 1;
      } catch (const SolverBudgetError&) {
      } catch (const StiffnessError&) {
      }
    }
  };

  const std::size_t threads = std::min(cfg.threads, count);
  if (threads <= 1) {
    worker(0, count);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(count, lo + chunk);
      if (lo < hi) pool.emplace_back(worker, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  PairSet ps;
  ps.dim = dim;
  ps.cond_layout = conditional ? CondLayout::tokens : CondLayout::none;
  ps.cond_len = seq_len;
  ps.fingerprint = generator.fingerprint();
  ps.solver = cfg.solver;
  ps.attempted = count;
  for (std::size_t i = 0; i < count; ++i) {
    if (!ok[i]) {
      ++ps.skipped;
      continue;
    }
    ps.x1.insert(ps.x1.end(), x1.begin() + i * dim, x1.begin() + (i + 1) * dim);
    ps.x0_hat.insert(ps.x0_hat.end(), x0_hat.begin() + i * dim,
                     x0_hat.begin() + (i + 1) * dim);
    if (seq_len > 0) {
      ps.cond.insert(ps.cond.end(), cond.begin() + i * seq_len,
                     cond.begin() + (i + 1) * seq_len);
    }
  }
  ps.count = ps.attempted - ps.skipped;
  if (ps.skipped * 100 > ps.attempted) {
    throw Error("pair generation failed: " + std::to_string(ps.skipped) +
                " of " + std::to_string(ps.attempted) +
                " integrations exceeded the solver budget");
  }
  return ps;
}

namespace {

struct PairBatch {
  Tensor x1;
  Tensor x0_hat;
  Tensor cond;  // encoded; undefined when unconditional
  const Tensor* cond_ptr() const { return cond.defined() ? &cond : nullptr; }
};

PairBatch gather_pair_batch(const PairSet& pairs, const ModelBundle& encoder_src,
                            std::size_t batch, std::uint64_t seed,
                            std::uint64_t base) {
  const std::size_t dim = pairs.dim;
  std::vector<double> x1(batch * dim), x0h(batch * dim);
  std::vector<std::vector<int>> tokens;
  for (std::size_t j = 0; j < batch; ++j) {
    rng::Prng prng(seed, rng::kBatch, base + j);
    const std::size_t idx =
        static_cast<std::size_t>(prng.uniform_index(pairs.count));
    std::copy(pairs.x1.begin() + idx * dim, pairs.x1.begin() + (idx + 1) * dim,
              x1.begin() + j * dim);
    std::copy(pairs.x0_hat.begin() + idx * dim,
              pairs.x0_hat.begin() + (idx + 1) * dim, x0h.begin() + j * dim);
    if (pairs.cond_layout == CondLayout::tokens) {
      tokens.push_back(pairs.tokens_at(idx));
    }
  }
  PairBatch pb{rows_tensor(std::move(x1), batch, dim),
               rows_tensor(std::move(x0h), batch, dim), Tensor{}};
  if (!tokens.empty()) pb.cond = encoder_src.encode_tokens(tokens);
  return pb;
}

void check_pairs_match(const PairSet& pairs, const ModelBundle& generator,
                       const char* stage) {
  if (pairs.count == 0) {
    throw MissingArtifactError(std::string(stage) + ": empty pair set");
  }
  if (pairs.fingerprint != generator.fingerprint()) {
    throw MissingArtifactError(
        std::string(stage) +
        ": pair set fingerprint does not match the generator checkpoint");
  }
}

}  // namespace

StageResult train_anneal_reflow(const RunConfig& cfg, const Checkpoint& teacher,
                                const PairSet& pairs, const Checkpoint* resume,
                                const DivergenceSink& on_divergence) {
  cfg.validate();
  if (teacher.stage != "teacher") {
    throw MissingArtifactError(
        "anneal_reflow needs a teacher checkpoint, got stage '" +
        teacher.stage + "'");
  }
  check_pairs_match(pairs, teacher.bundle, "anneal_reflow");

  ModelBundle bundle;
  if (resume) {
    bundle = resume->bundle.deep_copy();
  } else {
    bundle.model = std::make_shared<VelocityModel>(
        cfg.student_model_config(), cfg.seeds.init ^ 0xA11EA1ull);
    if (teacher.bundle.encoder) {
      bundle.encoder = std::make_shared<ConditionEncoder>(
          clone_encoder(*teacher.bundle.encoder));
    }
  }
  // Other modules come from the teacher and stay frozen.
  if (bundle.encoder) bundle.encoder->set_requires_grad(false);

  TrainLoop loop{cfg,     "anneal_reflow",
                 cfg.anneal, std::move(bundle),
                 {},      {},
                 {},      resume ? resume->iteration : 0,
                 {},      {}};
  loop.named = loop.bundle.model->named_parameters();
  for (auto& [name, t] : loop.named) loop.params.push_back(t);
  loop.opt = AdamState(AdamConfig{cfg.anneal.learning_rate, 0.9, 0.999, 1e-8},
                       loop.params);
  if (resume) restore_adam(loop.opt, *resume, loop.named);

  const std::size_t batch = cfg.anneal.batch_size;
  const std::size_t dim = cfg.dataset.dim;
  const AnnealSchedule sched{cfg.k_a_step};
  TimeSampler times{cfg.seeds.train ^ 0x7e401ull};

  loop.beta_of = [sched](std::uint64_t it) { return sched.beta(it); };
  loop.loss_of = [&, batch, dim, sched, times](std::uint64_t it) {
    const std::uint64_t base = it * batch;
    PairBatch pb = gather_pair_batch(pairs, loop.bundle, batch,
                                     cfg.seeds.train, base);
    Tensor x1_fresh =
        rows_tensor(sample_noise(cfg.seeds.train ^ 0xF4E54ull, batch, dim,
                                 base),
                    batch, dim);
    const auto t = times.draw_batch(batch, base);
    return annealing_reflow_loss(*loop.bundle.model, pb.x1, pb.x0_hat,
                                 pb.cond_ptr(), x1_fresh, it, sched, t);
  };
  return loop.run(on_divergence);
}

StageResult train_distill(const RunConfig& cfg, const Checkpoint& annealed,
                          const PairSet& pairs, bool use_two_step,
                          const Checkpoint* resume,
                          const DivergenceSink& on_divergence) {
  cfg.validate();
  if (annealed.stage != "anneal_reflow") {
    throw MissingArtifactError(
        "distill needs an anneal_reflow checkpoint, got stage '" +
        annealed.stage + "'");
  }
  check_pairs_match(pairs, annealed.bundle, "distill");

  // The annealed student stays frozen: it is both the initialization and
  // the two-step composition target.
  ModelBundle frozen = annealed.bundle.deep_copy();
  frozen.model->set_requires_grad(false);
  if (frozen.encoder) frozen.encoder->set_requires_grad(false);

  ModelBundle bundle =
      resume ? resume->bundle.deep_copy() : annealed.bundle.deep_copy();
  bundle.model->set_requires_grad(true);
  if (bundle.encoder) bundle.encoder->set_requires_grad(false);

  TrainLoop loop{cfg,      "distill",
                 cfg.distill, std::move(bundle),
                 {},       {},
                 {},       resume ? resume->iteration : 0,
                 {},       {}};
  loop.named = loop.bundle.model->named_parameters();
  for (auto& [name, t] : loop.named) loop.params.push_back(t);
  loop.opt = AdamState(AdamConfig{cfg.distill.learning_rate, 0.9, 0.999, 1e-8},
                       loop.params);
  if (resume) restore_adam(loop.opt, *resume, loop.named);

  const std::size_t batch = cfg.distill.batch_size;
  TimeSampler times{cfg.seeds.train ^ 0xD157ull};

  loop.beta_of = [](std::uint64_t) { return 0.0; };
  loop.loss_of = [&, batch, times, use_two_step](std::uint64_t it) {
    const std::uint64_t base = it * batch;
    PairBatch pb = gather_pair_batch(pairs, loop.bundle, batch,
                                     cfg.seeds.train, base);
    const auto t = times.draw_batch(batch, base);
    return fg_distill_loss(*frozen.model, *loop.bundle.model, pb.x1,
                           pb.x0_hat, pb.cond_ptr(), t, use_two_step)
        .total;
  };
  return loop.run(on_divergence);
}

SampleRun sample_model(const ModelBundle& bundle, const SolverConfig& solver,
                       std::size_t n, std::uint64_t seed,
                       std::size_t threads) {
  solver.validate();
  if (n == 0) throw ContractError("sample_model: n must be >= 1");
  const std::size_t dim = bundle.model->config().data_dim;
  const bool conditional = bundle.conditional();

  SampleRun run;
  run.n = n;
  run.dim = dim;
  run.x.assign(n * dim, 0.0);

  std::vector<Tensor> cond_rows(conditional ? n : 0);
  if (conditional) {
    NoGradGuard no_grad;
    const auto& enc_cfg = bundle.encoder->config();
    run.tokens.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      run.tokens[i] =
          sample_tokens(seed, i, enc_cfg.vocab_size, enc_cfg.seq_len);
      cond_rows[i] = bundle.encode_tokens({run.tokens[i]});
    }
  }

  const auto t0 = Clock::now();
  if (solver.kind == SolverKind::euler && !conditional) {
    Tensor x1 = rows_tensor(sample_noise(seed, n, dim), n, dim);
    Tensor out = euler_solve_batch(*bundle.model, x1, nullptr,
                                   solver.euler_steps);
    run.x = out.values();
    run.mean_nfe = static_cast<double>(solver.euler_steps);
  } else {
    std::vector<double> nfe(n, 0.0);
    auto worker = [&](std::size_t lo, std::size_t hi) {
      NoGradGuard no_grad;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto x1 = sample_noise_point(seed, i, dim);
        const Tensor* cond = conditional ? &cond_rows[i] : nullptr;
        const auto report = solve(*bundle.model, x1, cond, solver);
        std::copy(report.endpoint.begin(), report.endpoint.end(),
                  run.x.begin() + i * dim);
        nfe[i] = static_cast<double>(report.nfe);
      }
    };
    const std::size_t t_count = std::min(threads ? threads : 1, n);
    if (t_count <= 1) {
      worker(0, n);
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (n + t_count - 1) / t_count;
      for (std::size_t t = 0; t < t_count; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo < hi) pool.emplace_back(worker, lo, hi);
      }
      for (auto& th : pool) th.join();
    }
    for (double v : nfe) run.mean_nfe += v;
    run.mean_nfe /= static_cast<double>(n);
  }
  run.time_per_sample = seconds_since(t0) / static_cast<double>(n);
  return run;
}

std::string samples_to_csv(const SampleRun& run, std::size_t vocab,
                           std::size_t components) {
  DataBatch batch;
  batch.n = run.n;
  batch.dim = run.dim;
  batch.x = run.x;
  if (!run.tokens.empty()) {
    if (vocab == 0 || components == 0) {
      throw ContractError(
          "samples_to_csv: conditional samples need vocab and components");
    }
    batch.tokens = run.tokens;
    batch.classes.resize(run.n, 0);
    for (std::size_t i = 0; i < run.n; ++i) {
      batch.classes[i] = token_class(run.tokens[i], vocab, components);
    }
  }
  return batch_to_csv(batch);
}

MetricsReport evaluate_model(const RunConfig& cfg, const ModelBundle& bundle,
                             const SolverConfig& solver) {
  const std::size_t n = cfg.metrics.n_samples;
  SampleRun run = sample_model(bundle, solver, n, cfg.seeds.eval, cfg.threads);

  MetricsReport report = evaluate_samples(cfg, run.x, run.n);
  report.mean_nfe = run.mean_nfe;
  report.time_per_sample = run.time_per_sample;

  // Straightness probe on the same noise draw the samples came from.
  const std::size_t probe_n = std::min<std::size_t>(n, 1024);
  Tensor x1 = rows_tensor(sample_noise(cfg.seeds.eval, probe_n, run.dim),
                          probe_n, run.dim);
  Tensor cond;
  const Tensor* cond_ptr = nullptr;
  if (bundle.conditional()) {
    NoGradGuard no_grad;
    std::vector<std::vector<int>> tokens(probe_n);
    for (std::size_t i = 0; i < probe_n; ++i) tokens[i] = run.tokens[i];
    cond = bundle.encode_tokens(tokens);
    cond_ptr = &cond;
  }
  report.straightness = straightness(*bundle.model, x1, cond_ptr,
                                     cfg.metrics.straightness_probe_steps);
  report.config_echo["solver"] = {{"kind", to_string(solver.kind)},
                                  {"euler_steps", solver.euler_steps},
                                  {"rtol", solver.rtol},
                                  {"atol", solver.atol}};
  return report;
}

MetricsReport evaluate_samples(const RunConfig& cfg,
                               const std::vector<double>& x, std::size_t n) {
  const std::size_t dim = cfg.dataset.dim;
  if (x.size() != n * dim) {
    throw ContractError("evaluate_samples: sample dimension does not match "
                        "the reference dataset dimension " +
                        std::to_string(dim));
  }
  Distribution ref_dist = cfg.dataset;
  ref_dist.seed = cfg.seeds.eval;
  DataBatch ref = sample_data(ref_dist, cfg.metrics.n_samples);

  MetricsReport report;
  report.n_samples = n;
  report.frechet_gauss = frechet_gauss_distance(
      x, n, ref.x, ref.n, dim, &report.degenerate_cov);
  report.sliced_w = sliced_wasserstein(x, n, ref.x, ref.n, dim,
                                       cfg.metrics.sw_projections,
                                       cfg.seeds.eval);
  report.config_echo = {{"dataset", cfg.to_json()["dataset"]},
                        {"metrics", cfg.to_json()["metrics"]},
                        {"seeds", cfg.to_json()["seeds"]}};
  return report;
}

}  // namespace rectflow
