#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "rectflow/flow_core.hpp"
#include "rectflow/io_util.hpp"
#include "rectflow/pipeline.hpp"
#include "test_support.hpp"

using namespace rectflow;

namespace {

namespace fs = std::filesystem;

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("rectflow_test_" + name)).string();
}

RunConfig gauss_config() {
  RunConfig cfg;
  cfg.dataset.kind = DistKind::gauss_nd;
  cfg.dataset.dim = 1;
  cfg.dataset.mean = {2.0};
  cfg.dataset.sigma = 1.0;
  cfg.dataset.seed = cfg.seeds.data;
  cfg.teacher_width = 32;
  cfg.student_width = 12;
  cfg.depth = 2;
  cfg.time_embed_dim = 8;
  cfg.teacher = {1200, 128, 2e-3, 100};
  cfg.pair_count = 8192;
  cfg.anneal = {800, 128, 1e-3, 100};
  cfg.k_a_step = 500;
  cfg.distill = {1200, 128, 1e-3, 100};
  cfg.metrics.n_samples = 2048;
  cfg.metrics.sw_projections = 64;
  return cfg;
}

// Shared fixture: the full gauss_nd pipeline, trained once.
struct GaussPipeline {
  RunConfig cfg = gauss_config();
  StageResult teacher;
  PairSet pairs;
  StageResult annealed;
  PairSet pairs2;
  StageResult distilled;
};

const GaussPipeline& gauss_pipeline() {
  static const GaussPipeline p = [] {
    GaussPipeline g;
    g.teacher = train_teacher(g.cfg);
    g.pairs = generate_pairs(g.cfg, g.teacher.checkpoint.bundle,
                             g.cfg.pair_count, g.cfg.seeds.pairs);
    g.annealed =
        train_anneal_reflow(g.cfg, g.teacher.checkpoint, g.pairs);
    RunConfig cfg2 = g.cfg;
    cfg2.pair_count = 4096;
    g.pairs2 = generate_pairs(cfg2, g.annealed.checkpoint.bundle,
                              cfg2.pair_count, cfg2.seeds.pairs + 1);
    g.distilled = train_distill(g.cfg, g.annealed.checkpoint, g.pairs2, true);
    return g;
  }();
  return p;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("zero-iteration teacher returns the initialized checkpoint") {
  RunConfig cfg = gauss_config();
  cfg.teacher.iterations = 0;
  auto result = train_teacher(cfg);
  CHECK(result.log.empty());
  CHECK(result.checkpoint.iteration == 0);
  CHECK(result.checkpoint.stage == "teacher");
  // Fresh model is the zero field.
  auto fresh = make_bundle(cfg.teacher_model_config(), cfg.encoder,
                           cfg.seeds.init);
  CHECK(result.checkpoint.bundle.fingerprint() == fresh.fingerprint());
}

TEST_CASE("teacher training cuts the loss by an order of magnitude") {
  // On a well-separated Gaussian the optimal loss floor sits far below
  // the zero-field start.
  RunConfig cfg = gauss_config();
  cfg.dataset.mean = {3.0};
  cfg.dataset.sigma = 0.5;
  cfg.teacher.iterations = 900;

  // Loss of the untouched zero field on the first batch.
  auto fresh = make_bundle(cfg.teacher_model_config(), cfg.encoder,
                           cfg.seeds.init);
  Distribution dist = cfg.dataset;
  auto db = sample_data(dist, cfg.teacher.batch_size, 0);
  auto x0 = Tensor::from_values({cfg.teacher.batch_size, 1}, db.x);
  auto x1 = Tensor::from_values(
      {cfg.teacher.batch_size, 1},
      sample_noise(cfg.seeds.data, cfg.teacher.batch_size, 1, 0));
  TimeSampler ts{cfg.seeds.train};
  const double initial =
      rf_loss(*fresh.model, x0, x1, nullptr,
              ts.draw_batch(cfg.teacher.batch_size, 0))
          .item();

  auto result = train_teacher(cfg);
  REQUIRE(!result.log.empty());
  CHECK(result.log.back().loss * 10.0 < initial);
}

TEST_CASE("trained teacher approximates the analytic field") {
  const auto& p = gauss_pipeline();
  // Spot MSE over a modest grid around the data support.
  const auto& model = *p.teacher.checkpoint.bundle.model;
  double mse = 0.0;
  std::size_t count = 0;
  for (double t = 0.1; t < 0.95; t += 0.1) {
    for (double x = -1.0; x <= 5.0; x += 0.5) {
      const auto v =
          model.velocity(Tensor::from_values({1, 1}, {x}), {t}, nullptr);
      const auto ref = analytic_velocity_gauss({x}, t, {2.0}, 1.0);
      mse += (v.values()[0] - ref[0]) * (v.values()[0] - ref[0]);
      ++count;
    }
  }
  mse /= static_cast<double>(count);
  INFO("grid mse ", mse);
  CHECK(mse < 0.05);
}

TEST_CASE("generated pairs match the data distribution") {
  const auto& p = gauss_pipeline();
  CHECK(p.pairs.skipped == 0);
  REQUIRE(p.pairs.count == p.cfg.pair_count);

  double mean = 0.0;
  for (std::size_t i = 0; i < p.pairs.count; ++i) mean += p.pairs.x0_hat[i];
  mean /= static_cast<double>(p.pairs.count);
  CHECK(std::abs(mean - 2.0) < 0.1);

  Distribution ref_dist = p.cfg.dataset;
  ref_dist.seed = 999;
  auto ref = sample_data(ref_dist, p.pairs.count);
  const double fd = frechet_gauss_distance(p.pairs.x0_hat, p.pairs.count,
                                           ref.x, ref.n, 1);
  INFO("pair fd ", fd);
  CHECK(fd < 0.05);
}

TEST_CASE("pair generation is deterministic and thread-count invariant") {
  const auto& p = gauss_pipeline();
  RunConfig cfg = p.cfg;
  cfg.pair_count = 512;

  auto a = generate_pairs(cfg, p.teacher.checkpoint.bundle, 512,
                          cfg.seeds.pairs);
  auto b = generate_pairs(cfg, p.teacher.checkpoint.bundle, 512,
                          cfg.seeds.pairs);
  CHECK(a.x1 == b.x1);
  CHECK(a.x0_hat == b.x0_hat);

  cfg.threads = 4;
  auto c = generate_pairs(cfg, p.teacher.checkpoint.bundle, 512,
                          cfg.seeds.pairs);
  CHECK(a.x0_hat == c.x0_hat);

  // Bytes on disk round-trip and stay identical.
  const auto path_a = temp_path("pairs_a.bin");
  const auto path_c = temp_path("pairs_c.bin");
  a.save(path_a);
  c.save(path_c);
  CHECK(io::read_file(path_a) == io::read_file(path_c));

  auto loaded = PairSet::load(path_a);
  CHECK(loaded.x1 == a.x1);
  CHECK(loaded.x0_hat == a.x0_hat);
  CHECK(loaded.fingerprint == a.fingerprint);
  const auto path_a2 = temp_path("pairs_a2.bin");
  loaded.save(path_a2);
  CHECK(io::read_file(path_a) == io::read_file(path_a2));
}

TEST_CASE("pair endpoints are reproducible within twice the tolerance") {
  const auto& p = gauss_pipeline();
  const auto& model = *p.teacher.checkpoint.bundle.model;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::vector<double> x1{p.pairs.x1[i]};
    auto report = solve(model, x1, nullptr, p.pairs.solver);
    const double tol =
        2.0 * (p.pairs.solver.atol +
               p.pairs.solver.rtol * std::abs(p.pairs.x0_hat[i]));
    CHECK(std::abs(report.endpoint[0] - p.pairs.x0_hat[i]) <= tol);
  }
}

TEST_CASE("fingerprint mismatch is refused") {
  const auto& p = gauss_pipeline();
  const auto path = temp_path("pairs_fp.bin");
  PairSet copy = p.pairs;
  copy.fingerprint ^= 0xDEAD;
  copy.save(path);
  CHECK_THROWS_AS((void)PairSet::load_for(
                      path, p.teacher.checkpoint.bundle.fingerprint()),
                  MissingArtifactError);
  CHECK_THROWS_AS(
      (void)train_anneal_reflow(p.cfg, p.teacher.checkpoint, copy),
      MissingArtifactError);
}

TEST_CASE("stage ordering is enforced") {
  const auto& p = gauss_pipeline();
  // Distillation from a teacher checkpoint (wrong stage) is refused.
  CHECK_THROWS_AS(
      (void)train_distill(p.cfg, p.teacher.checkpoint, p.pairs, true),
      MissingArtifactError);
  // Annealing against pairs of the wrong generator is refused.
  CHECK_THROWS_AS(
      (void)train_anneal_reflow(p.cfg, p.teacher.checkpoint, p.pairs2),
      MissingArtifactError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto& p = gauss_pipeline();
  const auto path1 = temp_path("ckpt_1.bin");
  const auto path2 = temp_path("ckpt_2.bin");
  p.teacher.checkpoint.save(path1);
  auto loaded = Checkpoint::load(path1);
  loaded.save(path2);
  CHECK(io::read_file(path1) == io::read_file(path2));

  CHECK(loaded.bundle.fingerprint() ==
        p.teacher.checkpoint.bundle.fingerprint());
  CHECK(loaded.stage == "teacher");
  CHECK(loaded.iteration == p.teacher.checkpoint.iteration);
  CHECK(loaded.adam_step == p.teacher.checkpoint.adam_step);
}

TEST_CASE("resume reproduces the loss sequence exactly") {
  RunConfig cfg = gauss_config();
  cfg.teacher = {60, 16, 1e-3, 10};
  cfg.teacher_width = 8;
  cfg.depth = 1;

  auto full = train_teacher(cfg);

  RunConfig half = cfg;
  half.teacher.iterations = 30;
  auto first = train_teacher(half);
  const auto path = temp_path("resume.bin");
  first.checkpoint.save(path);
  auto restored = Checkpoint::load(path);

  auto second = train_teacher(cfg, &restored);
  REQUIRE(second.log.size() == 3);
  REQUIRE(full.log.size() == 6);
  for (std::size_t i = 0; i < second.log.size(); ++i) {
    const auto& resumed = second.log[i];
    const auto& reference = full.log[i + 3];
    CHECK(resumed.iteration == reference.iteration);
    CHECK(resumed.loss == reference.loss);  // bitwise
  }
  CHECK(second.checkpoint.bundle.fingerprint() ==
        full.checkpoint.bundle.fingerprint());
}

TEST_CASE("annealing with k_a_step = 0 degenerates to pure reflow") {
  const auto& p = gauss_pipeline();
  RunConfig cfg = p.cfg;
  cfg.k_a_step = 0;
  cfg.anneal.iterations = 20;
  cfg.anneal.log_interval = 5;
  auto result = train_anneal_reflow(cfg, p.teacher.checkpoint, p.pairs);
  for (const auto& row : result.log) CHECK(row.beta == 0.0);
}

TEST_CASE("zero-iteration distillation is the annealed model") {
  const auto& p = gauss_pipeline();
  RunConfig cfg = p.cfg;
  cfg.distill.iterations = 0;
  auto result = train_distill(cfg, p.annealed.checkpoint, p.pairs2, true);
  CHECK(result.checkpoint.bundle.fingerprint() ==
        p.annealed.checkpoint.bundle.fingerprint());
}

TEST_CASE("distillation slashes the one-step loss") {
  const auto& p = gauss_pipeline();
  const std::size_t n = std::min<std::size_t>(p.pairs2.count, 2048);
  auto x1 = Tensor::from_values({n, 1},
                                {p.pairs2.x1.begin(), p.pairs2.x1.begin() + n});
  auto x0h = Tensor::from_values(
      {n, 1}, {p.pairs2.x0_hat.begin(), p.pairs2.x0_hat.begin() + n});
  const double before =
      distill_loss(*p.annealed.checkpoint.bundle.model, x1, x0h, nullptr)
          .item();
  const double after =
      distill_loss(*p.distilled.checkpoint.bundle.model, x1, x0h, nullptr)
          .item();
  INFO("distill loss ", before, " -> ", after);
  CHECK(after < 0.10 * before);
}

TEST_CASE("the annealed student is straighter than the teacher") {
  const auto& p = gauss_pipeline();
  auto x1 = Tensor::from_values(
      {256, 1}, sample_noise(p.cfg.seeds.eval, 256, 1));
  const double s_teacher =
      straightness(*p.teacher.checkpoint.bundle.model, x1, nullptr, 64);
  const double s_student =
      straightness(*p.annealed.checkpoint.bundle.model, x1, nullptr, 64);
  INFO("straightness teacher ", s_teacher, " student ", s_student);
  CHECK(s_student < s_teacher);
}

TEST_CASE("conditional pipeline freezes the encoder bitwise") {
  RunConfig cfg;
  cfg.dataset.kind = DistKind::cond_seq;
  cfg.dataset.dim = 2;
  cfg.dataset.sigma = 0.2;
  cfg.dataset.radius = 4.0;
  cfg.dataset.components = 8;
  cfg.dataset.vocab = 4;
  cfg.dataset.seq_len = 2;
  cfg.dataset.seed = cfg.seeds.data;
  cfg.encoder = ConditionEncoderConfig{4, 2, 4, 6, 1, 3, 4};
  cfg.teacher_width = 12;
  cfg.student_width = 8;
  cfg.depth = 1;
  cfg.time_embed_dim = 4;
  cfg.teacher = {60, 32, 1e-3, 20};
  cfg.pair_count = 256;
  cfg.anneal = {60, 32, 1e-3, 20};
  cfg.k_a_step = 30;
  cfg.distill = {30, 32, 1e-3, 10};
  cfg.metrics.n_samples = 256;
  cfg.metrics.sw_projections = 32;

  auto teacher = train_teacher(cfg);
  auto pairs = generate_pairs(cfg, teacher.checkpoint.bundle, cfg.pair_count,
                              cfg.seeds.pairs);
  CHECK(pairs.cond_layout == CondLayout::tokens);
  auto annealed = train_anneal_reflow(cfg, teacher.checkpoint, pairs);

  const auto enc_before = teacher.checkpoint.bundle.encoder->named_parameters();
  const auto enc_after = annealed.checkpoint.bundle.encoder->named_parameters();
  REQUIRE(enc_before.size() == enc_after.size());
  for (std::size_t i = 0; i < enc_before.size(); ++i) {
    CHECK(enc_before[i].second.values() == enc_after[i].second.values());
  }

  // Distillation keeps it frozen too, and the conditional sampling path
  // produces conditioned outputs end to end.
  auto pairs2 = generate_pairs(cfg, annealed.checkpoint.bundle, 256,
                               cfg.seeds.pairs + 1);
  auto distilled = train_distill(cfg, annealed.checkpoint, pairs2, true);
  const auto enc_final =
      distilled.checkpoint.bundle.encoder->named_parameters();
  for (std::size_t i = 0; i < enc_before.size(); ++i) {
    CHECK(enc_before[i].second.values() == enc_final[i].second.values());
  }

  SolverConfig one_step;
  one_step.kind = SolverKind::euler;
  one_step.euler_steps = 1;
  auto run = sample_model(distilled.checkpoint.bundle, one_step, 64,
                          cfg.seeds.eval);
  CHECK(run.tokens.size() == 64);
  CHECK(run.mean_nfe == 1.0);
}

TEST_CASE("model evaluation produces a complete report") {
  const auto& p = gauss_pipeline();
  SolverConfig euler4;
  euler4.kind = SolverKind::euler;
  euler4.euler_steps = 4;
  auto report =
      evaluate_model(p.cfg, p.distilled.checkpoint.bundle, euler4);
  CHECK(report.n_samples == p.cfg.metrics.n_samples);
  CHECK(report.mean_nfe == 4.0);
  CHECK(report.has_straightness());
  CHECK(report.frechet_gauss >= 0.0);
  CHECK(report.sliced_w >= 0.0);
  CHECK(report.deterministic_json().contains("fd_analog"));
}

TEST_CASE("divergence aborts with the last checkpoint") {
  RunConfig cfg = gauss_config();
  cfg.teacher = {50, 16, 1e18, 10};  // absurd rate forces non-finite loss
  cfg.teacher_width = 8;
  cfg.depth = 1;
  bool sank = false;
  CHECK_THROWS_AS(
      (void)train_teacher(cfg, nullptr,
                          [&](const Checkpoint& last) {
                            sank = true;
                            CHECK(last.stage == "teacher");
                          }),
      TrainingDiverged);
  CHECK(sank);
}

}  // TEST_SUITE
