#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "archopt/trainer.hpp"

using namespace archopt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("archopt_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

// The output directory is the one config field allowed to differ between runs.
std::string without_out_dir(const std::string& manifest) {
  std::istringstream in(manifest);
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind("config.train.out_dir", 0) != 0) out += line + '\n';
  return out;
}

TrainConfig quick_config(long steps = 40) {
  TrainConfig c;
  c.model.d_model = 16;
  c.model.layers = 1;
  c.model.kernel = 3;
  c.model.vocab = 5;
  c.model.features = 8;
  c.data.vocab = 5;
  c.data.feature_dim = 8;
  c.data.min_len = 2;
  c.data.max_len = 4;
  c.batch_size = 2;
  c.total_steps = steps;
  c.score.update_interval = 5;
  c.plan.t_end_fraction = 0.5;
  c.eval_sequences = 10;
  return c;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::invalid_state;
}

}  // namespace

TEST_CASE("one-cycle schedule") {
  const OneCycle s{3000, 4e-6, 4e-4, 1e-7};
  CHECK(one_cycle_lr(0, s) == 4e-6);
  CHECK(one_cycle_lr(1350, s) == 4e-4);
  CHECK(one_cycle_lr(2700, s) == 4e-6);
  CHECK(one_cycle_lr(3000, s) == 1e-7);
  CHECK(one_cycle_lr(675, s) == doctest::Approx((4e-6 + 4e-4) / 2).epsilon(1e-12));
  CHECK(one_cycle_lr(2850, s) == doctest::Approx((4e-6 + 1e-7) / 2).epsilon(1e-12));
  double prev = 0.0;
  for (long t = 0; t <= 1350; ++t) {
    CHECK(one_cycle_lr(t, s) >= prev);
    prev = one_cycle_lr(t, s);
  }
  CHECK(kind_of([&] { one_cycle_lr(3001, s); }) == ErrorKind::invalid_state);
  CHECK(kind_of([&] { one_cycle_lr(-1, s); }) == ErrorKind::invalid_state);
}

TEST_CASE("Adam") {
  AdamConfig cfg;
  SUBCASE("first step with a constant gradient moves by about lr") {
    Parameter<double> p(alloc<double>({1}, init::Constant{1.0}));
    p.value.ensure_grad().setConstant(0.5);
    adam_update(p, cfg, 1, 0.1);
    CHECK(std::abs(p.value.matrix()(0, 0) - 0.9) < 1e-8);
    CHECK(std::abs(p.first_moment(0, 0) - 0.05) < 1e-15);
    CHECK(std::abs(p.second_moment(0, 0) - 0.005) < 1e-15);
  }
  SUBCASE("zero gradient leaves the weight unchanged") {
    Parameter<double> p(alloc<double>({3}, init::Constant{2.0}));
    p.value.ensure_grad().setZero();
    adam_update(p, cfg, 1, 0.1);
    CHECK(p.value.matrix() == Mat<double>::Constant(1, 3, 2.0));
  }
  SUBCASE("no gradient skips the parameter") {
    Parameter<double> p(alloc<double>({3}, init::Constant{2.0}));
    p.first_moment.setConstant(1.0);
    adam_update(p, cfg, 5, 0.1);
    CHECK(p.value.matrix() == Mat<double>::Constant(1, 3, 2.0));
    CHECK(p.first_moment(0, 0) == 1.0);
  }
  SUBCASE("moments of the wrong shape are a bookkeeping error") {
    Parameter<double> p(alloc<double>({3}, init::Constant{2.0}));
    p.value.ensure_grad().setOnes();
    p.first_moment = Mat<double>::Zero(1, 2);
    CHECK(kind_of([&] { adam_update(p, cfg, 1, 0.1); }) == ErrorKind::invalid_state);
  }
}

TEST_CASE("synthetic data") {
  DataConfig cfg;
  SyntheticTask task(cfg);
  auto r1 = make_rng(cfg.seed, Stream::training), r2 = make_rng(cfg.seed, Stream::training);
  const auto b1 = task.batch(16, r1), b2 = task.batch(16, r2);
  std::map<int, int> counts;
  for (std::size_t i = 0; i < b1.size(); ++i) {
    CHECK(b1[i].labels == b2[i].labels);
    CHECK(b1[i].features == b2[i].features);
    const auto n = static_cast<Index>(b1[i].labels.size());
    CHECK(n >= cfg.min_len);
    CHECK(n <= cfg.max_len);
    CHECK(b1[i].features.rows() == n * cfg.frames_per_symbol);
    CHECK(b1[i].features.cols() == cfg.feature_dim);
    for (std::size_t j = 0; j < b1[i].labels.size(); ++j) {
      CHECK(b1[i].labels[j] >= 1);
      CHECK(b1[i].labels[j] <= cfg.vocab);
      if (j > 0) CHECK(b1[i].labels[j] != b1[i].labels[j - 1]);
    }
  }
  auto rng = make_rng(1, Stream::training);
  for (int i = 0; i < 2000; ++i)
    for (int l : task.sample(rng).labels) ++counts[l];
  CHECK(counts.size() == static_cast<std::size_t>(cfg.vocab));
  int lo = 1 << 30, hi = 0;
  for (auto [k, c] : counts) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  CHECK(hi < 1.25 * lo);

  auto a = make_rng(3, Stream::evaluation), b = make_rng(3, Stream::evaluation);
  CHECK(task.render({1, 2, 1}, a).features == task.render({1, 2, 1}, b).features);
  CHECK(make_rng(3, Stream::evaluation)() != make_rng(3, Stream::training)());

  DataConfig noisy = cfg;
  noisy.noise_std = 0.5;
  SyntheticTask nt(noisy);
  auto c = make_rng(4, Stream::training);
  const auto u = nt.render({2, 3}, c);
  CHECK((u.features.row(0) - task.embeddings().row(2)).norm() > 0.1f);

  DataConfig bad = cfg;
  bad.frames_per_symbol = 3;
  CHECK(kind_of([&] { SyntheticTask t(bad); }) == ErrorKind::invalid_config);
  bad = cfg;
  bad.vocab = 1;
  CHECK(kind_of([&] { SyntheticTask t(bad); }) == ErrorKind::invalid_config);
}

TEST_CASE("config files") {
  const std::string text =
      "[model]\narchitecture = ebranchformer_lite\nd_model = 32\nvocab = 6\n"
      "[score]\nmetric = learnable\n"
      "[plan]\ndelta = 0.25\niterations = 2\ninit = copy_noise\n"
      "[train]\ntotal_steps = 500\nlr_peak = 1e-3\nout_dir = somewhere\n"
      "[data]\nvocab = 6\nseq_len_range = 2,5\nframes_per_symbol = 6\n";
  std::istringstream in(text);
  const TrainConfig cfg = parse_config(in);
  CHECK(cfg.model.architecture == Architecture::ebranchformer_lite);
  CHECK(cfg.model.d_model == 32);
  CHECK(cfg.score.metric == Metric::learnable);
  CHECK(cfg.plan.delta == 0.25);
  CHECK(cfg.plan.iterations == 2);
  CHECK(cfg.plan.init == InitStrategy::copy_noise);
  CHECK(cfg.total_steps == 500);
  CHECK(cfg.lr_peak == 1e-3);
  CHECK(cfg.lr_start == 4e-6);
  CHECK(cfg.out_dir == "somewhere");
  CHECK(cfg.data.min_len == 2);
  CHECK(cfg.data.max_len == 5);
  CHECK(cfg.data.frames_per_symbol == 6);

  std::ostringstream once;
  write_config(once, cfg);
  std::istringstream back(once.str());
  std::ostringstream twice;
  write_config(twice, parse_config(back));
  CHECK(once.str() == twice.str());

  auto rejects = [](const std::string& t) {
    std::istringstream s(t);
    try {
      parse_config(s);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::invalid_config;
    }
    return false;
  };
  CHECK(rejects("[model]\nwidth = 3\n"));
  CHECK(rejects("d_model = 3\n"));
  CHECK(rejects("[model]\nd_model = many\n"));
  CHECK(rejects("[model]\nvocab = 5\n"));  // disagrees with data.vocab
  CHECK(rejects("[train]\nlr_start = 1e-3\n"));
  CHECK(rejects("[plan]\nt_end_fraction = 1.0\n"));
  CHECK(rejects("[plan]\ndelta = 0.6\n"));
  CHECK(rejects("[model]\nd_ff = 10\n"));
  CHECK(rejects("[data]\nframes_per_symbol = 2\n"));
  CHECK(rejects("[data]\nseq_len_range = 4\n"));

  const TrainConfig desk = load_config(fs::path(ARCHOPT_SOURCE_DIR) / "configs" / "desk.ini");
  CHECK(desk.total_steps == 3000);
  CHECK(event_steps(desk.plan, desk.total_steps) == std::vector<long>{600});
  CHECK(kind_of([] { load_config("/nonexistent/config.ini"); }) == ErrorKind::invalid_config);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = scratch("roundtrip");
  TrainConfig cfg = quick_config();
  cfg.model.architecture = Architecture::ebranchformer_lite;
  Trainer trainer(cfg);
  for (int i = 0; i < 25; ++i) trainer.step();  // past the surgery event
  CHECK(trainer.surgeries().size() == 1);
  trainer.save(dir);

  const Checkpoint ck = load_checkpoint(dir);
  CHECK(ck.state.step == 25);
  CHECK(ck.state.adam.step == trainer.state().adam.step);
  CHECK(ck.state.scores.steps_since_update == trainer.state().scores.steps_since_update);
  CHECK(ck.state.data_rng == trainer.state().data_rng);
  CHECK(ck.state.surgery_rng == trainer.state().surgery_rng);
  CHECK(ck.state.scores.rng == trainer.state().scores.rng);
  const auto before = enumerate_groups(trainer.model());
  const auto after = enumerate_groups(ck.model);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i].id == after[i].id);
    CHECK(before[i].score == after[i].score);
  }

  auto original = trainer.model();
  auto restored = ck.model;
  const Mat<float> x = alloc<float>({24, 8}, init::Normal{0, 1, 77}).matrix();
  CHECK(forward(original, x) == forward(restored, x));
  original.visit_parameters([&](const std::string& name, const Parameter<float>& p) {
    bool found = false;
    restored.visit_parameters([&](const std::string& n2, const Parameter<float>& q) {
      if (n2 != name) return;
      found = true;
      CHECK(p.value.matrix() == q.value.matrix());
      CHECK(p.first_moment == q.first_moment);
      CHECK(p.second_moment == q.second_moment);
    });
    CHECK(found);
  });

  const CheckpointManifest m = read_manifest(dir);
  CHECK(m.version == kCheckpointVersion);
  CHECK(m.model.architecture == Architecture::ebranchformer_lite);
  CHECK(m.entries.front().name == "frontend");
  CHECK(m.entries.front().shape == Shape{32, 16});
  Index floats = 0;
  for (const auto& e : m.entries) {
    Index n = 1;
    for (Index d : e.shape) n *= d;
    floats += n;
  }
  CHECK(static_cast<Index>(fs::file_size(dir / "weights.bin")) == 3 * 4 * floats);

  // saving the restored model reproduces both files byte for byte
  const fs::path again = scratch("roundtrip_again");
  save_checkpoint(again, ck.model, ck.state, ck.config);
  CHECK(slurp(dir / "manifest.txt") == slurp(again / "manifest.txt"));
  CHECK(slurp(dir / "weights.bin") == slurp(again / "weights.bin"));
}

TEST_CASE("damaged checkpoints") {
  const fs::path dir = scratch("damaged");
  Trainer trainer(quick_config());
  trainer.step();
  trainer.save(dir);
  const std::string weights = slurp(dir / "weights.bin");
  const std::string manifest = slurp(dir / "manifest.txt");
  auto restore = [&] {
    spit(dir / "weights.bin", weights);
    spit(dir / "manifest.txt", manifest);
  };
  auto corrupt = [&] { return kind_of([&] { load_checkpoint(dir); }) == ErrorKind::corrupt_checkpoint; };

  std::string flipped = weights;
  flipped[weights.size() / 2] ^= 0x40;
  spit(dir / "weights.bin", flipped);
  CHECK(corrupt());
  restore();

  spit(dir / "weights.bin", weights.substr(0, weights.size() - 4));
  CHECK(corrupt());
  restore();

  spit(dir / "weights.bin", weights + "xxxx");
  CHECK(corrupt());
  restore();

  std::string v2 = manifest;
  v2.replace(v2.find("version = 1"), 11, "version = 2");
  spit(dir / "manifest.txt", v2);
  CHECK(corrupt());
  restore();

  std::string renamed = manifest;
  renamed.replace(renamed.find("/w_in "), 6, "/w_up ");
  spit(dir / "manifest.txt", renamed);
  CHECK(corrupt());
  restore();

  std::string garbage = manifest;
  garbage.replace(0, 6, "shape ");
  spit(dir / "manifest.txt", garbage);
  CHECK(corrupt());
  restore();

  fs::remove(dir / "weights.bin");
  CHECK(corrupt());
  restore();
  CHECK_NOTHROW(load_checkpoint(dir));
  CHECK(kind_of([] { load_checkpoint("/nonexistent/checkpoint"); }) == ErrorKind::corrupt_checkpoint);
}

TEST_CASE("resumed training follows the same trajectory") {
  for (Metric metric : {Metric::taylor, Metric::learnable}) {
    TrainConfig cfg = quick_config(40);
    cfg.score.metric = metric;
    const fs::path dir = scratch("resume");
    Trainer full(cfg);
    std::vector<StepRecord> reference;
    while (!full.done()) {
      reference.push_back(full.step());
      if (reference.back().step == 12) full.save(dir);
    }
    Trainer resumed(load_checkpoint(dir));
    std::vector<StepRecord> tail;
    while (!resumed.done()) tail.push_back(resumed.step());
    REQUIRE(tail.size() == 28);
    CAPTURE(to_string(metric));
    for (std::size_t i = 0; i < tail.size(); ++i) {
      CHECK(tail[i].step == reference[12 + i].step);
      CHECK(tail[i].loss == reference[12 + i].loss);
      CHECK(tail[i].event == reference[12 + i].event);
    }
    CHECK(resumed.surgeries().size() == 1);  // the event at step 20 happens after the resume point
    auto a = full.model();
    auto b = resumed.model();
    const Mat<float> x = alloc<float>({16, 8}, init::Normal{0, 1, 3}).matrix();
    CHECK(forward(a, x) == forward(b, x));
  }
}

TEST_CASE("training runs are reproducible and write every artifact") {
  TrainConfig cfg = quick_config(30);
  cfg.checkpoint_every = 10;
  cfg.out_dir = scratch("run_a").string();
  const RunResult a = run_training(cfg);
  cfg.out_dir = scratch("run_b").string();
  const RunResult b = run_training(cfg);
  const fs::path da = fs::temp_directory_path() / "archopt_test_run_a";
  const fs::path db = fs::temp_directory_path() / "archopt_test_run_b";

  for (const char* f : {"config.ini", "loss.csv", "surgery.log", "scores.tsv", "distribution.tsv", "eval.txt",
                        "initial/manifest.txt", "step_10/weights.bin", "step_20/manifest.txt",
                        "final/manifest.txt", "final/weights.bin"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(da / f));
    if (std::string(f).find("manifest") != std::string::npos)
      CHECK(without_out_dir(slurp(da / f)) == without_out_dir(slurp(db / f)));
    else if (std::string(f) != "config.ini")
      CHECK(slurp(da / f) == slurp(db / f));
  }
  CHECK_FALSE(fs::exists(da / "step_30"));

  std::istringstream log(slurp(da / "loss.csv"));
  std::string line;
  std::getline(log, line);
  CHECK(line == "step,loss,lr,event_flag");
  int rows = 0, events = 0;
  while (std::getline(log, line)) {
    ++rows;
    if (line.back() == '1') {
      ++events;
      CHECK(line.rfind("15,", 0) == 0);
    }
  }
  CHECK(rows == 30);
  CHECK(events == 1);
  CHECK(slurp(da / "surgery.log").rfind("event step=15 ", 0) == 0);
  CHECK(slurp(da / "distribution.tsv").rfind("layer\tmodule_kind\tratio\n", 0) == 0);
  CHECK(a.surgeries.size() == 1);
  CHECK(a.log.size() == 30);

  // resume through the CLI path continues the same run
  TrainConfig rc = cfg;
  rc.out_dir = scratch("run_resumed").string();
  RunOptions opts;
  opts.resume = da / "step_20";
  const RunResult r = run_training(rc, opts);
  REQUIRE(r.log.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(r.log[i].loss == a.log[20 + i].loss);
  CHECK(slurp(fs::path(rc.out_dir) / "final/weights.bin") == slurp(da / "final/weights.bin"));
}

TEST_CASE("a zero budget is the baseline") {
  TrainConfig cfg = quick_config(30);
  cfg.plan.delta = 0.0;
  cfg.out_dir = scratch("zero_budget").string();
  const RunResult run = run_training(cfg);
  CHECK(run.surgeries.empty());
  CHECK(slurp(fs::path(cfg.out_dir) / "surgery.log").empty());
  for (const auto& row : run.distribution.rows) CHECK(row.ratio == 1.0);

  // the same optimisation written out by hand, with no scoring or surgery at all
  auto model = build_model<float>(cfg.model);
  SyntheticTask task(cfg.data);
  auto rng = make_rng(cfg.data.seed, Stream::training);
  AdamState adam;
  for (long s = 1; s <= cfg.total_steps; ++s) {
    const auto batch = task.batch(cfg.batch_size, rng);
    zero_grads(model);
    Tape<float> tape;
    ForwardContext<float> ctx(tape);
    Var<float> total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto l = ctc_loss(encode(ctx, model, tape.constant(batch[i].features)), batch[i].labels);
      total = i == 0 ? l : add(total, l);
    }
    auto mean = scale(total, 1.0f / static_cast<float>(batch.size()));
    tape.backward(mean);
    adam_step(model, adam, cfg.adam, one_cycle_lr(s, cfg.schedule()));
    CHECK(static_cast<double>(mean.value()(0, 0)) == run.log[s - 1].loss);
  }
  const Mat<float> x = alloc<float>({16, 8}, init::Normal{0, 1, 3}).matrix();
  auto trained = run.model;
  CHECK(forward(model, x) == forward(trained, x));
}

TEST_CASE("distribution report") {
  ModelConfig cfg;
  auto base = build_model<float>(cfg);
  const auto same = report_distribution(module_params(base), module_params(base));
  CHECK(same.rows.size() == 8);
  for (const auto& r : same.rows) CHECK(r.ratio == 1.0);

  auto changed = base;
  drop_group(changed, {0, ModuleKind::ffn1, 3, 0});
  std::mt19937_64 rng(1);
  grow_group(changed, {1, ModuleKind::mhsa, 0, 0}, InitStrategy::copy, rng);
  while (!changed.module(1, ModuleKind::conv).groups.empty()) drop_group(changed, {1, ModuleKind::conv, 0, 0});
  const auto rep = report_distribution(module_params(base), module_params(changed));
  CHECK(rep.ratio(0, ModuleKind::ffn1) == 0.75);
  CHECK(rep.ratio(1, ModuleKind::mhsa) == 2.0);
  CHECK(rep.ratio(1, ModuleKind::conv) == 0.0);
  CHECK(rep.ratio(0, ModuleKind::mhsa) == 1.0);
  std::ostringstream os;
  rep.write_tsv(os);
  CHECK(os.str().rfind("layer\tmodule_kind\tratio\n0\tFFN1\t0.75\n0\tMHSA\t1\n", 0) == 0);

  // the same numbers from checkpoint manifests
  const fs::path a = scratch("dist_a"), b = scratch("dist_b");
  TrainConfig tc;
  save_checkpoint(a, base, TrainingState{}, tc);
  save_checkpoint(b, changed, TrainingState{}, tc);
  const auto from_disk = report_distribution(read_manifest(a), read_manifest(b));
  CHECK(from_disk.ratio(0, ModuleKind::ffn1) == 0.75);
  CHECK(from_disk.ratio(1, ModuleKind::mhsa) == 2.0);
  CHECK(from_disk.ratio(1, ModuleKind::conv) == 0.0);

  TrainConfig other = tc;
  other.model.architecture = Architecture::ebranchformer_lite;
  const fs::path c = scratch("dist_c");
  save_checkpoint(c, build_model<float>(other.model), TrainingState{}, other);
  CHECK(kind_of([&] { report_distribution(read_manifest(a), read_manifest(c)); }) == ErrorKind::invalid_input);
}

TEST_CASE("evaluation") {
  TrainConfig cfg;
  auto untrained = build_model<float>(cfg.model);
  const double ler = evaluate(untrained, 50, cfg.data);
  CHECK(ler > 0.8);
  CHECK(evaluate(untrained, 50, cfg.data) == ler);
  CHECK(kind_of([&] { evaluate(untrained, 0, cfg.data); }) == ErrorKind::invalid_input);

  // a short noise-free run memorises the task
  TrainConfig quick = cfg;
  quick.total_steps = 200;
  Trainer t(quick);
  while (!t.done()) t.step();
  CHECK(evaluate(t.model(), 50, cfg.data) == 0.0);
}

TEST_CASE("divergence aborts with the step and the last good checkpoint") {
  TrainConfig cfg = quick_config(20);
  cfg.lr_start = 1e29;
  cfg.lr_peak = 1e30;
  cfg.lr_final = 1e28;
  cfg.out_dir = scratch("diverge").string();
  try {
    run_training(cfg);
    FAIL("expected NumericalError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numerical_error);
    const std::string msg = e.what();
    CHECK(msg.find("step ") != std::string::npos);
    CHECK(msg.find("last good checkpoint: " + (fs::path(cfg.out_dir) / "initial").string()) != std::string::npos);
  }
}

TEST_CASE("end-to-end gradient check") {
  TrainConfig cfg = quick_config();
  for (Metric metric : {Metric::taylor, Metric::learnable}) {
    cfg.score.metric = metric;
    const auto check = check_encoder_gradients(cfg, 10);
    CHECK(check.report.checked == 10);
    CHECK(check.report.max_rel_error < 1e-4);
  }
}
