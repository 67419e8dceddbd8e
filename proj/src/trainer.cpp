#include "archopt/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <ostream>

namespace archopt {
namespace {

namespace fs = std::filesystem;

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

TrainingState fresh_state(const TrainConfig& cfg) {
  TrainingState st;
  st.data_rng = make_rng(cfg.data.seed, Stream::training);
  st.scores.rng = make_rng(cfg.model.seed, Stream::scores);
  st.surgery_rng = make_rng(cfg.model.seed, Stream::surgery);
  return st;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::invalid_input, "cannot write " + path.string());
  return out;
}

}  // namespace

Trainer::Trainer(const TrainConfig& config)
    : config_(config),
      task_((config.validate(), config.data)),
      model_(build_model<float>(config.model)),
      state_(fresh_state(config)),
      events_(event_steps(config.plan, config.total_steps)) {}

Trainer::Trainer(Checkpoint checkpoint)
    : config_(std::move(checkpoint.config)),
      task_(config_.data),
      model_(std::move(checkpoint.model)),
      state_(std::move(checkpoint.state)),
      events_(event_steps(config_.plan, config_.total_steps)) {}

StepRecord Trainer::step() {
  if (done()) throw Error(ErrorKind::invalid_state, "training already reached step " + std::to_string(state_.step));
  const long s = state_.step + 1;
  const auto batch = task_.batch(config_.batch_size, state_.data_rng);
  const ScaleMode mode = apply_learnable_scales(state_.scores, config_.score);

  zero_grads(model_);
  Tape<float> tape;
  ForwardContext<float> ctx(tape, mode == ScaleMode::scaled);
  Var<float> total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var<float> loss = ctc_loss(encode(ctx, model_, tape.constant(batch[i].features)), batch[i].labels);
    total = i == 0 ? loss : add(total, loss);
  }
  Var<float> mean = scale(total, 1.0f / static_cast<float>(batch.size()));
  tape.backward(mean);

  // Event steps always rank on scores that include this step's gradients.
  const bool event = std::find(events_.begin(), events_.end(), s) != events_.end();
  if (state_.scores.tick(config_.score) || event) update_scores(model_, config_.score);
  const double lr = one_cycle_lr(s, config_.schedule());
  adam_step(model_, state_.adam, config_.adam, lr);
  state_.step = s;

  StepRecord rec{s, static_cast<double>(mean.value()(0, 0)), lr, false};
  if (event) {
    surgeries_.push_back(
        apply_adaptation(model_, config_.plan, config_.score.metric, s, config_.total_steps, state_.surgery_rng));
    rec.event = true;
  }
  return rec;
}

double evaluate(const PartitionedEncoder<float>& model, int n, const DataConfig& data) {
  if (n < 1) throw Error(ErrorKind::invalid_input, "evaluation needs at least one sequence");
  PartitionedEncoder<float> m = model;
  SyntheticTask task(data);
  auto rng = make_rng(data.seed, Stream::evaluation);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const Utterance u = task.sample(rng);
    total += label_error_rate(greedy_decode(forward(m, u.features)), u.labels);
  }
  return total / n;
}

EncoderGradCheck check_encoder_gradients(const TrainConfig& config, int probe_count, double h, double tol) {
  if (probe_count < 1) throw Error(ErrorKind::invalid_config, "probe_count must be >= 1");
  config.validate();
  auto model = build_model<double>(config.model);
  SyntheticTask task(config.data);
  auto rng = make_rng(config.data.seed, Stream::training);
  const Utterance u = task.sample(rng);
  const Mat<double> features = u.features.cast<double>();
  const bool scaled = config.score.metric == Metric::learnable;

  EncoderGradCheck out;
  std::vector<Tensor<double>*> params;
  model.visit_parameters([&](const std::string& name, Parameter<double>& p) {
    if (!scaled && name.ends_with("/scale")) return;
    out.names.push_back(name);
    params.push_back(&p.value);
  });
  auto pick = make_rng(config.model.seed, Stream::scores);
  for (int i = 0; i < probe_count; ++i) {
    const std::size_t pi = static_cast<std::size_t>(i) * params.size() / static_cast<std::size_t>(probe_count);
    std::uniform_int_distribution<Index> element(0, params[pi]->size() - 1);
    out.probes.emplace_back(pi, element(pick));
  }
  const std::function<Var<double>(Tape<double>&)> loss = [&](Tape<double>& tape) {
    ForwardContext<double> ctx(tape, scaled);
    return ctc_loss(encode(ctx, model, tape.constant(features)), u.labels);
  };
  out.report = finite_diff_check<double>(loss, params, out.probes, h, tol);
  return out;
}

void write_loss_csv(std::ostream& os, const std::vector<StepRecord>& log) {
  os << "step,loss,lr,event_flag\n";
  for (const auto& r : log) os << r.step << ',' << shortest(r.loss) << ',' << shortest(r.lr) << ',' << r.event << '\n';
}

RunResult run_training(const TrainConfig& config, const RunOptions& options) {
  std::optional<Trainer> trainer;
  if (options.resume) {
    Checkpoint ck = load_checkpoint(*options.resume);
    ck.config.out_dir = config.out_dir;
    trainer.emplace(std::move(ck));
  } else {
    trainer.emplace(config);
  }
  const TrainConfig& cfg = trainer->config();
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  {
    auto f = open_out(out / "config.ini");
    write_config(f, cfg);
  }

  const ModuleParams at_build = module_params(build_model<float>(cfg.model));
  fs::path last_good = out / "initial";
  if (!options.resume) trainer->save(last_good);
  else last_good = *options.resume;

  RunResult result;
  auto surgery_log = open_out(out / "surgery.log");
  while (!trainer->done()) {
    StepRecord rec;
    try {
      rec = trainer->step();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numerical_error) throw;
      throw Error(ErrorKind::numerical_error, "step " + std::to_string(trainer->state().step + 1) + ": " + e.what() +
                                                  "; last good checkpoint: " + last_good.string());
    }
    result.log.push_back(rec);
    if (rec.event) surgery_log << trainer->surgeries().back() << '\n';
    if (cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0 && !trainer->done()) {
      last_good = out / ("step_" + std::to_string(rec.step));
      trainer->save(last_good);
    }
    if (options.progress && rec.step % options.progress_every == 0)
      *options.progress << "step " << rec.step << " loss " << rec.loss << " lr " << rec.lr << '\n';
  }
  trainer->save(out / "final");

  {
    auto f = open_out(out / "loss.csv");
    write_loss_csv(f, result.log);
  }
  {
    auto f = open_out(out / "scores.tsv");
    f << "group\tparams\tscore\n";
    write_score_table(f, trainer->model(), cfg.score.metric);
  }
  result.distribution = report_distribution(at_build, module_params(trainer->model()));
  {
    auto f = open_out(out / "distribution.tsv");
    result.distribution.write_tsv(f);
  }
  result.eval_ler = evaluate(trainer->model(), cfg.eval_sequences, cfg.data);
  {
    auto f = open_out(out / "eval.txt");
    f << "sequences " << cfg.eval_sequences << "\nlabel_error_rate " << shortest(result.eval_ler) << '\n';
  }
  result.surgeries = trainer->surgeries();
  result.model = trainer->model();
  return result;
}

}  // namespace archopt
