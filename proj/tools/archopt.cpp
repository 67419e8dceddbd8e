#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "archopt/trainer.hpp"

namespace {

using namespace archopt;

archopt::LabelSeq parse_labels(const std::string& text) {
  LabelSeq labels;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item.size() == 1 && item[0] >= 'a' && item[0] <= 'z') {
      labels.push_back(item[0] - 'a' + 1);
    } else {
      try {
        labels.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw Error(ErrorKind::invalid_input, "bad label '" + item + "'");
      }
    }
  }
  return labels;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out,
              const std::string& resume) {
  TrainConfig cfg = load_config(config_path);
  if (seed) {
    cfg.model.seed = *seed;
    cfg.data.seed = *seed;
  }
  if (!out.empty()) cfg.out_dir = out;
  RunOptions opts;
  opts.progress = &std::cerr;
  if (!resume.empty()) opts.resume = resume;
  const RunResult r = run_training(cfg, opts);
  std::cout << "steps " << r.log.size() << "\nfinal_loss " << (r.log.empty() ? 0.0 : r.log.back().loss)
            << "\nsurgery_events " << r.surgeries.size() << "\neval_ler " << r.eval_ler << "\nout " << cfg.out_dir
            << '\n';
  return 0;
}

int cmd_eval(const std::string& dir, int n) {
  const Checkpoint ck = load_checkpoint(dir);
  const double ler = evaluate(ck.model, n, ck.config.data);
  std::cout << "sequences " << n << "\nlabel_error_rate " << ler << '\n';
  return 0;
}

int cmd_report(const std::string& before, const std::string& after) {
  report_distribution(read_manifest(before), read_manifest(after)).write_tsv(std::cout);
  return 0;
}

int cmd_gradcheck(const std::string& config_path) {
  const TrainConfig cfg = load_config(config_path);
  const EncoderGradCheck check = check_encoder_gradients(cfg);
  std::cout << std::setprecision(6);
  for (const auto& [pi, ei] : check.probes) std::cout << "probe " << check.names[pi] << '[' << ei << "]\n";
  const auto& r = check.report;
  std::cout << "checked " << r.checked << "\nmax_rel_error " << r.max_rel_error << "\nworst "
            << check.names[r.worst_param] << '[' << r.worst_element << "] autodiff " << r.autodiff_at_worst
            << " numeric " << r.numeric_at_worst << '\n'
            << (r.passed ? "PASS" : "FAIL") << '\n';
  return r.passed ? 0 : 1;
}

int cmd_ctc_oracle(int frames, int vocab, const std::string& label_text, std::uint64_t seed) {
  const LabelSeq labels = parse_labels(label_text);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> logit(0.0, 1.0);
  Eigen::MatrixXd lp(frames, vocab + 1);
  for (Index i = 0; i < lp.size(); ++i) lp.data()[i] = logit(rng);
  for (Index t = 0; t < lp.rows(); ++t) {
    const double m = lp.row(t).maxCoeff();
    lp.row(t).array() -= m + std::log((lp.row(t).array() - m).exp().sum());
  }
  const double dp = ctc_loss(lp, labels);
  const double brute = ctc_brute_force(lp, labels);
  std::cout << std::setprecision(17) << "ctc_loss " << dp << "\nbrute_force " << brute
            << "\nabs_diff " << std::abs(dp - brute) << '\n';
  return std::abs(dp - brute) < 1e-9 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grow-and-drop architecture optimization for partitioned CTC encoders"};
  app.require_subcommand(1);

  std::string config_path, out_dir, resume;
  std::optional<std::uint64_t> seed;
  auto* train = app.add_subcommand("train", "Train a model and write run artifacts");
  train->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "Overrides model.seed and data.seed");
  train->add_option("--out", out_dir, "Output directory (default: train.out_dir)");
  train->add_option("--resume", resume, "Continue from this checkpoint directory")->check(CLI::ExistingDirectory);

  std::string checkpoint;
  int n = 100;
  auto* eval = app.add_subcommand("eval", "Greedy-decode held-out utterances and report the label error rate");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  eval->add_option("--n", n, "Number of utterances")->check(CLI::PositiveNumber);

  std::string before, after;
  auto* report = app.add_subcommand("report", "Per-module parameter ratio between two checkpoints (TSV)");
  report->add_option("--before", before, "Checkpoint before adaptation")->required();
  report->add_option("--after", after, "Checkpoint after adaptation")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of encoder + CTC gradients");
  gradcheck->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);

  int frames = 4, vocab = 3;
  std::string labels;
  std::uint64_t oracle_seed = 0;
  auto* oracle = app.add_subcommand("ctc-oracle", "Compare CTC against path enumeration on random log-probabilities");
  oracle->add_option("--t", frames, "Frames")->required()->check(CLI::PositiveNumber);
  oracle->add_option("--vocab", vocab, "Non-blank symbols")->required()->check(CLI::PositiveNumber);
  oracle->add_option("--labels", labels, "Comma-separated labels: integers, or letters with a=1");
  oracle->add_option("--seed", oracle_seed, "Seed for the random distribution");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config_path, seed, out_dir, resume);
    if (*eval) return cmd_eval(checkpoint, n);
    if (*report) return cmd_report(before, after);
    if (*gradcheck) return cmd_gradcheck(config_path);
    if (*oracle) return cmd_ctc_oracle(frames, vocab, labels, oracle_seed);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
