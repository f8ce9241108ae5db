// SPDX-License-Identifier: Apache-2.0
//
// gformer: batch entry point. Outputs go to files; stdout carries progress
// and summary lines only. Exit status 0 on success, 1 on a usage error,
// 2 on a runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <fmt/format.h>

#include "gformer/bench.hpp"
#include "gformer/config.hpp"
#include "gformer/dataset.hpp"
#include "gformer/errors.hpp"
#include "gformer/selfcheck.hpp"
#include "gformer/train.hpp"

namespace fs = std::filesystem;
using namespace gformer;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelOptions {
  std::string preset_name = "toy-64";
  std::string config_path;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--preset", preset_name, "Model preset")->check(CLI::IsMember(preset_names()));
    cmd->add_option("--config", config_path, "key=value file applied on top of the preset")->check(CLI::ExistingFile);
  }
  ModelConfig resolve() const {
    ModelConfig cfg = preset(preset_name);
    if (!config_path.empty()) cfg = load_config(config_path, cfg);
    cfg.validate();
    return cfg;
  }
  bool explicit_choice(const CLI::App* cmd) const { return cmd->count("--preset") > 0 || !config_path.empty(); }
};

struct TrainOptions {
  std::string manifest, out, log, prior, resume;
  std::size_t steps = 0, batch = 4, checkpoint_every = 0;
  double lr = 2e-4;
  std::uint64_t seed = 0;
  bool freeze_prior = false;

  void add_common(CLI::App* cmd, std::size_t default_steps) {
    steps = default_steps;
    cmd->add_option("--manifest", manifest, "Dataset manifest CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "Checkpoint to write")->required();
    cmd->add_option("--steps", steps, "Total optimizer steps")->capture_default_str();
    cmd->add_option("--batch", batch, "Images per step")->capture_default_str();
    cmd->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--seed", seed, "Seed for weights, batches and latents")->capture_default_str();
    cmd->add_option("--log", log, "Per-step CSV log");
    cmd->add_option("--checkpoint-every", checkpoint_every, "Also save every N steps");
  }
  TrainConfig config() const {
    TrainConfig c;
    c.steps = steps;
    c.batch = batch;
    c.lr = lr;
    c.seed = seed;
    c.manifest = manifest;
    c.checkpoint_every = checkpoint_every;
    c.freeze_prior = freeze_prior;
    c.validate();
    return c;
  }
};

// Appends to an existing log when resuming, otherwise starts it with a header.
std::optional<std::ofstream> open_log(const std::string& path, const std::string& header, bool append) {
  if (path.empty()) return std::nullopt;
  const bool exists = fs::exists(path);
  std::ofstream out(path, append && exists ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  if (!(append && exists)) out << header << '\n';
  return out;
}

std::size_t progress_every(std::size_t steps) { return std::max<std::size_t>(1, steps / 20); }

int synth_data(const fs::path& out, DatasetOptions o) {
  const auto rows = synthesize_dataset(out, o);
  fmt::print("wrote {} pairs to {}\n", rows.size(), out.string());
  return 0;
}

int train_prior(const ModelOptions& m, const TrainOptions& t) {
  const TrainConfig tc = t.config();
  std::vector<Image> reals;
  for (auto& p : load_pairs(t.manifest)) reals.push_back(std::move(p.target));
  TrainingState state = t.resume.empty() ? initial_state(m.resolve(), tc.seed, tc.lr) : load_checkpoint(t.resume);
  if (!reals.empty() && reals.front().height != state.model.input_resolution) {
    throw UsageError(fmt::format("manifest images are {}x{}, the model expects {}x{}", reals.front().width,
                                 reals.front().height, state.model.input_resolution, state.model.input_resolution));
  }
  auto log = open_log(t.log, prior_log_header(), !t.resume.empty());
  const std::size_t every = progress_every(tc.steps);
  pretrain_prior(state, reals, tc, [&](const PriorLogRow& r, const TrainingState& s) {
    if (log) *log << format_log_row(r) << '\n';
    if (r.step % every == 0 || r.step == tc.steps) {
      fmt::print("prior step {}/{} g_loss {:.4f} d_loss {:.4f} d_acc {:.2f}\n", r.step, tc.steps, r.g_loss, r.d_loss,
                 r.d_accuracy);
      std::fflush(stdout);
    }
    if (tc.checkpoint_every && r.step % tc.checkpoint_every == 0) save_checkpoint(t.out, s);
  });
  save_checkpoint(t.out, state);
  fmt::print("saved {}\n", t.out);
  return 0;
}

int train(const ModelOptions& m, const CLI::App* cmd, const TrainOptions& t) {
  const TrainConfig tc = t.config();
  const auto pairs = load_pairs(t.manifest);
  TrainingState state;
  if (!t.resume.empty()) {
    state = load_checkpoint(t.resume);
  } else if (!t.prior.empty()) {
    state = state_from_prior(load_checkpoint(t.prior), tc.seed, tc.lr);
  } else {
    state = initial_state(m.resolve(), tc.seed, tc.lr);
  }
  if (m.explicit_choice(cmd) && !(m.resolve() == state.model)) {
    throw UsageError("--preset/--config do not match the configuration stored in the checkpoint");
  }
  if (!pairs.empty() && pairs.front().target.height != state.model.input_resolution) {
    throw UsageError(fmt::format("manifest images are {}x{}, the model expects {}x{}", pairs.front().target.width,
                                 pairs.front().target.height, state.model.input_resolution,
                                 state.model.input_resolution));
  }
  auto log = open_log(t.log, loss_log_header(), !t.resume.empty());
  const std::size_t every = progress_every(tc.steps);
  train_gformer(state, pairs, tc, [&](const LossLogRow& r, const TrainingState& s) {
    if (log) *log << format_log_row(r) << '\n';
    if (r.step % every == 0 || r.step == tc.steps) {
      fmt::print("step {}/{} total {:.4f} l1 {:.4f} pyr {:.4f} d_loss {:.4f}\n", r.step, tc.steps, r.total, r.l1,
                 r.pyr, r.d_loss);
      std::fflush(stdout);
    }
    if (tc.checkpoint_every && r.step % tc.checkpoint_every == 0) save_checkpoint(t.out, s);
  });
  save_checkpoint(t.out, state);
  fmt::print("saved {}\n", t.out);
  return 0;
}

int restore_cmd(const std::string& ckpt, const std::string& in, const std::string& out, const std::string& pyramid) {
  const TrainingState state = load_checkpoint(ckpt);
  const Gformer<float> model(state.model, state.gformer);
  const Restoration r = restore(model, read_image_float(in));
  write_image(out, r.restored);
  if (!pyramid.empty()) {
    fs::create_directories(pyramid);
    for (std::size_t i = 0; i < r.pyramid.size(); ++i) {
      write_image(fs::path(pyramid) / fmt::format("level{}_{}.ppm", i, r.pyramid[i].height), r.pyramid[i]);
    }
  }
  fmt::print("restored {} -> {} ({}x{})\n", in, out, r.restored.width, r.restored.height);
  return 0;
}

int evaluate_cmd(const std::string& manifest, const std::string& ckpt, const std::string& out) {
  const auto rows = read_manifest(manifest);
  if (rows.empty()) throw UsageError("manifest " + manifest + " has no rows to evaluate");
  const auto pairs = load_pairs(manifest);
  std::vector<std::uint64_t> identities;
  for (const auto& r : rows) identities.push_back(r.identity_seed);
  const TrainingState state = load_checkpoint(ckpt);
  const Gformer<float> model(state.model, state.gformer);
  const Evaluation e = evaluate(model, pairs, identities);
  write_evaluation(out, e);
  for (const auto& [name, m] : {std::pair{"input", e.input}, std::pair{"restored", e.restored}}) {
    fmt::print("{:<9} psnr {:.3f} ssim {:.4f} auc {:.4f} eer {:.4f} tar@far=0.001 {:.4f}\n", name, m.psnr_mean,
               m.ssim_mean, m.auc, m.eer, m.tar_far_001);
  }
  return 0;
}

int gradcheck_cmd(const std::string& scope_text, std::uint64_t seed, const ModelOptions& m) {
  const GradcheckScope scope = parse_gradcheck_scope(scope_text);
  std::vector<CheckResult> results =
      scope == GradcheckScope::Model ? std::vector<CheckResult>{model_gradcheck(m.resolve(), seed)}
                                     : run_gradchecks(scope, seed);
  bool ok = true;
  for (const auto& r : results) {
    fmt::print("{:<24} max_rel_err {:.3e} tol {:.0e} checked {} {}\n", r.name, r.max_relative_error, r.tolerance,
               r.checked, r.passed() ? "PASS" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? 0 : kRuntime;
}

int bench_cmd(std::size_t channels, std::size_t heads, const std::vector<std::size_t>& sizes, std::uint64_t seed,
              const std::string& out) {
  const AttentionBench b = bench_attention(channels, heads, sizes, seed);
  if (out.empty()) {
    write_bench_csv(std::cout, b);
  } else {
    std::ofstream f(out);
    write_bench_csv(f, b);
    if (!f) throw std::runtime_error("cannot write " + out);
  }
  bool constant = true;
  for (const auto& r : b.rows) constant = constant && r.channel_score_bytes == b.rows.front().channel_score_bytes;
  fmt::print(stderr, "channel score bytes constant in HW: {}; linear fit R^2 of time vs HW: {:.4f}\n",
             constant ? "yes" : "no", b.linear_r2);
  return constant ? 0 : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iris image restoration: data synthesis, training, restoration and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Write procedural HQ/LQ pairs and a manifest");
  std::string synth_out;
  DatasetOptions dopt;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--identities", dopt.identities, "Number of identities")->required()->check(CLI::PositiveNumber);
  synth->add_option("--samples-per", dopt.samples_per_identity, "Samples per identity")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--resolution", dopt.resolution, "HQ side length")->capture_default_str();
  synth->add_option("--seed", dopt.seed, "Dataset seed")->capture_default_str();
  synth->add_option("--split", dopt.split, "Fraction of identities written to train.csv (rest to test.csv)")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--workers", dopt.workers, "Worker threads (0 = all cores)");

  // train-prior
  auto* prior = app.add_subcommand("train-prior", "Adversarially pretrain the generative prior");
  ModelOptions prior_model;
  TrainOptions prior_train;
  prior_model.add_to(prior);
  prior_train.add_common(prior, 2000);
  prior->add_option("--resume", prior_train.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);

  // train
  auto* trainer = app.add_subcommand("train", "Train the restorer");
  ModelOptions train_model;
  TrainOptions train_opts;
  train_model.add_to(trainer);
  train_opts.add_common(trainer, 1000);
  auto* prior_opt = trainer->add_option("--prior", train_opts.prior, "Prior checkpoint")->check(CLI::ExistingFile);
  trainer->add_option("--resume", train_opts.resume, "Continue from this checkpoint")
      ->check(CLI::ExistingFile)
      ->excludes(prior_opt);
  trainer->add_flag("--freeze-prior", train_opts.freeze_prior, "Keep the prior's weights fixed");

  // restore
  auto* rest = app.add_subcommand("restore", "Restore one image");
  std::string ckpt, in_path, out_path, pyramid_dir;
  rest->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  rest->add_option("--in", in_path, "Degraded PGM/PPM")->required()->check(CLI::ExistingFile);
  rest->add_option("--out", out_path, "Restored PPM")->required();
  rest->add_option("--pyramid", pyramid_dir, "Directory for the per-level images");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Quality and recognition metrics on a test manifest");
  std::string eval_manifest, eval_ckpt, eval_out;
  eval->add_option("--manifest", eval_manifest, "Test manifest CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "Output directory")->required();

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::string scope = "op";
  std::uint64_t grad_seed = 1;
  ModelOptions grad_model;
  grad->add_option("--scope", scope, "op, block or model")->check(CLI::IsMember({"op", "block", "model"}));
  grad->add_option("--seed", grad_seed, "Seed")->capture_default_str();
  grad_model.add_to(grad);

  // bench-attention
  auto* bench = app.add_subcommand("bench-attention", "Attention cost against image size");
  std::size_t channels = 32, heads = 1;
  std::vector<std::size_t> sizes{8, 16, 32, 64};
  std::uint64_t bench_seed = 0;
  std::string bench_out;
  bench->add_option("--channels", channels, "Channels")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--heads", heads, "Heads")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--sizes", sizes, "Side lengths H (HW = H*H)")->delimiter(',')->capture_default_str();
  bench->add_option("--seed", bench_seed, "Seed")->capture_default_str();
  bench->add_option("--out", bench_out, "CSV path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsage;
  }

  try {
    if (*synth) return synth_data(synth_out, dopt);
    if (*prior) return train_prior(prior_model, prior_train);
    if (*trainer) return train(train_model, trainer, train_opts);
    if (*rest) return restore_cmd(ckpt, in_path, out_path, pyramid_dir);
    if (*eval) return evaluate_cmd(eval_manifest, eval_ckpt, eval_out);
    if (*grad) return gradcheck_cmd(scope, grad_seed, grad_model);
    if (*bench) return bench_cmd(channels, heads, sizes, bench_seed, bench_out);
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kRuntime;
  }
  return kUsage;
}
