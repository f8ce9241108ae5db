// SPDX-License-Identifier: Apache-2.0
//
// Adversarial pretraining of the generative prior, restoration training and
// checkpoint persistence.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "gformer/adam.hpp"
#include "gformer/config.hpp"
#include "gformer/dataset.hpp"
#include "gformer/metrics.hpp"
#include "gformer/model.hpp"
#include "gformer/objectives.hpp"
#include "gformer/params.hpp"

namespace gformer {

struct TrainConfig {
  std::size_t batch = 4;
  std::size_t steps = 100;
  double lr = 2e-4;
  std::uint64_t seed = 0;
  LossWeights weights;
  std::string manifest;
  /// Save every this many steps when a checkpoint path is given; 0 saves only at the end.
  std::size_t checkpoint_every = 0;
  /// Ablation hook: leave the "gen." weights untouched during restoration training.
  bool freeze_prior = false;

  /// Throws ConfigError unless steps > 0, batch >= 1 and lr > 0.
  void validate() const;
};

/// Everything a run needs to continue: weights of both networks, both
/// optimizers and the number of completed steps. Batches and latents are
/// derived from (seed, step), so no generator state is stored.
struct TrainingState {
  ModelConfig model;
  ParameterStore<float> gformer;
  ParameterStore<float> discriminator;
  AdamState<float> g_opt, d_opt;
  std::uint64_t step = 0;
};

/// Fresh weights: restorer from `seed`, discriminator from seed + 1.
TrainingState initial_state(const ModelConfig& cfg, std::uint64_t seed, double lr = 2e-4);

struct PriorLogRow {
  std::uint64_t step;
  double g_loss, d_loss, d_accuracy;
};

struct LossLogRow {
  std::uint64_t step;
  double l1, per, adv, pyr, total, d_loss;
};

/// Alternating non-saturating logistic updates of the prior ("gen." weights
/// driven by N(0, 1) latents) against the discriminator on `reals`, until
/// state.step == cfg.steps. Throws DivergenceError on a non-finite loss,
/// leaving `state` at the last finished step.
void pretrain_prior(TrainingState& state, const std::vector<Image>& reals, const TrainConfig& cfg,
                    const std::function<void(const PriorLogRow&, const TrainingState&)>& on_step = {});

/// Restoration training state: the "gen." weights and the discriminator come
/// from `prior`, the encoder and modulators from a fresh draw with cfg.seed,
/// optimizers and the step counter start over.
TrainingState state_from_prior(const TrainingState& prior, std::uint64_t seed, double lr);

/// One generator step on the full objective, then one discriminator step on
/// the same restored batch, until state.step == cfg.steps.
void train_gformer(TrainingState& state, const std::vector<Pair>& data, const TrainConfig& cfg,
                   const std::function<void(const LossLogRow&, const TrainingState&)>& on_step = {});

/// Indices of the batch used at `step`: a seeded permutation prefix, so the
/// batch depends only on (seed, step).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step, std::size_t count, std::size_t batch);

// Checkpoints

inline constexpr char kCheckpointMagic[8] = {'G', 'F', 'O', 'R', 'M', 'E', 'R', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state);
std::string serialize_checkpoint(const TrainingState& state);
/// Throws FormatError on a bad magic, version, truncation or trailing bytes,
/// ConfigError when the stored tables do not fit the stored configuration.
TrainingState load_checkpoint(const std::filesystem::path& path);
TrainingState deserialize_checkpoint(const std::string& bytes);
/// As above, and throws ConfigError unless the stored configuration equals `expected`.
TrainingState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// Logs

std::string prior_log_header();
std::string format_log_row(const PriorLogRow& row);
/// step,l1,per,adv,pyr,total,d_loss
std::string loss_log_header();
std::string format_log_row(const LossLogRow& row);

// Inference

struct Restoration {
  Image restored;
  std::vector<Image> pyramid;  // deepest first
};

/// Enlarges `lq` to the model resolution by pixel replication (the side must
/// divide it), runs the restorer and clamps to [0, 1].
Restoration restore(const Gformer<float>& model, const Image& lq);
std::vector<Restoration> restore_batch(const Gformer<float>& model, const std::vector<Image>& inputs,
                                       std::size_t batch = 4);

// Evaluation

struct Evaluation {
  Metrics input, restored;  // "input" scores the enlarged LQ images themselves
  RocCurve input_roc, restored_roc;
  std::vector<LabelledScore> input_scores, restored_scores;
};

/// Restores every pair's input and scores both it and the raw input against
/// the HQ targets. `identities[i]` labels pair i for genuine/impostor pairing.
Evaluation evaluate(const Gformer<float>& model, const std::vector<Pair>& pairs,
                    const std::vector<std::uint64_t>& identities);
/// metrics.csv (input row first), roc_{input,restored}.csv, scores_{input,restored}.csv.
void write_evaluation(const std::filesystem::path& dir, const Evaluation& e);

}  // namespace gformer
