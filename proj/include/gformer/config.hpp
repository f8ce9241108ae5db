// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace gformer {

/// Architectural hyperparameters of the restorer, its generative prior and
/// the discriminator. Encoder levels are listed shallow to deep; decoder
/// quantities (skips, generator blocks) run deepest first.
struct ModelConfig {
  std::string name = "custom";
  std::size_t input_resolution = 256;
  std::size_t levels_transformer = 4;
  std::size_t levels_conv_refine = 3;
  std::vector<std::size_t> heads{1, 2, 4, 8};
  std::vector<std::size_t> channels{64, 128, 256, 512};
  std::vector<std::size_t> refine_channels{512, 512, 512};
  double ffn_expansion = 2.66;
  std::size_t latent_dim = 512;
  double split_fraction = 0.5;
  double theta_init = 1.0;
  /// One entry per stride-2 discriminator stage, down to 4x4.
  std::vector<std::size_t> discriminator_channels{32, 64, 128, 256, 512, 512};

  /// Throws ConfigError on any inconsistency.
  void validate() const;

  std::size_t generator_blocks() const { return levels_transformer + levels_conv_refine; }
  /// Resolution of the deepest skip and of the generator's constant input.
  std::size_t base_resolution() const;
  /// Skip / generator resolutions, deepest first.
  std::vector<std::size_t> level_resolutions() const;
  /// Skip / generator channel counts, deepest first.
  std::vector<std::size_t> level_channels() const;
  /// Hidden width of the feed-forward network at `c` input channels.
  std::size_t ffn_hidden(std::size_t c) const;
  /// Number of channels left untouched by the channel-split transform.
  std::size_t split_channels(std::size_t c) const;

  bool operator==(const ModelConfig&) const = default;
};

/// "paper-256" or "toy-64".
ModelConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// Flat key=value text, one key per line, '#' comments allowed.
std::string to_text(const ModelConfig& cfg);
/// Applies key=value lines on top of `base`. A `preset=` line resets the
/// base to that preset before later keys apply. Unknown keys are rejected.
ModelConfig parse_config(std::string_view text, ModelConfig base = preset("toy-64"));
ModelConfig load_config(const std::string& path, ModelConfig base = preset("toy-64"));
void save_config(const ModelConfig& cfg, const std::string& path);

}  // namespace gformer
