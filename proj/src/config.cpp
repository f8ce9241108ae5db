// SPDX-License-Identifier: Apache-2.0
#include "gformer/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gformer/errors.hpp"

namespace gformer {

namespace {

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a real number, got '" + value + "'");
  }
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "' expects a comma-separated list");
  return out;
}

// Shortest text that reads back to the same double.
std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool is_power_of_two(std::size_t v) { return v && !(v & (v - 1)); }

}  // namespace

void ModelConfig::validate() const {
  if (levels_transformer == 0) throw ConfigError("at least one Transformer level is required");
  if (heads.size() != levels_transformer || channels.size() != levels_transformer) {
    throw ConfigError("heads and channels need one entry per Transformer level (" +
                      std::to_string(levels_transformer) + ")");
  }
  if (refine_channels.size() != levels_conv_refine) {
    throw ConfigError("refine_channels needs one entry per convolutional refinement level (" +
                      std::to_string(levels_conv_refine) + ")");
  }
  for (std::size_t i = 0; i < levels_transformer; ++i) {
    if (heads[i] == 0 || channels[i] % heads[i] != 0) {
      throw ConfigError("level " + std::to_string(i + 1) + ": " + std::to_string(channels[i]) +
                        " channels are not divisible by " + std::to_string(heads[i]) + " heads");
    }
    if (channels[i] < 2) throw ConfigError("Transformer levels need at least 2 channels");
  }
  for (std::size_t c : refine_channels)
    if (c == 0) throw ConfigError("refinement channels must be positive");
  if (!is_power_of_two(input_resolution)) throw ConfigError("input_resolution must be a power of two");
  const std::size_t levels = generator_blocks();
  if (levels > 1 && (input_resolution >> (levels - 1)) < 4) {
    throw ConfigError("input_resolution " + std::to_string(input_resolution) + " cannot halve " +
                      std::to_string(levels - 1) + " times and stay at least 4x4");
  }
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (!(ffn_expansion > 0.0)) throw ConfigError("ffn_expansion must be positive");
  if (!(split_fraction >= 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction must lie in [0, 1)");
  std::size_t disc_res = input_resolution;
  for (std::size_t i = 0; i < discriminator_channels.size(); ++i) disc_res /= 2;
  if (disc_res != 4 || discriminator_channels.empty()) {
    throw ConfigError("discriminator_channels must hold one stage per halving from " +
                      std::to_string(input_resolution) + " down to 4");
  }
}

std::size_t ModelConfig::base_resolution() const { return input_resolution >> (generator_blocks() - 1); }

std::vector<std::size_t> ModelConfig::level_resolutions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < generator_blocks(); ++i) out.push_back(base_resolution() << i);
  return out;
}

std::vector<std::size_t> ModelConfig::level_channels() const {
  std::vector<std::size_t> out(refine_channels.rbegin(), refine_channels.rend());
  out.insert(out.end(), channels.rbegin(), channels.rend());
  return out;
}

std::size_t ModelConfig::ffn_hidden(std::size_t c) const {
  return static_cast<std::size_t>(std::lround(ffn_expansion * static_cast<double>(c)));
}

std::size_t ModelConfig::split_channels(std::size_t c) const {
  return static_cast<std::size_t>(std::floor(static_cast<double>(c) * split_fraction));
}

ModelConfig preset(std::string_view name) {
  ModelConfig cfg;
  if (name == "paper-256") {
    cfg.name = "paper-256";
    return cfg;
  }
  if (name == "toy-64") {
    cfg.name = "toy-64";
    cfg.input_resolution = 64;
    cfg.levels_transformer = 2;
    cfg.levels_conv_refine = 2;
    cfg.heads = {1, 2};
    cfg.channels = {12, 24};
    cfg.refine_channels = {24, 24};
    cfg.latent_dim = 48;
    cfg.discriminator_channels = {16, 32, 32, 32};
    return cfg;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper-256 or toy-64)");
}

std::vector<std::string> preset_names() { return {"paper-256", "toy-64"}; }

std::string to_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "name=" << cfg.name << '\n'
     << "input_resolution=" << cfg.input_resolution << '\n'
     << "levels_transformer=" << cfg.levels_transformer << '\n'
     << "levels_conv_refine=" << cfg.levels_conv_refine << '\n'
     << "heads=" << join(cfg.heads) << '\n'
     << "channels=" << join(cfg.channels) << '\n'
     << "refine_channels=" << join(cfg.refine_channels) << '\n'
     << "ffn_expansion=" << format_real(cfg.ffn_expansion) << '\n'
     << "latent_dim=" << cfg.latent_dim << '\n'
     << "split_fraction=" << format_real(cfg.split_fraction) << '\n'
     << "theta_init=" << format_real(cfg.theta_init) << '\n'
     << "discriminator_channels=" << join(cfg.discriminator_channels) << '\n';
  return os.str();
}

ModelConfig parse_config(std::string_view text, ModelConfig cfg) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: '" + line + "'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "preset") cfg = preset(value);
    else if (key == "name") cfg.name = value;
    else if (key == "input_resolution") cfg.input_resolution = parse_size(key, value);
    else if (key == "levels_transformer") cfg.levels_transformer = parse_size(key, value);
    else if (key == "levels_conv_refine") cfg.levels_conv_refine = parse_size(key, value);
    else if (key == "heads") cfg.heads = parse_list(key, value);
    else if (key == "channels") cfg.channels = parse_list(key, value);
    else if (key == "refine_channels") cfg.refine_channels = parse_list(key, value);
    else if (key == "ffn_expansion") cfg.ffn_expansion = parse_real(key, value);
    else if (key == "latent_dim") cfg.latent_dim = parse_size(key, value);
    else if (key == "split_fraction") cfg.split_fraction = parse_real(key, value);
    else if (key == "theta_init") cfg.theta_init = parse_real(key, value);
    else if (key == "discriminator_channels") cfg.discriminator_channels = parse_list(key, value);
    else throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(line_no));
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_config(const std::string& path, ModelConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void save_config(const ModelConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file '" + path + "'");
  out << to_text(cfg);
}

}  // namespace gformer
