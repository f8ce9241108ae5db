// SPDX-License-Identifier: Apache-2.0
#include "gformer/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <fmt/format.h>

#include "gformer/errors.hpp"
#include "gformer/image.hpp"

namespace gformer {

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("steps must be positive");
  if (batch == 0) throw ConfigError("batch must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
}

TrainingState initial_state(const ModelConfig& cfg, std::uint64_t seed, double lr) {
  cfg.validate();
  TrainingState s{cfg, init_gformer_parameters(cfg, seed), init_discriminator_parameters(cfg, seed + 1), {}, {}, 0};
  s.g_opt.lr = lr;
  s.d_opt.lr = lr;
  return s;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step, std::size_t count, std::size_t batch) {
  if (count == 0) throw ConfigError("training set is empty");
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(step)));
  std::vector<std::size_t> out;
  out.reserve(batch);
  // Consecutive permutations, so a batch larger than the set still sees every item.
  while (out.size() < batch) {
    std::vector<std::size_t> perm(count);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = count; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
    for (std::size_t i = 0; i < count && out.size() < batch; ++i) out.push_back(perm[i]);
  }
  return out;
}

namespace {

constexpr std::uint64_t kLatentStream = 0x6c61746e656e7473ULL;

Tensor<float> latents(std::uint64_t seed, std::uint64_t step, std::size_t batch, std::size_t dim) {
  Initializer init(splitmix64(seed ^ kLatentStream) ^ splitmix64(step));
  std::vector<float> v(batch * dim);
  for (auto& x : v) x = static_cast<float>(init.normal());
  return Tensor<float>({batch, dim}, std::move(v));
}

void require_finite(double v, const char* what, std::uint64_t step) {
  if (!std::isfinite(v)) throw DivergenceError(fmt::format("non-finite {} at step {}", what, step + 1));
}

std::vector<std::string> trained_prefixes(bool freeze_prior) {
  if (freeze_prior) return {"enc.", "mod."};
  return {};
}

}  // namespace

void pretrain_prior(TrainingState& state, const std::vector<Image>& reals, const TrainConfig& cfg,
                    const std::function<void(const PriorLogRow&, const TrainingState&)>& on_step) {
  cfg.validate();
  if (reals.empty()) throw ConfigError("prior pretraining needs real images");
  Gformer<float> model(state.model, state.gformer);
  Discriminator<float> disc(state.model, state.discriminator);
  auto g_params = state.gformer.tensors({kPriorPrefix});
  auto d_params = state.discriminator.tensors();
  state.g_opt.lr = state.d_opt.lr = cfg.lr;

  while (state.step < cfg.steps) {
    std::vector<Image> batch;
    for (std::size_t i : batch_indices(cfg.seed, state.step, reals.size(), cfg.batch)) batch.push_back(reals[i]);
    const Tensor<float> real = to_tensor(batch);

    state.gformer.zero_grad();
    state.discriminator.zero_grad();
    const Tensor<float> fake = model.generate(latents(cfg.seed, state.step, cfg.batch, state.model.latent_dim));
    const Tensor<float> g_loss = adversarial_loss_g(disc.forward(fake));
    require_finite(g_loss.item(), "generator loss", state.step);
    backward(g_loss);

    // The discriminator sees the same fakes, detached, with its pre-step weights.
    state.discriminator.zero_grad();
    const Tensor<float> d_real = disc.forward(real), d_fake = disc.forward(fake.detach());
    const Tensor<float> d_loss = discriminator_loss(d_real, d_fake);
    require_finite(d_loss.item(), "discriminator loss", state.step);
    backward(d_loss);

    adam_step(g_params, state.g_opt);
    adam_step(d_params, state.d_opt);
    ++state.step;

    double correct = 0.0;
    for (float v : d_real.values()) correct += v > 0.0f;
    for (float v : d_fake.values()) correct += v < 0.0f;
    if (on_step) {
      on_step({state.step, g_loss.item(), d_loss.item(), correct / static_cast<double>(2 * cfg.batch)}, state);
    }
  }
}

TrainingState state_from_prior(const TrainingState& prior, std::uint64_t seed, double lr) {
  TrainingState s = initial_state(prior.model, seed, lr);
  for (auto& e : s.gformer.entries()) {
    if (!e.name.starts_with(kPriorPrefix)) continue;
    const auto& src = prior.gformer.at(e.name).values();
    std::copy(src.begin(), src.end(), e.tensor.mutable_data().begin());
  }
  s.discriminator = prior.discriminator.clone();
  return s;
}

void train_gformer(TrainingState& state, const std::vector<Pair>& data, const TrainConfig& cfg,
                   const std::function<void(const LossLogRow&, const TrainingState&)>& on_step) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  Gformer<float> model(state.model, state.gformer);
  Discriminator<float> disc(state.model, state.discriminator);
  const PerceptualExtractor<float> phi;
  auto g_params = state.gformer.tensors(trained_prefixes(cfg.freeze_prior));
  auto d_params = state.discriminator.tensors();
  state.g_opt.lr = state.d_opt.lr = cfg.lr;

  while (state.step < cfg.steps) {
    std::vector<Image> inputs, targets;
    for (std::size_t i : batch_indices(cfg.seed, state.step, data.size(), cfg.batch)) {
      inputs.push_back(data[i].input);
      targets.push_back(data[i].target);
    }
    const Tensor<float> x = to_tensor(inputs), y = to_tensor(targets);

    state.gformer.zero_grad();
    state.discriminator.zero_grad();
    const auto out = model.forward(x);
    const auto terms = total_loss(y, out.restored, out.pyramid, disc.forward(out.restored), cfg.weights, phi);
    require_finite(terms.total.item(), "total loss", state.step);
    backward(terms.total);

    state.discriminator.zero_grad();
    const Tensor<float> d_loss = discriminator_loss(disc.forward(y), disc.forward(out.restored.detach()));
    require_finite(d_loss.item(), "discriminator loss", state.step);
    backward(d_loss);

    adam_step(g_params, state.g_opt);
    adam_step(d_params, state.d_opt);
    ++state.step;

    if (on_step) {
      on_step({state.step, terms.l1.item(), terms.perceptual.item(), terms.adversarial.item(), terms.pyramid.item(),
               terms.total.item(), d_loss.item()},
              state);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian throughout.

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_ += s;
  }
  void floats(std::span<const float> v) {
    u64(v.size());
    for (float x : v) f32(x);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats() {
    const std::uint64_t n = u64();
    need(n * 4);
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  void bytes(char* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw FormatError("checkpoint is truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

void write_store(Writer& w, const ParameterStore<float>& store) {
  w.u64(store.size());
  for (const auto& e : store.entries()) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) w.u64(d);
    for (float x : e.tensor.values()) w.f32(x);
  }
}

ParameterStore<float> read_store(Reader& r) {
  ParameterStore<float> store;
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint tensor '" + name + "' has implausible rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(r.u64());
      n *= shape.back();
      if (n > (std::uint64_t{1} << 34)) throw FormatError("checkpoint tensor '" + name + "' is too large");
    }
    std::vector<float> v(n);
    for (auto& x : v) x = r.f32();
    store.add(std::move(name), Tensor<float>(std::move(shape), std::move(v), true));
  }
  return store;
}

void write_adam(Writer& w, const AdamState<float>& s) {
  w.f64(s.lr);
  w.f64(s.beta1);
  w.f64(s.beta2);
  w.f64(s.eps);
  w.u64(s.step);
  w.u64(s.m.size());
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    w.floats(s.m[i]);
    w.floats(s.v[i]);
  }
}

AdamState<float> read_adam(Reader& r) {
  AdamState<float> s;
  s.lr = r.f64();
  s.beta1 = r.f64();
  s.beta2 = r.f64();
  s.eps = r.f64();
  s.step = r.u64();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    s.m.push_back(r.floats());
    s.v.push_back(r.floats());
  }
  return s;
}

}  // namespace

std::string serialize_checkpoint(const TrainingState& state) {
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(to_text(state.model));
  w.u64(state.step);
  write_store(w, state.gformer);
  write_store(w, state.discriminator);
  write_adam(w, state.g_opt);
  write_adam(w, state.d_opt);
  return w.take();
}

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state) {
  const std::string bytes = serialize_checkpoint(state);
  // Write beside the target and rename, so a crash never leaves a half file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainingState deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[sizeof kCheckpointMagic];
  try {
    r.bytes(magic, sizeof magic);
  } catch (const FormatError&) {
    throw FormatError("not a checkpoint (file too short)");
  }
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("checkpoint version {} is not supported (expected {})", version, kCheckpointVersion));
  }
  TrainingState s;
  try {
    s.model = parse_config(r.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint configuration is invalid: ") + e.what());
  }
  s.step = r.u64();
  s.gformer = read_store(r);
  s.discriminator = read_store(r);
  s.g_opt = read_adam(r);
  s.d_opt = read_adam(r);
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  check_parameters(s.gformer, gformer_parameter_specs(s.model));
  check_parameters(s.discriminator, discriminator_parameter_specs(s.model));
  return s;
}

TrainingState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

TrainingState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  TrainingState s = load_checkpoint(path);
  if (!(s.model == expected)) {
    throw ConfigError(fmt::format("checkpoint {} was written for preset '{}', not '{}'", path.string(), s.model.name,
                                  expected.name));
  }
  return s;
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double v) { return fmt::format("{:.9g}", v); }

}  // namespace

std::string prior_log_header() { return "step,g_loss,d_loss,d_accuracy"; }

std::string format_log_row(const PriorLogRow& r) {
  return fmt::format("{},{},{},{}", r.step, num(r.g_loss), num(r.d_loss), num(r.d_accuracy));
}

std::string loss_log_header() { return "step,l1,per,adv,pyr,total,d_loss"; }

std::string format_log_row(const LossLogRow& r) {
  return fmt::format("{},{},{},{},{},{},{}", r.step, num(r.l1), num(r.per), num(r.adv), num(r.pyr), num(r.total),
                     num(r.d_loss));
}

std::vector<Restoration> restore_batch(const Gformer<float>& model, const std::vector<Image>& inputs,
                                       std::size_t batch) {
  const std::size_t res = model.config().input_resolution;
  std::vector<Restoration> out;
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < inputs.size(); start += batch) {
    std::vector<Image> chunk;
    for (std::size_t i = start; i < std::min(inputs.size(), start + batch); ++i) {
      const Image rgb = to_rgb(inputs[i]);
      if (rgb.height != rgb.width || rgb.height == 0 || res % rgb.height != 0) {
        throw DimensionError(fmt::format("a {}x{} input cannot be enlarged to {}x{} by replication", rgb.width,
                                         rgb.height, res, res));
      }
      chunk.push_back(upsample_nearest(rgb, res / rgb.height));
    }
    const auto result = model.forward(to_tensor(chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Restoration r;
      r.restored = image_from_tensor(result.restored, i);
      for (auto& v : r.restored.data) v = std::clamp(v, 0.0f, 1.0f);
      for (const auto& level : result.pyramid) {
        Image im = image_from_tensor(level, i);
        for (auto& v : im.data) v = std::clamp(v, 0.0f, 1.0f);
        r.pyramid.push_back(std::move(im));
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

Restoration restore(const Gformer<float>& model, const Image& lq) { return std::move(restore_batch(model, {lq}, 1).front()); }

Evaluation evaluate(const Gformer<float>& model, const std::vector<Pair>& pairs,
                    const std::vector<std::uint64_t>& identities) {
  if (pairs.empty()) throw ConfigError("evaluation split is empty");
  if (identities.size() != pairs.size()) throw DimensionError("one identity per pair is required");
  std::vector<Image> inputs;
  for (const auto& p : pairs) inputs.push_back(p.input);
  const auto restored = restore_batch(model, inputs);

  std::vector<IrisCode> refs, input_codes, restored_codes;
  std::vector<double> psnr_in, psnr_out, ssim_in, ssim_out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Image& hq = pairs[i].target;
    refs.push_back(iris_code(hq));
    input_codes.push_back(iris_code(pairs[i].input));
    restored_codes.push_back(iris_code(restored[i].restored));
    psnr_in.push_back(psnr(hq, pairs[i].input));
    psnr_out.push_back(psnr(hq, restored[i].restored));
    ssim_in.push_back(ssim(hq, pairs[i].input));
    ssim_out.push_back(ssim(hq, restored[i].restored));
  }
  Evaluation e;
  e.input_scores = pair_scores(input_codes, refs, identities);
  e.restored_scores = pair_scores(restored_codes, refs, identities);
  const ScoreSet in_set = to_score_set(e.input_scores), out_set = to_score_set(e.restored_scores);
  e.input = summarize(in_set, psnr_in, ssim_in);
  e.restored = summarize(out_set, psnr_out, ssim_out);
  e.input_roc = roc(in_set);
  e.restored_roc = roc(out_set);
  return e;
}

void write_evaluation(const std::filesystem::path& dir, const Evaluation& e) {
  std::filesystem::create_directories(dir);
  write_metrics_csv(dir / "metrics.csv", {{"input", e.input}, {"restored", e.restored}});
  write_roc_csv(dir / "roc_input.csv", e.input_roc);
  write_roc_csv(dir / "roc_restored.csv", e.restored_roc);
  write_scores_csv(dir / "scores_input.csv", e.input_scores);
  write_scores_csv(dir / "scores_restored.csv", e.restored_scores);
}

}  // namespace gformer
