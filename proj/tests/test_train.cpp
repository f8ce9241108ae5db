// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include <unistd.h>

#include "gformer/errors.hpp"
#include "gformer/train.hpp"

using namespace gformer;

namespace {

std::vector<Pair> tiny_data(std::size_t n, std::uint64_t seed = 5) {
  DatasetOptions o;
  o.identities = n;
  o.samples_per_identity = 1;
  o.resolution = 64;
  o.seed = seed;
  std::vector<Pair> out;
  for (const auto& s : render_samples(plan_dataset(o), 64, 1)) out.push_back(to_pair(s));
  return out;
}

std::filesystem::path scratch(const char* name) {
  auto p = std::filesystem::temp_directory_path() / ("gformer_train_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TrainConfig small_config(std::size_t steps) {
  TrainConfig c;
  c.batch = 2;
  c.steps = steps;
  c.seed = 9;
  return c;
}

std::string run_log(TrainingState& s, const std::vector<Pair>& data, const TrainConfig& c) {
  std::string log = loss_log_header() + "\n";
  train_gformer(s, data, c, [&](const LossLogRow& r, const TrainingState&) { log += format_log_row(r) + "\n"; });
  return log;
}

}  // namespace

TEST_CASE("TrainConfig validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.lr == 2e-4);
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.steps = 1;
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.batch = 1;
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("batch indices depend only on seed and step") {
  CHECK(batch_indices(1, 5, 10, 4) == batch_indices(1, 5, 10, 4));
  CHECK(batch_indices(1, 5, 10, 4) != batch_indices(1, 6, 10, 4));
  const auto all = batch_indices(2, 0, 8, 8);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 8);
  const auto more = batch_indices(2, 0, 3, 7);
  CHECK(more.size() == 7);
  for (auto i : more) CHECK(i < 3);
  CHECK_THROWS_AS(batch_indices(0, 0, 0, 1), ConfigError);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit for bit") {
  const auto cfg = preset("toy-64");
  TrainingState s = initial_state(cfg, 3);
  const auto data = tiny_data(2);
  train_gformer(s, data, small_config(2));

  const auto dir = scratch("roundtrip");
  save_checkpoint(dir / "a.ckpt", s);
  const TrainingState back = load_checkpoint(dir / "a.ckpt", cfg);
  CHECK(back.step == 2);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(s));
  CHECK(back.g_opt.m == s.g_opt.m);
  CHECK(back.d_opt.v == s.d_opt.v);

  NoGradGuard no_grad;
  const Tensor<float> x = to_tensor({data[0].input});
  const auto before = Gformer<float>(cfg, s.gformer).forward(x);
  const auto after = Gformer<float>(cfg, back.gformer).forward(x);
  CHECK(before.restored.values() == after.restored.values());
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejections") {
  const auto cfg = preset("toy-64");
  const TrainingState s = initial_state(cfg, 1);
  const std::string bytes = serialize_checkpoint(s);
  CHECK(bytes.substr(0, 8) == "GFORMERC");

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{12}, bytes.size() / 3, bytes.size() - 1}) {
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, cut)), FormatError);
  }
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), FormatError);
  std::string bad_version = bytes;
  bad_version[8] = 2;
  CHECK_THROWS_AS(deserialize_checkpoint(bad_version), FormatError);

  // Tables that do not fit the stored configuration.
  TrainingState wrong = initial_state(cfg, 1);
  wrong.model = preset("paper-256");
  CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(wrong)), ConfigError);

  // A valid checkpoint for one preset refuses another.
  const auto dir = scratch("guard");
  save_checkpoint(dir / "toy.ckpt", s);
  CHECK_THROWS_AS(load_checkpoint(dir / "toy.ckpt", preset("paper-256")), ConfigError);
  CHECK_NOTHROW(load_checkpoint(dir / "toy.ckpt", cfg));
  {
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic and resume equals an uninterrupted run") {
  const auto cfg = preset("toy-64");
  const auto data = tiny_data(3);

  TrainingState a = initial_state(cfg, 4), b = initial_state(cfg, 4);
  const std::string log_a = run_log(a, data, small_config(10));
  const std::string log_b = run_log(b, data, small_config(10));
  CHECK(log_a == log_b);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));

  TrainingState c = initial_state(cfg, 4);
  std::string log_c = run_log(c, data, small_config(5));
  const auto dir = scratch("resume");
  save_checkpoint(dir / "half.ckpt", c);
  TrainingState resumed = load_checkpoint(dir / "half.ckpt");
  const std::string rest = run_log(resumed, data, small_config(10));
  log_c += rest.substr(rest.find('\n') + 1);
  CHECK(log_c == log_a);
  CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(a));
  std::filesystem::remove_all(dir);
}

TEST_CASE("a non-finite loss aborts without touching the last good state") {
  const auto cfg = preset("toy-64");
  TrainingState s = initial_state(cfg, 2);
  const auto data = tiny_data(2);
  train_gformer(s, data, small_config(1));
  const std::string good = serialize_checkpoint(s);
  TrainingState broken = deserialize_checkpoint(good);
  broken.gformer.at("gen.head.b").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  const std::string before = serialize_checkpoint(broken);
  CHECK_THROWS_AS(train_gformer(broken, data, small_config(3)), DivergenceError);
  CHECK(broken.step == 1);
  CHECK(serialize_checkpoint(broken) == before);
}

TEST_CASE("freezing the prior still trains the encoder and modulators") {
  const auto cfg = preset("toy-64");
  TrainingState s = initial_state(cfg, 6);
  const TrainingState start = deserialize_checkpoint(serialize_checkpoint(s));
  const auto data = tiny_data(2);
  TrainConfig c = small_config(30);
  c.freeze_prior = true;
  std::vector<double> totals;
  train_gformer(s, data, c, [&](const LossLogRow& r, const TrainingState&) { totals.push_back(r.total); });
  for (const auto& e : s.gformer.entries()) {
    const bool same = e.tensor.values() == start.gformer.at(e.name).values();
    if (e.name.starts_with("gen.")) {
      CHECK_MESSAGE(same, e.name);
    } else if (e.name == "enc.stem.w") {
      CHECK(!same);
    }
  }
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) first += totals[i], last += totals[totals.size() - 1 - i];
  MESSAGE("first five " << first / 5 << ", last five " << last / 5);
  CHECK(last < first);
}

TEST_CASE("prior pretraining updates only the prior and the discriminator") {
  const auto cfg = preset("toy-64");
  TrainingState s = initial_state(cfg, 8);
  const TrainingState start = deserialize_checkpoint(serialize_checkpoint(s));
  std::vector<Image> reals;
  for (const auto& p : tiny_data(3)) reals.push_back(p.target);
  TrainConfig c = small_config(3);

  // Nothing to do when the state is already at the requested step count.
  TrainingState done = deserialize_checkpoint(serialize_checkpoint(s));
  done.step = 3;
  pretrain_prior(done, reals, c);
  done.step = 0;
  CHECK(serialize_checkpoint(done) == serialize_checkpoint(start));

  std::vector<PriorLogRow> rows;
  pretrain_prior(s, reals, c, [&](const PriorLogRow& r, const TrainingState&) { rows.push_back(r); });
  CHECK(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(std::isfinite(r.g_loss));
    CHECK(r.d_accuracy >= 0.0);
    CHECK(r.d_accuracy <= 1.0);
  }
  for (const auto& e : s.gformer.entries()) {
    const bool same = e.tensor.values() == start.gformer.at(e.name).values();
    if (!e.name.starts_with("gen.")) CHECK_MESSAGE(same, e.name);
  }
  CHECK(s.gformer.at("gen.const").values() != start.gformer.at("gen.const").values());

  TrainingState again = deserialize_checkpoint(serialize_checkpoint(start));
  pretrain_prior(again, reals, c);
  CHECK(serialize_checkpoint(again) == serialize_checkpoint(s));

  const TrainingState derived = state_from_prior(s, 99, 2e-4);
  CHECK(derived.step == 0);
  CHECK(derived.gformer.at("gen.const").values() == s.gformer.at("gen.const").values());
  CHECK(derived.discriminator.entries().front().tensor.values() == s.discriminator.entries().front().tensor.values());
  CHECK(derived.gformer.at("enc.stem.w").values() != s.gformer.at("enc.stem.w").values());
}

TEST_CASE("restore: model resolution, pyramid per level, determinism") {
  const auto cfg = preset("toy-64");
  const Gformer<float> model(cfg, init_gformer_parameters(cfg, 1));
  const auto data = tiny_data(1);
  const Image lq = downsample_area(data[0].target, 4);
  const Restoration a = restore(model, lq), b = restore(model, lq);
  CHECK(a.restored.height == 64);
  CHECK(a.restored.width == 64);
  CHECK(a.restored.channels == 3);
  CHECK(a.pyramid.size() == cfg.generator_blocks());
  CHECK(a.pyramid.back().height == 64);
  CHECK(a.restored == b.restored);
  for (float v : a.restored.data) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK_THROWS_AS(restore(model, Image(3, 48, 48)), DimensionError);
}

TEST_CASE("loss log schema") {
  CHECK(loss_log_header() == "step,l1,per,adv,pyr,total,d_loss");
  const std::string row = format_log_row(LossLogRow{3, 0.5, 0.25, 0.125, 1, 2, 3});
  CHECK(row == "3,0.5,0.25,0.125,1,2,3");
}
