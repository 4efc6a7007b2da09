#include <doctest.h>

#include <cmath>
#include <random>

#include "ecgstudy/densenet.hpp"
#include "ecgstudy/errors.hpp"
#include "oracles.hpp"

using namespace ecgstudy;

namespace {

std::vector<ModelImage> random_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ModelImage> out(n, ModelImage{h, w, std::vector<double>(h * w)});
  for (auto& im : out) {
    for (auto& p : im.pixels) p = u(rng);
  }
  return out;
}

// Class k lights up rows of band k; a linearly separable toy problem.
std::vector<LabeledImage> banded_dataset(const ModelConfig& c, std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 0.2);
  std::vector<LabeledImage> out;
  const std::size_t band = c.height / kNumRhythms;
  for (std::size_t k = 0; k < kNumRhythms; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      ModelImage im{c.height, c.width, std::vector<double>(c.height * c.width)};
      for (std::size_t r = 0; r < c.height; ++r) {
        for (std::size_t col = 0; col < c.width; ++col) {
          im.pixels[r * c.width + col] = u(rng) + ((r / band == k) ? 0.8 : 0.0);
        }
      }
      out.push_back({std::move(im), k});
    }
  }
  return out;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-8);
}

}  // namespace

TEST_CASE("config: channel plan follows growth and compression") {
  const auto plan = plan_channels(ModelConfig{});
  CHECK(plan.stem == 16);
  REQUIRE(plan.block_outputs.size() == 3);
  CHECK(plan.block_outputs[0] == 16 + 4 * 12);
  CHECK(plan.transition_outputs[0] == 32);
  CHECK(plan.block_outputs[1] == 32 + 48);
  CHECK(plan.transition_outputs[1] == 40);
  CHECK(plan.block_outputs[2] == 40 + 48);
  CHECK(plan.block_spatial[0] == std::array<std::size_t, 2>{16, 64});

  ModelConfig bad;
  bad.n_classes = 3;
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("init: deterministic per seed, head starts at zero") {
  const auto a = init_params(ModelConfig{}, 4);
  const auto b = init_params(ModelConfig{}, 4);
  const auto c = init_params(ModelConfig{}, 5);
  CHECK(a.values == b.values);
  CHECK(a.running_stats == b.running_stats);
  CHECK(a.values != c.values);
  CHECK(a.values.size() == a.layout.total);

  const auto images = random_images(3, 64, 256, 1);
  for (const auto& p : forward(a, images, Mode::eval)) {
    for (double q : p.probabilities) CHECK(q == doctest::Approx(0.25));
  }
}

TEST_CASE("forward: duplicated images give identical rows; bad shapes are named") {
  auto p = init_params(reduced_config(), 2);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 0.5);
  for (auto& v : p.tensor("head.fc.weight")) v = d(rng);
  auto images = random_images(1, 8, 16, 3);
  images.push_back(images[0]);
  const auto out = forward(p, images, Mode::eval);
  CHECK(out[0].probabilities == out[1].probabilities);
  double sum = 0.0;
  for (double q : out[0].probabilities) sum += q;
  CHECK(sum == doctest::Approx(1.0));

  const auto wrong = random_images(1, 9, 16, 3);
  try {
    forward(p, wrong, Mode::eval);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::shape);
    CHECK(std::string(e.what()).find("9x16") != std::string::npos);
  }
}

TEST_CASE("cross entropy: one-hot, uniform, clamped and label range") {
  Prediction hot;
  hot.probabilities = {0.0, 1.0, 0.0, 0.0};
  Prediction uniform;
  uniform.probabilities = {0.25, 0.25, 0.25, 0.25};
  const std::vector<std::size_t> one{1};
  const std::vector<std::size_t> zero{0};
  CHECK(cross_entropy(std::span(&hot, 1), one) < 1e-9);
  CHECK(cross_entropy(std::span(&uniform, 1), one) == doctest::Approx(std::log(4.0)));
  CHECK(cross_entropy(std::span(&hot, 1), zero) == doctest::Approx(-std::log(1e-12)));
  CHECK(cross_entropy(std::span(&hot, 1), zero) == doctest::Approx(27.631).epsilon(1e-4));
  const std::vector<std::size_t> bad{4};
  CHECK_THROWS_AS(cross_entropy(std::span(&hot, 1), bad), Error);
}

TEST_CASE("grad: central differences agree on every reduced-model coordinate") {
  auto p = init_params(reduced_config(), 3);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 0.3);
  for (auto& v : p.tensor("head.fc.weight")) v = d(rng);
  for (auto& v : p.tensor("head.fc.bias")) v = d(rng);
  const auto images = random_images(3, 8, 16, 7);
  const std::vector<std::size_t> labels{0, 1, 3};
  const auto g = grad(p, images, labels);
  CHECK(g.loss == doctest::Approx(cross_entropy(forward(p, images, Mode::train), labels)));
  double worst = 0.0;
  for (std::size_t k = 0; k < p.values.size(); ++k) {
    auto q = p;
    const double h = 1e-5 * std::max(1.0, std::abs(q.values[k]));
    q.values[k] = p.values[k] + h;
    const double up = cross_entropy(forward(q, images, Mode::train), labels);
    q.values[k] = p.values[k] - h;
    const double down = cross_entropy(forward(q, images, Mode::train), labels);
    worst = std::max(worst, relative_error(g.gradient[k], (up - down) / (2.0 * h)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("train: zero learning rate leaves parameters untouched") {
  const auto cfg = reduced_config();
  const auto data = banded_dataset(cfg, 2, 1);
  const auto init = init_params(cfg, 1);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 3;
  tc.batch_size = 4;
  CHECK(train(init, data, tc).params.values == init.values);
}

TEST_CASE("train: same seed gives identical history; toy set is fitted") {
  const auto cfg = reduced_config();
  const auto data = banded_dataset(cfg, 10, 2);
  TrainConfig tc;
  tc.epochs = 60;
  tc.batch_size = 8;
  std::size_t calls = 0;
  const auto a = train(init_params(cfg, 1), data, tc, [&](const EpochStats&, const Params&) { ++calls; });
  const auto b = train(init_params(cfg, 1), data, tc);
  CHECK(calls == tc.epochs);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].accuracy == b.history[i].accuracy);
  }
  CHECK(a.params.values == b.params.values);
  CHECK(a.history.back().accuracy == 1.0);
}

TEST_CASE("train: every class must be present") {
  const auto cfg = reduced_config();
  auto data = banded_dataset(cfg, 2, 1);
  data.erase(std::remove_if(data.begin(), data.end(), [](const auto& d) { return d.label == 3; }), data.end());
  CHECK_THROWS_AS(train(init_params(cfg, 1), data, TrainConfig{}), Error);
}

TEST_CASE("pipeline: flatline segments and stable predictions") {
  const auto p = init_params(ModelConfig{}, 1);
  Segment flat{"flat", 0, "I", std::vector<double>(2500, 12.0), 250.0, 0.0, 10.0, 0};
  const auto a = predict_pipeline(p, flat);
  double sum = 0.0;
  for (double q : a.probabilities) {
    CHECK(std::isfinite(q));
    sum += q;
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK(a.model_version == p.model_version);

  Segment at500{"s", 0, "I", oracle::sine(5.0, 500.0, 12.0), 500.0, 0.0, 12.0, 0};
  const auto img = segment_to_image(at500);
  CHECK(img.height == 64);
  CHECK(img.width == 256);
  const auto b1 = predict_pipeline(p, at500);
  const auto b2 = predict_pipeline(p, at500);
  CHECK(b1.probabilities == b2.probabilities);
}

TEST_CASE("checkpoint: round-trip and corruption") {
  auto p = init_params(reduced_config(), 9);
  p.running_stats[0] = 0.125;
  const auto bytes = serialize_params(p);
  const auto back = deserialize_params(bytes);
  CHECK(back.values == p.values);
  CHECK(back.running_stats == p.running_stats);
  CHECK(back.config == p.config);
  CHECK(back.model_version == p.model_version);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(deserialize_params(flipped), Error);

  auto magic = bytes;
  magic[0] = 'X';
  try {
    deserialize_params(magic);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse);
  }

  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 40);
  CHECK_THROWS_AS(deserialize_params(cut), Error);

  oracle::TempDir dir;
  save_checkpoint(p, dir / "m.ckpt");
  CHECK(load_checkpoint(dir / "m.ckpt").values == p.values);
}
