#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "decaps/checkpoint.hpp"
#include "decaps/image.hpp"
#include "decaps/model.hpp"
#include "decaps/ops.hpp"
#include "decaps/spread_loss.hpp"
#include "support/fixtures.hpp"

using namespace decaps;
using decaps::testing::fixture_images;
using decaps::testing::tiny_config;
namespace fs = std::filesystem;

namespace {

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("decaps_model_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(ShapeChain, FullSizeConfig) {
  const ShapeChain c = shape_chain(ModelConfig::full_size());
  EXPECT_EQ(c.backbone, (std::vector<std::size_t>{224, 112, 56, 28}));
  EXPECT_EQ(c.primary, 28u);
  EXPECT_EQ(c.conv1, 26u);
  EXPECT_EQ(c.conv2, 24u);
  EXPECT_EQ(c.ham, (Shape{32, 2, 24, 24}));
}

TEST(ShapeChain, DeskConfig) {
  const ShapeChain c = shape_chain(ModelConfig::desk());
  EXPECT_EQ(c.primary, 6u);
  EXPECT_EQ(c.conv1, 4u);
  EXPECT_EQ(c.conv2, 2u);
  EXPECT_EQ(c.ham, (Shape{8, 2, 2, 2}));
}

TEST(ShapeChain, InconsistentReportsChain) {
  ModelConfig c = ModelConfig::desk();
  c.input_size = 40;  // 40 -> 20 -> 10 -> 5 -> 3, then 1 < K
  try {
    shape_chain(c);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("input 40"), std::string::npos) << msg;
    EXPECT_NE(msg.find("primary 3"), std::string::npos) << msg;
  }
  EXPECT_THROW(DecapsModel{c}, ShapeError);
}

TEST(ShapeChain, RandomConfigsFollowArithmetic) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    ModelConfig c = ModelConfig::desk();
    c.input_size = 1 + rng.below(500);
    c.kernel = 1 + rng.below(4);
    c.stride = 1 + rng.below(2);
    c.backbone_blocks = 1 + rng.below(4);
    c.backbone_out_channels = 64;
    std::size_t e = c.input_size;
    for (std::size_t i = 0; i <= c.backbone_blocks; ++i) e = (e + 1) / 2;
    const bool ok1 = e >= c.kernel;
    const std::size_t g1 = ok1 ? (e - c.kernel) / c.stride + 1 : 0;
    const bool ok = ok1 && g1 >= c.kernel;
    if (!ok) {
      EXPECT_THROW(shape_chain(c), ShapeError);
      continue;
    }
    const ShapeChain chain = shape_chain(c);
    EXPECT_EQ(chain.primary, e);
    EXPECT_EQ(chain.conv1, g1);
    EXPECT_EQ(chain.conv2, (g1 - c.kernel) / c.stride + 1);
    EXPECT_EQ(chain.ham, (Shape{c.conv2_heads, c.classes, chain.conv2, chain.conv2}));
  }
}

TEST(ModelConfigTest, FullSizeDefaults) {
  const ModelConfig c = ModelConfig::full_size();
  EXPECT_EQ(c.input_size, 448u);
  EXPECT_EQ(c.backbone_blocks, 3u);
  EXPECT_EQ(c.backbone_out_channels, 1024u);
  EXPECT_EQ(c.projection_channels, 512u);
  EXPECT_EQ(c.primary_heads, 32u);
  EXPECT_EQ(c.conv1_heads, 32u);
  EXPECT_EQ(c.conv2_heads, 32u);
  EXPECT_EQ(c.pose_dim, 16u);
  EXPECT_EQ(c.kernel, 3u);
  EXPECT_EQ(c.stride, 1u);
  EXPECT_EQ(c.routing_iters, 3u);
  EXPECT_EQ(c.theta_crop, 0.5);
  EXPECT_EQ(c.theta_drop, 0.3);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.beta1, 0.5);
  EXPECT_EQ(c.beta2, 0.999);
  EXPECT_EQ(c.batch_size, 16u);
}

TEST(ModelConfigTest, KeyValueRoundTrip) {
  ModelConfig c = ModelConfig::desk();
  c.theta_crop = 0.37;
  c.routing = RoutingMethod::baseline;
  c.seed = 123456789012345ULL;
  ModelConfig back;
  for (const auto& [k, v] : c.to_key_values()) ASSERT_TRUE(back.set(k, v)) << k;
  EXPECT_EQ(back.to_key_values(), c.to_key_values());
  EXPECT_FALSE(back.set("no_such_key", "1"));
  EXPECT_THROW(back.set("kernel", "three"), std::invalid_argument);
}

TEST(Model, TwoClassCapsulesWithNormScores) {
  DecapsModel m(tiny_config());
  const ModelOutput out = m.forward(fixture_images(3, 24, 1), Mode::eval);
  EXPECT_EQ(out.activations.shape(), (Shape{3, 2}));
  EXPECT_EQ(out.poses.shape(), (Shape{3, 2, 4}));
  EXPECT_EQ(out.ham.shape(), (Shape{3, 2, 2, 2, 2}));
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 2; ++j) {
      double sq = 0;
      for (std::size_t k = 0; k < 4; ++k) sq += std::pow(out.poses.values()[(n * 2 + j) * 4 + k], 2);
      const double a = out.activations.values()[n * 2 + j];
      EXPECT_NEAR(a, std::sqrt(sq), 1e-12);
      EXPECT_GE(a, 0.0);
      EXPECT_LT(a, 1.0);
    }
  for (double h : out.ham.values()) EXPECT_GE(h, 0.0);
}

TEST(Model, DeskParameterCountAndHam) {
  DecapsModel m(ModelConfig::desk());
  EXPECT_GT(m.parameter_count(), 0u);
  const ModelOutput out = m.forward(fixture_images(1, 96, 2), Mode::eval);
  EXPECT_EQ(out.ham.shape(), (Shape{1, 8, 2, 2, 2}));
}

TEST(Model, ZeroWeightsGiveZeroActivations) {
  ModelConfig cfg = tiny_config();
  cfg.coordinate_addition = false;
  DecapsModel m(cfg);
  m.zero_weights();
  for (Mode mode : {Mode::eval, Mode::train}) {
    const ModelOutput out = m.forward(fixture_images(2, 24, 4), mode);
    for (double a : out.activations.values()) EXPECT_EQ(a, 0.0);
  }
}

TEST(Model, ZeroWeightsWithCoordinatesIgnoreInput) {
  DecapsModel m(tiny_config());
  m.zero_weights();
  const auto a = to_vec(m.forward(fixture_images(1, 24, 4), Mode::eval).activations);
  const auto b = to_vec(m.forward(fixture_images(1, 24, 5), Mode::eval).activations);
  EXPECT_EQ(a, b);
}

TEST(Model, DeterministicForSeedAndInput) {
  const Tensor x = fixture_images(2, 24, 5);
  DecapsModel a(tiny_config()), b(tiny_config());
  EXPECT_EQ(to_vec(a.forward(x, Mode::eval).activations), to_vec(b.forward(x, Mode::eval).activations));
  EXPECT_EQ(to_vec(a.forward(x, Mode::train).poses), to_vec(b.forward(x, Mode::train).poses));
}

TEST(Model, EvalIsPureFunction) {
  DecapsModel m(tiny_config());
  const Tensor x = fixture_images(2, 24, 6);
  const auto first = to_vec(m.forward(x, Mode::eval).poses);
  m.forward(fixture_images(2, 24, 7), Mode::eval);
  EXPECT_EQ(to_vec(m.forward(x, Mode::eval).poses), first);
}

TEST(Model, BatchIndependenceInEval) {
  ModelConfig cfg = ModelConfig::desk();
  DecapsModel m(cfg);
  const Tensor x = fixture_images(2, 96, 8);
  const ModelOutput joint = m.forward(x, Mode::eval);
  for (std::size_t n = 0; n < 2; ++n) {
    const Tensor one = Tensor::from({1, 1, 96, 96}, std::vector<double>(x.values().begin() + n * 96 * 96,
                                                                        x.values().begin() + (n + 1) * 96 * 96));
    const ModelOutput single = m.forward(one, Mode::eval);
    for (std::size_t k = 0; k < single.poses.numel(); ++k)
      EXPECT_NEAR(single.poses.values()[k], joint.poses.values()[n * single.poses.numel() + k], 1e-12);
    for (std::size_t k = 0; k < single.ham.numel(); ++k)
      EXPECT_NEAR(single.ham.values()[k], joint.ham.values()[n * single.ham.numel() + k], 1e-12);
  }
}

TEST(Model, RejectsWrongInputShape) {
  DecapsModel m(tiny_config());
  EXPECT_THROW(m.forward(fixture_images(1, 20, 0), Mode::eval), ShapeError);
}

TEST(Model, NonFiniteInputNamesLayer) {
  DecapsModel m(tiny_config());
  std::vector<double> v(24 * 24, 0.5);
  v[7] = std::nan("");
  try {
    m.forward(Tensor::from({1, 1, 24, 24}, v), Mode::eval);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos) << e.what();
  }
}

TEST(Model, EndToEndGradientCheck) {
  Rng rng(21);
  for (std::uint64_t instance = 0; instance < 5; ++instance) {
    const auto r = decaps::testing::end_to_end_grad_check(instance, 6, rng);
    EXPECT_LT(r.max_rel_error, 1e-3) << "instance " << instance << " worst " << r.worst;
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor w = Tensor::from({2}, {1.0, -2.0}, true);
  Adam opt({w}, 0.1, 0.5, 0.999);
  backward(sum_all(mul(w, Tensor::from({2}, {3.0, -0.5}))));
  opt.step();
  EXPECT_NEAR(w.values()[0], 0.9, 1e-6);
  EXPECT_NEAR(w.values()[1], -1.9, 1e-6);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const fs::path dir = temp_dir("rt");
  DecapsModel m(tiny_config());
  m.forward(fixture_images(2, 24, 9), Mode::train);  // moves running statistics
  Rng stream(77);
  stream.next();
  save_checkpoint(dir / "a.dcaps", m, {4, stream.state()});
  LoadedCheckpoint back = load_checkpoint(dir / "a.dcaps");
  EXPECT_EQ(back.info.epoch, 4u);
  EXPECT_EQ(back.info.rng, stream.state());
  Rng resumed(0);
  resumed.set_state(back.info.rng);
  EXPECT_EQ(resumed.next(), stream.next());
  auto s1 = m.state(), s2 = back.model.state();
  ASSERT_EQ(s1.size(), s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1[i].name, s2[i].name);
    EXPECT_EQ(std::vector<double>(s1[i].data.begin(), s1[i].data.end()),
              std::vector<double>(s2[i].data.begin(), s2[i].data.end()));
  }
  const Tensor x = fixture_images(2, 24, 10);
  EXPECT_EQ(to_vec(m.forward(x, Mode::eval).poses), to_vec(back.model.forward(x, Mode::eval).poses));
  EXPECT_EQ(read_checkpoint_config(dir / "a.dcaps").to_key_values(), m.config().to_key_values());
}

TEST(Checkpoint, FileStartsWithMagic) {
  const fs::path dir = temp_dir("magic");
  DecapsModel m(tiny_config());
  save_checkpoint(dir / "a.dcaps", m, {});
  std::ifstream in(dir / "a.dcaps", std::ios::binary);
  std::string head(7, '\0');
  in.read(head.data(), 7);
  EXPECT_EQ(head, "DCAPS1\n");
}

TEST(Checkpoint, TruncatedAndExtendedPayloadRejected) {
  const fs::path dir = temp_dir("trunc");
  DecapsModel m(tiny_config());
  save_checkpoint(dir / "a.dcaps", m, {});
  const auto size = fs::file_size(dir / "a.dcaps");
  fs::copy_file(dir / "a.dcaps", dir / "short.dcaps");
  fs::resize_file(dir / "short.dcaps", size - 8);
  EXPECT_THROW(load_checkpoint(dir / "short.dcaps"), CheckpointError);
  fs::copy_file(dir / "a.dcaps", dir / "long.dcaps");
  std::ofstream(dir / "long.dcaps", std::ios::binary | std::ios::app) << "12345678";
  EXPECT_THROW(load_checkpoint(dir / "long.dcaps"), CheckpointError);
}

TEST(Checkpoint, BadMagicAndVersionRejected) {
  const fs::path dir = temp_dir("magicbad");
  DecapsModel m(tiny_config());
  save_checkpoint(dir / "a.dcaps", m, {});
  std::string bytes;
  {
    std::ifstream in(dir / "a.dcaps", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::string bad = bytes;
  bad[5] = '9';
  std::ofstream(dir / "m.dcaps", std::ios::binary) << bad;
  EXPECT_THROW(load_checkpoint(dir / "m.dcaps"), CheckpointError);
  std::string ver = bytes;
  const auto pos = ver.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  ver[pos + 10] = '7';
  std::ofstream(dir / "v.dcaps", std::ios::binary) << ver;
  try {
    load_checkpoint(dir / "v.dcaps");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_checkpoint(dir / "missing.dcaps"), CheckpointError);
}

TEST(Checkpoint, ConfigMismatchRejected) {
  const fs::path dir = temp_dir("cfg");
  DecapsModel m(ModelConfig::desk());
  save_checkpoint(dir / "desk.dcaps", m, {});
  EXPECT_THROW(load_checkpoint(dir / "desk.dcaps", ModelConfig::full_size()), CheckpointError);
  ModelConfig other_seed = ModelConfig::desk();
  other_seed.seed = 99;
  other_seed.learning_rate = 0.5;
  EXPECT_NO_THROW(load_checkpoint(dir / "desk.dcaps", other_seed));
}
