#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "../common/oracles.hpp"
#include "las/io.hpp"

using namespace las;
namespace fs = std::filesystem;

#ifndef LAS_FIXTURE_DIR
#error "LAS_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("las_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string fixture(const std::string& name) { return std::string(LAS_FIXTURE_DIR) + "/" + name; }

}  // namespace

// -------------------------------------------------------------------- PFM

TEST(Pfm, RoundTripIsBitExact) {
  TempDir dir;
  SplitMix64 rng(1);
  Tensor m = oracle::random_tensor({7, 11}, rng, -100, 100);
  m[3] = -0.0f;
  m[4] = 1e-40f;  // denormal
  io::write_pfm(dir.file("a.pfm"), m);
  EXPECT_TRUE(io::read_pfm(dir.file("a.pfm")).identical(m));
}

TEST(Pfm, SingleValuePayloadIsLittleEndian) {
  TempDir dir;
  io::write_pfm(dir.file("one.pfm"), Tensor({1, 1}, 7.5f));
  const std::string bytes = io::read_file(dir.file("one.pfm"));
  ASSERT_EQ(bytes.substr(0, 12), "Pf\n1 1\n-1.0\n");
  ASSERT_EQ(bytes.size(), 16u);
  const unsigned char expected[4] = {0x00, 0x00, 0xF0, 0x40};  // 7.5f little-endian
  EXPECT_EQ(std::memcmp(bytes.data() + 12, expected, 4), 0);
}

TEST(Pfm, BigEndianAndRowOrder) {
  TempDir dir;
  // Two rows stored bottom first, big-endian payload (positive scale).
  std::string bytes = "Pf\n1 2\n1.0\n";
  const unsigned char bottom[4] = {0x40, 0x00, 0x00, 0x00};  // 2.0f
  const unsigned char top[4] = {0x3F, 0x80, 0x00, 0x00};     // 1.0f
  bytes.append(reinterpret_cast<const char*>(bottom), 4);
  bytes.append(reinterpret_cast<const char*>(top), 4);
  io::write_file(dir.file("be.pfm"), bytes);
  const Tensor t = io::read_pfm(dir.file("be.pfm"));
  EXPECT_EQ(t.shape(), (Shape{2, 1}));
  EXPECT_EQ(t[0], 1.0f);
  EXPECT_EQ(t[1], 2.0f);
}

TEST(Pfm, Errors) {
  TempDir dir;
  io::write_file(dir.file("trunc.pfm"), std::string("Pf\n4 4\n-1.0\n") + std::string(10, '\0'));
  EXPECT_THROW(io::read_pfm(dir.file("trunc.pfm")), CorruptFileError);
  io::write_file(dir.file("color.pfm"), "PF\n1 1\n-1.0\n0000");
  EXPECT_THROW(io::read_pfm(dir.file("color.pfm")), IoError);
  EXPECT_THROW(io::read_pfm(dir.file("missing.pfm")), IoError);
  EXPECT_THROW(io::write_pfm(dir.file("x.pfm"), Tensor({1, 2, 2})), ShapeError);
}

// -------------------------------------------------------------------- PNG

TEST(Png, Fixtures) {
  const Tensor black = io::read_png(fixture("black_3x2.png"));
  EXPECT_EQ(black.shape(), (Shape{3, 2, 3}));
  for (float v : black.data()) EXPECT_EQ(v, 0.0f);
  const Tensor white = io::read_png(fixture("white_2x2.png"));
  for (float v : white.data()) EXPECT_EQ(v, 1.0f);
  const Tensor rb = io::read_png(fixture("red_blue_2x1.png"));
  EXPECT_EQ(rb.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(rb.vec(), (std::vector<float>{1, 0, 0, 0, 0, 1}));
  const Tensor gray = io::read_png(fixture("gray_2x2.png"));
  for (float v : gray.data()) EXPECT_EQ(v, 128.0f / 255.0f);
}

TEST(Png, QuantizedImagesRoundTrip) {
  TempDir dir;
  SplitMix64 rng(2);
  Tensor img({3, 5, 6});
  for (float& v : img.data()) v = static_cast<float>(rng.uniform_int(0, 255)) / 255.0f;
  io::write_png(dir.file("q.png"), img);
  EXPECT_TRUE(io::read_png(dir.file("q.png")).identical(img));
  EXPECT_THROW(io::read_png(dir.file("none.png")), IoError);
}

// ---------------------------------------------------------------- weights

TEST(Weights, RoundTripIsBitExactAndDeterministic) {
  TempDir dir;
  const NetworkConfig net = NetworkConfig::micro();
  const WeightStore w = WeightStore::initialize(net, 9);
  io::save_weights(dir.file("a.lasw"), w);
  io::save_weights(dir.file("b.lasw"), w);
  EXPECT_EQ(io::read_file(dir.file("a.lasw")), io::read_file(dir.file("b.lasw")));
  const WeightStore back = io::load_weights(dir.file("a.lasw"), net);
  for (const auto& [name, e] : w.entries()) {
    EXPECT_TRUE(back.at(name).identical(e.value)) << name;
    EXPECT_EQ(back.entry(name).trainable, e.trainable);
  }
  EXPECT_EQ(io::read_file(dir.file("a.lasw")).substr(0, 8), "LASW0001");
}

TEST(Weights, TruncatedAndForeignFiles) {
  TempDir dir;
  const NetworkConfig net = NetworkConfig::micro();
  io::save_weights(dir.file("a.lasw"), WeightStore::initialize(net, 1));
  const std::string bytes = io::read_file(dir.file("a.lasw"));
  for (size_t cut : {size_t{4}, size_t{12}, size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    io::write_file(dir.file("t.lasw"), bytes.substr(0, cut));
    EXPECT_THROW(io::load_weights(dir.file("t.lasw"), net), CorruptFileError) << cut;
  }
  std::string foreign = bytes;
  foreign[7] = '2';
  io::write_file(dir.file("v.lasw"), foreign);
  EXPECT_THROW(io::load_weights(dir.file("v.lasw"), net), VersionError);
}

TEST(Weights, ShapesValidatedAgainstConfig) {
  TempDir dir;
  NetworkConfig net = NetworkConfig::micro();
  io::save_weights(dir.file("a.lasw"), WeightStore::initialize(net, 1));
  net.head_channels = 16;
  EXPECT_THROW(io::load_weights(dir.file("a.lasw"), net), ShapeError);
  WeightStore extra = WeightStore::initialize(NetworkConfig::micro(), 1);
  extra.insert("stray", WeightEntry{Tensor({1}), InitScheme::Zeros, true});
  io::save_weights(dir.file("b.lasw"), extra);
  EXPECT_THROW(io::load_weights(dir.file("b.lasw"), NetworkConfig::micro()), ShapeError);
}

// ---------------------------------------------------------------- configs

TEST(Config, ParsesSectionsAndTypedValues) {
  const io::ConfigFile cfg = io::ConfigFile::parse(R"(
# toy run
[network]
preset = micro
agg_variant = interleaved   # trailing comment
init_seed = 4

[train]
stage = 2
steps = 12
teacher_update = ema
crop = 32x64
peak_lr = 1e-3
)");
  uint64_t seed = 0;
  const NetworkConfig net = io::network_config(cfg, &seed);
  EXPECT_EQ(net.agg_variant, AggVariant::Interleaved);
  EXPECT_EQ(net.preset, SizePreset::Custom);
  EXPECT_EQ(seed, 4u);
  const io::TrainJob job = io::train_job(cfg);
  EXPECT_EQ(job.stage.stage, Stage::Two);
  EXPECT_EQ(job.stage.steps, 12);
  EXPECT_EQ(job.stage.teacher_update, TeacherUpdate::Ema);
  EXPECT_EQ(job.stage.crop_height, 32);
  EXPECT_EQ(job.stage.crop_width, 64);
  EXPECT_EQ(job.stage.peak_lr, 1e-3);
}

TEST(Config, FailsClosed) {
  EXPECT_THROW(io::network_config(io::ConfigFile::parse("[network]\nd_maxx = 64\n")), ConfigError);
  EXPECT_THROW(io::network_config(io::ConfigFile::parse("[network]\nd_max = 6x4\n")), ConfigError);
  EXPECT_THROW(io::network_config(io::ConfigFile::parse("[network]\nd_max = 62\n")), ConfigError);
  EXPECT_THROW(io::ConfigFile::parse("[network\n"), ConfigError);
  EXPECT_THROW(io::ConfigFile::parse("[a]\nk = 1\nk = 2\n"), ConfigError);
  EXPECT_THROW(io::ConfigFile::parse("just words\n"), ConfigError);
  EXPECT_THROW(io::scene_spec(io::ConfigFile::parse("[scene]\ntexture = wood\n")), ConfigError);
  EXPECT_THROW(io::train_job(io::ConfigFile::parse("[train]\nstage = 4\n")), ConfigError);
  EXPECT_THROW(io::require_sections(io::ConfigFile::parse("[scene]\n[extra]\n"), {"scene"}), ConfigError);
  EXPECT_THROW(io::ConfigFile::load("/nonexistent/cfg"), IoError);
}

TEST(Config, PresetOnlyKeepsPresetTag) {
  const NetworkConfig net = io::network_config(io::ConfigFile::parse("[network]\npreset = paper-like\n"));
  EXPECT_EQ(net.preset, SizePreset::PaperLike);
  EXPECT_EQ(net.d_max, 192);
  EXPECT_EQ(io::network_config_arg("micro").d_max, 64);
}

TEST(Config, StagesAndKernel) {
  const NetworkConfig net = io::network_config(
      io::ConfigFile::parse("[network]\nstages = 8x1x2, 16x1x2, 24x1x2, 32x1x2\nthree_d_kernel = 3x5x5\n"));
  EXPECT_EQ(net.stages[2].channels, 24);
  EXPECT_EQ(net.three_d_kernel[1], 5);
}

TEST(Config, ShippedConfigsParse) {
  int seen = 0;
  for (const auto& e : fs::directory_iterator(LAS_CONFIG_DIR)) {
    if (e.path().extension() != ".cfg") continue;
    const io::ConfigFile cfg = io::ConfigFile::load(e.path().string());
    if (cfg.has_section("scene")) EXPECT_NO_THROW(io::scene_spec(cfg)) << e.path();
    if (cfg.has_section("network")) EXPECT_NO_THROW(io::network_config(cfg)) << e.path();
    if (cfg.has_section("train")) {
      io::TrainJob job;
      EXPECT_NO_THROW(job = io::train_job(cfg)) << e.path();
      EXPECT_FALSE(job.data.empty()) << e.path();
    }
    ++seen;
  }
  EXPECT_GE(seen, 5);
}

// --------------------------------------------------------------- datasets

TEST(Dataset, WriteReadRoundTrip) {
  TempDir dir;
  SceneSpec spec;
  spec.count = 2;
  spec.seed = 5;
  const auto samples = gen_synthetic_dataset(spec);
  io::write_dataset(dir.file("ds"), samples);
  const auto back = io::read_dataset(dir.file("ds"));
  ASSERT_EQ(back.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(back[i].left.identical(samples[i].left));
    EXPECT_TRUE(back[i].right.identical(samples[i].right));
    EXPECT_TRUE(back[i].gt.identical(samples[i].gt));
    EXPECT_TRUE(back[i].valid.identical(samples[i].valid));
    EXPECT_TRUE(back[i].occluded.identical(samples[i].occluded));
    EXPECT_EQ(back[i].id, samples[i].id);
  }
}
