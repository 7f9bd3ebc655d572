#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "tcslot/checkpoint.hpp"

using namespace tcslot;
namespace fs = std::filesystem;

namespace {

model::ModelConfig small(std::uint64_t seed = 3) {
  model::ModelConfig c;
  c.input_height = c.input_width = 32;
  c.encoder_channels = {4, 8};
  c.encoder_strides = {2, 2};
  c.decoder_channels = {8, 8, 8};
  c.head_channels = 8;
  c.embed_dim = 8;
  c.init_seed = seed;
  return c;
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("tcslot_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
  }
  void write(const fs::path& p, const std::string& b) { std::ofstream(p, std::ios::binary) << b; }

  fs::path dir_;
};

}  // namespace

TEST_F(CheckpointTest, RoundTripRestoresOutputs) {
  model::TcslotNet<float> net(small());
  checkpoint::save(dir_ / "a.ckpt", net);
  const auto back = checkpoint::load<float>(dir_ / "a.ckpt");
  EXPECT_EQ(nlohmann::json(back.config()), nlohmann::json(net.config()));
  for (std::size_t i = 0; i < net.parameters().count(); ++i) {
    EXPECT_EQ(back.parameters().items()[i].first, net.parameters().items()[i].first);
    EXPECT_EQ(back.parameters().items()[i].second.value(), net.parameters().items()[i].second.value());
  }
  embedding::StubEmbeddingProvider p(8);
  std::array<Tensor<float>, 3> s{Tensor<float>(Shape{32, 32}, 0.1f), Tensor<float>(Shape{32, 32}, 0.4f),
                                 Tensor<float>(Shape{32, 32}, 0.8f)};
  EXPECT_EQ(back.forward(s, "left", p).heatmap.value(), net.forward(s, "left", p).heatmap.value());

  // Loading into a differently initialised model overwrites every value.
  model::TcslotNet<float> other(small(99));
  checkpoint::load_into(other, checkpoint::read(dir_ / "a.ckpt"));
  EXPECT_EQ(other.parameters().items()[0].second.value(), net.parameters().items()[0].second.value());

  // Double models store values exactly.
  model::TcslotNet<double> d(small());
  checkpoint::save(dir_ / "d.ckpt", d);
  const auto db = checkpoint::load<double>(dir_ / "d.ckpt");
  EXPECT_EQ(db.parameters().items().back().second.value(), d.parameters().items().back().second.value());
}

TEST_F(CheckpointTest, CorruptFilesRaiseDataError) {
  model::TcslotNet<float> net(small());
  checkpoint::save(dir_ / "a.ckpt", net);
  const auto good = bytes(dir_ / "a.ckpt");

  EXPECT_THROW(checkpoint::read(dir_ / "missing.ckpt"), DataError);
  write(dir_ / "t.ckpt", good.substr(0, good.size() / 2));
  EXPECT_THROW(checkpoint::read(dir_ / "t.ckpt"), DataError);
  write(dir_ / "t.ckpt", good.substr(0, 5));
  EXPECT_THROW(checkpoint::read(dir_ / "t.ckpt"), DataError);
  auto bad = good;
  bad[0] = 'X';
  write(dir_ / "m.ckpt", bad);
  EXPECT_THROW(checkpoint::read(dir_ / "m.ckpt"), DataError);
  bad = good;
  bad[8] = 7;  // version
  write(dir_ / "v.ckpt", bad);
  EXPECT_THROW(checkpoint::read(dir_ / "v.ckpt"), DataError);
  bad = good;
  bad[20] = '#';  // inside the config JSON
  write(dir_ / "c.ckpt", bad);
  EXPECT_THROW(checkpoint::read(dir_ / "c.ckpt"), DataError);
  write(dir_ / "x.ckpt", good + "junk");
  EXPECT_THROW(checkpoint::read(dir_ / "x.ckpt"), DataError);
}

TEST_F(CheckpointTest, IncompatibleModelRaisesConfigError) {
  model::TcslotNet<float> net(small());
  checkpoint::save(dir_ / "a.ckpt", net);
  const auto a = checkpoint::read(dir_ / "a.ckpt");

  auto wider = small();
  wider.head_channels = 12;
  model::TcslotNet<float> w(wider);
  EXPECT_THROW(checkpoint::load_into(w, a), ConfigError);

  auto no_ctg = small();
  no_ctg.use_ctg = false;
  model::TcslotNet<float> n(no_ctg);
  EXPECT_THROW(checkpoint::load_into(n, a), ConfigError);
}
