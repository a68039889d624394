#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using ubert::CheckpointError;
using ubert::ModelState;

namespace fs = std::filesystem;

namespace {

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ubert_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::vector<char> read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  void write(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  auto cfg = testutil::tiny_pipeline(8, 6, 2, 40);
  cfg.model.recurrence.bidirectional = true;
  cfg.model.recurrence.input_width = cfg.model.encoder.output_width();
  auto st = ModelState<float>::initialize(cfg.model, 2);
  // move the weights off their initial values so a re-initialization cannot pass
  for (const auto& n : st.names()) {
    for (auto& v : st.param(n).mutable_data()) v += 0.125f * float(rng() % 7);
  }
  st.set_trainable("embeddings", true);
  const auto path = dir_ / "model.ckpt";
  ubert::save_checkpoint(path, st, cfg, {{"note", "hello"}});
  auto ck = ubert::load_checkpoint<float>(path, &cfg.model);

  EXPECT_EQ(ck.extra.at("note"), "hello");
  EXPECT_EQ(ck.pipeline.chunk_size, cfg.chunk_size);
  EXPECT_EQ(ck.pipeline.overlap, cfg.overlap);
  EXPECT_EQ(ck.pipeline.model, cfg.model);
  ASSERT_EQ(ck.state.names(), st.names());
  for (const auto& n : st.names()) {
    const auto& a = st.param(n);
    const auto& b = ck.state.param(n);
    ASSERT_EQ(a.shape(), b.shape()) << n;
    EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)), 0) << n;
  }
  for (const auto& g : st.groups()) EXPECT_EQ(ck.state.trainable(g), st.trainable(g)) << g;

  for (int rep = 0; rep < 5; ++rep) {
    auto doc = testutil::random_document(10 + 13 * static_cast<std::size_t>(rep), 40, rng);
    EXPECT_EQ(ubert::predict_document(doc, st, cfg).probability,
              ubert::predict_document(doc, ck.state, ck.pipeline).probability);
  }
}

TEST_F(CheckpointTest, RejectsTruncatedAndCorruptFiles) {
  auto cfg = testutil::tiny_pipeline(8, 6, 2, 40);
  auto st = ModelState<double>::initialize(cfg.model, 3);
  const auto path = dir_ / "model.ckpt";
  ubert::save_checkpoint(path, st, cfg);
  const auto bytes = read(path);

  for (std::size_t keep : {std::size_t(0), std::size_t(10), bytes.size() / 2, bytes.size() - 1}) {
    write(path, std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep)));
    EXPECT_THROW(ubert::load_checkpoint<double>(path), CheckpointError) << "kept " << keep;
  }

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  write(path, flipped);
  try {
    ubert::load_checkpoint<double>(path);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }

  auto magic = bytes;
  magic[0] = 'X';
  write(path, magic);
  EXPECT_THROW(ubert::load_checkpoint<double>(path), CheckpointError);

  auto version = bytes;
  version[8] = 9;
  write(path, version);
  try {
    ubert::load_checkpoint<double>(path);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }

  EXPECT_THROW(ubert::load_checkpoint<double>(dir_ / "missing.ckpt"), CheckpointError);
}

TEST_F(CheckpointTest, RejectsConfigMismatch) {
  auto cfg = testutil::tiny_pipeline(8, 6, 2, 40);
  auto st = ModelState<double>::initialize(cfg.model, 4);
  const auto path = dir_ / "model.ckpt";
  ubert::save_checkpoint(path, st, cfg);

  auto other = testutil::tiny_pipeline(16, 6, 2, 40).model;
  try {
    ubert::load_checkpoint<double>(path, &other);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("mismatch"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ubert::load_checkpoint<float>(path), CheckpointError);  // stored 64-bit

  auto wrong = cfg;
  wrong.model.encoder.dim = 16;
  EXPECT_THROW(ubert::save_checkpoint(path, st, wrong), std::invalid_argument);
}
