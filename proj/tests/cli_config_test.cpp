#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "run_config.hpp"

namespace fs = std::filesystem;
using ubert::cli::load_run_config;

namespace {

fs::path write_config(const std::string& name, const std::string& text) {
  auto path = fs::temp_directory_path() / ("ubert_cfg_" + name + ".json");
  std::ofstream(path) << text;
  return path;
}

void expect_rejected(const std::string& name, const std::string& text, const std::string& fragment) {
  auto path = write_config(name, text);
  try {
    load_run_config(path);
    ADD_FAILURE() << "accepted " << text;
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
  fs::remove(path);
}

}  // namespace

TEST(RunConfig, PartialSectionsKeepDefaults) {
  auto path = write_config("partial",
                           R"({"pipeline": {"chunk_size": 64, "model": {"recurrence": {"pooling": "mean"}}},
                               "corpus": {"position": "tail-only", "mode": "pair"},
                               "train": {"epochs": 3}})");
  auto cfg = load_run_config(path);
  fs::remove(path);
  const ubert::cli::RunConfig defaults;
  EXPECT_EQ(cfg.pipeline.chunk_size, 64u);
  EXPECT_EQ(cfg.pipeline.overlap, defaults.pipeline.overlap);
  EXPECT_EQ(cfg.pipeline.model.recurrence.pooling, ubert::Pooling::mean);
  EXPECT_EQ(cfg.pipeline.model.encoder, defaults.pipeline.model.encoder);
  EXPECT_EQ(cfg.corpus.position, ubert::SignalPosition::tail);
  EXPECT_EQ(cfg.corpus.mode, ubert::SignalMode::pair);
  EXPECT_EQ(cfg.corpus.n_docs, defaults.corpus.n_docs);
  EXPECT_EQ(cfg.train.epochs, 3u);
  EXPECT_EQ(cfg.train.max_lr, defaults.train.max_lr);
  EXPECT_EQ(cfg.evaluation.replicates, 2000u);
}

TEST(RunConfig, SeedReachesEveryStream) {
  ubert::cli::RunConfig cfg;
  ubert::cli::apply_seed(cfg, 42);
  EXPECT_EQ(cfg.corpus.seed, 42u);
  EXPECT_EQ(cfg.pipeline.seed, 42u);
  EXPECT_EQ(cfg.train.seed, 42u);
}

TEST(RunConfig, RejectsUnknownKeysAtAnyDepth) {
  expect_rejected("top", R"({"pipline": {}})", "pipline");
  expect_rejected("nested", R"({"pipeline": {"chunk_sise": 3}})", "pipeline.chunk_sise");
  expect_rejected("deep", R"({"pipeline": {"model": {"encoder": {"layers": 2}}}})", "pipeline.model.encoder.layers");
}

TEST(RunConfig, RejectsBadEnumsTypesAndSyntax) {
  expect_rejected("enum", R"({"corpus": {"position": "tail"}})", "position");
  expect_rejected("pool", R"({"pipeline": {"model": {"recurrence": {"pooling": "sum"}}}})", "pooling");
  expect_rejected("type", R"({"train": {"epochs": "three"}})", "config");
  expect_rejected("syntax", R"({"train": )", "not valid JSON");
  expect_rejected("array", R"([1, 2])", "JSON object");
  EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), std::runtime_error);
}

TEST(ResolveOverlap, EvenPassesOddFails) {
  std::ostringstream warn;
  EXPECT_EQ(ubert::cli::resolve_overlap(0, warn), 0u);
  EXPECT_EQ(ubert::cli::resolve_overlap(204, warn), 204u);
  EXPECT_TRUE(warn.str().empty());
  EXPECT_EQ(ubert::cli::resolve_overlap(205, warn), 204u);
  EXPECT_NE(warn.str().find("204"), std::string::npos);
  for (std::size_t z : {1, 3, 203, 207}) EXPECT_THROW(ubert::cli::resolve_overlap(z, warn), std::invalid_argument);
}
