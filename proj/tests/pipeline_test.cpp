#include <gtest/gtest.h>

#include "test_util.hpp"

using ubert::ModelState;
using ubert::PipelineConfig;

TEST(PlanPasses, Examples) {
  EXPECT_EQ(ubert::plan_passes(15, 15), (std::vector<std::size_t>{15}));
  EXPECT_EQ(ubert::plan_passes(16, 15), (std::vector<std::size_t>{15, 1}));
  EXPECT_EQ(ubert::plan_passes(37, 15), (std::vector<std::size_t>{15, 15, 7}));
  EXPECT_EQ(ubert::plan_passes(1, 15), (std::vector<std::size_t>{1}));
  EXPECT_EQ(ubert::plan_passes(40, 15).size(), 3u);
  EXPECT_THROW(ubert::plan_passes(0, 15), std::invalid_argument);
  EXPECT_THROW(ubert::plan_passes(3, 0), std::invalid_argument);
}

TEST(PlanPasses, CeilingCountAndSizes) {
  for (std::size_t n = 1; n <= 100; ++n) {
    for (std::size_t m = 1; m <= 20; ++m) {
      const auto p = ubert::plan_passes(n, m);
      ASSERT_EQ(p.size(), (n + m - 1) / m);
      std::size_t total = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        total += p[i];
        if (i + 1 < p.size()) {
          ASSERT_EQ(p[i], m);
        }
        ASSERT_GE(p[i], 1u);
        ASSERT_LE(p[i], m);
      }
      ASSERT_EQ(total, n);
    }
  }
}

TEST(PipelineConfig, Validation) {
  auto cfg = testutil::tiny_pipeline();
  EXPECT_NO_THROW(cfg.validate());
  auto wide = cfg;
  wide.chunk_size = 7;  // window 9 > max_window 8
  EXPECT_THROW(wide.validate(), std::invalid_argument);
  auto odd = cfg;
  odd.overlap = 3;
  EXPECT_THROW(odd.validate(), std::invalid_argument);
  auto zero = cfg;
  zero.max_c = 0;
  EXPECT_THROW(zero.validate(), std::invalid_argument);
  auto json = nlohmann::json(cfg);
  EXPECT_EQ(json.get<PipelineConfig>().model, cfg.model);
}

TEST(PredictDocument, ShortDocumentUsesOnePass) {
  std::mt19937_64 rng(1);
  auto cfg = testutil::tiny_pipeline();
  auto st = ModelState<double>::initialize(cfg.model, 2);
  auto doc = testutil::random_document(4, 40, rng);
  ubert::PassCounter counter;
  auto p = ubert::predict_document(doc, st, cfg, &counter);
  EXPECT_EQ(counter.passes.load(), 1u);
  EXPECT_GT(p.probability, 0.0);
  EXPECT_LT(p.probability, 1.0);
  EXPECT_EQ(p.label, p.probability >= 0.5 ? 1 : 0);
  EXPECT_THROW(ubert::predict_document(ubert::TokenizedDocument{"e", {}, {}}, st, cfg), std::invalid_argument);
}

TEST(PredictDocument, PassCountIsCeilingOfChunksOverMaxC) {
  std::mt19937_64 rng(2);
  auto cfg = testutil::tiny_pipeline(8);
  auto st = ModelState<float>::initialize(cfg.model, 3);
  std::uniform_int_distribution<std::size_t> kd(1, 300), md(1, 20);
  for (int rep = 0; rep < 30; ++rep) {
    cfg.max_c = md(rng);
    auto doc = testutil::random_document(kd(rng), 40, rng);
    ubert::PassCounter counter;
    ubert::predict_document(doc, st, cfg, &counter);
    const std::size_t n = ubert::chunk_count(doc.length(), cfg.chunk_size, cfg.overlap);
    EXPECT_EQ(counter.passes.load(), (n + cfg.max_c - 1) / cfg.max_c);
  }
}

TEST(PredictDocument, TwentyThousandTokensNeedThreePasses) {
  std::mt19937_64 rng(3);
  auto cfg = testutil::tiny_pipeline(8, 510, 0, 40);
  auto st = ModelState<float>::initialize(cfg.model, 4);
  auto doc = testutil::random_document(20000, 40, rng);
  EXPECT_EQ(ubert::chunk_count(doc.length(), 510, 0), 40u);
  ubert::PassCounter counter;
  auto emb = ubert::chunk_embeddings(doc, st, cfg, &counter);
  EXPECT_EQ(emb.rows(), 40u);
  EXPECT_EQ(counter.passes.load(), 3u);
}

TEST(PredictDocument, IndependentOfMaxC) {
  std::mt19937_64 rng(4);
  auto cfg = testutil::tiny_pipeline(16);
  auto st = ModelState<float>::initialize(cfg.model, 5);
  for (int rep = 0; rep < 10; ++rep) {
    auto doc = testutil::random_document(40 + 17 * static_cast<std::size_t>(rep), 40, rng);
    std::vector<double> probs;
    for (std::size_t m : {1, 3, 15}) {
      cfg.max_c = m;
      probs.push_back(ubert::predict_document(doc, st, cfg).probability);
    }
    EXPECT_NEAR(probs[0], probs[1], 1e-6);
    EXPECT_NEAR(probs[0], probs[2], 1e-6);
  }
}

TEST(PredictDocument, EveryPositionReachesThePrediction) {
  std::mt19937_64 rng(5);
  auto cfg = testutil::tiny_pipeline(8);
  for (auto pooling : {ubert::Pooling::final_state, ubert::Pooling::mean}) {
    cfg.model.recurrence.pooling = pooling;
    auto st = ModelState<double>::initialize(cfg.model, 6);
    for (std::size_t k : {1, 6, 7, 50, 211}) {
      auto doc = testutil::random_document(k, 40, rng);
      const double base = ubert::predict_document(doc, st, cfg).probability;
      for (std::size_t pos : {std::size_t(1), (k + 1) / 2, k}) {
        auto flipped = doc;
        flipped.tokens[pos - 1] = ubert::Vocabulary::kUnk;
        if (doc.tokens[pos - 1] == ubert::Vocabulary::kUnk) flipped.tokens[pos - 1] = 4;
        EXPECT_NE(ubert::predict_document(flipped, st, cfg).probability, base) << "k=" << k << " pos=" << pos;
      }
    }
  }
}

TEST(PipelineGradient, TinyPipelineEndToEnd) {
  std::mt19937_64 rng(6);
  auto cfg = testutil::tiny_pipeline(16, 6, 2, 20, 4);
  auto st = ModelState<double>::initialize(cfg.model, 7);
  testutil::make_all_trainable(st);
  auto doc = testutil::random_document(14, 20, rng, "g", 1);
  ASSERT_EQ(ubert::chunk_count(14, 6, 2), 3u);
  std::vector<double> target{1.0};
  auto loss = [&] { return ubert::bce_with_logits<double>(ubert::document_logit(doc, st, cfg), target); };
  auto r = ubert::grad_check<double>(loss, st.trainable_parameters(), 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-4) << st.names()[r.worst_tensor] << "[" << r.worst_index << "] analytic "
                                        << r.worst_analytic << " numeric " << r.worst_numeric;
}
