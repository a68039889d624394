// End-to-end use of the library: generate a small synthetic corpus, fine-tune
// a tiny model for one epoch, and score the held-out documents.
#include <iostream>

#include "ubert/ubert.hpp"

int main() {
  using namespace ubert;
  SyntheticSpec spec;
  spec.n_docs = 600;
  spec.min_tokens = 20;
  spec.max_tokens = 200;
  spec.vocab_size = 64;
  spec.test_fraction = 0.2;
  spec.seed = 11;
  auto corpus = generate(spec);
  auto train_docs = to_documents(corpus.records, corpus.vocab, "train");
  auto test_docs = to_documents(corpus.records, corpus.vocab, "test");

  PipelineConfig cfg;
  cfg.chunk_size = 10;
  cfg.overlap = 8;
  cfg.max_c = 15;
  cfg.model.encoder = {.vocab_size = corpus.vocab.size(), .dim = 32, .n_layers = 4, .n_heads = 4, .ff_mult = 2,
                       .max_window = 12};
  cfg.model.recurrence.input_width = cfg.model.encoder.output_width();
  cfg.model.recurrence.hidden_width = 32;

  auto model = ModelState<float>::initialize(cfg.model, 11);
  for (const auto& group : model.groups()) model.set_trainable(group, true);
  auto result = train(train_docs, model, cfg, TrainConfig{});
  std::cout << "final training loss " << result.losses.back() << '\n';

  std::vector<int> predicted, gold;
  for (const auto& d : test_docs) {
    predicted.push_back(predict_document(d, model, cfg).label);
    gold.push_back(*d.label);
  }
  auto counts = eval::confusion(predicted, gold);
  std::cout << "test macro-F1 " << eval::macro_f1(counts) << ", MCC " << eval::mcc(counts) << '\n';
}
