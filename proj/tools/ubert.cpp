// ubert command-line interface: generate, chunk, train, predict, evaluate,
// compare.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "run_config.hpp"
#include "ubert/ubert.hpp"

namespace fs = std::filesystem;
using namespace ubert;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed for every random stream")->each([&c](const std::string&) { c.seed_set = true; });
  cmd->add_option("--out", c.out, out_help);
}

cli::RunConfig resolve(const Common& c) {
  cli::RunConfig cfg = c.config.empty() ? cli::RunConfig{} : cli::load_run_config(c.config);
  if (c.seed_set) cli::apply_seed(cfg, c.seed);
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Records of one split, or all records when the corpus carries no such split.
std::vector<CorpusRecord> select_split(const std::vector<CorpusRecord>& records, const std::string& split) {
  if (split == "all") return records;
  std::vector<CorpusRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  if (out.empty()) {
    for (const auto& r : records) {
      if (!r.split.empty()) throw std::runtime_error("corpus has no records in split '" + split + "'");
    }
    return records;
  }
  return out;
}

std::vector<TokenizedDocument> prepare(const std::vector<CorpusRecord>& records, const Vocabulary& vocab,
                                       std::size_t truncate_budget, std::size_t c) {
  std::vector<TokenizedDocument> docs;
  docs.reserve(records.size());
  for (const auto& r : records) {
    try {
      docs.push_back(tokenize(r.text, vocab, r.id, r.label));
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("document " + r.id + " is empty after tokenization");
    }
    if (truncate_budget) docs.back() = middle_truncate(docs.back(), truncate_budget, c);
  }
  return docs;
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !(v > 0 && v <= 1)) throw std::invalid_argument("bad slice fraction '" + item + "'");
    out.push_back(v);
  }
  return out;
}

int run_generate(const Common& common, const std::map<std::string, std::string>& overrides) {
  auto cfg = resolve(common);
  json spec = cfg.corpus;
  for (const auto& [key, value] : overrides) {
    // numbers stay numbers; everything else is a string (enums)
    try {
      spec[key] = json::parse(value);
    } catch (const json::parse_error&) {
      spec[key] = value;
    }
  }
  cli::check_enums(spec);
  cfg.corpus = spec.get<SyntheticSpec>();
  const fs::path dir = common.out.empty() ? fs::path("corpus") : fs::path(common.out);
  fs::create_directories(dir);
  auto corpus = generate(cfg.corpus);
  write_jsonl(dir / "corpus.jsonl", corpus.records);
  write_manifest(dir / "manifest.jsonl", corpus.manifest);
  corpus.vocab.save(dir / "vocab.txt");
  write_json(dir / "config.json", json(cfg));
  std::size_t positives = 0;
  for (const auto& r : corpus.records) positives += *r.label;
  std::cout << "wrote " << corpus.records.size() << " documents (" << positives << " positive) to " << dir.string()
            << '\n';
  return 0;
}

int run_chunk(const Common& common, std::size_t length, const std::string& corpus_path, const std::string& vocab_path,
              std::optional<std::size_t> c_opt, std::optional<std::size_t> z_opt, std::optional<std::size_t> max_c_opt) {
  auto cfg = resolve(common);
  const std::size_t c = c_opt.value_or(cfg.pipeline.chunk_size);
  const std::size_t z = cli::resolve_overlap(z_opt.value_or(cfg.pipeline.overlap));
  const std::size_t max_c = max_c_opt.value_or(cfg.pipeline.max_c);
  json report = json::array();
  auto describe = [&](const std::string& id, std::size_t k) {
    std::vector<TokenId> dummy(k, Vocabulary::kUnk);
    auto set = chunk_document(dummy, c, z);
    auto passes = plan_passes(set.count(), max_c);
    json j = {{"id", id}, {"length", k}, {"chunks", set.count()}, {"starts", set.starts}, {"passes", passes}};
    std::vector<std::size_t> lengths, shared;
    for (std::size_t i = 0; i < set.count(); ++i) {
      lengths.push_back(set.chunks[i].size());
      if (i + 1 < set.count()) shared.push_back(set.shared_with_next(i));
    }
    j["lengths"] = lengths;
    j["shared_with_next"] = shared;
    report.push_back(j);
    std::cout << id << ": k=" << k << " c=" << c << " z=" << z << " chunks=" << set.count()
              << " passes=" << passes.size() << " [";
    for (std::size_t i = 0; i < passes.size(); ++i) std::cout << (i ? "," : "") << passes[i];
    std::cout << "]\n";
    if (corpus_path.empty()) {
      for (std::size_t i = 0; i < set.count(); ++i) {
        std::cout << "  chunk " << i + 1 << ": start=" << set.starts[i] << " length=" << lengths[i];
        if (i + 1 < set.count()) std::cout << " shared_with_next=" << shared[i];
        std::cout << '\n';
      }
    }
  };
  if (!corpus_path.empty()) {
    auto records = load_jsonl(fs::path(corpus_path));
    Vocabulary vocab = vocab_path.empty() ? build_vocabulary(records) : Vocabulary::load(vocab_path);
    for (const auto& r : records) describe(r.id, tokenize(r.text, vocab, r.id).length());
  } else {
    if (length < 1) throw std::invalid_argument("chunk: give --length or --corpus");
    describe("document", length);
  }
  if (!common.out.empty()) write_json(common.out, report);
  return 0;
}

struct TrainOptions {
  std::string corpus, vocab, split = "train", trainable;
  std::optional<std::size_t> c, z, max_c, epochs, truncate, dim, layers, heads, ff_mult, hidden;
  std::optional<double> max_lr;
  std::optional<std::string> pooling, representation;
  bool bidirectional = false;
};

int run_train(const Common& common, const TrainOptions& o) {
  auto cfg = resolve(common);
  auto& pc = cfg.pipeline;
  if (o.c) pc.chunk_size = *o.c;
  pc.overlap = cli::resolve_overlap(o.z.value_or(pc.overlap));
  if (o.max_c) pc.max_c = *o.max_c;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.max_lr) cfg.train.max_lr = *o.max_lr;
  if (o.truncate) cfg.truncate_budget = *o.truncate;
  if (!o.trainable.empty()) cfg.trainable = o.trainable;
  auto& enc = pc.model.encoder;
  auto& rec = pc.model.recurrence;
  if (o.dim) enc.dim = *o.dim;
  if (o.layers) enc.n_layers = *o.layers;
  if (o.heads) enc.n_heads = *o.heads;
  if (o.ff_mult) enc.ff_mult = *o.ff_mult;
  if (o.hidden) rec.hidden_width = *o.hidden;
  if (o.pooling) rec.pooling = cli::parse_enum<Pooling>("pooling", *o.pooling);
  if (o.representation) enc.representation = cli::parse_enum<Representation>("representation", *o.representation);
  if (o.bidirectional) rec.bidirectional = true;
  if (cfg.trainable != "default" && cfg.trainable != "all") {
    throw std::invalid_argument("trainable must be 'default' or 'all', got '" + cfg.trainable + "'");
  }

  auto all_records = load_jsonl(fs::path(o.corpus));
  Vocabulary vocab = o.vocab.empty() ? build_vocabulary(all_records) : Vocabulary::load(o.vocab);
  enc.vocab_size = vocab.size();
  rec.input_width = enc.output_width();
  pc.validate();
  auto docs = prepare(select_split(all_records, o.split), vocab, cfg.truncate_budget, pc.chunk_size);

  const fs::path dir = common.out.empty() ? fs::path("model") : fs::path(common.out);
  fs::create_directories(dir);
  auto state = ModelState<float>::initialize(pc.model, pc.seed);
  if (cfg.trainable == "all") {
    for (const auto& g : state.groups()) state.set_trainable(g, true);
  }
  std::cerr << "training on " << docs.size() << " documents, " << state.parameter_count() << " parameters\n";
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t report_every = std::max<std::size_t>(1, docs.size() / 10);
  auto result = train(docs, state, pc, cfg.train, [&](std::size_t s, double loss) {
    if ((s + 1) % report_every == 0) std::cerr << "  step " << s + 1 << " loss " << loss << '\n';
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < vocab.size(); ++i) tokens.push_back(vocab.token(static_cast<TokenId>(i)));
  json resolved = cfg;
  save_checkpoint(dir / "model.ckpt", state, pc, {{"run", resolved}, {"vocab", tokens}});
  vocab.save(dir / "vocab.txt");
  write_json(dir / "config.json", resolved);
  std::ofstream trace(dir / "losses.tsv");
  trace << "# step\tlearning_rate\tloss\n";
  for (std::size_t s = 0; s < result.steps; ++s) {
    trace << s << '\t' << eval::format_probability(result.learning_rates[s]) << '\t'
          << eval::format_probability(result.losses[s]) << '\n';
  }
  std::cout << "trained " << result.steps << " steps in " << seconds << " s; checkpoint " << (dir / "model.ckpt").string()
            << '\n';
  return 0;
}

int run_predict(const Common& common, const std::string& model_path, const std::string& corpus_path,
                const std::string& split, std::string name, std::optional<std::size_t> truncate,
                std::optional<std::size_t> max_c) {
  auto ck = load_checkpoint<float>(model_path);
  auto pc = ck.pipeline;
  if (max_c) pc.max_c = *max_c;
  std::vector<std::string> tokens = ck.extra.at("vocab").get<std::vector<std::string>>();
  tokens.erase(tokens.begin(), tokens.begin() + Vocabulary::kReserved);
  auto vocab = Vocabulary::from_tokens(tokens);
  const std::size_t budget = truncate.value_or(ck.extra.at("run").value("truncate_budget", std::size_t{0}));
  auto docs = prepare(select_split(load_jsonl(fs::path(corpus_path)), split), vocab, 0, pc.chunk_size);
  if (name.empty()) name = fs::path(model_path).parent_path().filename().string();
  if (name.empty()) name = "model";

  std::vector<eval::PredictionRecord> records;
  PassCounter counter;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& d : docs) {
    // the dump keeps the source length so truncated and full-text models slice alike
    auto p = predict_document(budget ? middle_truncate(d, budget, pc.chunk_size) : d, ck.state, pc, &counter);
    records.push_back({d.id, d.length(), d.label.value_or(-1), p.probability, p.label, name});
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json echo = {{"model", model_path}, {"corpus", corpus_path}, {"split", split}, {"truncate_budget", budget},
               {"pipeline", pc}};
  const fs::path out = common.out.empty() ? fs::path("predictions.tsv") : fs::path(common.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream dump(out);
  if (!dump) throw std::runtime_error("cannot write " + out.string());
  eval::write_dump(dump, records, echo.dump());
  std::cout << "predicted " << records.size() << " documents in " << seconds << " s (" << counter.passes.load()
            << " encoder passes); wrote " << out.string() << '\n';
  return 0;
}

json report_json(const eval::EvaluationReport& r) { return json(r); }

void print_report(const std::string& label, const eval::EvaluationReport& r) {
  std::printf("%-16s n=%-6zu macro_f1=%.4f", label.c_str(), r.documents, r.macro_f1);
  if (r.macro_f1_ci) std::printf(" [%.4f, %.4f]", r.macro_f1_ci->lo, r.macro_f1_ci->hi);
  std::printf(" mcc=%.4f", r.mcc);
  if (r.mcc_ci) std::printf(" [%.4f, %.4f]", r.mcc_ci->lo, r.mcc_ci->hi);
  std::printf(" tokens=%.1f\n", r.mean_tokens);
}

int run_evaluate(const Common& common, const std::string& dump_path, std::optional<std::string> slices,
                 std::optional<std::size_t> buckets, std::optional<std::size_t> replicates) {
  auto cfg = resolve(common);
  auto& ev = cfg.evaluation;
  if (slices) ev.slices = parse_fractions(*slices);
  if (buckets) ev.buckets = *buckets;
  if (replicates) ev.replicates = *replicates;
  auto records = eval::read_dump(fs::path(dump_path));
  std::optional<eval::BootstrapOptions> boot;
  if (ev.replicates > 0) boot = eval::BootstrapOptions{ev.replicates, ev.level, cfg.pipeline.seed, 100};

  json out = {{"predictions", dump_path}, {"settings", ev}};
  auto full = eval::evaluate(records, boot);
  out["full"] = report_json(full);
  print_report("full", full);
  json sl = json::object();
  for (double f : ev.slices) {
    auto part = eval::longest_slice(records, f);
    auto rep = eval::evaluate(part, boot);
    std::ostringstream key;
    key << "longest_" << f;
    sl[key.str()] = report_json(rep);
    print_report(key.str(), rep);
  }
  out["slices"] = sl;
  if (ev.buckets > 0) {
    json bs = json::array();
    auto groups = eval::length_buckets(records, ev.buckets, boot);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      bs.push_back(report_json(groups[g]));
      print_report("bucket_" + std::to_string(g + 1), groups[g]);
    }
    out["buckets"] = bs;
  }
  if (!common.out.empty()) write_json(common.out, out);
  return 0;
}

int run_compare(const Common& common, const std::vector<std::string>& dumps, double slice, const std::string& metric_name,
                std::optional<std::size_t> replicates, std::optional<double> alpha) {
  auto cfg = resolve(common);
  if (dumps.size() < 2) throw std::invalid_argument("compare: need at least two prediction dumps");
  eval::Metric metric;
  if (metric_name == "macro_f1") {
    metric = [](const eval::ConfusionCounts& c) { return eval::macro_f1(c); };
  } else if (metric_name == "mcc") {
    metric = [](const eval::ConfusionCounts& c) { return eval::mcc(c); };
  } else {
    throw std::invalid_argument("compare: metric must be macro_f1 or mcc");
  }
  std::vector<std::vector<eval::PredictionRecord>> per_model;
  std::vector<std::string> names;
  for (const auto& path : dumps) {
    auto records = eval::read_dump(fs::path(path));
    if (slice < 1.0) records = eval::longest_slice(records, slice);
    names.push_back(records.front().model);
    per_model.push_back(std::move(records));
  }
  eval::BootstrapOptions opt{replicates.value_or(cfg.evaluation.replicates), cfg.evaluation.level, cfg.pipeline.seed, 100};
  const double a = alpha.value_or(cfg.evaluation.alpha);
  auto scores = eval::paired_bootstrap_scores(per_model, metric, opt);
  auto cd = eval::cd_ranking(scores, a);
  auto out = eval::cd_ranking_json(cd, names, a);
  out["metric"] = metric_name;
  out["slice"] = slice;
  out["replicates"] = opt.replicates;
  for (std::size_t m = 0; m < names.size(); ++m) {
    auto rep = eval::evaluate(per_model[m]);
    std::printf("%-20s rank=%.3f %s=%.4f\n", names[m].c_str(), cd.average_ranks[m], metric_name.c_str(),
                metric(rep.counts));
  }
  for (const auto& clique : cd.cliques) {
    std::printf("no significant difference:");
    for (auto v : clique) std::printf(" %s", names[v].c_str());
    std::printf("\n");
  }
  if (!common.out.empty()) write_json(common.out, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ubert: long-document classification with overlapping chunks"};
  app.require_subcommand(1);

  Common gen_c, chunk_c, train_c, pred_c, eval_c, cmp_c;

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus with planted signals");
  add_common(gen, gen_c, "output directory (default: corpus)");
  std::map<std::string, std::string> gen_over;
  for (const char* key : {"n_docs", "min_tokens", "max_tokens", "vocab_size", "signal_tokens_per_class", "position",
                          "mode", "signal_density", "pair_span", "pair_gap", "motif_length", "positive_ratio",
                          "valid_fraction", "test_fraction"}) {
    std::string flag = std::string("--") + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    gen->add_option_function<std::string>(flag, [&gen_over, key](const std::string& v) { gen_over[key] = v; },
                                           std::string("corpus.") + key);
  }

  auto* chunk = app.add_subcommand("chunk", "show chunk layout and encoder passes");
  add_common(chunk, chunk_c, "write the layout as JSON");
  std::size_t length = 0;
  std::string chunk_corpus, chunk_vocab;
  std::optional<std::size_t> chunk_c_opt, chunk_z, chunk_max_c;
  chunk->add_option("--length,-k", length, "document length in tokens");
  chunk->add_option("--corpus", chunk_corpus, "JSONL corpus to lay out instead")->check(CLI::ExistingFile);
  chunk->add_option("--vocab", chunk_vocab, "vocabulary file")->check(CLI::ExistingFile);
  chunk->add_option("--chunk-size,-c", chunk_c_opt, "tokens per chunk");
  chunk->add_option("--overlap,-z", chunk_z, "overlap tokens (even)");
  chunk->add_option("--max-c", chunk_max_c, "chunks per encoder pass");

  auto* tr = app.add_subcommand("train", "fine-tune a model and write a checkpoint");
  add_common(tr, train_c, "output directory (default: model)");
  TrainOptions to;
  tr->add_option("--corpus", to.corpus, "JSONL corpus")->required()->check(CLI::ExistingFile);
  tr->add_option("--vocab", to.vocab, "vocabulary file (default: built from the corpus)")->check(CLI::ExistingFile);
  tr->add_option("--split", to.split, "records to train on, or 'all'");
  tr->add_option("--chunk-size,-c", to.c);
  tr->add_option("--overlap,-z", to.z);
  tr->add_option("--max-c", to.max_c);
  tr->add_option("--epochs", to.epochs);
  tr->add_option("--max-lr", to.max_lr);
  tr->add_option("--truncate", to.truncate, "middle-truncate documents to this many chunks (baseline)");
  tr->add_option("--trainable", to.trainable, "default (last layer, recurrence, classifier) or all");
  tr->add_option("--dim", to.dim);
  tr->add_option("--layers", to.layers);
  tr->add_option("--heads", to.heads);
  tr->add_option("--ff-mult", to.ff_mult);
  tr->add_option("--hidden", to.hidden);
  tr->add_option("--pooling", to.pooling, "final, mean or max");
  tr->add_option("--representation", to.representation, "cls or mean-over-mask");
  tr->add_flag("--bidirectional", to.bidirectional);

  auto* pr = app.add_subcommand("predict", "write a prediction dump");
  add_common(pr, pred_c, "prediction dump path (default: predictions.tsv)");
  std::string pred_model, pred_corpus, pred_split = "test", pred_name;
  std::optional<std::size_t> pred_trunc, pred_max_c;
  pr->add_option("--model", pred_model, "checkpoint")->required()->check(CLI::ExistingFile);
  pr->add_option("--corpus", pred_corpus, "JSONL corpus")->required()->check(CLI::ExistingFile);
  pr->add_option("--split", pred_split, "records to predict, or 'all'");
  pr->add_option("--name", pred_name, "model name in the dump (default: checkpoint directory)");
  pr->add_option("--truncate", pred_trunc, "override the checkpoint's truncation budget (0 = full text)");
  pr->add_option("--max-c", pred_max_c, "chunks per encoder pass");

  auto* ev = app.add_subcommand("evaluate", "metrics, bootstrap intervals, length slices");
  add_common(ev, eval_c, "JSON report path");
  std::string eval_dump;
  std::optional<std::string> eval_slices;
  std::optional<std::size_t> eval_buckets, eval_reps;
  ev->add_option("--predictions", eval_dump, "prediction dump")->required()->check(CLI::ExistingFile);
  ev->add_option("--slices", eval_slices, "longest-document fractions, e.g. 0.1,0.01");
  ev->add_option("--buckets", eval_buckets, "number of length buckets");
  ev->add_option("--replicates", eval_reps, "bootstrap replicates (0 disables intervals)");

  auto* cmp = app.add_subcommand("compare", "paired significance tests and critical-difference data");
  add_common(cmp, cmp_c, "JSON output path");
  std::vector<std::string> cmp_dumps;
  double cmp_slice = 1.0;
  std::string cmp_metric = "macro_f1";
  std::optional<std::size_t> cmp_reps;
  std::optional<double> cmp_alpha;
  cmp->add_option("--predictions", cmp_dumps, "one prediction dump per model")->required()->check(CLI::ExistingFile);
  cmp->add_option("--slice", cmp_slice, "compare on the longest fraction of documents")->check(CLI::Range(1e-9, 1.0));
  cmp->add_option("--metric", cmp_metric, "macro_f1 or mcc");
  cmp->add_option("--replicates", cmp_reps, "paired bootstrap replicates");
  cmp->add_option("--alpha", cmp_alpha, "family-wise significance level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return run_generate(gen_c, gen_over);
    if (*chunk) return run_chunk(chunk_c, length, chunk_corpus, chunk_vocab, chunk_c_opt, chunk_z, chunk_max_c);
    if (*tr) return run_train(train_c, to);
    if (*pr) return run_predict(pred_c, pred_model, pred_corpus, pred_split, pred_name, pred_trunc, pred_max_c);
    if (*ev) return run_evaluate(eval_c, eval_dump, eval_slices, eval_buckets, eval_reps);
    if (*cmp) return run_compare(cmp_c, cmp_dumps, cmp_slice, cmp_metric, cmp_reps, cmp_alpha);
  } catch (const CorpusFormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
