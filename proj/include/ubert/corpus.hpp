// Synthetic long-document corpora with planted, position-controlled labels,
// JSONL ingestion, and the middle-truncation baseline transform.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubert/chunking.hpp"

namespace ubert {

enum class SignalPosition { uniform, tail, head, middle };
// token: each class has its own signal tokens; a document carries signals
//        of its class only.
// pair:  both classes carry the same two signal tokens; in class 1 they sit
//        pair_span - 1 positions apart, in class 0 at least pair_gap apart.
//        Only a window holding both tokens can tell the classes apart.
// motif: both classes carry the same motif_length signal tokens back to back;
//        class 1 in their canonical order, class 0 in a shuffled order.
enum class SignalMode { token, pair, motif };

NLOHMANN_JSON_SERIALIZE_ENUM(SignalPosition, {{SignalPosition::uniform, "uniform"},
                                              {SignalPosition::tail, "tail-only"},
                                              {SignalPosition::head, "head-only"},
                                              {SignalPosition::middle, "middle-only"}})
NLOHMANN_JSON_SERIALIZE_ENUM(SignalMode, {{SignalMode::token, "token"}, {SignalMode::pair, "pair"}, {SignalMode::motif, "motif"}})

struct SyntheticSpec {
  std::size_t n_docs = 1000;
  std::size_t min_tokens = 64;
  std::size_t max_tokens = 4096;  // lengths are log-uniform on [min, max]
  std::size_t vocab_size = 256;   // including the four reserved ids
  std::size_t signal_tokens_per_class = 4;
  SignalPosition position = SignalPosition::uniform;
  SignalMode mode = SignalMode::token;
  double signal_density = 0.0;  // token mode: planted share of k; at least one plant
  std::size_t pair_span = 5;
  std::size_t pair_gap = 16;
  std::size_t motif_length = 5;
  double positive_ratio = 0.5;
  double valid_fraction = 0.0;
  double test_fraction = 0.0;
  std::uint64_t seed = 0;

  std::size_t signal_token_count() const {
    switch (mode) {
      case SignalMode::pair:
        return 2;
      case SignalMode::motif:
        return motif_length;
      case SignalMode::token:
        break;
    }
    return 2 * signal_tokens_per_class;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticSpec, n_docs, min_tokens, max_tokens, vocab_size,
                                                signal_tokens_per_class, position, mode, signal_density, pair_span,
                                                pair_gap, motif_length, positive_ratio, valid_fraction, test_fraction, seed)

struct CorpusRecord {
  std::string id;
  std::string text;
  std::optional<int> label;
  std::string split;  // "train", "valid", "test" or empty

  friend bool operator==(const CorpusRecord&, const CorpusRecord&) = default;
};

struct ManifestEntry {
  std::string id;
  std::vector<std::size_t> positions;  // 1-based, ascending
  int signal_class = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct SyntheticCorpus {
  Vocabulary vocab;
  std::vector<CorpusRecord> records;
  std::vector<ManifestEntry> manifest;
  // pair and motif modes: both hold the shared tokens in class-1 order
  std::vector<TokenId> class0_signals, class1_signals;
};

// 1-based inclusive range of positions a policy allows in a k-token document.
inline std::pair<std::size_t, std::size_t> signal_region(SignalPosition policy, std::size_t k) {
  const double kk = double(k);
  switch (policy) {
    case SignalPosition::tail:
      return {static_cast<std::size_t>(std::floor(0.9 * kk)) + 1, k};
    case SignalPosition::head:
      return {1, std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.1 * kk)))};
    case SignalPosition::middle: {
      const auto lo = static_cast<std::size_t>(std::floor(0.4 * kk)) + 1;
      return {lo, std::max(lo, static_cast<std::size_t>(std::floor(0.6 * kk)))};
    }
    case SignalPosition::uniform:
      break;
  }
  return {1, k};
}

inline void validate(const SyntheticSpec& s) {
  if (s.n_docs < 1) throw std::invalid_argument("generate: n_docs must be positive");
  if (s.min_tokens < 1 || s.max_tokens < s.min_tokens) throw std::invalid_argument("generate: need 1 <= min_tokens <= max_tokens");
  if (s.mode == SignalMode::token && s.signal_tokens_per_class < 1) {
    throw std::invalid_argument("generate: signal_tokens_per_class must be positive");
  }
  if (s.vocab_size < Vocabulary::kReserved + s.signal_token_count() + 1) {
    throw std::invalid_argument("generate: vocab_size " + std::to_string(s.vocab_size) + " cannot hold 4 reserved, " +
                                std::to_string(s.signal_token_count()) + " signal and at least one filler token");
  }
  if (!(s.positive_ratio >= 0 && s.positive_ratio <= 1)) throw std::invalid_argument("generate: positive_ratio outside [0,1]");
  if (s.valid_fraction < 0 || s.test_fraction < 0 || s.valid_fraction + s.test_fraction > 1) {
    throw std::invalid_argument("generate: split fractions must be non-negative and sum to at most 1");
  }
  if (s.signal_density < 0 || s.signal_density > 1) throw std::invalid_argument("generate: signal_density outside [0,1]");
  if (s.mode == SignalMode::pair) {
    if (s.pair_span < 2 || s.pair_gap < s.pair_span) {
      throw std::invalid_argument("generate: pair mode needs 2 <= pair_span <= pair_gap");
    }
  }
  if (s.mode == SignalMode::motif) {
    if (s.motif_length < 2) throw std::invalid_argument("generate: motif_length must be at least 2");
    auto [lo, hi] = signal_region(s.position, s.min_tokens);
    if (hi - lo + 1 < s.motif_length) {
      throw std::invalid_argument("generate: a " + std::to_string(s.min_tokens) + "-token document has no room for a " +
                                  std::to_string(s.motif_length) + "-token motif in its signal region");
    }
  }
  if (s.mode == SignalMode::pair) {
    // the shortest document must fit a class-0 pair inside its region
    for (std::size_t k : {s.min_tokens, s.max_tokens}) {
      auto [lo, hi] = signal_region(s.position, k);
      if (hi - lo < s.pair_gap) {
        throw std::invalid_argument("generate: a " + std::to_string(k) + "-token document has no room for a pair " +
                                    std::to_string(s.pair_gap) + " apart in its signal region");
      }
    }
  }
}

inline std::mt19937_64 document_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(std::uint64_t(index) >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

// Seeded and reproducible; document i depends only on (seed, i).
inline SyntheticCorpus generate(const SyntheticSpec& spec) {
  validate(spec);
  SyntheticCorpus out;
  const std::size_t fillers = spec.vocab_size - Vocabulary::kReserved - spec.signal_token_count();
  std::vector<std::string> words;
  for (std::size_t i = 0; i < fillers; ++i) words.push_back("w" + std::to_string(i));
  if (spec.mode == SignalMode::pair) {
    words.push_back("pa");
    words.push_back("pb");
  } else if (spec.mode == SignalMode::motif) {
    for (std::size_t i = 0; i < spec.motif_length; ++i) words.push_back("m" + std::to_string(i));
  } else {
    for (int c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < spec.signal_tokens_per_class; ++i)
        words.push_back("s" + std::to_string(c) + "_" + std::to_string(i));
  }
  out.vocab = Vocabulary::from_tokens(words);
  const auto first_filler = static_cast<TokenId>(Vocabulary::kReserved);
  const auto last_filler = static_cast<TokenId>(Vocabulary::kReserved + fillers - 1);
  auto first_signal = static_cast<TokenId>(Vocabulary::kReserved + fillers);
  if (spec.mode == SignalMode::pair) {
    out.class0_signals = out.class1_signals = {first_signal, TokenId(first_signal + 1)};
  } else if (spec.mode == SignalMode::motif) {
    for (std::size_t i = 0; i < spec.motif_length; ++i) out.class1_signals.push_back(TokenId(first_signal + i));
    out.class0_signals = out.class1_signals;
  } else {
    for (std::size_t i = 0; i < spec.signal_tokens_per_class; ++i) {
      out.class0_signals.push_back(TokenId(first_signal + i));
      out.class1_signals.push_back(TokenId(first_signal + spec.signal_tokens_per_class + i));
    }
  }

  const auto n_test = static_cast<std::size_t>(std::floor(spec.test_fraction * double(spec.n_docs)));
  const auto n_valid = static_cast<std::size_t>(std::floor(spec.valid_fraction * double(spec.n_docs)));
  const double log_lo = std::log(double(spec.min_tokens)), log_hi = std::log(double(spec.max_tokens) + 1.0);
  for (std::size_t d = 0; d < spec.n_docs; ++d) {
    auto rng = document_rng(spec.seed, d);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int label = unit(rng) < spec.positive_ratio ? 1 : 0;
    auto k = static_cast<std::size_t>(std::floor(std::exp(log_lo + (log_hi - log_lo) * unit(rng))));
    k = std::clamp(k, spec.min_tokens, spec.max_tokens);
    std::uniform_int_distribution<TokenId> filler(first_filler, last_filler);
    std::vector<TokenId> tokens(k);
    for (auto& t : tokens) t = filler(rng);

    auto [lo, hi] = signal_region(spec.position, k);
    ManifestEntry entry{"doc" + std::to_string(d), {}, label};
    if (spec.mode == SignalMode::pair) {
      const std::size_t dist = label == 1
                                   ? spec.pair_span - 1
                                   : std::uniform_int_distribution<std::size_t>(spec.pair_gap, hi - lo)(rng);
      const std::size_t first = std::uniform_int_distribution<std::size_t>(lo, hi - dist)(rng);
      tokens[first - 1] = out.class1_signals[0];
      tokens[first + dist - 1] = out.class1_signals[1];
      entry.positions = {first, first + dist};
    } else if (spec.mode == SignalMode::motif) {
      const std::size_t len = spec.motif_length;
      auto motif = out.class1_signals;
      if (label == 0) {
        while (motif == out.class1_signals) std::shuffle(motif.begin(), motif.end(), rng);
      }
      const std::size_t first = std::uniform_int_distribution<std::size_t>(lo, hi - len + 1)(rng);
      for (std::size_t i = 0; i < len; ++i) {
        tokens[first - 1 + i] = motif[i];
        entry.positions.push_back(first + i);
      }
    } else {
      const std::size_t region = hi - lo + 1;
      auto plants = static_cast<std::size_t>(std::llround(spec.signal_density * double(k)));
      plants = std::clamp<std::size_t>(plants, 1, region);
      const auto& signals = label == 1 ? out.class1_signals : out.class0_signals;
      std::set<std::size_t> chosen;
      std::uniform_int_distribution<std::size_t> where(lo, hi);
      while (chosen.size() < plants) chosen.insert(where(rng));
      std::uniform_int_distribution<std::size_t> which(0, signals.size() - 1);
      for (auto p : chosen) tokens[p - 1] = signals[which(rng)];
      entry.positions.assign(chosen.begin(), chosen.end());
    }

    std::string text;
    text.reserve(k * 5);
    for (std::size_t i = 0; i < k; ++i) {
      if (i) text.push_back(' ');
      text += out.vocab.token(tokens[i]);
    }
    std::string split = d >= spec.n_docs - n_test ? "test" : d >= spec.n_docs - n_test - n_valid ? "valid" : "train";
    out.records.push_back({entry.id, std::move(text), label, std::move(split)});
    out.manifest.push_back(std::move(entry));
  }
  return out;
}

// Reads labels back from planted tokens alone; exact on generated corpora.
inline int oracle_label(const TokenizedDocument& doc, const SyntheticCorpus& corpus, const SyntheticSpec& spec) {
  if (spec.mode == SignalMode::pair) {
    const auto a = corpus.class1_signals[0], b = corpus.class1_signals[1];
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
      if (doc.tokens[i] != a) continue;
      const std::size_t j = i + spec.pair_span - 1;
      if (j < doc.tokens.size() && doc.tokens[j] == b) return 1;
    }
    return 0;
  }
  if (spec.mode == SignalMode::motif) {
    const auto& m = corpus.class1_signals;
    return std::search(doc.tokens.begin(), doc.tokens.end(), m.begin(), m.end()) != doc.tokens.end() ? 1 : 0;
  }
  for (auto t : doc.tokens) {
    if (std::find(corpus.class1_signals.begin(), corpus.class1_signals.end(), t) != corpus.class1_signals.end()) return 1;
  }
  return 0;
}

// Every distinct lowercased whitespace token, in order of first appearance.
inline Vocabulary build_vocabulary(const std::vector<CorpusRecord>& records) {
  Vocabulary vocab;
  for (const auto& r : records) {
    std::istringstream words(r.text);
    for (std::string w; words >> w;) {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      if (!vocab.contains(w)) vocab.add(w);
    }
  }
  return vocab;
}

inline std::vector<TokenizedDocument> to_documents(const std::vector<CorpusRecord>& records, const Vocabulary& vocab,
                                                   const std::string& split = {}) {
  std::vector<TokenizedDocument> docs;
  for (const auto& r : records) {
    if (!split.empty() && r.split != split) continue;
    docs.push_back(tokenize(r.text, vocab, r.id, r.label));
  }
  return docs;
}

inline nlohmann::json to_json_line(const CorpusRecord& r) {
  nlohmann::json j = {{"id", r.id}, {"text", r.text}};
  if (r.label) j["label"] = *r.label;
  if (!r.split.empty()) j["split"] = r.split;
  return j;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<CorpusRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("corpus: cannot write " + path.string());
  for (const auto& r : records) out << to_json_line(r).dump() << '\n';
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& manifest) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("corpus: cannot write " + path.string());
  for (const auto& m : manifest) {
    out << nlohmann::json{{"id", m.id}, {"positions", m.positions}, {"signal_class", m.signal_class}}.dump() << '\n';
  }
}

class CorpusFormatError : public std::runtime_error {
 public:
  CorpusFormatError(const std::string& what, std::vector<std::size_t> lines)
      : std::runtime_error(what), lines_(std::move(lines)) {}
  const std::vector<std::size_t>& lines() const { return lines_; }

 private:
  std::vector<std::size_t> lines_;
};

// One JSON object per line with "id", "text" and optionally "label" (0/1)
// and "split". Blank lines are skipped; every bad line is reported.
inline std::vector<CorpusRecord> load_jsonl(std::istream& in, const std::string& source = "corpus") {
  std::vector<CorpusRecord> out;
  std::vector<std::size_t> bad;
  std::ostringstream problems;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      bad.push_back(line_no);
      problems << "\n  line " << line_no << ": " << why;
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      fail("not valid JSON");
      continue;
    }
    if (!j.is_object()) {
      fail("not a JSON object");
      continue;
    }
    CorpusRecord r;
    if (!j.contains("id") || !(j["id"].is_string() || j["id"].is_number_integer())) {
      fail("missing or non-scalar \"id\"");
      continue;
    }
    r.id = j["id"].is_string() ? j["id"].get<std::string>() : std::to_string(j["id"].get<long long>());
    if (!j.contains("text") || !j["text"].is_string()) {
      fail("missing string \"text\"");
      continue;
    }
    r.text = j["text"].get<std::string>();
    if (r.text.find_first_not_of(" \t\r\n") == std::string::npos) {
      fail("empty \"text\"");
      continue;
    }
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_number_integer() || (j["label"] != 0 && j["label"] != 1)) {
        fail("\"label\" must be 0 or 1");
        continue;
      }
      r.label = j["label"].get<int>();
    }
    if (j.contains("split")) {
      if (!j["split"].is_string()) {
        fail("\"split\" must be a string");
        continue;
      }
      r.split = j["split"].get<std::string>();
    }
    out.push_back(std::move(r));
  }
  if (!bad.empty()) throw CorpusFormatError(source + ": malformed records" + problems.str(), bad);
  if (out.empty()) throw CorpusFormatError(source + ": no records", {});
  return out;
}

inline std::vector<CorpusRecord> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("corpus: cannot open " + path.string());
  return load_jsonl(in, path.string());
}

// The baseline policy for over-long documents: when the zero-overlap chunk
// count exceeds the budget, keep the first ceil(budget/2) and the last
// floor(budget/2) chunks and drop the middle.
inline TokenizedDocument middle_truncate(const TokenizedDocument& doc, std::size_t budget_chunks, std::size_t c) {
  if (budget_chunks < 2) throw std::invalid_argument("middle_truncate: budget must be at least 2 chunks");
  const std::size_t n = chunk_count(doc.length(), c, 0);
  if (n <= budget_chunks) return doc;
  const std::size_t head = (budget_chunks + 1) / 2, tail = budget_chunks / 2;
  TokenizedDocument out{doc.id, {}, doc.label};
  out.tokens.assign(doc.tokens.begin(), doc.tokens.begin() + static_cast<std::ptrdiff_t>(head * c));
  out.tokens.insert(out.tokens.end(), doc.tokens.begin() + static_cast<std::ptrdiff_t>((n - tail) * c),
                    doc.tokens.end());
  return out;
}

}  // namespace ubert
