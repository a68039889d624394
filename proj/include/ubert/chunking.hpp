// Tokenization, overlapping chunk segmentation, and encoder-window decoration.
//
// A document of k tokens is cut into chunks of c content tokens. Adjacent
// chunks share z/2 tokens, so consecutive starts are c - z/2 apart; the last
// chunk is whatever remains. Because z <= c, the stride is at least c/2 and
// no token lands in more than two chunks. Special tokens are added only
// after splitting, so a window is c + 2 wide.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ubert {

using TokenId = std::int32_t;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kCls = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary() : tokens_{"[PAD]", "[CLS]", "[SEP]", "[UNK]"} {}

  // Regular tokens get ids 4, 5, ... in order. Duplicates and reserved
  // spellings are rejected.
  static Vocabulary from_tokens(const std::vector<std::string>& regular) {
    Vocabulary v;
    for (const auto& t : regular) v.add(t);
    return v;
  }

  // One token per line; the line number is the id; lines 0-3 are the
  // reserved tokens.
  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("vocabulary: cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    if (lines.size() < kReserved) throw std::runtime_error("vocabulary: " + path.string() + " lacks the reserved lines");
    Vocabulary v;
    for (std::size_t i = 0; i < kReserved; ++i) {
      if (lines[i] != v.tokens_[i]) {
        throw std::runtime_error("vocabulary: line " + std::to_string(i) + " must be " + v.tokens_[i] + ", found '" +
                                 lines[i] + "'");
      }
    }
    for (std::size_t i = kReserved; i < lines.size(); ++i) {
      try {
        v.add(lines[i]);
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error("vocabulary: line " + std::to_string(i) + ": " + e.what());
      }
    }
    return v;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("vocabulary: cannot write " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
  }

  TokenId add(const std::string& token) {
    if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos) {
      throw std::invalid_argument("vocabulary: token '" + token + "' is empty or contains whitespace");
    }
    for (std::size_t i = 0; i < kReserved; ++i) {
      if (token == tokens_[i]) throw std::invalid_argument("vocabulary: token '" + token + "' is reserved");
    }
    if (index_.contains(token)) throw std::invalid_argument("vocabulary: duplicate token '" + token + "'");
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  // Never returns PAD, CLS or SEP; anything unlisted maps to UNK.
  TokenId lookup(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }

  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  static bool is_structural(TokenId id) { return id == kPad || id == kCls || id == kSep; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenizedDocument {
  std::string id;
  std::vector<TokenId> tokens;
  std::optional<int> label;

  std::size_t length() const { return tokens.size(); }
};

// Lowercases, splits on whitespace, and maps through the vocabulary.
inline TokenizedDocument tokenize(std::string_view text, const Vocabulary& vocab, std::string id = {},
                                  std::optional<int> label = std::nullopt) {
  TokenizedDocument doc{std::move(id), {}, label};
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      doc.tokens.push_back(vocab.lookup(word));
      word.clear();
    }
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  flush();
  if (doc.tokens.empty()) throw std::invalid_argument("tokenize: text is empty after whitespace normalization");
  return doc;
}

namespace detail {

inline void check_chunk_params(std::size_t k, std::size_t c, std::size_t z) {
  if (k < 1) throw std::invalid_argument("chunking: document has no tokens");
  if (c < 2) throw std::invalid_argument("chunking: chunk size must be at least 2, got " + std::to_string(c));
  if (z > c) {
    throw std::invalid_argument("chunking: overlap " + std::to_string(z) + " exceeds chunk size " + std::to_string(c));
  }
  if (z % 2 != 0) {
    throw std::invalid_argument("chunking: overlap must be even (z/2 tokens shared per side), got " +
                                std::to_string(z));
  }
}

}  // namespace detail

inline std::size_t chunk_stride(std::size_t c, std::size_t z) { return c - z / 2; }

inline std::size_t chunk_count(std::size_t k, std::size_t c, std::size_t z) {
  detail::check_chunk_params(k, c, z);
  if (k <= c) return 1;
  const std::size_t s = chunk_stride(c, z);
  return (k - c + s - 1) / s + 1;
}

struct ChunkSet {
  std::size_t chunk_size = 0;
  std::size_t overlap = 0;
  std::vector<std::size_t> starts;  // 1-based position of each chunk's first token
  std::vector<std::vector<TokenId>> chunks;

  std::size_t count() const { return chunks.size(); }

  // Tokens chunk i has in common with chunk i + 1.
  std::size_t shared_with_next(std::size_t i) const {
    const std::size_t end_i = starts[i] + chunks[i].size();  // one past, 1-based
    return end_i > starts[i + 1] ? end_i - starts[i + 1] : 0;
  }
};

inline ChunkSet chunk_document(std::span<const TokenId> tokens, std::size_t c, std::size_t z) {
  const std::size_t k = tokens.size();
  const std::size_t n = chunk_count(k, c, z);
  const std::size_t s = chunk_stride(c, z);
  ChunkSet set{c, z, {}, {}};
  set.starts.reserve(n);
  set.chunks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t begin = i * s;  // 0-based
    const std::size_t len = std::min(c, k - begin);
    set.starts.push_back(begin + 1);
    set.chunks.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                            tokens.begin() + static_cast<std::ptrdiff_t>(begin + len));
  }
  return set;
}

inline ChunkSet chunk_document(const TokenizedDocument& doc, std::size_t c, std::size_t z) {
  return chunk_document(std::span<const TokenId>(doc.tokens), c, z);
}

struct EncoderWindow {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;  // 1 for CLS, content and SEP; 0 for PAD

  std::size_t width() const { return ids.size(); }
  std::size_t real_tokens() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }
};

// [CLS] chunk [SEP] followed by PAD up to width c + 2.
inline EncoderWindow decorate(std::span<const TokenId> chunk, std::size_t c) {
  if (chunk.empty()) throw std::invalid_argument("decorate: empty chunk");
  if (chunk.size() > c) {
    throw std::invalid_argument("decorate: chunk of " + std::to_string(chunk.size()) +
                                " tokens exceeds chunk size " + std::to_string(c));
  }
  EncoderWindow w;
  w.ids.reserve(c + 2);
  w.ids.push_back(Vocabulary::kCls);
  w.ids.insert(w.ids.end(), chunk.begin(), chunk.end());
  w.ids.push_back(Vocabulary::kSep);
  w.mask.assign(w.ids.size(), 1);
  w.ids.resize(c + 2, Vocabulary::kPad);
  w.mask.resize(c + 2, 0);
  return w;
}

}  // namespace ubert
