// Prints how a document of k tokens is split into overlapping chunks and
// grouped into encoder passes.
//
//   demo_chunk_layout 7651 510 0 15
#include <cstdlib>
#include <iostream>
#include <vector>

#include "ubert/chunking.hpp"
#include "ubert/pipeline.hpp"

int main(int argc, char** argv) {
  if (argc != 5) {
    std::cerr << "usage: " << argv[0] << " k c z max_c\n";
    return 2;
  }
  const auto k = std::strtoull(argv[1], nullptr, 10), c = std::strtoull(argv[2], nullptr, 10);
  const auto z = std::strtoull(argv[3], nullptr, 10), max_c = std::strtoull(argv[4], nullptr, 10);
  try {
    std::vector<ubert::TokenId> tokens(k, ubert::Vocabulary::kUnk);
    auto set = ubert::chunk_document(tokens, c, z);
    std::cout << set.count() << " chunks, stride " << ubert::chunk_stride(c, z) << '\n';
    for (std::size_t i = 0; i < set.count(); ++i) {
      std::cout << "  " << i + 1 << ": tokens " << set.starts[i] << ".." << set.starts[i] + set.chunks[i].size() - 1
                << '\n';
    }
    auto passes = ubert::plan_passes(set.count(), max_c);
    std::cout << passes.size() << " encoder pass(es):";
    for (auto p : passes) std::cout << ' ' << p;
    std::cout << '\n';
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
}
