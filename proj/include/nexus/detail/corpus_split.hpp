#pragma once

#include <stdexcept>

namespace nexus {

template <typename T>
CorpusSplit<T> split_corpus(const std::vector<T>& items, std::uint64_t seed) {
  if (items.size() < 12) {
    throw std::invalid_argument("split_corpus needs at least 12 dialogues, got " +
                                std::to_string(items.size()));
  }
  const auto order = split_permutation(items.size(), seed);
  const std::size_t held = items.size() / 12;
  CorpusSplit<T> out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const T& item = items[order[k]];
    if (k < held) {
      out.valid.push_back(item);
    } else if (k < 2 * held) {
      out.test.push_back(item);
    } else {
      out.train.push_back(item);
    }
  }
  return out;
}

}  // namespace nexus
