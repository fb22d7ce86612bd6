#include "tmeta/rankcorr.hpp"

namespace tmeta::rankcorr {

void check_permutation(std::span<const Index> order) {
  std::vector<char> seen(order.size(), 0);
  for (Index v : order) {
    if (v < 0 || static_cast<std::size_t>(v) >= order.size() || seen[static_cast<std::size_t>(v)]) {
      throw DataError("ranking is not a permutation of 0.." + std::to_string(order.size() - 1));
    }
    seen[static_cast<std::size_t>(v)] = 1;
  }
}

std::vector<int> relevance_from_order(std::span<const Index> ground_truth_order) {
  const auto k = static_cast<int>(ground_truth_order.size());
  std::vector<int> rel(ground_truth_order.size());
  for (int p = 0; p < k; ++p) rel[static_cast<std::size_t>(ground_truth_order[p])] = k - 1 - p;
  return rel;
}

double dcg(std::span<const Index> order, std::span<const int> relevance) {
  double sum = 0.0;
  for (std::size_t p = 0; p < order.size(); ++p) {
    const double gain = std::exp2(relevance[static_cast<std::size_t>(order[p])]) - 1.0;
    sum += gain / std::log2(static_cast<double>(p) + 2.0);
  }
  return sum;
}

double ndcg(std::span<const Index> predicted, std::span<const Index> ground_truth,
            std::span<const int> relevance) {
  if (predicted.empty()) throw DataError("ndcg of an empty ranking");
  if (predicted.size() != ground_truth.size() || relevance.size() != predicted.size())
    throw DataError("ndcg inputs differ in length");
  check_permutation(predicted);
  check_permutation(ground_truth);
  const double ideal = dcg(ground_truth, relevance);
  // A single item (or all-zero relevance) has nothing to misorder.
  if (ideal == 0.0) return 1.0;
  return dcg(predicted, relevance) / ideal;
}

double ndcg(std::span<const Index> predicted, std::span<const Index> ground_truth) {
  if (ground_truth.empty()) throw DataError("ndcg of an empty ranking");
  check_permutation(ground_truth);
  auto rel = relevance_from_order(ground_truth);
  return ndcg(predicted, ground_truth, rel);
}

}  // namespace tmeta::rankcorr
