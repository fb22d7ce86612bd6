#pragma once

// Rank statistics: weighted and plain Kendall tau, NDCG with exponential gain,
// and tie-averaged ranks. Free functions over Eigen expressions.

#include "tmeta/common.hpp"

#include <cmath>
#include <span>

namespace tmeta::rankcorr {

enum class WeightScheme {
  hyperbolic_additive,  // w_ij = 1/(r_i+1) + 1/(r_j+1), r = 0-based rank by T descending
  uniform,              // w_ij = 1
};

struct Correlation {
  double value = 0.0;
  bool degenerate = false;  // a sign-weight sum was zero (constant input); value is 0
};

template <typename T>
constexpr int sign(T x) {
  return (T(0) < x) - (x < T(0));
}

/// Positions of each item when sorted by `values` descending, ties by index.
template <typename Derived>
std::vector<Index> descending_positions(const Eigen::DenseBase<Derived>& values) {
  auto order = argsort_descending(values);
  std::vector<Index> pos(order.size());
  for (std::size_t p = 0; p < order.size(); ++p) pos[static_cast<std::size_t>(order[p])] = static_cast<Index>(p);
  return pos;
}

namespace detail {
template <typename A, typename B>
void check_pair(const Eigen::DenseBase<A>& s, const Eigen::DenseBase<B>& t) {
  if (s.size() != t.size())
    throw DataError("score and ground-truth vectors differ in length");
  if (s.size() < 2) throw DataError("rank correlation needs at least 2 items");
  if (!all_finite(s) || !all_finite(t)) throw DataError("rank correlation input is not finite");
}
}  // namespace detail

/// Weighted Kendall rank correlation between scores S and ground truth T.
template <typename DerivedS, typename DerivedT>
Correlation weighted_kendall_tau(const Eigen::DenseBase<DerivedS>& s,
                                 const Eigen::DenseBase<DerivedT>& t,
                                 WeightScheme scheme = WeightScheme::hyperbolic_additive) {
  detail::check_pair(s, t);
  const Index n = s.size();
  std::vector<double> inv_rank(static_cast<std::size_t>(n), 1.0);
  if (scheme == WeightScheme::hyperbolic_additive) {
    auto pos = descending_positions(t);
    for (Index i = 0; i < n; ++i) inv_rank[i] = 1.0 / static_cast<double>(pos[i] + 1);
  }
  double num = 0.0, den_s = 0.0, den_t = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double w = scheme == WeightScheme::uniform ? 1.0 : inv_rank[i] + inv_rank[j];
      const int ss = sign(s(i) - s(j));
      const int st = sign(t(i) - t(j));
      num += w * ss * st;
      den_s += w * ss * ss;
      den_t += w * st * st;
    }
  }
  const double den = std::sqrt(den_s * den_t);
  if (den == 0.0) return {0.0, true};
  return {num / den, false};
}

template <typename DerivedS, typename DerivedT>
Correlation kendall_tau(const Eigen::DenseBase<DerivedS>& s, const Eigen::DenseBase<DerivedT>& t) {
  return weighted_kendall_tau(s, t, WeightScheme::uniform);
}

/// Integer relevance grades from a ground-truth order: the item at position k gets K-1-k.
std::vector<int> relevance_from_order(std::span<const Index> ground_truth_order);

/// Discounted cumulative gain of an order under per-item relevance grades.
double dcg(std::span<const Index> order, std::span<const int> relevance);

/// NDCG of `predicted` against `ground_truth`, both permutations of 0..K-1.
/// Relevance defaults to K-1-position in the ground-truth order.
double ndcg(std::span<const Index> predicted, std::span<const Index> ground_truth);
double ndcg(std::span<const Index> predicted, std::span<const Index> ground_truth,
            std::span<const int> relevance);

/// Throws DataError unless `order` is a permutation of 0..size-1.
void check_permutation(std::span<const Index> order);

/// Rank 1 for the best value; tied values share the mean of their positions.
template <typename Derived>
VectorXd tie_average_ranks(const Eigen::DenseBase<Derived>& values, bool higher_is_better = true) {
  const Index r = values.size();
  if (r < 1) throw DataError("tie_average_ranks needs at least one value");
  if (!all_finite(values)) throw DataError("tie_average_ranks input is not finite");
  std::vector<Index> order(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return higher_is_better ? values(a) > values(b) : values(a) < values(b);
  });
  VectorXd ranks(r);
  for (Index p = 0; p < r;) {
    Index q = p;
    while (q + 1 < r && values(order[q + 1]) == values(order[p])) ++q;
    const double shared = 0.5 * static_cast<double>((p + 1) + (q + 1));
    for (Index k = p; k <= q; ++k) ranks(order[k]) = shared;
    p = q + 1;
  }
  return ranks;
}

}  // namespace tmeta::rankcorr
