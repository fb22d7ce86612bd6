#pragma once

// Gradient-boosted regression trees for learning to rank, with pointwise,
// pairwise (RankNet) and LambdaRank-style NDCG objectives.

#include "tmeta/common.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace tmeta::ltr {

/// One (query, item) pair: the feature is [dataset embedding ; metric embedding].
struct RankingInstance {
  std::string query_id;
  std::string item_id;
  VectorXd feature;
  double target = 0.0;
};

/// Instances packed by query: rows of `features` are contiguous per query.
struct RankingSet {
  RowMatrixXd features;
  VectorXd targets;
  std::vector<Index> query_begin;  // size = num_queries + 1
  std::vector<std::string> query_ids;
  std::vector<std::string> item_ids;

  Index num_queries() const { return static_cast<Index>(query_ids.size()); }
  Index query_size(Index q) const { return query_begin[q + 1] - query_begin[q]; }

  /// Groups instances by query in order of first appearance; checks the
  /// invariants (constant dim, >= 2 items per query, finite values).
  static RankingSet pack(const std::vector<RankingInstance>& instances);
};

enum class Objective { lambda_ndcg, pairwise_logistic, pointwise_squared };

std::string_view to_string(Objective o);
Objective parse_objective(std::string_view s);

struct GbdtParams {
  int n_trees = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  Index min_samples_leaf = 2;
  Objective objective = Objective::lambda_ndcg;
  double subsample = 0.8;  // fraction of queries that grow each tree's structure
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const GbdtParams& p);
void from_json(const nlohmann::json& j, GbdtParams& p);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;  // node 0 is the root

  template <typename Derived>
  double evaluate(const Eigen::DenseBase<Derived>& x) const {
    int k = 0;
    while (nodes[k].feature >= 0) k = x(nodes[k].feature) <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    return nodes[k].value;
  }
};

struct GbdtModel {
  GbdtParams params;
  Index input_dim = 0;
  double base = 0.0;
  std::vector<Tree> trees;
  std::vector<std::string> warnings;

  /// base + learning_rate * sum of tree outputs, one score per row.
  VectorXd predict(const RowMatrixXd& features) const;
};

/// Per-stage training trace, exposed for the monotonicity properties.
struct TrainTrace {
  std::vector<double> pointwise_loss;  // half mean squared error after each stage
  std::vector<double> mean_ndcg;       // training mean NDCG, entry 0 before any tree
};

GbdtModel train(const RankingSet& data, const GbdtParams& params, TrainTrace* trace = nullptr);
GbdtModel train(const std::vector<RankingInstance>& instances, const GbdtParams& params);

void to_json(nlohmann::json& j, const GbdtModel& m);
void from_json(const nlohmann::json& j, GbdtModel& m);

struct GradientPair {
  VectorXd gradient;  // derivative of the loss; negative values push an item up
  VectorXd hessian;
};

/// Pairwise logistic gradients for one query, each pair weighted by the NDCG
/// change of swapping it when `ndcg_weighted` is set.
GradientPair pairwise_gradients(std::span<const double> targets, std::span<const double> predictions,
                                bool ndcg_weighted);

/// Lambda gradients under relevance rel = K-1-position in the target order.
inline GradientPair lambda_gradients(std::span<const double> targets,
                                     std::span<const double> predictions) {
  return pairwise_gradients(targets, predictions, true);
}

/// |NDCG change| from swapping the items at positions pi and pj of a ranking.
/// `relevance` is indexed by item; `ideal_dcg` normalizes.
double ndcg_swap_delta(int rel_i, int rel_j, Index pos_i, Index pos_j, double ideal_dcg);

/// Descending argsort of scores with index tie-break.
template <typename Derived>
std::vector<Index> rank_items(const Eigen::DenseBase<Derived>& predictions) {
  return argsort_descending(predictions);
}

/// Mean NDCG over the queries of `data` when ranked by `scores`.
double mean_ndcg(const RankingSet& data, const VectorXd& scores);

/// Fraction of queries whose top-scored item has the highest target.
double top1_accuracy(const RankingSet& data, const VectorXd& scores);

}  // namespace tmeta::ltr
