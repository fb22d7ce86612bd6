#include "tmeta/gbdt.hpp"

#include "tmeta/rankcorr.hpp"

#include <cmath>
#include <map>

namespace tmeta::ltr {

using json = nlohmann::json;

namespace {

constexpr double kHessianFloor = 1e-6;

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

RankingSet RankingSet::pack(const std::vector<RankingInstance>& instances) {
  if (instances.empty()) throw DataError("no ranking instances");
  const Index dim = instances.front().feature.size();
  std::map<std::string, std::size_t> slot;
  std::vector<std::vector<std::size_t>> groups;
  RankingSet out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    if (inst.feature.size() != dim) {
      throw DataError("instance (" + inst.query_id + ", " + inst.item_id + ") has feature dim " +
                      std::to_string(inst.feature.size()) + ", expected " + std::to_string(dim));
    }
    if (!all_finite(inst.feature) || !std::isfinite(inst.target)) {
      throw DataError("instance (" + inst.query_id + ", " + inst.item_id + ") is not finite");
    }
    auto [it, fresh] = slot.emplace(inst.query_id, groups.size());
    if (fresh) {
      groups.emplace_back();
      out.query_ids.push_back(inst.query_id);
    }
    groups[it->second].push_back(i);
  }
  out.features.resize(static_cast<Index>(instances.size()), dim);
  out.targets.resize(static_cast<Index>(instances.size()));
  out.query_begin.push_back(0);
  Index row = 0;
  for (std::size_t q = 0; q < groups.size(); ++q) {
    if (groups[q].size() < 2) throw DataError("query '" + out.query_ids[q] + "' has fewer than 2 items");
    for (auto i : groups[q]) {
      out.features.row(row) = instances[i].feature.transpose();
      out.targets(row) = instances[i].target;
      out.item_ids.push_back(instances[i].item_id);
      ++row;
    }
    out.query_begin.push_back(row);
  }
  return out;
}

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::lambda_ndcg: return "lambda_ndcg";
    case Objective::pairwise_logistic: return "pairwise_logistic";
    case Objective::pointwise_squared: return "pointwise_squared";
  }
  return "?";
}

Objective parse_objective(std::string_view s) {
  if (s == "lambda_ndcg") return Objective::lambda_ndcg;
  if (s == "pairwise_logistic") return Objective::pairwise_logistic;
  if (s == "pointwise_squared") return Objective::pointwise_squared;
  throw UsageError("unknown objective '" + std::string(s) + "'");
}

void GbdtParams::validate() const {
  if (n_trees < 1) throw UsageError("n_trees must be >= 1");
  if (max_depth < 1) throw UsageError("max_depth must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw UsageError("learning_rate must lie in (0, 1]");
  if (min_samples_leaf < 1) throw UsageError("min_samples_leaf must be >= 1");
  if (!(subsample > 0.0 && subsample <= 1.0)) throw UsageError("subsample must lie in (0, 1]");
}

void to_json(json& j, const GbdtParams& p) {
  j = json{{"n_trees", p.n_trees},
           {"max_depth", p.max_depth},
           {"learning_rate", p.learning_rate},
           {"min_samples_leaf", p.min_samples_leaf},
           {"objective", std::string(to_string(p.objective))},
           {"subsample", p.subsample},
           {"seed", p.seed}};
}

void from_json(const json& j, GbdtParams& p) {
  p = GbdtParams{};
  if (j.contains("n_trees")) p.n_trees = j.at("n_trees").get<int>();
  if (j.contains("max_depth")) p.max_depth = j.at("max_depth").get<int>();
  if (j.contains("learning_rate")) p.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("min_samples_leaf")) p.min_samples_leaf = j.at("min_samples_leaf").get<Index>();
  if (j.contains("objective")) p.objective = parse_objective(j.at("objective").get<std::string>());
  if (j.contains("subsample")) p.subsample = j.at("subsample").get<double>();
  if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
}

VectorXd GbdtModel::predict(const RowMatrixXd& features) const {
  if (features.cols() != input_dim) {
    throw DataError("feature dim " + std::to_string(features.cols()) + " does not match model input dim " +
                    std::to_string(input_dim));
  }
  VectorXd out(features.rows());
  for (Index i = 0; i < features.rows(); ++i) {
    double sum = 0.0;
    for (const auto& t : trees) sum += t.evaluate(features.row(i));
    out(i) = base + params.learning_rate * sum;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradients

double ndcg_swap_delta(int rel_i, int rel_j, Index pos_i, Index pos_j, double ideal_dcg) {
  const double gain = std::exp2(rel_i) - std::exp2(rel_j);
  const double disc = 1.0 / std::log2(static_cast<double>(pos_i) + 2.0) -
                      1.0 / std::log2(static_cast<double>(pos_j) + 2.0);
  return std::abs(gain * disc) / ideal_dcg;
}

GradientPair pairwise_gradients(std::span<const double> targets, std::span<const double> predictions,
                                bool ndcg_weighted) {
  const Index k = static_cast<Index>(targets.size());
  GradientPair out{VectorXd::Zero(k), VectorXd::Zero(k)};
  const Eigen::Map<const VectorXd> t(targets.data(), k);
  const Eigen::Map<const VectorXd> p(predictions.data(), k);
  std::vector<int> rel;
  std::vector<Index> pos;
  double ideal = 1.0;
  if (ndcg_weighted) {
    const auto truth = argsort_descending(t);
    rel = rankcorr::relevance_from_order(truth);
    pos = rankcorr::descending_positions(p);
    ideal = rankcorr::dcg(truth, rel);
    if (ideal == 0.0) return out;
  }
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      if (!(t(i) > t(j))) continue;
      const double rho = sigmoid(p(j) - p(i));
      const double w = ndcg_weighted ? ndcg_swap_delta(rel[i], rel[j], pos[i], pos[j], ideal) : 1.0;
      out.gradient(i) -= w * rho;
      out.gradient(j) += w * rho;
      const double h = w * rho * (1.0 - rho);
      out.hessian(i) += h;
      out.hessian(j) += h;
    }
  }
  return out;
}

double mean_ndcg(const RankingSet& data, const VectorXd& scores) {
  double sum = 0.0;
  for (Index q = 0; q < data.num_queries(); ++q) {
    const Index b = data.query_begin[q], n = data.query_size(q);
    const auto pred = argsort_descending(scores.segment(b, n));
    const auto truth = argsort_descending(data.targets.segment(b, n));
    sum += rankcorr::ndcg(pred, truth);
  }
  return sum / static_cast<double>(data.num_queries());
}

double top1_accuracy(const RankingSet& data, const VectorXd& scores) {
  Index hits = 0;
  for (Index q = 0; q < data.num_queries(); ++q) {
    const Index b = data.query_begin[q], n = data.query_size(q);
    Index top = 0;
    scores.segment(b, n).maxCoeff(&top);
    if (data.targets(b + top) == data.targets.segment(b, n).maxCoeff()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.num_queries());
}

// ---------------------------------------------------------------------------
// Tree growth

namespace {

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

double newton_score(double g, double h) { return g * g / std::max(h, kHessianFloor); }

class TreeBuilder {
 public:
  TreeBuilder(const RowMatrixXd& x, const GbdtParams& params) : x_(x), params_(params) {
    const Index n = x.rows(), d = x.cols();
    // Columns that are constant on the training rows can never split.
    for (Index f = 0; f < d; ++f) {
      const auto col = x.col(f);
      if (col.maxCoeff() == col.minCoeff()) continue;
      Column c;
      c.feature = static_cast<int>(f);
      c.order.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) c.order[i] = i;
      std::stable_sort(c.order.begin(), c.order.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
      c.values.resize(static_cast<std::size_t>(n));
      for (Index k = 0; k < n; ++k) c.values[k] = x(c.order[k], f);
      columns_.push_back(std::move(c));
    }
  }

  // Structure is grown on rows with active[i] set; leaf values use every row.
  Tree build(const VectorXd& g, const VectorXd& h, const std::vector<char>& active,
             std::vector<int>& leaf_of) const {
    const Index n = x_.rows();
    Tree tree;
    tree.nodes.push_back({});
    leaf_of.assign(static_cast<std::size_t>(n), 0);
    std::vector<int> frontier{0};
    for (int depth = 0; depth < params_.max_depth && !frontier.empty(); ++depth) {
      const auto splits = best_splits(g, h, active, leaf_of, frontier, tree.nodes.size());
      std::vector<int> next;
      std::vector<int> child_left(tree.nodes.size(), -1);
      for (std::size_t s = 0; s < frontier.size(); ++s) {
        const auto& c = splits[s];
        if (c.feature < 0) continue;
        const int node = frontier[s];
        const int l = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        tree.nodes[node].feature = c.feature;
        tree.nodes[node].threshold = c.threshold;
        tree.nodes[node].left = l;
        tree.nodes[node].right = l + 1;
        next.push_back(l);
        next.push_back(l + 1);
      }
      for (Index i = 0; i < n; ++i) {
        const auto& node = tree.nodes[leaf_of[i]];
        if (node.feature >= 0) leaf_of[i] = x_(i, node.feature) <= node.threshold ? node.left : node.right;
      }
      frontier = std::move(next);
    }
    std::vector<double> gs(tree.nodes.size(), 0.0), hs(tree.nodes.size(), 0.0);
    for (Index i = 0; i < n; ++i) {
      gs[leaf_of[i]] += g(i);
      hs[leaf_of[i]] += h(i);
    }
    for (std::size_t k = 0; k < tree.nodes.size(); ++k)
      if (tree.nodes[k].feature < 0) tree.nodes[k].value = -gs[k] / std::max(hs[k], kHessianFloor);
    return tree;
  }

 private:
  std::vector<SplitCandidate> best_splits(const VectorXd& g, const VectorXd& h,
                                          const std::vector<char>& active, const std::vector<int>& leaf_of,
                                          const std::vector<int>& frontier,
                                          std::size_t num_nodes) const {
    const Index n = x_.rows();
    const std::size_t m = frontier.size();
    std::vector<int> slot(num_nodes, -1);
    for (std::size_t s = 0; s < m; ++s) slot[frontier[s]] = static_cast<int>(s);

    std::vector<double> g_tot(m, 0.0), h_tot(m, 0.0);
    std::vector<Index> n_tot(m, 0);
    for (Index i = 0; i < n; ++i) {
      const int s = slot[leaf_of[i]];
      if (s < 0 || !active[i]) continue;
      g_tot[s] += g(i);
      h_tot[s] += h(i);
      ++n_tot[s];
    }
    std::vector<double> parent(m);
    for (std::size_t s = 0; s < m; ++s) parent[s] = newton_score(g_tot[s], h_tot[s]);

    std::vector<SplitCandidate> best(m);
    std::vector<double> gl(m), hl(m), last(m);
    std::vector<Index> nl(m);
    const Index min_leaf = params_.min_samples_leaf;
    for (const auto& col : columns_) {
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(hl.begin(), hl.end(), 0.0);
      std::fill(nl.begin(), nl.end(), 0);
      for (std::size_t k = 0; k < col.order.size(); ++k) {
        const Index i = col.order[k];
        const int s = slot[leaf_of[i]];
        if (s < 0 || !active[i]) continue;
        const double v = col.values[k];
        if (nl[s] >= min_leaf && v != last[s] && n_tot[s] - nl[s] >= min_leaf) {
          const double gain = newton_score(gl[s], hl[s]) +
                              newton_score(g_tot[s] - gl[s], h_tot[s] - hl[s]) - parent[s];
          if (gain > best[s].gain + 1e-12 * std::abs(best[s].gain) && gain > 1e-15) {
            double thr = last[s] + 0.5 * (v - last[s]);
            if (!(thr < v)) thr = last[s];
            best[s] = {gain, col.feature, thr};
          }
        }
        gl[s] += g(i);
        hl[s] += h(i);
        ++nl[s];
        last[s] = v;
      }
    }
    return best;
  }

  struct Column {
    int feature = 0;
    std::vector<Index> order;    // rows by ascending value
    std::vector<double> values;  // values in that order
  };

  const RowMatrixXd& x_;
  const GbdtParams& params_;
  std::vector<Column> columns_;
};

void compute_gradients(const RankingSet& data, const VectorXd& pred, Objective obj, VectorXd& g,
                       VectorXd& h) {
  if (obj == Objective::pointwise_squared) {
    g = pred - data.targets;
    h = VectorXd::Ones(pred.size());
    return;
  }
  for (Index q = 0; q < data.num_queries(); ++q) {
    const Index b = data.query_begin[q], n = data.query_size(q);
    auto gp = pairwise_gradients({data.targets.data() + b, static_cast<std::size_t>(n)},
                                 {pred.data() + b, static_cast<std::size_t>(n)},
                                 obj == Objective::lambda_ndcg);
    g.segment(b, n) = gp.gradient;
    h.segment(b, n) = gp.hessian;
  }
}

bool all_queries_constant(const RankingSet& data) {
  for (Index q = 0; q < data.num_queries(); ++q) {
    const auto seg = data.targets.segment(data.query_begin[q], data.query_size(q));
    if (seg.maxCoeff() != seg.minCoeff()) return false;
  }
  return true;
}

double half_mse(const VectorXd& pred, const VectorXd& y) {
  return 0.5 * (pred - y).squaredNorm() / static_cast<double>(y.size());
}

}  // namespace

GbdtModel train(const RankingSet& data, const GbdtParams& params, TrainTrace* trace) {
  params.validate();
  if (data.num_queries() < 1) throw DataError("training needs at least one query");
  GbdtModel model;
  model.params = params;
  model.input_dim = data.features.cols();
  model.base = params.objective == Objective::pointwise_squared ? data.targets.mean() : 0.0;

  const Index n = data.features.rows();
  VectorXd pred = VectorXd::Constant(n, model.base);
  if (trace) {
    trace->pointwise_loss.push_back(half_mse(pred, data.targets));
    trace->mean_ndcg.push_back(mean_ndcg(data, pred));
  }
  if (all_queries_constant(data)) {
    model.warnings.push_back("all targets are equal within every query; returning a constant model");
    return model;
  }

  TreeBuilder builder(data.features, params);
  VectorXd g(n), h(n);
  std::vector<int> leaf_of;
  // NDCG is piecewise constant in the scores, so single stages can lower it even
  // while the surrogate improves. The lambda model keeps the prefix of trees with
  // the best training NDCG seen so far, which makes that NDCG monotone in stages.
  const bool keep_best_prefix = params.objective == Objective::lambda_ndcg;
  double best_ndcg = mean_ndcg(data, pred);
  std::size_t best_prefix = 0;
  std::vector<char> active(static_cast<std::size_t>(n), 1);
  for (int t = 0; t < params.n_trees; ++t) {
    compute_gradients(data, pred, params.objective, g, h);
    if (params.subsample < 1.0) {
      // Each stage grows its structure on a seeded subset of whole queries.
      Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(t)));
      std::vector<Index> queries(static_cast<std::size_t>(data.num_queries()));
      for (Index q = 0; q < data.num_queries(); ++q) queries[q] = q;
      rng.shuffle(queries);
      const auto keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(params.subsample * static_cast<double>(queries.size()))));
      std::fill(active.begin(), active.end(), 0);
      for (std::size_t k = 0; k < keep; ++k)
        for (Index i = data.query_begin[queries[k]]; i < data.query_begin[queries[k] + 1]; ++i) active[i] = 1;
    }
    Tree tree = builder.build(g, h, active, leaf_of);
    VectorXd step(n);
    for (Index i = 0; i < n; ++i) step(i) = params.learning_rate * tree.nodes[leaf_of[i]].value;

    pred += step;
    model.trees.push_back(std::move(tree));
    if (keep_best_prefix) {
      const double now = mean_ndcg(data, pred);
      if (now > best_ndcg + 1e-12) {
        best_ndcg = now;
        best_prefix = model.trees.size();
      }
    }
    if (trace) {
      trace->pointwise_loss.push_back(half_mse(pred, data.targets));
      trace->mean_ndcg.push_back(keep_best_prefix ? best_ndcg : mean_ndcg(data, pred));
    }
  }
  if (keep_best_prefix) model.trees.resize(best_prefix);
  return model;
}

GbdtModel train(const std::vector<RankingInstance>& instances, const GbdtParams& params) {
  return train(RankingSet::pack(instances), params);
}

// ---------------------------------------------------------------------------
// Serialization

void to_json(json& j, const GbdtModel& m) {
  json trees = json::array();
  for (const auto& t : m.trees) {
    json feature = json::array(), threshold = json::array(), left = json::array(),
         right = json::array(), value = json::array();
    for (const auto& node : t.nodes) {
      feature.push_back(node.feature);
      threshold.push_back(node.threshold);
      left.push_back(node.left);
      right.push_back(node.right);
      value.push_back(node.value);
    }
    trees.push_back({{"feature", feature},
                     {"threshold", threshold},
                     {"left", left},
                     {"right", right},
                     {"value", value}});
  }
  j = json{{"params", m.params}, {"input_dim", m.input_dim}, {"base", m.base}, {"trees", trees}};
}

void from_json(const json& j, GbdtModel& m) {
  m = GbdtModel{};
  m.params = j.at("params").get<GbdtParams>();
  m.input_dim = j.at("input_dim").get<Index>();
  m.base = j.at("base").get<double>();
  for (const auto& jt : j.at("trees")) {
    const auto feature = jt.at("feature").get<std::vector<int>>();
    const auto threshold = jt.at("threshold").get<std::vector<double>>();
    const auto left = jt.at("left").get<std::vector<int>>();
    const auto right = jt.at("right").get<std::vector<int>>();
    const auto value = jt.at("value").get<std::vector<double>>();
    const std::size_t k = feature.size();
    if (k == 0 || threshold.size() != k || left.size() != k || right.size() != k || value.size() != k)
      throw DataError("malformed tree arrays in model");
    Tree t;
    for (std::size_t i = 0; i < k; ++i) {
      TreeNode node{feature[i], threshold[i], left[i], right[i], value[i]};
      if (node.feature >= 0) {
        const auto ok = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(k); };
        if (node.feature >= m.input_dim || !ok(node.left) || !ok(node.right))
          throw DataError("malformed tree node in model");
      } else if (!std::isfinite(node.value)) {
        throw DataError("non-finite leaf value in model");
      }
      t.nodes.push_back(node);
    }
    m.trees.push_back(std::move(t));
  }
}

}  // namespace tmeta::ltr
