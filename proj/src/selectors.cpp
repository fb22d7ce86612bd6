#include "tmeta/selectors.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace tmeta::select {

namespace {

constexpr const char* kFormat = "tmeta-selector";
constexpr int kVersion = 1;

const std::vector<std::pair<SelectorKind, std::string_view>> kKindNames = {
    {SelectorKind::metarank_gbdt, "metarank_gbdt"}, {SelectorKind::metarank_mlp, "metarank_mlp"},
    {SelectorKind::global_best, "global_best"},     {SelectorKind::argosmart_1nn, "argosmart_1nn"},
    {SelectorKind::isac_kmeans, "isac_kmeans"},     {SelectorKind::alors_mf, "alors_mf"},
    {SelectorKind::ncf_mlp, "ncf_mlp"},             {SelectorKind::random, "random"},
    {SelectorKind::fixed, "fixed"},
};

const std::set<std::string> kGbdtKeys = {"n_trees", "max_depth", "learning_rate", "min_samples_leaf",
                                         "objective", "subsample"};
const std::set<std::string> kMlpKeys = {"hidden_dims", "epochs", "step_size", "momentum"};

std::set<std::string> allowed_keys(SelectorKind k) {
  switch (k) {
    case SelectorKind::metarank_gbdt: return kGbdtKeys;
    case SelectorKind::metarank_mlp: return kMlpKeys;
    case SelectorKind::isac_kmeans: return {"k"};
    case SelectorKind::alors_mf: return {"rank", "lambda"};
    case SelectorKind::ncf_mlp: {
      auto keys = kMlpKeys;
      keys.insert({"rank", "lambda"});
      return keys;
    }
    case SelectorKind::fixed: return {"metric"};
    default: return {};
  }
}

template <typename T>
T hyper_or(const json& hyper, const char* key, T fallback) {
  if (!hyper.contains(key)) return fallback;
  try {
    return hyper.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(std::string("hyperparameter '") + key + "' has the wrong type");
  }
}

ltr::GbdtParams gbdt_params(const SelectorSpec& s) {
  ltr::GbdtParams p;
  try {
    p = s.hyper.get<ltr::GbdtParams>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad GBDT hyperparameters: ") + e.what());
  }
  p.seed = s.seed;
  return p;
}

ltr::MlpParams mlp_params(const SelectorSpec& s) {
  ltr::MlpParams p;
  try {
    p = s.hyper.get<ltr::MlpParams>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad MLP hyperparameters: ") + e.what());
  }
  p.seed = s.seed;
  return p;
}

json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

MatrixXd matrix_from_json(const json& j) {
  const Index r = j.at("rows").get<Index>(), c = j.at("cols").get<Index>();
  MatrixXd m(r, c);
  const auto& data = j.at("data");
  if (static_cast<Index>(data.size()) != r) throw DataError("matrix payload has the wrong row count");
  for (Index i = 0; i < r; ++i) {
    if (static_cast<Index>(data[i].size()) != c) throw DataError("matrix payload has the wrong column count");
    for (Index k = 0; k < c; ++k) m(i, k) = data[i][k].get<double>();
  }
  return m;
}

// Row mean over a subset, summed in index order so every selector agrees bitwise.
VectorXd mean_rows(const MatrixXd& m, const std::vector<Index>& rows) {
  VectorXd sum = VectorXd::Zero(m.cols());
  for (Index r : rows) sum += m.row(r).transpose();
  return sum / static_cast<double>(rows.size());
}

std::vector<Index> iota_rows(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

MatrixXd stack_embeddings(const EmbeddingCorpus& corpus, EmbeddingKind kind,
                          const std::vector<std::string>& names) {
  MatrixXd m(static_cast<Index>(names.size()), corpus.dim());
  for (std::size_t i = 0; i < names.size(); ++i) m.row(static_cast<Index>(i)) = corpus.vector(kind, names[i]).transpose();
  return m;
}

Index nearest_row(const MatrixXd& rows, const VectorXd& q) {
  Index best = 0;
  (rows.rowwise() - q.transpose()).rowwise().squaredNorm().minCoeff(&best);
  return best;
}

// Lloyd's algorithm from k-means++ seeds; ties go to the lowest centroid index.
MatrixXd kmeans(const MatrixXd& x, Index k, std::uint64_t seed, std::vector<Index>& assign) {
  const Index n = x.rows();
  Rng rng(seed);
  MatrixXd c(k, x.cols());
  c.row(0) = x.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  VectorXd d2 = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (Index j = 1; j < k; ++j) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= d2(pick);
        if (u < 0.0) break;
      }
    } else {
      pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    c.row(j) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - c.row(j)).rowwise().squaredNorm());
  }
  assign.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const Index a = nearest_row(c, x.row(i).transpose());
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    if (!changed) break;
    for (Index j = 0; j < k; ++j) {
      std::vector<Index> members;
      for (Index i = 0; i < n; ++i)
        if (assign[i] == j) members.push_back(i);
      if (!members.empty()) c.row(j) = mean_rows(x, members).transpose();
    }
  }
  return c;
}

}  // namespace

std::string_view to_string(SelectorKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "?";
}

SelectorKind parse_selector_kind(const std::string& s, std::string* fixed_metric) {
  if (s.rfind("fixed(", 0) == 0 && s.size() > 7 && s.back() == ')') {
    if (fixed_metric) *fixed_metric = s.substr(6, s.size() - 7);
    return SelectorKind::fixed;
  }
  for (const auto& [kind, name] : kKindNames)
    if (name == s) return kind;
  throw UsageError("unknown selector kind '" + s + "'");
}

std::string SelectorSpec::display_name() const {
  if (!name.empty()) return name;
  switch (kind) {
    case SelectorKind::metarank_gbdt: return "MetaRank";
    case SelectorKind::metarank_mlp: return "MetaRank_NN";
    case SelectorKind::global_best: return "GB";
    case SelectorKind::argosmart_1nn: return "AS";
    case SelectorKind::isac_kmeans: return "ISAC";
    case SelectorKind::alors_mf: return "ALORS";
    case SelectorKind::ncf_mlp: return "NCF";
    case SelectorKind::random: return "Random";
    case SelectorKind::fixed: return fixed_metric;
  }
  return "?";
}

bool SelectorSpec::uses_embeddings() const {
  return kind != SelectorKind::global_best && kind != SelectorKind::random && kind != SelectorKind::fixed;
}

void SelectorSpec::validate() const {
  if (!hyper.is_object()) throw UsageError("selector hyper must be a JSON object");
  const auto keys = allowed_keys(kind);
  for (const auto& [key, value] : hyper.items()) {
    if (!keys.count(key)) {
      throw UsageError("hyperparameter '" + key + "' is not valid for selector kind " +
                       std::string(to_string(kind)));
    }
  }
  switch (kind) {
    case SelectorKind::metarank_gbdt: gbdt_params(*this).validate(); break;
    case SelectorKind::metarank_mlp: mlp_params(*this).validate(); break;
    case SelectorKind::ncf_mlp:
      mlp_params(*this).validate();
      [[fallthrough]];
    case SelectorKind::alors_mf:
      if (hyper_or<Index>(hyper, "rank", 3) < 1) throw UsageError("rank must be >= 1");
      if (hyper_or<double>(hyper, "lambda", 1e-2) < 0.0) throw UsageError("lambda must be >= 0");
      break;
    case SelectorKind::isac_kmeans:
      if (hyper_or<Index>(hyper, "k", 3) < 1) throw UsageError("k must be >= 1");
      break;
    case SelectorKind::fixed:
      if (fixed_metric.empty()) throw UsageError("fixed selector needs a metric name");
      break;
    default: break;
  }
}

SelectorSpec SelectorSpec::from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw UsageError("selector entry needs a 'kind'");
  SelectorSpec s;
  try {
    s.kind = parse_selector_kind(j.at("kind").get<std::string>(), &s.fixed_metric);
    if (j.contains("hyper")) s.hyper = j.at("hyper");
    if (s.kind == SelectorKind::fixed && s.hyper.is_object() && s.hyper.contains("metric"))
      s.fixed_metric = s.hyper.at("metric").get<std::string>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("name")) s.name = j.at("name").get<std::string>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed selector entry: ") + e.what());
  }
  s.validate();
  return s;
}

json SelectorSpec::to_json() const {
  std::string kind_name(to_string(kind));
  if (kind == SelectorKind::fixed) kind_name = "fixed(" + fixed_metric + ")";
  return json{{"kind", kind_name}, {"hyper", hyper}, {"seed", seed}, {"name", display_name()}};
}

bool hyper_key_allowed(SelectorKind kind, const std::string& key) { return allowed_keys(kind).count(key) > 0; }

json default_grid(SelectorKind kind) {
  switch (kind) {
    case SelectorKind::metarank_gbdt:
      return json{{"n_trees", {50, 100, 200}}, {"max_depth", {2, 3, 4}}, {"learning_rate", {0.05, 0.1, 0.3}}};
    case SelectorKind::isac_kmeans: return json{{"k", {2, 3, 4}}};
    case SelectorKind::alors_mf: return json{{"rank", {2, 3, 4}}};
    default: return json::object();
  }
}

std::vector<json> expand_grid(const json& grid) {
  if (!grid.is_object()) throw UsageError("grid must be a JSON object");
  std::vector<json> out{json::object()};
  for (const auto& [key, values] : grid.items()) {  // nlohmann objects iterate in key order
    if (!values.is_array() || values.empty()) throw UsageError("grid values for '" + key + "' must be a nonempty list");
    std::vector<json> next;
    for (const auto& partial : out) {
      for (const auto& v : values) {
        json h = partial;
        h[key] = v;
        next.push_back(std::move(h));
      }
    }
    out = std::move(next);
  }
  return out;
}

Recommendation make_recommendation(const std::vector<std::string>& candidates,
                                   const std::vector<double>& scores, const std::vector<bool>& seen) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (seen[a] != seen[b]) return static_cast<bool>(seen[a]);
    return seen[a] && scores[a] > scores[b];
  });
  Recommendation r;
  for (auto i : order) {
    r.metrics.push_back(candidates[i]);
    r.scores.push_back(seen[i] ? scores[i] : -std::numeric_limits<double>::infinity());
    if (!seen[i]) r.unseen.push_back(candidates[i]);
  }
  return r;
}

std::vector<ltr::RankingInstance> build_instances(const MetaTaskTable& table,
                                                  const EmbeddingCorpus& embeddings) {
  const auto datasets = sorted(table.datasets());
  const auto metrics = sorted(table.metrics());
  std::vector<VectorXd> mvec;
  for (const auto& m : metrics) mvec.push_back(embeddings.vector(EmbeddingKind::metric, m));
  std::vector<ltr::RankingInstance> out;
  for (const auto& d : datasets) {
    const VectorXd dv = embeddings.vector(EmbeddingKind::dataset, d);
    for (std::size_t k = 0; k < metrics.size(); ++k) {
      ltr::RankingInstance inst;
      inst.query_id = d;
      inst.item_id = metrics[k];
      inst.feature.resize(dv.size() + mvec[k].size());
      inst.feature << dv, mvec[k];
      inst.target = table.cell(d, metrics[k]);
      out.push_back(std::move(inst));
    }
  }
  return out;
}

AlsFactors als_factorize(const MatrixXd& m, Index rank, double lambda, std::uint64_t seed, int max_iters,
                         double tol) {
  if (rank < 1 || rank > std::min(m.rows(), m.cols())) {
    throw DataError("factorization rank " + std::to_string(rank) + " exceeds min(J, K) = " +
                    std::to_string(std::min(m.rows(), m.cols())));
  }
  Rng rng(seed);
  AlsFactors f;
  f.v.resize(m.cols(), rank);
  for (Index i = 0; i < f.v.size(); ++i) f.v.data()[i] = rng.normal();
  const MatrixXd eye = MatrixXd::Identity(rank, rank);
  // Solves min_X ||T - X B^T||^2 + lambda ||X||^2 for X.
  auto solve = [&](const MatrixXd& t, const MatrixXd& b) -> MatrixXd {
    if (lambda > 0.0) return (b.transpose() * b + lambda * eye).ldlt().solve(b.transpose() * t.transpose()).transpose();
    return b.completeOrthogonalDecomposition().solve(t.transpose()).transpose();
  };
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iters; ++it) {
    f.u = solve(m, f.v);
    f.v = solve(m.transpose(), f.u);
    const double err = (m - f.u * f.v.transpose()).squaredNorm() +
                       lambda * (f.u.squaredNorm() + f.v.squaredNorm());
    if (!std::isfinite(err)) throw ComputeError("ALS diverged");
    if (std::abs(prev - err) <= tol * std::max(1.0, err)) break;
    prev = err;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Fitting

FittedSelector fit_selector(const SelectorSpec& spec, const MetaTaskTable& table,
                            const EmbeddingCorpus& embeddings) {
  spec.validate();
  if (table.num_datasets() < 1 || table.num_metrics() < 1) throw DataError("empty training table");
  FittedSelector s;
  s.spec_ = spec;
  s.datasets_ = sorted(table.datasets());
  s.metrics_ = sorted(table.metrics());
  const auto canon = table.select_datasets(s.datasets_).select_metrics(s.metrics_);
  s.tau_ = canon.tau();
  const Index J = s.tau_.rows();
  s.metric_means_ = mean_rows(s.tau_, iota_rows(J));

  if (spec.uses_embeddings()) {
    s.embedding_dim_ = embeddings.dim();
    s.dataset_embeddings_ = stack_embeddings(embeddings, EmbeddingKind::dataset, s.datasets_);
  }

  switch (spec.kind) {
    case SelectorKind::metarank_gbdt:
    case SelectorKind::metarank_mlp: {
      s.metric_embeddings_ = stack_embeddings(embeddings, EmbeddingKind::metric, s.metrics_);
      const auto data = ltr::RankingSet::pack(build_instances(canon, embeddings));
      if (spec.kind == SelectorKind::metarank_gbdt) {
        s.gbdt_ = ltr::train(data, gbdt_params(spec));
      } else {
        s.mlp_ = ltr::train_mlp(data.features, data.targets, mlp_params(spec));
      }
      break;
    }
    case SelectorKind::isac_kmeans: {
      const Index k = hyper_or<Index>(spec.hyper, "k", 3);
      if (k > J) throw DataError("ISAC k = " + std::to_string(k) + " exceeds the " + std::to_string(J) + " training datasets");
      std::vector<Index> assign;
      s.centroids_ = kmeans(s.dataset_embeddings_, k, spec.seed, assign);
      s.cluster_scores_.resize(k, s.tau_.cols());
      for (Index c = 0; c < k; ++c) {
        std::vector<Index> members;
        for (Index i = 0; i < J; ++i)
          if (assign[i] == c) members.push_back(i);
        s.cluster_scores_.row(c) = members.empty() ? s.metric_means_.transpose()
                                                   : mean_rows(s.tau_, members).transpose();
      }
      break;
    }
    case SelectorKind::alors_mf:
    case SelectorKind::ncf_mlp: {
      const Index r = hyper_or<Index>(spec.hyper, "rank", 3);
      const double lambda = hyper_or<double>(spec.hyper, "lambda", 1e-2);
      const auto f = als_factorize(s.tau_, r, lambda, spec.seed);
      s.metric_factors_ = f.v;
      if (spec.kind == SelectorKind::alors_mf) {
        const MatrixXd& e = s.dataset_embeddings_;
        if (lambda > 0.0) {
          const MatrixXd gram = e * e.transpose() + lambda * MatrixXd::Identity(J, J);
          s.latent_map_ = e.transpose() * gram.ldlt().solve(f.u);
        } else {
          s.latent_map_ = e.completeOrthogonalDecomposition().solve(f.u);
        }
      } else {
        const Index dim = s.embedding_dim_;
        RowMatrixXd x(J * s.tau_.cols(), dim + r);
        VectorXd y(x.rows());
        for (Index j = 0; j < J; ++j)
          for (Index k = 0; k < s.tau_.cols(); ++k) {
            const Index row = j * s.tau_.cols() + k;
            x.row(row) << s.dataset_embeddings_.row(j), f.v.row(k);
            y(row) = s.tau_(j, k);
          }
        s.mlp_ = ltr::train_mlp(x, y, mlp_params(spec));
      }
      break;
    }
    case SelectorKind::fixed:
      if (std::find(s.metrics_.begin(), s.metrics_.end(), spec.fixed_metric) == s.metrics_.end())
        throw DataError("fixed metric '" + spec.fixed_metric + "' is not a column of the training table");
      break;
    default: break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Recommendation

std::optional<VectorXd> FittedSelector::metric_vector(const std::string& name,
                                                      const EmbeddingCorpus* corpus) const {
  if (corpus && corpus->contains(EmbeddingKind::metric, name)) {
    VectorXd v = corpus->vector(EmbeddingKind::metric, name);
    if (v.size() != embedding_dim_) {
      throw DataError("metric embedding '" + name + "' has dim " + std::to_string(v.size()) + ", model expects " +
                      std::to_string(embedding_dim_));
    }
    return v;
  }
  auto it = std::find(metrics_.begin(), metrics_.end(), name);
  if (it == metrics_.end() || metric_embeddings_.rows() == 0) return std::nullopt;
  return metric_embeddings_.row(it - metrics_.begin()).transpose();
}

std::vector<double> FittedSelector::table_scores(const VectorXd& row, const std::vector<std::string>& candidates,
                                                 std::vector<bool>& seen) const {
  std::vector<double> scores(candidates.size(), 0.0);
  seen.assign(candidates.size(), false);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto it = std::find(metrics_.begin(), metrics_.end(), candidates[i]);
    if (it == metrics_.end()) continue;
    scores[i] = row(it - metrics_.begin());
    seen[i] = true;
  }
  return scores;
}

Recommendation FittedSelector::recommend(const std::optional<VectorXd>& dataset_embedding,
                                         const std::vector<std::string>& candidates,
                                         const EmbeddingCorpus* metric_embeddings) const {
  if (candidates.empty()) throw DataError("no candidate metrics to rank");
  {
    std::set<std::string> uniq(candidates.begin(), candidates.end());
    if (uniq.size() != candidates.size()) throw DataError("candidate metrics contain duplicates");
  }
  if (spec_.uses_embeddings()) {
    if (!dataset_embedding) throw DataError(std::string(to_string(spec_.kind)) + " needs a dataset embedding");
    if (dataset_embedding->size() != embedding_dim_) {
      throw DataError("dataset embedding has dim " + std::to_string(dataset_embedding->size()) +
                      ", model expects " + std::to_string(embedding_dim_));
    }
  }
  std::vector<bool> seen;
  std::vector<double> scores;
  switch (spec_.kind) {
    case SelectorKind::metarank_gbdt:
    case SelectorKind::metarank_mlp: {
      seen.assign(candidates.size(), false);
      scores.assign(candidates.size(), 0.0);
      std::vector<std::size_t> idx;
      std::vector<VectorXd> rows;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (auto v = metric_vector(candidates[i], metric_embeddings)) {
          idx.push_back(i);
          rows.push_back(std::move(*v));
        }
      }
      RowMatrixXd x(static_cast<Index>(rows.size()), 2 * embedding_dim_);
      for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Index>(r)) << dataset_embedding->transpose(), rows[r].transpose();
      const VectorXd p = gbdt_ ? gbdt_->predict(x) : mlp_->predict(x);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        scores[idx[r]] = p(static_cast<Index>(r));
        seen[idx[r]] = true;
      }
      break;
    }
    case SelectorKind::global_best: scores = table_scores(metric_means_, candidates, seen); break;
    case SelectorKind::argosmart_1nn: {
      const VectorXd& q = *dataset_embedding;
      Index best = 0;
      double best_sim = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < dataset_embeddings_.rows(); ++j) {
        const double denom = q.norm() * dataset_embeddings_.row(j).norm();
        const double sim = denom > 0.0 ? dataset_embeddings_.row(j).dot(q) / denom : 0.0;
        if (sim > best_sim) {
          best_sim = sim;
          best = j;
        }
      }
      scores = table_scores(tau_.row(best).transpose(), candidates, seen);
      break;
    }
    case SelectorKind::isac_kmeans: {
      const Index c = nearest_row(centroids_, *dataset_embedding);
      scores = table_scores(cluster_scores_.row(c).transpose(), candidates, seen);
      break;
    }
    case SelectorKind::alors_mf: {
      const VectorXd u = latent_map_.transpose() * *dataset_embedding;
      scores = table_scores(metric_factors_ * u, candidates, seen);
      break;
    }
    case SelectorKind::ncf_mlp: {
      const Index r = metric_factors_.cols();
      RowMatrixXd x(static_cast<Index>(metrics_.size()), embedding_dim_ + r);
      for (Index k = 0; k < x.rows(); ++k) x.row(k) << dataset_embedding->transpose(), metric_factors_.row(k);
      scores = table_scores(mlp_->predict(x), candidates, seen);
      break;
    }
    case SelectorKind::random: {
      Rng rng(spec_.seed);
      scores.resize(candidates.size());
      for (auto& v : scores) v = rng.uniform();
      seen.assign(candidates.size(), true);
      break;
    }
    case SelectorKind::fixed:
      scores.assign(candidates.size(), 0.0);
      seen.assign(candidates.size(), true);
      for (std::size_t i = 0; i < candidates.size(); ++i)
        if (candidates[i] == spec_.fixed_metric) scores[i] = 1.0;
      break;
  }
  return make_recommendation(candidates, scores, seen);
}

// ---------------------------------------------------------------------------
// Serialization

json FittedSelector::to_json() const {
  json payload{{"datasets", datasets_},
               {"metrics", metrics_},
               {"embedding_dim", embedding_dim_},
               {"tau", matrix_to_json(tau_)},
               {"metric_means", std::vector<double>(metric_means_.data(), metric_means_.data() + metric_means_.size())}};
  auto put = [&](const char* key, const MatrixXd& m) {
    if (m.size() > 0) payload[key] = matrix_to_json(m);
  };
  put("dataset_embeddings", dataset_embeddings_);
  put("metric_embeddings", metric_embeddings_);
  put("centroids", centroids_);
  put("cluster_scores", cluster_scores_);
  put("latent_map", latent_map_);
  put("metric_factors", metric_factors_);
  if (gbdt_) payload["gbdt"] = *gbdt_;
  if (mlp_) payload["mlp"] = *mlp_;
  auto spec = spec_.to_json();
  return json{{"format", kFormat},       {"version", kVersion}, {"kind", spec["kind"]},
              {"name", spec["name"]},    {"hyper", spec_.hyper}, {"seed", spec_.seed},
              {"payload", std::move(payload)}};
}

FittedSelector FittedSelector::from_json(const json& j) {
  try {
    if (j.value("format", "") != kFormat) throw DataError("not a selector file (format field missing or wrong)");
    if (j.at("version").get<int>() != kVersion)
      throw DataError("unsupported selector version " + j.at("version").dump());
    FittedSelector s;
    s.spec_ = SelectorSpec::from_json(json{{"kind", j.at("kind")}, {"hyper", j.at("hyper")},
                                           {"seed", j.at("seed")}, {"name", j.at("name")}});
    const auto& p = j.at("payload");
    s.datasets_ = p.at("datasets").get<std::vector<std::string>>();
    s.metrics_ = p.at("metrics").get<std::vector<std::string>>();
    s.embedding_dim_ = p.at("embedding_dim").get<Index>();
    s.tau_ = matrix_from_json(p.at("tau"));
    const auto means = p.at("metric_means").get<std::vector<double>>();
    s.metric_means_ = Eigen::Map<const VectorXd>(means.data(), static_cast<Index>(means.size()));
    auto get = [&](const char* key, MatrixXd& m) {
      if (p.contains(key)) m = matrix_from_json(p.at(key));
    };
    get("dataset_embeddings", s.dataset_embeddings_);
    get("metric_embeddings", s.metric_embeddings_);
    get("centroids", s.centroids_);
    get("cluster_scores", s.cluster_scores_);
    get("latent_map", s.latent_map_);
    get("metric_factors", s.metric_factors_);
    if (p.contains("gbdt")) s.gbdt_ = p.at("gbdt").get<ltr::GbdtModel>();
    if (p.contains("mlp")) s.mlp_ = p.at("mlp").get<ltr::MlpModel>();

    const bool needs_gbdt = s.spec_.kind == SelectorKind::metarank_gbdt;
    const bool needs_mlp = s.spec_.kind == SelectorKind::metarank_mlp || s.spec_.kind == SelectorKind::ncf_mlp;
    if ((needs_gbdt && !s.gbdt_) || (needs_mlp && !s.mlp_) ||
        (s.spec_.kind == SelectorKind::isac_kmeans && s.centroids_.size() == 0) ||
        (s.spec_.kind == SelectorKind::alors_mf && s.latent_map_.size() == 0)) {
      throw DataError("selector payload is incomplete for kind " + std::string(to_string(s.spec_.kind)));
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed selector file: ") + e.what());
  }
}

void save_selector(const FittedSelector& s, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << s.to_json().dump() << '\n';
}

FittedSelector load_selector(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  return FittedSelector::from_json(j);
}

}  // namespace tmeta::select
