#pragma once

// Metric selectors: the learned MetaRank rankers and the algorithm-selection
// baselines, all fitted on a dataset x metric tau table.

#include "tmeta/data.hpp"
#include "tmeta/gbdt.hpp"
#include "tmeta/mlp.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace tmeta::select {

using json = nlohmann::json;

enum class SelectorKind {
  metarank_gbdt,
  metarank_mlp,
  global_best,
  argosmart_1nn,
  isac_kmeans,
  alors_mf,
  ncf_mlp,
  random,
  fixed,
};

std::string_view to_string(SelectorKind k);
/// Accepts the kind names above and the form "fixed(<metric>)".
SelectorKind parse_selector_kind(const std::string& s, std::string* fixed_metric = nullptr);

struct SelectorSpec {
  SelectorKind kind = SelectorKind::metarank_gbdt;
  std::string fixed_metric;     // kind == fixed only
  json hyper = json::object();  // kind-specific settings
  std::uint64_t seed = 0;
  std::string name;             // report label; empty means display_name()

  /// Label used in reports: the metric name for fixed, otherwise the
  /// short method name (MetaRank, GB, AS, ...).
  std::string display_name() const;
  bool uses_embeddings() const;

  /// Throws UsageError on keys that the kind does not accept or bad values.
  void validate() const;

  static SelectorSpec from_json(const json& j);
  json to_json() const;
};

bool hyper_key_allowed(SelectorKind kind, const std::string& key);

/// Hyperparameter grid for a kind when the config gives none.
json default_grid(SelectorKind kind);

/// Cartesian product of a grid object {param: [values]}; keys vary in
/// alphabetical order with the last key fastest.
std::vector<json> expand_grid(const json& grid);

struct Recommendation {
  std::vector<std::string> metrics;  // best first
  std::vector<double> scores;        // aligned with metrics, non-increasing
  std::vector<std::string> unseen;   // candidates the selector could not score (ranked last)
};

/// Orders candidates by descending score with candidate-index tie-break.
Recommendation make_recommendation(const std::vector<std::string>& candidates,
                                   const std::vector<double>& scores,
                                   const std::vector<bool>& seen);

class FittedSelector {
 public:
  const SelectorSpec& spec() const { return spec_; }
  const std::vector<std::string>& training_datasets() const { return datasets_; }
  const std::vector<std::string>& training_metrics() const { return metrics_; }
  Index embedding_dim() const { return embedding_dim_; }

  /// Ranks `candidates` for a dataset. Metric embeddings come from
  /// `metric_embeddings` when present there, else from those seen at fit time.
  Recommendation recommend(const std::optional<VectorXd>& dataset_embedding,
                           const std::vector<std::string>& candidates,
                           const EmbeddingCorpus* metric_embeddings = nullptr) const;

  json to_json() const;
  static FittedSelector from_json(const json& j);

 private:
  friend FittedSelector fit_selector(const SelectorSpec&, const MetaTaskTable&, const EmbeddingCorpus&);

  std::optional<VectorXd> metric_vector(const std::string& name, const EmbeddingCorpus* corpus) const;
  std::vector<double> table_scores(const VectorXd& row, const std::vector<std::string>& candidates,
                                   std::vector<bool>& seen) const;

  SelectorSpec spec_;
  std::vector<std::string> datasets_;  // sorted by name
  std::vector<std::string> metrics_;   // sorted by name
  Index embedding_dim_ = 0;

  MatrixXd tau_;                  // datasets_ x metrics_
  MatrixXd dataset_embeddings_;   // datasets_ x dim
  MatrixXd metric_embeddings_;    // metrics_ x dim
  VectorXd metric_means_;
  MatrixXd centroids_;            // isac
  MatrixXd cluster_scores_;       // isac: clusters x metrics
  MatrixXd latent_map_;           // alors: dim x r
  MatrixXd metric_factors_;       // alors / ncf: metrics x r
  std::optional<ltr::GbdtModel> gbdt_;
  std::optional<ltr::MlpModel> mlp_;
};

FittedSelector fit_selector(const SelectorSpec& spec, const MetaTaskTable& table,
                            const EmbeddingCorpus& embeddings);

void save_selector(const FittedSelector& s, const fs::path& path);
FittedSelector load_selector(const fs::path& path);

/// Ranking instances [d_j ; s_k] -> tau, sorted by (dataset, metric).
std::vector<ltr::RankingInstance> build_instances(const MetaTaskTable& table,
                                                  const EmbeddingCorpus& embeddings);

struct AlsFactors {
  MatrixXd u;  // rows x r
  MatrixXd v;  // cols x r
};

/// Rank-r alternating least squares with ridge `lambda`; lambda = 0 uses
/// minimum-norm least squares.
AlsFactors als_factorize(const MatrixXd& m, Index rank, double lambda, std::uint64_t seed,
                         int max_iters = 500, double tol = 1e-14);

}  // namespace tmeta::select
