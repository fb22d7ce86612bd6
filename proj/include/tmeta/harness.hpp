#pragma once

// Leave-one-dataset-out evaluation, grid search, synthetic meta-benchmarks,
// tau-table construction and report files.

#include "tmeta/data.hpp"
#include "tmeta/metrics.hpp"
#include "tmeta/selectors.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tmeta::harness {

using json = nlohmann::json;

struct SelectorEntry {
  select::SelectorSpec spec;
  std::optional<json> grid;  // nullopt: default_grid(kind)
};

struct LodoConfig {
  std::vector<SelectorEntry> selectors;
  Index n_validation = 3;
  std::uint64_t seed = 0;
  std::optional<std::vector<std::string>> metric_subset;  // train on these columns only
  unsigned threads = 1;

  /// Versioned JSON: {"format": "tmeta-lodo", "version": 1, "seed", "n_validation",
  /// "metric_subset", "selectors": [{"kind", "hyper", "grid", "seed", "name"}]}.
  static LodoConfig from_json(const json& j);
  static LodoConfig load(const fs::path& path);
  json to_json() const;

  void validate(Index num_datasets) const;
};

/// The 16 methods of the published comparison with default settings.
LodoConfig default_benchmark_config(const std::vector<std::string>& metrics);

struct FoldRecord {
  Index fold = 0;
  std::string held_out;
  std::vector<std::string> validation;
  std::vector<json> chosen_hyper;  // per selector
  bool leak_check_passed = false;
};

struct EvaluationReport {
  std::vector<std::string> datasets;               // table order
  std::vector<std::string> methods;                // config order
  std::vector<std::vector<std::string>> selected;  // [dataset][method] top-1 metric
  MatrixXd tau;                                    // achieved tau, datasets x methods
  MatrixXd ranks;                                  // tie-averaged, 1 = best
  VectorXd mean_ranks;
  std::vector<FoldRecord> folds;
};

/// Fills tau, ranks and mean ranks from the selections.
void score_selections(EvaluationReport& report, const MetaTaskTable& table);

/// Validation datasets of a fold: the last n of the sorted training datasets,
/// rotated by the fold index.
std::vector<std::string> validation_split(const std::vector<std::string>& train_datasets, Index n_validation,
                                          Index fold);

struct GridResult {
  json best;
  double best_score = 0.0;
  std::vector<double> scores;  // per grid point; -inf for rejected settings
};

/// Exhaustive search by mean validation NDCG; ties keep the earlier grid point.
/// Settings rejected by validation (UsageError) are skipped.
GridResult grid_search(const select::SelectorSpec& spec, const MetaTaskTable& train,
                       const MetaTaskTable& validation, const EmbeddingCorpus& embeddings,
                       const json& grid, const std::optional<std::vector<std::string>>& metric_subset = std::nullopt);

EvaluationReport run_lodo(const MetaTaskTable& table, const EmbeddingCorpus& embeddings, const LodoConfig& cfg);

/// Builds a report from a CSV of (dataset, method, selected_metric) rows.
EvaluationReport report_from_selections(const MetaTaskTable& table, const fs::path& selections);

struct BoxStats {
  double median = 0.0, q1 = 0.0, q3 = 0.0;
  double whisker_low = 0.0, whisker_high = 0.0;
  std::vector<double> outliers;
};

/// Linear-interpolation quantile of sorted data (the default in R and numpy).
double quantile(const std::vector<double>& sorted, double p);
BoxStats box_stats(std::vector<double> values);

/// Writes per_dataset.csv, mean_ranks.csv, boxstats.csv (and folds.jsonl
/// when the report carries fold records) into `dir`.
void emit_report(const EvaluationReport& report, const fs::path& dir);

struct SyntheticMetaBenchmark {
  Index num_datasets = 200;
  Index num_metrics = 9;
  Index dim = 16;
  double noise = 0.05;
  std::uint64_t seed = 0;
  std::optional<VectorXd> weights;  // latent weights, default decaying
};

struct SyntheticData {
  MetaTaskTable table;
  EmbeddingCorpus embeddings;
  MatrixXd utility;  // noiseless utility before the bounded transform
};

SyntheticData generate_synthetic(const SyntheticMetaBenchmark& bench);

/// Default latent weight profile of the synthetic generator.
VectorXd default_synthetic_weights(Index dim);

/// tau_w between each metric's zoo scores and the zoo accuracies, per dataset.
MetaTaskTable build_tau_table(const std::vector<std::string>& datasets,
                              const std::map<std::string, std::vector<metrics::ZooMember>>& zoos,
                              const std::map<std::string, VectorXd>& accuracies,
                              const std::vector<metrics::MetricId>& metric_ids, const metrics::MetricConfig& cfg,
                              std::uint64_t seed, const metrics::ExternalScores* external = nullptr,
                              unsigned threads = 1);

}  // namespace tmeta::harness
