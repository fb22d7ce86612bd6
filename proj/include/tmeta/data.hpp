#pragma once

#include "tmeta/common.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tmeta {

namespace fs = std::filesystem;

enum class EmbeddingKind { dataset, metric };

std::string_view to_string(EmbeddingKind kind);
EmbeddingKind parse_embedding_kind(std::string_view s);

inline constexpr Index kDefaultEmbeddingDim = 768;

/// A named description embedding of a dataset or a metric.
struct EmbeddingRecord {
  std::string name;
  EmbeddingKind kind = EmbeddingKind::dataset;
  VectorXf vector;
};

/// Embeddings keyed by (kind, name), with one dimension per corpus.
///
/// Record order is preserved so that files round-trip unchanged.
class EmbeddingCorpus {
 public:
  EmbeddingCorpus() = default;
  explicit EmbeddingCorpus(std::vector<EmbeddingRecord> records);

  const std::vector<EmbeddingRecord>& records() const { return records_; }
  Index dim() const { return dim_; }
  bool empty() const { return records_.empty(); }

  bool contains(EmbeddingKind kind, const std::string& name) const;
  const EmbeddingRecord* find(EmbeddingKind kind, const std::string& name) const;
  /// Throws DataError when the record is missing.
  VectorXd vector(EmbeddingKind kind, const std::string& name) const;

  std::vector<std::string> names(EmbeddingKind kind) const;

  /// Copy without the named record; used to strip held-out datasets.
  EmbeddingCorpus without(EmbeddingKind kind, const std::string& name) const;

  void add(EmbeddingRecord record);

 private:
  std::vector<EmbeddingRecord> records_;
  std::map<std::pair<EmbeddingKind, std::string>, std::size_t> index_;
  Index dim_ = 0;
};

EmbeddingCorpus load_embeddings(const fs::path& path);
void save_embeddings(const EmbeddingCorpus& corpus, const fs::path& path);
std::string embedding_to_json_line(const EmbeddingRecord& record);

/// Target features with labels and optional source-model class probabilities.
struct LabeledFeatureSet {
  RowMatrixXd features;                     // n x d
  std::vector<std::uint32_t> labels;        // n, each < num_classes
  std::uint32_t num_classes = 0;
  std::optional<RowMatrixXd> source_probs;  // n x C_s, rows sum to 1

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }

  /// Throws DataError on any violated invariant.
  void validate() const;
};

LabeledFeatureSet load_feature_set(const fs::path& features_path, const fs::path& labels_path,
                                   const std::optional<fs::path>& probs_path = std::nullopt);
void save_feature_set(const LabeledFeatureSet& set, const fs::path& features_path,
                      const fs::path& labels_path,
                      const std::optional<fs::path>& probs_path = std::nullopt);

/// Dense dataset x metric table of weighted Kendall tau values.
class MetaTaskTable {
 public:
  MetaTaskTable() = default;
  MetaTaskTable(std::vector<std::string> datasets, std::vector<std::string> metrics, MatrixXd tau);

  const std::vector<std::string>& datasets() const { return datasets_; }
  const std::vector<std::string>& metrics() const { return metrics_; }
  const MatrixXd& tau() const { return tau_; }
  Index num_datasets() const { return tau_.rows(); }
  Index num_metrics() const { return tau_.cols(); }

  std::optional<Index> dataset_index(const std::string& name) const;
  std::optional<Index> metric_index(const std::string& name) const;
  double cell(const std::string& dataset, const std::string& metric) const;

  /// Metric indices sorted by descending tau; ties keep metric list order.
  std::vector<Index> ground_truth_order(Index row) const;

  MetaTaskTable select_datasets(const std::vector<std::string>& names) const;
  MetaTaskTable select_metrics(const std::vector<std::string>& names) const;

 private:
  std::vector<std::string> datasets_;
  std::vector<std::string> metrics_;
  MatrixXd tau_;
};

MetaTaskTable load_meta_task_table(const fs::path& path);
void save_meta_task_table(const MetaTaskTable& table, const fs::path& path);

/// Scores S(m) of a model zoo, optionally with ground-truth performance T(m).
struct ModelScoreVector {
  std::vector<std::string> model_ids;
  VectorXd scores;
  std::optional<VectorXd> ground_truth;

  void validate() const;
};

// Small text helpers shared by the CSV readers.
std::vector<std::string> split_csv_line(std::string_view line);
std::vector<std::string> read_lines(const fs::path& path);

}  // namespace tmeta
