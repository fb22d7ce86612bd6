#pragma once

#include "tmeta/data.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

namespace tmeta::metrics {

enum class Builtin { HScore, NCE, LEEP, NLEEP, LogME, GBC };

/// A natively computed metric or an externally supplied score column.
struct MetricId {
  std::variant<Builtin, std::string> id;

  static MetricId parse(const std::string& name);
  std::string name() const;
  bool is_external() const { return std::holds_alternative<std::string>(id); }
};

std::string_view to_string(Builtin b);

struct MetricConfig {
  double nleep_pca_variance = 0.8;
  std::optional<Index> nleep_components;  // nullopt: number of target classes
  double gmm_reg = 1e-6;
  int gmm_max_iters = 300;
  double gmm_tol = 1e-10;  // relative objective change
  double logme_tol = 1e-3;
  int logme_max_iters = 100;
  double pinv_rcond = 1e-10;

  void validate() const;
};

enum MetricFlag : unsigned {
  kOk = 0,
  kSingleClass = 1u << 0,
  kNotConverged = 1u << 1,
};

struct MetricResult {
  double value = 0.0;
  unsigned flags = kOk;
};

// ---------------------------------------------------------------------------
// Metric definitions

MetricResult h_score(const LabeledFeatureSet& fs, const MetricConfig& cfg = {});
MetricResult nce(const LabeledFeatureSet& fs);
MetricResult leep(const LabeledFeatureSet& fs);
MetricResult nleep(const LabeledFeatureSet& fs, const MetricConfig& cfg, std::uint64_t seed);
MetricResult logme(const LabeledFeatureSet& fs, const MetricConfig& cfg = {});
MetricResult gbc(const LabeledFeatureSet& fs, const MetricConfig& cfg = {});

MetricResult compute(const MetricId& metric, const LabeledFeatureSet& fs, const MetricConfig& cfg,
                     std::uint64_t seed);

/// Log expected empirical prediction of `labels` under per-sample class
/// distributions `theta` (n x Z). Shared by LEEP and NLEEP.
double expected_empirical_log_likelihood(std::span<const std::uint32_t> labels,
                                         std::uint32_t num_classes, const RowMatrixXd& theta);

// ---------------------------------------------------------------------------
// Building blocks exposed for testing

/// Moore-Penrose pseudo-inverse of a symmetric positive semi-definite matrix,
/// discarding eigenvalues below rcond * largest.
MatrixXd pinv_psd(const MatrixXd& a, double rcond);

struct EvidenceFit {
  double alpha = 1.0;
  double beta = 1.0;
  double evidence = 0.0;            // log evidence divided by n
  std::vector<double> trace;        // evidence after each accepted update
  bool converged = false;
};

/// Maximizes the marginal likelihood of y under y = F w + noise, w ~ N(0, 1/alpha),
/// noise ~ N(0, 1/beta), by the MacKay fixed-point updates on the SVD of F.
EvidenceFit fit_evidence(const MatrixXd& features, const VectorXd& target, double tol,
                         int max_iters);

/// Exact per-sample log evidence at (alpha, beta), evaluated through the SVD of F.
double log_evidence(const MatrixXd& features, const VectorXd& target, double alpha, double beta);

struct PcaResult {
  MatrixXd projected;  // n x k
  Index components = 0;
};

/// Projects centered rows onto the fewest principal axes that retain `variance_fraction`.
PcaResult pca_reduce(const MatrixXd& x, double variance_fraction);

struct GmmFit {
  VectorXd weights;
  MatrixXd means;                    // G x p
  std::vector<MatrixXd> covariances;
  MatrixXd responsibilities;         // n x G
  std::vector<double> objective;     // regularized log-likelihood per EM iteration
  int iterations = 0;
};

/// EM for a full-covariance Gaussian mixture with k-means++ seeding.
/// The covariance update is the MAP estimate under the penalty
/// -reg/2 * tr(inv(Sigma_k)), so `objective` never decreases.
GmmFit fit_gmm(const MatrixXd& x, Index components, double reg, std::uint64_t seed,
               int max_iters = 300, double tol = 1e-10);

// ---------------------------------------------------------------------------
// External score columns (SFDA, ETran, NCTI, ...)

using ScoreKey = std::tuple<std::string, std::string, std::string>;  // dataset, model, metric

class ExternalScores {
 public:
  void add(const std::string& dataset, const std::string& model, const std::string& metric,
           double score);
  std::optional<double> find(const std::string& dataset, const std::string& model,
                             const std::string& metric) const;
  bool has_metric(const std::string& metric) const;
  std::size_t size() const { return rows_.size(); }
  const std::vector<std::pair<ScoreKey, double>>& rows() const { return rows_; }

 private:
  std::vector<std::pair<ScoreKey, double>> rows_;
  std::map<ScoreKey, std::size_t> index_;
};

ExternalScores ingest_external_scores(const fs::path& path);
void save_external_scores(const ExternalScores& scores, const fs::path& path);

struct ZooMember {
  std::string model_id;
  LabeledFeatureSet features;
};

/// Applies one metric to every model's features on a single target dataset.
ModelScoreVector score_model_zoo(const std::string& dataset, const std::vector<ZooMember>& zoo,
                                 const MetricId& metric, const MetricConfig& cfg,
                                 std::uint64_t seed, const ExternalScores* external = nullptr,
                                 unsigned threads = 1);

}  // namespace tmeta::metrics
