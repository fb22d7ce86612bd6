#include "tmeta/metrics.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

namespace tmeta::metrics {

namespace {

constexpr std::string_view kBuiltinNames[] = {"H-Score", "NCE", "LEEP", "NLEEP", "LogME", "GBC"};

std::vector<std::uint32_t> present_classes(const LabeledFeatureSet& fs) {
  std::set<std::uint32_t> s(fs.labels.begin(), fs.labels.end());
  return {s.begin(), s.end()};
}

const RowMatrixXd& require_probs(const LabeledFeatureSet& fs, std::string_view metric) {
  if (!fs.source_probs) {
    throw DataError(std::string(metric) + " needs source-model probabilities");
  }
  return *fs.source_probs;
}

}  // namespace

std::string_view to_string(Builtin b) { return kBuiltinNames[static_cast<int>(b)]; }

MetricId MetricId::parse(const std::string& name) {
  for (int i = 0; i < 6; ++i)
    if (name == kBuiltinNames[i]) return {static_cast<Builtin>(i)};
  if (name == "HScore") return {Builtin::HScore};
  return {name};
}

std::string MetricId::name() const {
  if (auto* b = std::get_if<Builtin>(&id)) return std::string(to_string(*b));
  return std::get<std::string>(id);
}

void MetricConfig::validate() const {
  if (!(nleep_pca_variance > 0.0 && nleep_pca_variance <= 1.0))
    throw UsageError("nleep_pca_variance must lie in (0, 1]");
  if (nleep_components && *nleep_components < 1) throw UsageError("nleep_components must be >= 1");
  if (!(gmm_reg >= 0.0)) throw UsageError("gmm_reg must be >= 0");
  if (!(logme_tol > 0.0) || !(gmm_tol > 0.0) || !(pinv_rcond > 0.0))
    throw UsageError("metric tolerances must be positive");
  if (logme_max_iters < 1 || gmm_max_iters < 1) throw UsageError("iteration limits must be >= 1");
}

// ---------------------------------------------------------------------------
// H-Score

MatrixXd pinv_psd(const MatrixXd& a, double rcond) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(a);
  if (eig.info() != Eigen::Success) throw ComputeError("eigendecomposition failed");
  const VectorXd& lambda = eig.eigenvalues();
  const double cutoff = rcond * lambda.cwiseAbs().maxCoeff();
  VectorXd inv = VectorXd::Zero(lambda.size());
  for (Index i = 0; i < lambda.size(); ++i)
    if (lambda(i) > cutoff) inv(i) = 1.0 / lambda(i);
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

MetricResult h_score(const LabeledFeatureSet& fs, const MetricConfig& cfg) {
  if (!all_finite(fs.features)) throw DataError("h_score: features are not finite");
  const auto classes = present_classes(fs);
  if (classes.size() < 2) return {0.0, kSingleClass};

  const MatrixXd f = fs.features;
  const double n = static_cast<double>(f.rows());
  const Eigen::RowVectorXd mean = f.colwise().mean();
  const MatrixXd centered = f.rowwise() - mean;
  const MatrixXd cov = centered.transpose() * centered / n;

  MatrixXd class_sum = MatrixXd::Zero(fs.num_classes, f.cols());
  VectorXd class_count = VectorXd::Zero(fs.num_classes);
  for (Index i = 0; i < f.rows(); ++i) {
    class_sum.row(fs.labels[i]) += f.row(i);
    class_count(fs.labels[i]) += 1.0;
  }
  MatrixXd between(f.rows(), f.cols());
  for (Index i = 0; i < f.rows(); ++i) {
    const auto c = fs.labels[i];
    between.row(i) = class_sum.row(c) / class_count(c) - mean;
  }
  const MatrixXd cov_b = between.transpose() * between / n;
  const MatrixXd p = pinv_psd(cov, cfg.pinv_rcond);
  return {p.cwiseProduct(cov_b).sum(), kOk};
}

// ---------------------------------------------------------------------------
// NCE, LEEP

MetricResult nce(const LabeledFeatureSet& fs) {
  const auto& probs = require_probs(fs, "NCE");
  const Index n = probs.rows();
  MatrixXd joint = MatrixXd::Zero(fs.num_classes, probs.cols());
  for (Index i = 0; i < n; ++i) {
    Index z = 0;
    probs.row(i).maxCoeff(&z);  // first maximum wins
    joint(fs.labels[i], z) += 1.0;
  }
  const Eigen::RowVectorXd col = joint.colwise().sum();
  double sum = 0.0;
  for (Index y = 0; y < joint.rows(); ++y)
    for (Index z = 0; z < joint.cols(); ++z)
      if (joint(y, z) > 0.0) sum += joint(y, z) * std::log(joint(y, z) / col(z));
  return {sum / static_cast<double>(n), kOk};
}

double expected_empirical_log_likelihood(std::span<const std::uint32_t> labels,
                                         std::uint32_t num_classes, const RowMatrixXd& theta) {
  const Index n = theta.rows();
  if (static_cast<Index>(labels.size()) != n) throw DataError("label count does not match theta rows");
  MatrixXd joint = MatrixXd::Zero(num_classes, theta.cols());
  for (Index i = 0; i < n; ++i) joint.row(labels[i]) += theta.row(i);
  joint /= static_cast<double>(n);
  const Eigen::RowVectorXd pz = joint.colwise().sum();
  MatrixXd conditional = MatrixXd::Zero(joint.rows(), joint.cols());
  for (Index z = 0; z < joint.cols(); ++z)
    if (pz(z) > 0.0) conditional.col(z) = joint.col(z) / pz(z);

  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double eep = conditional.row(labels[i]).dot(theta.row(i));
    if (!(eep > 0.0)) {
      throw ComputeError("expected empirical prediction is zero for sample " + std::to_string(i));
    }
    sum += std::log(std::min(eep, 1.0));
  }
  return sum / static_cast<double>(n);
}

MetricResult leep(const LabeledFeatureSet& fs) {
  const auto& probs = require_probs(fs, "LEEP");
  return {expected_empirical_log_likelihood(fs.labels, fs.num_classes, probs), kOk};
}

// ---------------------------------------------------------------------------
// PCA + GMM for NLEEP

PcaResult pca_reduce(const MatrixXd& x, double variance_fraction) {
  const MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::BDCSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
  const VectorXd var = svd.singularValues().array().square();
  const double total = var.sum();
  Index k = 1;
  if (total > 0.0) {
    double cum = 0.0;
    for (k = 0; k < var.size();) {
      cum += var(k++);
      if (cum / total >= variance_fraction - 1e-12) break;
    }
  }
  return {centered * svd.matrixV().leftCols(k), k};
}

namespace {

struct GmmParams {
  VectorXd weights;
  MatrixXd means;
  std::vector<MatrixXd> covariances;
};

GmmParams gmm_m_step(const MatrixXd& x, const MatrixXd& resp, double reg) {
  const Index g = resp.cols();
  const Index p = x.cols();
  GmmParams out;
  VectorXd nk = resp.colwise().sum().transpose();
  out.weights = nk / static_cast<double>(x.rows());
  out.means.resize(g, p);
  for (Index k = 0; k < g; ++k) {
    const double mass = std::max(nk(k), std::numeric_limits<double>::min());
    out.means.row(k) = resp.col(k).transpose() * x / mass;
    const MatrixXd c = x.rowwise() - out.means.row(k);
    MatrixXd scatter = c.transpose() * resp.col(k).asDiagonal() * c;
    scatter.diagonal().array() += reg;
    out.covariances.push_back(scatter / mass);
  }
  return out;
}

// Returns the per-sample log-likelihood and fills responsibilities.
VectorXd gmm_e_step(const MatrixXd& x, const GmmParams& params, MatrixXd& resp,
                    double& penalty_trace, double reg) {
  const Index n = x.rows();
  const Index g = params.weights.size();
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  MatrixXd logp(n, g);
  penalty_trace = 0.0;
  for (Index k = 0; k < g; ++k) {
    Eigen::LLT<MatrixXd> llt(params.covariances[k]);
    if (llt.info() != Eigen::Success) throw ComputeError("GMM covariance is not positive definite");
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    if (reg > 0.0) {
      const MatrixXd inv = llt.solve(MatrixXd::Identity(x.cols(), x.cols()));
      penalty_trace += inv.trace();
    }
    const MatrixXd c = (x.rowwise() - params.means.row(k)).transpose();
    const MatrixXd z = llt.matrixL().solve(c);
    const VectorXd maha = z.colwise().squaredNorm().transpose();
    const double logw = std::log(params.weights(k));
    logp.col(k) = (logw - 0.5 * (static_cast<double>(x.cols()) * log_2pi + logdet)) -
                  0.5 * maha.array();
  }
  VectorXd ll(n);
  resp.resize(n, g);
  for (Index i = 0; i < n; ++i) {
    const double m = logp.row(i).maxCoeff();
    const double s = (logp.row(i).array() - m).exp().sum();
    ll(i) = m + std::log(s);
    resp.row(i) = (logp.row(i).array() - ll(i)).exp();
  }
  return ll;
}

}  // namespace

GmmFit fit_gmm(const MatrixXd& x, Index components, double reg, std::uint64_t seed, int max_iters,
               double tol) {
  const Index n = x.rows();
  if (components < 1) throw DataError("GMM needs at least one component");
  if (n <= components) {
    throw DataError("GMM needs more samples (" + std::to_string(n) + ") than components (" +
                    std::to_string(components) + ")");
  }
  // k-means++ seeding
  Rng rng(seed);
  MatrixXd centers(components, x.cols());
  centers.row(0) = x.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < components; ++c) {
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
    centers.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  MatrixXd resp = MatrixXd::Zero(n, components);
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    resp(i, best) = 1.0;
  }

  GmmFit fit;
  GmmParams params = gmm_m_step(x, resp, reg);
  for (int it = 0; it < max_iters; ++it) {
    double trace_inv = 0.0;
    const VectorXd ll = gmm_e_step(x, params, resp, trace_inv, reg);
    const double obj = ll.sum() - 0.5 * reg * trace_inv;
    if (!std::isfinite(obj)) throw ComputeError("EM produced a non-finite log-likelihood");
    fit.objective.push_back(obj);
    fit.iterations = it + 1;
    const auto m = fit.objective.size();
    if (m > 1 && obj - fit.objective[m - 2] <= tol * std::abs(obj)) break;
    if (it + 1 == max_iters) break;
    params = gmm_m_step(x, resp, reg);
  }
  fit.weights = std::move(params.weights);
  fit.means = std::move(params.means);
  fit.covariances = std::move(params.covariances);
  fit.responsibilities = std::move(resp);
  return fit;
}

MetricResult nleep(const LabeledFeatureSet& fs, const MetricConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!all_finite(fs.features)) throw DataError("nleep: features are not finite");
  const Index n = fs.size();
  const Index components = cfg.nleep_components.value_or(static_cast<Index>(fs.num_classes));
  if (n <= components) {
    throw DataError("nleep needs more samples (" + std::to_string(n) + ") than mixture components (" +
                    std::to_string(components) + ")");
  }
  // Seeding consumes samples by position, so fit on a canonical row order to
  // make the result independent of how the caller ordered the rows.
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (Index j = 0; j < fs.dim(); ++j)
      if (fs.features(a, j) != fs.features(b, j)) return fs.features(a, j) < fs.features(b, j);
    if (fs.labels[a] != fs.labels[b]) return fs.labels[a] < fs.labels[b];
    return a < b;
  });
  MatrixXd x(n, fs.dim());
  std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    x.row(i) = fs.features.row(order[i]);
    labels[i] = fs.labels[order[i]];
  }
  const auto pca = pca_reduce(x, cfg.nleep_pca_variance);
  const auto gmm = fit_gmm(pca.projected, components, cfg.gmm_reg, seed, cfg.gmm_max_iters, cfg.gmm_tol);
  const RowMatrixXd theta = gmm.responsibilities;
  return {expected_empirical_log_likelihood(labels, fs.num_classes, theta), kOk};
}

// ---------------------------------------------------------------------------
// LogME

namespace {

class EvidenceSolver {
 public:
  explicit EvidenceSolver(const MatrixXd& f) : n_(f.rows()), d_(f.cols()) {
    Eigen::BDCSVD<MatrixXd> svd(f, Eigen::ComputeThinU);
    u_ = svd.matrixU();
    sigma_ = svd.singularValues().array().square();
  }

  void set_target(const VectorXd& y) {
    x2_ = (u_.transpose() * y).array().square();
    residual_outside_ = std::max(0.0, y.squaredNorm() - x2_.sum());
  }

  struct Terms {
    double gamma, m2, res2;
  };

  Terms terms(double alpha, double beta) const {
    const double t = alpha / beta;
    const Eigen::ArrayXd denom = sigma_ + t;
    Terms out;
    out.gamma = (sigma_ / denom).sum();
    out.m2 = (sigma_ * x2_ / denom.square()).sum();
    out.res2 = (x2_ * t * t / denom.square()).sum() + residual_outside_;
    return out;
  }

  double evidence(double alpha, double beta) const {
    const auto tm = terms(alpha, beta);
    const double n = static_cast<double>(n_), d = static_cast<double>(d_);
    const double missing = d - static_cast<double>(sigma_.size());
    const double logdet = (alpha + beta * sigma_).log().sum() + missing * std::log(alpha);
    const double ev = 0.5 * d * std::log(alpha) + 0.5 * n * std::log(beta) - 0.5 * logdet -
                      0.5 * beta * tm.res2 - 0.5 * alpha * tm.m2 -
                      0.5 * n * std::log(2.0 * std::numbers::pi);
    return ev / n;
  }

  EvidenceFit fit(double tol, int max_iters) const {
    EvidenceFit out;
    double alpha = 1.0, beta = 1.0;
    double ev = evidence(alpha, beta);
    out.trace.push_back(ev);
    const double n = static_cast<double>(n_);
    for (int it = 0; it < max_iters; ++it) {
      const auto tm = terms(alpha, beta);
      if (!(tm.m2 > 0.0) || !(tm.res2 > 0.0) || !(n - tm.gamma > 0.0)) break;
      double na = tm.gamma / tm.m2;
      double nb = (n - tm.gamma) / tm.res2;
      double nev = evidence(na, nb);
      // Only ascending steps are accepted; shrink toward the current point otherwise.
      for (int h = 0; h < 30 && !(nev >= ev); ++h) {
        na = std::sqrt(alpha * na);
        nb = std::sqrt(beta * nb);
        nev = evidence(na, nb);
      }
      if (!(nev >= ev) || !std::isfinite(nev)) {
        out.converged = true;
        break;
      }
      // Near a flat ridge the plain update creeps, and a small evidence change then says
      // little about the distance to the optimum. Extend the step in log space while that
      // still ascends; fixed points are unchanged.
      const double la = std::log(na / alpha), lb = std::log(nb / beta);
      for (double m = 2.0; m <= 1024.0; m *= 2.0) {
        const double xa = alpha * std::exp(m * la), xb = beta * std::exp(m * lb);
        const double xev = evidence(xa, xb);
        if (!std::isfinite(xev) || !(xev > nev)) break;
        na = xa;
        nb = xb;
        nev = xev;
      }
      const double change = nev - ev;
      alpha = na;
      beta = nb;
      ev = nev;
      out.trace.push_back(ev);
      if (change < tol) {
        out.converged = true;
        break;
      }
    }
    out.alpha = alpha;
    out.beta = beta;
    out.evidence = ev;
    return out;
  }

 private:
  Index n_, d_;
  MatrixXd u_;
  Eigen::ArrayXd sigma_;
  Eigen::ArrayXd x2_;
  double residual_outside_ = 0.0;
};

}  // namespace

EvidenceFit fit_evidence(const MatrixXd& features, const VectorXd& target, double tol, int max_iters) {
  if (features.rows() != target.size()) throw DataError("target length does not match feature rows");
  EvidenceSolver solver(features);
  solver.set_target(target);
  return solver.fit(tol, max_iters);
}

double log_evidence(const MatrixXd& features, const VectorXd& target, double alpha, double beta) {
  EvidenceSolver solver(features);
  solver.set_target(target);
  return solver.evidence(alpha, beta);
}

MetricResult logme(const LabeledFeatureSet& fs, const MetricConfig& cfg) {
  cfg.validate();
  if (fs.size() < 2) throw DataError("logme needs at least 2 samples");
  if (!all_finite(fs.features)) throw DataError("logme: features are not finite");
  const auto classes = present_classes(fs);
  if (classes.size() < 2) {
    throw DataError("logme: class indicator is constant (zero-variance target column)");
  }
  EvidenceSolver solver(fs.features);
  double sum = 0.0;
  unsigned flags = kOk;
  for (auto c : classes) {
    VectorXd y(fs.size());
    for (Index i = 0; i < fs.size(); ++i) y(i) = fs.labels[i] == c ? 1.0 : 0.0;
    solver.set_target(y);
    const auto fit = solver.fit(cfg.logme_tol, cfg.logme_max_iters);
    if (!fit.converged) flags |= kNotConverged;
    sum += fit.evidence;
  }
  return {sum / static_cast<double>(classes.size()), flags};
}

// ---------------------------------------------------------------------------
// GBC

MetricResult gbc(const LabeledFeatureSet& fs, const MetricConfig& cfg) {
  if (!all_finite(fs.features)) throw DataError("gbc: features are not finite");
  const auto classes = present_classes(fs);
  const Index d = fs.dim();
  std::vector<VectorXd> mean, var;
  for (auto c : classes) {
    VectorXd sum = VectorXd::Zero(d);
    Index count = 0;
    for (Index i = 0; i < fs.size(); ++i)
      if (fs.labels[i] == c) {
        sum += fs.features.row(i).transpose();
        ++count;
      }
    if (count < 2) {
      throw DataError("gbc: class " + std::to_string(c) + " has fewer than 2 samples");
    }
    VectorXd mu = sum / static_cast<double>(count);
    VectorXd v = VectorXd::Zero(d);
    for (Index i = 0; i < fs.size(); ++i)
      if (fs.labels[i] == c) v += (fs.features.row(i).transpose() - mu).array().square().matrix();
    v = (v / static_cast<double>(count)).cwiseMax(cfg.gmm_reg);
    if ((v.array() <= 0.0).any()) {
      throw DataError("gbc: class " + std::to_string(c) + " has zero variance after flooring");
    }
    mean.push_back(std::move(mu));
    var.push_back(std::move(v));
  }
  if (classes.size() < 2) return {0.0, kSingleClass};
  double total = 0.0;
  for (std::size_t a = 0; a < classes.size(); ++a) {
    for (std::size_t b = a + 1; b < classes.size(); ++b) {
      const Eigen::ArrayXd avg = 0.5 * (var[a] + var[b]).array();
      const Eigen::ArrayXd diff = (mean[a] - mean[b]).array();
      const double bd = 0.125 * (diff.square() / avg).sum() +
                        0.5 * (avg.log() - 0.5 * (var[a].array().log() + var[b].array().log())).sum();
      total += std::exp(-bd);
    }
  }
  return {-total, kOk};
}

// ---------------------------------------------------------------------------

MetricResult compute(const MetricId& metric, const LabeledFeatureSet& fs, const MetricConfig& cfg,
                     std::uint64_t seed) {
  if (metric.is_external()) {
    throw DataError("metric '" + metric.name() + "' is external and has no native implementation");
  }
  switch (std::get<Builtin>(metric.id)) {
    case Builtin::HScore: return h_score(fs, cfg);
    case Builtin::NCE: return nce(fs);
    case Builtin::LEEP: return leep(fs);
    case Builtin::NLEEP: return nleep(fs, cfg, seed);
    case Builtin::LogME: return logme(fs, cfg);
    case Builtin::GBC: return gbc(fs, cfg);
  }
  throw ComputeError("unreachable metric id");
}

// ---------------------------------------------------------------------------
// External scores

void ExternalScores::add(const std::string& dataset, const std::string& model,
                         const std::string& metric, double score) {
  if (!std::isfinite(score)) {
    throw DataError("non-finite score for (" + dataset + ", " + model + ", " + metric + ")");
  }
  ScoreKey key{dataset, model, metric};
  if (index_.count(key)) {
    throw DataError("duplicate score for (" + dataset + ", " + model + ", " + metric + ")");
  }
  index_.emplace(key, rows_.size());
  rows_.emplace_back(std::move(key), score);
}

std::optional<double> ExternalScores::find(const std::string& dataset, const std::string& model,
                                           const std::string& metric) const {
  auto it = index_.find({dataset, model, metric});
  if (it == index_.end()) return std::nullopt;
  return rows_[it->second].second;
}

bool ExternalScores::has_metric(const std::string& metric) const {
  return std::any_of(rows_.begin(), rows_.end(),
                     [&](const auto& r) { return std::get<2>(r.first) == metric; });
}

ExternalScores ingest_external_scores(const fs::path& path) {
  auto lines = read_lines(path);
  if (lines.empty() ||
      split_csv_line(lines[0]) != std::vector<std::string>{"dataset", "model", "metric", "score"}) {
    throw DataError(path.string() + ": header must be 'dataset,model,metric,score'");
  }
  ExternalScores out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string ctx = path.string() + ":" + std::to_string(i + 1) + ": ";
    auto f = split_csv_line(lines[i]);
    if (f.size() != 4) throw DataError(ctx + "expected 4 fields");
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument(f[3]);
    } catch (const std::exception&) {
      throw DataError(ctx + "cannot parse score '" + f[3] + "'");
    }
    try {
      out.add(f[0], f[1], f[2], v);
    } catch (const DataError& e) {
      throw DataError(ctx + e.what());
    }
  }
  return out;
}

void save_external_scores(const ExternalScores& scores, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "dataset,model,metric,score\n";
  for (const auto& [key, v] : scores.rows())
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
        << format_double(v) << '\n';
}

ModelScoreVector score_model_zoo(const std::string& dataset, const std::vector<ZooMember>& zoo,
                                 const MetricId& metric, const MetricConfig& cfg,
                                 std::uint64_t seed, const ExternalScores* external,
                                 unsigned threads) {
  if (zoo.size() < 2) throw DataError("a model zoo needs at least 2 models");
  ModelScoreVector out;
  out.scores.resize(static_cast<Index>(zoo.size()));
  for (const auto& m : zoo) out.model_ids.push_back(m.model_id);

  if (metric.is_external()) {
    const auto name = metric.name();
    if (!external || !external->has_metric(name)) {
      throw DataError("metric '" + name + "' is neither built in nor present in the external scores");
    }
    for (std::size_t i = 0; i < zoo.size(); ++i) {
      auto v = external->find(dataset, zoo[i].model_id, name);
      if (!v) {
        throw DataError("external metric '" + name + "' has no score for (" + dataset + ", " +
                        zoo[i].model_id + ")");
      }
      out.scores(static_cast<Index>(i)) = *v;
    }
    return out;
  }

  parallel_for(zoo.size(), threads, [&](std::size_t i) {
    try {
      out.scores(static_cast<Index>(i)) = compute(metric, zoo[i].features, cfg, seed).value;
    } catch (const DataError& e) {
      throw DataError("model '" + zoo[i].model_id + "': " + e.what());
    } catch (const ComputeError& e) {
      throw ComputeError("model '" + zoo[i].model_id + "': " + e.what());
    }
  });
  return out;
}

}  // namespace tmeta::metrics
