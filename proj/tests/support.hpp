#pragma once

// Shared test helpers: scratch directories, file I/O and reference
// implementations written independently of the library code.

#include "tmeta/common.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#ifndef TMETA_SOURCE_DIR
#error "TMETA_SOURCE_DIR must be defined by the build"
#endif

namespace tmeta::testing {

namespace fs = std::filesystem;

inline fs::path source_path(const std::string& rel) { return fs::path(TMETA_SOURCE_DIR) / rel; }

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("tmeta_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// FNV-1a over the bytes of a file; pins generated fixtures.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Oracles

/// Weighted Kendall tau straight from the pair-sum definition. Ranks are
/// counted rather than sorted: r_i = number of items ahead of i in T.
inline double brute_weighted_tau(const std::vector<double>& s, const std::vector<double>& t) {
  const std::size_t n = s.size();
  auto sgn = [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); };
  std::vector<double> r(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (t[j] > t[i] || (t[j] == t[i] && j < i)) r[i] += 1.0;
  double num = 0, ds = 0, dt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = 1.0 / (r[i] + 1.0) + 1.0 / (r[j] + 1.0);
      num += w * sgn(s[i] - s[j]) * sgn(t[i] - t[j]);
      ds += w * sgn(s[i] - s[j]) * sgn(s[i] - s[j]);
      dt += w * sgn(t[i] - t[j]) * sgn(t[i] - t[j]);
    }
  }
  return ds * dt == 0 ? 0.0 : num / std::sqrt(ds * dt);
}

/// NDCG by direct evaluation: grade K-1-k for the k-th ground-truth item,
/// gain 2^rel - 1, discount log2(position + 1) with positions from 1.
inline double direct_ndcg(const std::vector<Index>& predicted, const std::vector<Index>& truth) {
  const std::size_t k = truth.size();
  std::vector<double> rel(k);
  for (std::size_t p = 0; p < k; ++p) rel[static_cast<std::size_t>(truth[p])] = static_cast<double>(k - 1 - p);
  double dcg = 0, ideal = 0;
  for (std::size_t p = 0; p < k; ++p) {
    const double disc = std::log2(static_cast<double>(p) + 2.0);
    dcg += (std::pow(2.0, rel[static_cast<std::size_t>(predicted[p])]) - 1.0) / disc;
    ideal += (std::pow(2.0, static_cast<double>(k - 1 - p)) - 1.0) / disc;
  }
  return dcg / ideal;
}

/// Per-sample log evidence of y under y = F w + e, w ~ N(0, I/alpha),
/// e ~ N(0, I/beta), by dense linear algebra on the posterior precision.
inline double dense_log_evidence(const MatrixXd& f, const VectorXd& y, double alpha, double beta) {
  const double n = static_cast<double>(f.rows()), d = static_cast<double>(f.cols());
  const MatrixXd a = alpha * MatrixXd::Identity(f.cols(), f.cols()) + beta * f.transpose() * f;
  const Eigen::LLT<MatrixXd> llt(a);
  const VectorXd m = beta * llt.solve(f.transpose() * y);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double ev = 0.5 * n * std::log(beta) + 0.5 * d * std::log(alpha) - 0.5 * n * std::log(2.0 * M_PI) -
                    0.5 * beta * (y - f * m).squaredNorm() - 0.5 * alpha * m.squaredNorm() - 0.5 * logdet;
  return ev / n;
}

/// Best per-sample evidence on a grid over (log alpha, log beta) in [lo, hi]^2.
inline double grid_log_evidence(const MatrixXd& f, const VectorXd& y, int points, double lo, double hi) {
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < points; ++a) {
    for (int b = 0; b < points; ++b) {
      const double la = lo + (hi - lo) * a / (points - 1);
      const double lb = lo + (hi - lo) * b / (points - 1);
      best = std::max(best, dense_log_evidence(f, y, std::exp(la), std::exp(lb)));
    }
  }
  return best;
}

inline std::vector<std::vector<Index>> all_permutations(Index k) {
  std::vector<Index> p(static_cast<std::size_t>(k));
  std::iota(p.begin(), p.end(), Index{0});
  std::vector<std::vector<Index>> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

}  // namespace tmeta::testing
