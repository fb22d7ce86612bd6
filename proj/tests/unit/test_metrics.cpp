#include "support.hpp"

#include "tmeta/metrics.hpp"

#include <doctest.h>

using namespace tmeta;
using namespace tmeta::metrics;
using tmeta::testing::TempDir;
using tmeta::testing::write_file;

namespace {

LabeledFeatureSet make_set(const RowMatrixXd& x, std::vector<std::uint32_t> labels, std::uint32_t classes) {
  LabeledFeatureSet fs;
  fs.features = x;
  fs.labels = std::move(labels);
  fs.num_classes = classes;
  return fs;
}

LabeledFeatureSet column(std::initializer_list<double> values, std::vector<std::uint32_t> labels) {
  RowMatrixXd x(static_cast<Index>(values.size()), 1);
  Index i = 0;
  for (double v : values) x(i++, 0) = v;
  return make_set(x, std::move(labels), 2);
}

// Random stochastic matrix with strictly positive entries.
RowMatrixXd random_probs(Rng& rng, Index n, Index c) {
  RowMatrixXd p(n, c);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < c; ++k) p(i, k) = 0.01 + rng.uniform();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

LabeledFeatureSet gaussian_classes(Rng& rng, Index n, Index d, std::uint32_t classes, double spread) {
  RowMatrixXd x(n, d);
  std::vector<std::uint32_t> y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    y[i] = static_cast<std::uint32_t>(i % classes);
    for (Index k = 0; k < d; ++k) x(i, k) = rng.normal() + (k == 0 ? spread * y[i] : 0.0);
  }
  return make_set(x, y, classes);
}

}  // namespace

TEST_SUITE("mte-metrics") {
  TEST_CASE("h-score") {
    CHECK(h_score(column({0, 2, 4, 6}, {0, 0, 1, 1})).value == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(h_score(column({0, 2, 4, 6}, {1, 1, 1, 1})).value == doctest::Approx(0.0).scale(1.0));
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      auto fs = gaussian_classes(rng, 60, 4, 3, 1.5);
      const double base = h_score(fs).value;
      for (double c : {-3.0, 1e-2, 7.5}) {
        auto scaled = fs;
        scaled.features *= c;
        CHECK(std::abs(h_score(scaled).value - base) <= 1e-8 * std::abs(base));
      }
    }
  }

  TEST_CASE("nce") {
    auto fs = column({0, 1}, {0, 1});
    fs.source_probs = RowMatrixXd(2, 2);
    *fs.source_probs << 0.9, 0.1, 0.1, 0.9;
    CHECK(nce(fs).value == doctest::Approx(0.0).scale(1.0));
    *fs.source_probs << 0.9, 0.1, 0.6, 0.4;
    CHECK(nce(fs).value == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("leep hand example") {
    auto fs = column({0, 1}, {0, 1});
    fs.source_probs = RowMatrixXd(2, 2);
    *fs.source_probs << 0.8, 0.2, 0.3, 0.7;
    // Joint P(y, z) = [[0.4, 0.1], [0.15, 0.35]]; P(z) = (0.55, 0.45).
    // Row 0 (y=0): 0.8 * 0.4/0.55 + 0.2 * 0.1/0.45.
    // Row 1 (y=1): 0.3 * 0.15/0.55 + 0.7 * 0.35/0.45.
    const double e0 = 0.8 * 0.4 / 0.55 + 0.2 * 0.1 / 0.45;
    const double e1 = 0.3 * 0.15 / 0.55 + 0.7 * 0.35 / 0.45;
    const double oracle = 0.5 * (std::log(e0) + std::log(e1));
    CHECK(oracle == doctest::Approx(-0.467985465).epsilon(1e-9));
    CHECK(leep(fs).value == doctest::Approx(oracle).epsilon(1e-12));
    *fs.source_probs << 1, 0, 0, 1;
    CHECK(leep(fs).value == doctest::Approx(0.0).scale(1.0));
  }

  TEST_CASE("leep and nce are never positive") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
      const Index n = 2 + static_cast<Index>(rng.below(30));
      const auto c = static_cast<std::uint32_t>(1 + rng.below(4));
      auto fs = make_set(RowMatrixXd::Zero(n, 1), std::vector<std::uint32_t>(n), c);
      for (auto& y : fs.labels) y = static_cast<std::uint32_t>(rng.below(c));
      fs.source_probs = random_probs(rng, n, 1 + static_cast<Index>(rng.below(5)));
      CHECK(leep(fs).value <= 0.0);
      CHECK(nce(fs).value <= 1e-15);
    }
  }

  TEST_CASE("nleep with one component collapses to label log-frequency") {
    auto fs = column({0.3, 1.7}, {0, 1});
    fs.features.conservativeResize(2, 2);
    fs.features.col(1) << 1.0, -2.0;
    MetricConfig cfg;
    cfg.nleep_components = 1;
    CHECK(nleep(fs, cfg, 0).value == doctest::Approx(-std::log(2.0)).epsilon(1e-9));
  }

  TEST_CASE("nleep beats uniform-probability leep on separated clusters") {
    Rng rng(23);
    RowMatrixXd x(80, 3);
    std::vector<std::uint32_t> y(80);
    for (Index i = 0; i < 80; ++i) {
      y[i] = i < 40 ? 0 : 1;
      for (Index k = 0; k < 3; ++k) x(i, k) = 0.3 * rng.normal() + (y[i] ? 10.0 : -10.0);
    }
    auto fs = make_set(x, y, 2);
    MetricConfig cfg;
    cfg.nleep_components = 2;
    const double nl = nleep(fs, cfg, 1).value;
    auto uniform = fs;
    uniform.source_probs = RowMatrixXd::Constant(80, 2, 0.5);
    CHECK(nl >= leep(uniform).value);
    CHECK(nl == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
  }

  TEST_CASE("nleep is invariant to row order") {
    Rng rng(29);
    auto fs = gaussian_classes(rng, 50, 6, 3, 2.0);
    const double a = nleep(fs, {}, 4).value;
    auto shuffled = fs;
    std::vector<Index> perm(50);
    std::iota(perm.begin(), perm.end(), Index{0});
    rng.shuffle(perm);
    for (Index i = 0; i < 50; ++i) {
      shuffled.features.row(i) = fs.features.row(perm[i]);
      shuffled.labels[i] = fs.labels[perm[i]];
    }
    CHECK(nleep(shuffled, {}, 4).value == a);
  }

  TEST_CASE("gmm objective never decreases") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      const Index n = 20 + static_cast<Index>(rng.below(60)), p = 1 + static_cast<Index>(rng.below(4));
      MatrixXd x(n, p);
      for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < p; ++k) x(i, k) = rng.normal() + 3.0 * static_cast<double>(i % 3);
      const auto fit = fit_gmm(x, 1 + static_cast<Index>(rng.below(4)), 1e-6, seed);
      REQUIRE(fit.objective.size() >= 1);
      for (std::size_t t = 1; t < fit.objective.size(); ++t)
        CHECK(fit.objective[t] >= fit.objective[t - 1] - 1e-9 * std::abs(fit.objective[t - 1]));
      CHECK(fit.weights.sum() == doctest::Approx(1.0));
    }
  }

  TEST_CASE("pca keeps the requested variance") {
    Rng rng(31);
    MatrixXd x(100, 5);
    for (Index i = 0; i < 100; ++i)
      for (Index k = 0; k < 5; ++k) x(i, k) = rng.normal() * std::pow(3.0, 4 - k);
    const auto r = pca_reduce(x, 0.8);
    CHECK(r.components == 1);
    CHECK(pca_reduce(x, 0.999999).components >= 3);
  }

  TEST_CASE("logme fixture matches the dense grid oracle") {
    const auto fs = load_feature_set(tmeta::testing::source_path("tests/data/logme_3x2.fmat"),
                                     tmeta::testing::source_path("tests/data/logme_3x2.lbls"));
    const MatrixXd f = fs.features;
    double oracle = 0.0;
    for (std::uint32_t c = 0; c < 2; ++c) {
      VectorXd y(3);
      for (Index i = 0; i < 3; ++i) y(i) = fs.labels[i] == c ? 1.0 : 0.0;
      const double grid = tmeta::testing::grid_log_evidence(f, y, 200, -10.0, 10.0);
      const auto fit = fit_evidence(f, y, 1e-8, 500);
      CHECK(std::abs(fit.evidence - grid) <= 1e-3);
      CHECK(fit.evidence >= grid - 1e-12);  // the grid can only undershoot the optimum
      CHECK(log_evidence(f, y, fit.alpha, fit.beta) ==
            doctest::Approx(tmeta::testing::dense_log_evidence(f, y, fit.alpha, fit.beta)).epsilon(1e-10));
      for (std::size_t t = 1; t < fit.trace.size(); ++t) CHECK(fit.trace[t] >= fit.trace[t - 1]);
      oracle += grid / 2.0;
    }
    CHECK(std::abs(logme(fs).value - oracle) <= 1e-3);
  }

  TEST_CASE("evidence maximization recovers the generating precisions") {
    const double alpha = 2.0, beta = 25.0;
    const Index n = 1000, d = 10;
    Rng rng(99);
    MatrixXd f(n, d);
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < d; ++k) f(i, k) = rng.normal();
    // Weights at the prior's typical radius sqrt(d / alpha), random direction.
    VectorXd w(d);
    for (Index k = 0; k < d; ++k) w(k) = rng.normal();
    w *= std::sqrt(d / alpha) / w.norm();
    VectorXd y = f * w;
    for (Index i = 0; i < n; ++i) y(i) += rng.normal() / std::sqrt(beta);
    const auto fit = fit_evidence(f, y, 1e-8, 500);
    CHECK(std::abs(fit.alpha - alpha) / alpha <= 0.2);
    CHECK(std::abs(fit.beta - beta) / beta <= 0.2);
  }

  TEST_CASE("logme rejects a single class") {
    CHECK_THROWS_AS(logme(column({0, 1, 2}, {1, 1, 1})), DataError);
  }

  TEST_CASE("gbc") {
    CHECK(gbc(column({-1, 1, 1, 3}, {0, 0, 1, 1})).value == doctest::Approx(-std::exp(-0.5)).epsilon(1e-12));
    CHECK(gbc(column({-1, 1, -1, 1}, {0, 0, 1, 1})).value == doctest::Approx(-1.0).epsilon(1e-12));
    double prev = -1.0;
    for (double gap : {0.5, 1.0, 2.0, 4.0}) {
      const double v = gbc(column({-1, 1, gap - 1, gap + 1}, {0, 0, 1, 1})).value;
      CHECK(v > prev);
      CHECK(v < 0.0);
      prev = v;
    }
  }

  TEST_CASE("pseudo-inverse of a singular psd matrix") {
    MatrixXd a(3, 3);
    a << 2, 1, 0, 1, 2, 0, 0, 0, 0;
    const MatrixXd p = pinv_psd(a, 1e-10);
    CHECK((a * p * a - a).norm() < 1e-12);
    CHECK((p * a * p - p).norm() < 1e-12);
  }

  TEST_CASE("external scores") {
    TempDir dir("ext");
    write_file(dir / "s.csv", "dataset,model,metric,score\nCIFAR10,r50,SFDA,1.5\nCIFAR10,r101,SFDA,2\nPets,r50,NCTI,-3\n");
    const auto s = ingest_external_scores(dir / "s.csv");
    CHECK(s.size() == 3);
    CHECK(*s.find("CIFAR10", "r101", "SFDA") == 2.0);
    CHECK_FALSE(s.find("Pets", "r101", "NCTI"));
    save_external_scores(s, dir / "back.csv");
    CHECK(ingest_external_scores(dir / "back.csv").rows() == s.rows());
    write_file(dir / "dup.csv", "dataset,model,metric,score\nA,m,S,1\nA,m,S,2\n");
    try {
      ingest_external_scores(dir / "dup.csv");
      FAIL("expected a DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
  }

  TEST_CASE("scoring a zoo") {
    Rng rng(41);
    std::vector<ZooMember> zoo{{"a", gaussian_classes(rng, 40, 3, 2, 1.0)}, {"b", gaussian_classes(rng, 40, 3, 2, 3.0)}};
    const auto v = score_model_zoo("D", zoo, MetricId::parse("H-Score"), {}, 0);
    CHECK(v.model_ids == std::vector<std::string>{"a", "b"});
    CHECK(v.scores(0) == h_score(zoo[0].features).value);
    CHECK(v.scores(1) == h_score(zoo[1].features).value);

    const auto n1 = score_model_zoo("D", zoo, MetricId::parse("NLEEP"), {}, 5, nullptr, 2);
    const auto n2 = score_model_zoo("D", zoo, MetricId::parse("NLEEP"), {}, 5);
    CHECK((n1.scores.array() == n2.scores.array()).all());

    ExternalScores ext;
    ext.add("D", "a", "SFDA", 1.0);
    ext.add("D", "b", "SFDA", 2.0);
    CHECK(score_model_zoo("D", zoo, MetricId::parse("SFDA"), {}, 0, &ext).scores == Eigen::Vector2d(1, 2));
    try {
      score_model_zoo("D", zoo, MetricId::parse("NCTI"), {}, 0, &ext);
      FAIL("expected a DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("NCTI") != std::string::npos);
    }
  }
}
