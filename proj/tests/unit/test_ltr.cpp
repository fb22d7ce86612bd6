#include "support.hpp"

#include "tmeta/gbdt.hpp"
#include "tmeta/harness.hpp"
#include "tmeta/mlp.hpp"
#include "tmeta/rankcorr.hpp"
#include "tmeta/selectors.hpp"

#include <doctest.h>

using namespace tmeta;
using namespace tmeta::ltr;

namespace {

RankingSet random_set(Rng& rng, Index queries, Index items, Index dim) {
  std::vector<RankingInstance> inst;
  VectorXd w(dim);
  for (Index k = 0; k < dim; ++k) w(k) = rng.normal();
  for (Index q = 0; q < queries; ++q) {
    for (Index i = 0; i < items; ++i) {
      RankingInstance r;
      r.query_id = "q" + std::to_string(q);
      r.item_id = "i" + std::to_string(i);
      r.feature.resize(dim);
      for (Index k = 0; k < dim; ++k) r.feature(k) = rng.normal();
      r.target = std::tanh(r.feature.dot(w) / std::sqrt(static_cast<double>(dim)));
      inst.push_back(std::move(r));
    }
  }
  return RankingSet::pack(inst);
}

std::vector<double> to_vec(std::initializer_list<double> v) { return v; }

}  // namespace

TEST_SUITE("ltr-gbdt") {
  TEST_CASE("pack groups by query and checks invariants") {
    std::vector<RankingInstance> inst{{"a", "x", Eigen::Vector2d(1, 2), 0.5}, {"b", "x", Eigen::Vector2d(3, 4), 0.1},
                                      {"a", "y", Eigen::Vector2d(5, 6), 0.2}, {"b", "y", Eigen::Vector2d(7, 8), 0.3}};
    const auto set = RankingSet::pack(inst);
    CHECK(set.query_ids == std::vector<std::string>{"a", "b"});
    CHECK(set.query_begin == std::vector<Index>{0, 2, 4});
    CHECK(set.features(1, 0) == 5.0);
    inst.pop_back();
    CHECK_THROWS_AS(RankingSet::pack(inst), DataError);
  }

  TEST_CASE("constant targets give a constant fit") {
    Rng rng(1);
    auto set = random_set(rng, 6, 4, 3);
    set.targets.setConstant(5.0);
    GbdtParams p;
    p.objective = Objective::pointwise_squared;
    const auto m = train(set, p);
    CHECK((m.predict(set.features).array() - 5.0).abs().maxCoeff() <= 1e-9);
    CHECK_FALSE(m.warnings.empty());
    const auto lam = train(set, GbdtParams{});
    const VectorXd pred = lam.predict(set.features);
    CHECK((pred.array() == pred(0)).all());
  }

  TEST_CASE("two-item separable query is ordered by target") {
    std::vector<RankingInstance> inst{{"q", "lo", VectorXd::Constant(1, 0.0), 0.1},
                                      {"q", "hi", VectorXd::Constant(1, 1.0), 0.9}};
    for (auto obj : {Objective::lambda_ndcg, Objective::pairwise_logistic, Objective::pointwise_squared}) {
      GbdtParams p;
      p.objective = obj;
      p.min_samples_leaf = 1;
      p.subsample = 1.0;
      const auto m = train(inst, p);
      const auto set = RankingSet::pack(inst);
      const VectorXd s = m.predict(set.features);
      CHECK(s(1) > s(0));
    }
  }

  TEST_CASE("pointwise loss never increases and lambda ndcg never drops per stage") {
    Rng rng(2);
    const auto set = random_set(rng, 40, 6, 5);
    GbdtParams p;
    p.n_trees = 60;
    p.objective = Objective::pointwise_squared;
    TrainTrace pt;
    train(set, p, &pt);
    for (std::size_t t = 1; t < pt.pointwise_loss.size(); ++t)
      CHECK(pt.pointwise_loss[t] <= pt.pointwise_loss[t - 1] + 1e-12);

    // Measured on the returned models: t + 1 stages never score below t stages.
    p.objective = Objective::lambda_ndcg;
    double prev = mean_ndcg(set, VectorXd::Zero(set.targets.size()));
    for (int t = 1; t <= 30; ++t) {
      p.n_trees = t;
      const auto m = train(set, p);
      const double now = mean_ndcg(set, m.predict(set.features));
      CHECK(now >= prev - 1e-9);
      prev = now;
    }
    p.n_trees = 30;
    TrainTrace lt;
    const auto m = train(set, p, &lt);
    CHECK(lt.mean_ndcg.back() == doctest::Approx(mean_ndcg(set, m.predict(set.features))).epsilon(1e-12));
  }

  TEST_CASE("serialization round trip predicts bitwise identically") {
    Rng rng(3);
    const auto set = random_set(rng, 20, 5, 4);
    const auto m = train(set, GbdtParams{});
    nlohmann::json j = m;
    const auto back = j.get<GbdtModel>();
    CHECK((back.predict(set.features).array() == m.predict(set.features).array()).all());
    j["trees"][0]["left"][0] = 99;
    CHECK_THROWS(j.get<GbdtModel>());
  }

  TEST_CASE("training is deterministic") {
    Rng rng(4);
    const auto set = random_set(rng, 20, 5, 4);
    const auto a = train(set, GbdtParams{}), b = train(set, GbdtParams{});
    CHECK((a.predict(set.features).array() == b.predict(set.features).array()).all());
  }

  TEST_CASE("parameter validation") {
    GbdtParams p;
    p.max_depth = 0;
    CHECK_THROWS_AS(p.validate(), UsageError);
    p = {};
    p.learning_rate = 0.0;
    CHECK_THROWS_AS(p.validate(), UsageError);
    p = {};
    p.subsample = 1.5;
    CHECK_THROWS_AS(p.validate(), UsageError);
    CHECK_THROWS_AS(parse_objective("listwise"), UsageError);
  }

  TEST_CASE("rank items") {
    CHECK(rank_items(Eigen::Vector3d(0.1, 0.9, 0.5)) == std::vector<Index>{1, 2, 0});
    CHECK(rank_items(Eigen::Vector3d(1, 1, 1)) == std::vector<Index>{0, 1, 2});
    const Eigen::Vector4d tau(0.3, -0.2, 0.8, 0.1);
    CHECK(rankcorr::ndcg(rank_items(tau), argsort_descending(tau)) == 1.0);
  }

  TEST_CASE("pairwise gradients") {
    const auto t = to_vec({1.0, 0.0});
    auto g = pairwise_gradients(t, to_vec({20.0, 0.0}), false);
    CHECK(g.gradient.cwiseAbs().maxCoeff() < 1e-3);
    g = lambda_gradients(t, to_vec({0.0, 1.0}));
    CHECK(g.gradient(0) < 0.0);  // the relevant item is pushed up
    CHECK(g.gradient(1) > 0.0);

    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> tv(7), pv(7);
      for (auto& v : tv) v = rng.normal();
      for (auto& v : pv) v = rng.normal();
      for (bool weighted : {false, true}) {
        const auto gp = pairwise_gradients(tv, pv, weighted);
        CHECK(std::abs(gp.gradient.sum()) <= 1e-12);
        CHECK((gp.hessian.array() >= 0.0).all());
      }
    }
  }

  TEST_CASE("ndcg swap delta matches recomputation") {
    Rng rng(6);
    const Index k = 6;
    const auto perms = tmeta::testing::all_permutations(k);
    const std::vector<Index> truth{0, 1, 2, 3, 4, 5};
    const auto rel = rankcorr::relevance_from_order(truth);
    const double ideal = rankcorr::dcg(truth, rel);
    for (int trial = 0; trial < 200; ++trial) {
      auto order = perms[rng.below(perms.size())];
      const Index pi = static_cast<Index>(rng.below(k)), pj = static_cast<Index>(rng.below(k));
      const double before = rankcorr::ndcg(order, truth);
      const int ri = rel[order[pi]], rj = rel[order[pj]];
      std::swap(order[pi], order[pj]);
      const double after = rankcorr::ndcg(order, truth);
      CHECK(ndcg_swap_delta(ri, rj, pi, pj, ideal) == doctest::Approx(std::abs(after - before)).epsilon(1e-12));
    }
  }
}

TEST_SUITE("meta-learners") {
  TEST_CASE("mlp gradient matches central differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(seed + 100);
      MlpParams p;
      p.hidden1 = 8;
      p.hidden2 = 5;
      p.seed = seed;
      const auto model = init_mlp(4, p);
      RowMatrixXd x(5, 4);
      VectorXd y(5);
      for (Index i = 0; i < 5; ++i) {
        for (Index k = 0; k < 4; ++k) x(i, k) = rng.normal();
        y(i) = rng.normal();
      }
      VectorXd grad;
      mlp_loss_and_gradient(model, x, y, &grad);
      const VectorXd theta = model.flatten();
      REQUIRE(grad.size() == theta.size());
      double worst = 0.0;
      for (Index k = 0; k < theta.size(); ++k) {
        auto plus = model, minus = model;
        VectorXd tp = theta, tm = theta;
        tp(k) += 1e-5;
        tm(k) -= 1e-5;
        plus.unflatten(tp);
        minus.unflatten(tm);
        const double fd = (mlp_loss_and_gradient(plus, x, y, nullptr) - mlp_loss_and_gradient(minus, x, y, nullptr)) / 2e-5;
        worst = std::max(worst, std::abs(fd - grad(k)) / std::max(1e-6, std::abs(fd) + std::abs(grad(k))));
      }
      CHECK(worst <= 1e-4);
    }
  }

  TEST_CASE("mlp zero epochs equals the initialization") {
    Rng rng(8);
    RowMatrixXd x(6, 3);
    for (Index i = 0; i < 6; ++i)
      for (Index k = 0; k < 3; ++k) x(i, k) = rng.normal();
    MlpParams p;
    p.epochs = 0;
    const auto m = train_mlp(x, VectorXd::Ones(6), p);
    CHECK((m.predict(x).array() == init_mlp(3, p).predict(x).array()).all());
  }

  TEST_CASE("mlp fits constant targets") {
    // Inputs are the shipped instance features: pairs of unit-norm description embeddings.
    const auto table = load_meta_task_table(tmeta::testing::source_path("data/benchmark/tau_table.csv"));
    const auto emb = load_embeddings(tmeta::testing::source_path("data/benchmark/embeddings.jsonl"));
    const auto inst = select::build_instances(table, emb);
    RowMatrixXd x(static_cast<Index>(inst.size()), inst.front().feature.size());
    for (std::size_t i = 0; i < inst.size(); ++i) x.row(static_cast<Index>(i)) = inst[i].feature.transpose();
    for (double target : {0.3, -0.5, 0.9}) {
      const VectorXd y = VectorXd::Constant(x.rows(), target);
      const auto m = train_mlp(x, y, MlpParams{});
      REQUIRE(m.loss_history.size() == 500);
      CHECK(mlp_loss_and_gradient(m, x, y, nullptr) <= 1e-4);
    }
  }

  TEST_CASE("mlp divergence is reported") {
    Rng rng(10);
    RowMatrixXd x(10, 3);
    for (Index i = 0; i < 10; ++i)
      for (Index k = 0; k < 3; ++k) x(i, k) = 100.0 * rng.normal();
    MlpParams p;
    p.step_size = 10.0;
    CHECK_THROWS_AS(train_mlp(x, VectorXd::Ones(10), p), ComputeError);
  }

  TEST_CASE("mlp serialization round trip") {
    Rng rng(12);
    RowMatrixXd x(4, 3);
    for (Index i = 0; i < 4; ++i)
      for (Index k = 0; k < 3; ++k) x(i, k) = rng.normal();
    MlpParams p;
    p.epochs = 5;
    const auto m = train_mlp(x, VectorXd::Ones(4), p);
    nlohmann::json j = m;
    const auto back = j.get<MlpModel>();
    CHECK((back.predict(x).array() == m.predict(x).array()).all());
  }
}

TEST_SUITE("harness") {
  TEST_CASE("synthetic generator") {
    harness::SyntheticMetaBenchmark b;
    b.num_datasets = 30;
    const auto a = harness::generate_synthetic(b), c = harness::generate_synthetic(b);
    CHECK(a.table.tau() == c.table.tau());
    CHECK(a.table.datasets() == c.table.datasets());
    CHECK((a.table.tau().array().abs() <= 1.0).all());

    b.noise = 0.0;
    const auto clean = harness::generate_synthetic(b);
    for (Index j = 0; j < 30; ++j) {
      // Recompute the utility from the stored embeddings.
      const VectorXd d = clean.embeddings.vector(EmbeddingKind::dataset, clean.table.datasets()[j]);
      const VectorXd w = harness::default_synthetic_weights(16);
      Index best = -1;
      double best_u = -1e300;
      for (Index k = 0; k < 9; ++k) {
        const VectorXd s = clean.embeddings.vector(EmbeddingKind::metric, clean.table.metrics()[k]);
        const double u = d.cwiseProduct(w).dot(s) / 4.0;
        CHECK(u == doctest::Approx(clean.utility(j, k)).epsilon(1e-9));
        if (u > best_u) {
          best_u = u;
          best = k;
        }
      }
      CHECK(clean.table.ground_truth_order(j)[0] == best);
    }
  }

  TEST_CASE("shipped synthetic fixture is reproducible and pinned") {
    const auto table_bytes = tmeta::testing::read_file(tmeta::testing::source_path("tests/data/synthetic_table.csv"));
    const auto emb_bytes =
        tmeta::testing::read_file(tmeta::testing::source_path("tests/data/synthetic_embeddings.jsonl"));
    CHECK(tmeta::testing::fnv1a(table_bytes) == 0x830f1e5fb32cc8fcULL);
    CHECK(tmeta::testing::fnv1a(emb_bytes) == 0x4281590b64516631ULL);

    harness::SyntheticMetaBenchmark b;
    b.num_datasets = 250;
    const auto data = harness::generate_synthetic(b);
    tmeta::testing::TempDir dir("synth");
    save_meta_task_table(data.table, dir / "t.csv");
    save_embeddings(data.embeddings, dir / "e.jsonl");
    CHECK(tmeta::testing::read_file(dir / "t.csv") == table_bytes);
    CHECK(tmeta::testing::read_file(dir / "e.jsonl") == emb_bytes);
  }
}
