#include "stub_endpoint.hpp"
#include "support.hpp"

#include "tmeta/cli.hpp"
#include "tmeta/data.hpp"
#include "tmeta/metrics.hpp"

#include <doctest.h>

#include <sstream>

using namespace tmeta;
using tmeta::testing::TempDir;
using tmeta::testing::read_file;
using tmeta::testing::source_path;
using tmeta::testing::write_file;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("embed through a stub endpoint") {
    tmeta::testing::StubEndpoint stub;
    TempDir dir("cli_embed");
    write_file(dir / "all.jsonl", read_file(source_path("data/descriptions/datasets.jsonl")) +
                                      read_file(source_path("data/descriptions/metrics.jsonl")));
    const auto r = run({"embed", "--input", (dir / "all.jsonl").string(), "--endpoint", stub.url(), "--out",
                        (dir / "c.jsonl").string()});
    REQUIRE(r.code == 0);
    const auto corpus = load_embeddings(dir / "c.jsonl");
    CHECK(corpus.records().size() == 20);
    CHECK(corpus.names(EmbeddingKind::metric).size() == 9);

    CHECK(run({"embed", "--input", (dir / "all.jsonl").string(), "--endpoint", stub.url(), "--from-file",
               (dir / "c.jsonl").string(), "--out", (dir / "d.jsonl").string()})
              .code == 1);
    CHECK(run({"embed", "--input", (dir / "missing.jsonl").string(), "--endpoint", stub.url(), "--out",
               (dir / "d.jsonl").string()})
              .code == 2);
  }

  TEST_CASE("embed reports endpoint failure with exit 3 and writes nothing") {
    tmeta::testing::StubEndpoint stub(503);
    TempDir dir("cli_embed_fail");
    write_file(dir / "m.jsonl", read_file(source_path("data/descriptions/metrics.jsonl")));
    const auto r = run({"embed", "--input", (dir / "m.jsonl").string(), "--endpoint", stub.url(), "--retries", "0",
                        "--out", (dir / "c.jsonl").string()});
    CHECK(r.code == 3);
    CHECK_FALSE(fs::exists(dir / "c.jsonl"));
  }

  TEST_CASE("usage errors") {
    CHECK(run({}).code == 1);
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({"report", "--table", "t.csv", "--bogus"}).code == 1);
    const auto r = run({"train", "--table", source_path("data/benchmark/tau_table.csv").string(), "--selector",
                        "oracle", "--out", "/dev/null"});
    CHECK(r.code == 1);
    CHECK(r.err.find("oracle") != std::string::npos);
  }

  TEST_CASE("lodo rejects an unknown selector kind") {
    TempDir dir("cli_lodo_bad");
    write_file(dir / "cfg.json", R"({"selectors": [{"kind": "psychic"}]})");
    const auto r = run({"lodo", "--table", source_path("data/benchmark/tau_table.csv").string(), "--embeddings",
                        source_path("data/benchmark/embeddings.jsonl").string(), "--config", (dir / "cfg.json").string(),
                        "--out", (dir / "out").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("psychic") != std::string::npos);
  }

  TEST_CASE("lodo is repeatable byte for byte") {
    TempDir dir("cli_lodo");
    write_file(dir / "cfg.json",
               R"j({"selectors": [{"kind": "fixed(SFDA)"}, {"kind": "global_best"}, {"kind": "argosmart_1nn"},
                                 {"kind": "random", "seed": 3}]})j");
    std::vector<std::string> args{"lodo", "--table", source_path("data/benchmark/tau_table.csv").string(),
                                  "--embeddings", source_path("data/benchmark/embeddings.jsonl").string(),
                                  "--config", (dir / "cfg.json").string(), "--out"};
    auto a = args, b = args;
    a.push_back((dir / "a").string());
    b.push_back((dir / "b").string());
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    for (const auto* f : {"per_dataset.csv", "mean_ranks.csv", "boxstats.csv", "folds.jsonl"})
      CHECK(read_file(dir / "a" / f) == read_file(dir / "b" / f));
    CHECK(lines_of(read_file(dir / "a" / "mean_ranks.csv")).size() == 5);
  }

  TEST_CASE("report from selections") {
    TempDir dir("cli_report");
    const auto r = run({"report", "--table", source_path("data/benchmark/tau_table.csv").string(), "--selections",
                        source_path("data/benchmark/selections.csv").string(), "--out", dir.path().string()});
    REQUIRE(r.code == 0);
    CHECK(read_file(dir / "mean_ranks.csv").find("MetaRank,4.7727") != std::string::npos);
  }

  TEST_CASE("train and rank") {
    TempDir dir("cli_rank");
    const auto table = source_path("data/benchmark/tau_table.csv").string();
    const auto emb = source_path("data/benchmark/embeddings.jsonl").string();
    REQUIRE(run({"train", "--table", table, "--selector", "fixed(SFDA)", "--out", (dir / "f.json").string()}).code ==
            0);
    auto r = run({"rank", "--model", (dir / "f.json").string(), "--metrics", emb});
    REQUIRE(r.code == 0);
    CHECK(lines_of(r.out).front().rfind("SFDA\t", 0) == 0);

    REQUIRE(run({"train", "--table", table, "--embeddings", emb, "--selector", "metarank_gbdt", "--hyper",
                 R"({"n_trees": 20})", "--out", (dir / "m.json").string()})
                .code == 0);
    r = run({"rank", "--model", (dir / "m.json").string(), "--dataset-embedding", "1,2,3", "--metrics", emb});
    CHECK(r.code == 2);
    r = run({"rank", "--model", (dir / "m.json").string(), "--dataset-embedding", "Pets", "--metrics", emb});
    CHECK(r.code == 0);
    CHECK(lines_of(r.out).size() == 9);

    CHECK(run({"train", "--table", table, "--embeddings", emb, "--selector", "metarank_gbdt", "--hyper",
               R"({"max_depth": -1})", "--out", (dir / "x.json").string()})
              .code == 1);
  }

  TEST_CASE("score and tau-table over a small zoo") {
    TempDir dir("cli_zoo");
    Rng rng(21);
    nlohmann::json models = nlohmann::json::array();
    for (int m = 0; m < 3; ++m) {
      LabeledFeatureSet fs;
      fs.features.resize(30, 2);
      fs.labels.resize(30);
      fs.num_classes = 2;
      for (Index i = 0; i < 30; ++i) {
        fs.labels[i] = static_cast<std::uint32_t>(i % 2);
        fs.features(i, 0) = rng.normal() + m * fs.labels[i];
        fs.features(i, 1) = rng.normal();
      }
      const std::string id = "m" + std::to_string(m);
      save_feature_set(fs, dir / (id + ".fmat"), dir / (id + ".lbls"));
      models.push_back({{"id", id}, {"features", id + ".fmat"}, {"labels", id + ".lbls"}, {"accuracy", 0.5 + 0.1 * m}});
    }
    write_file(dir / "zoo.json", nlohmann::json{{"datasets", {{{"name", "D"}, {"models", models}}}}}.dump());

    auto r = run({"score", "--zoo", (dir / "zoo.json").string(), "--dataset", "D", "--metric", "H-Score"});
    REQUIRE(r.code == 0);
    CHECK(lines_of(r.out).size() == 4);
    r = run({"score", "--zoo", (dir / "zoo.json").string(), "--dataset", "D", "--metric", "LEEP"});
    CHECK(r.code == 2);  // no source probabilities in the manifest

    r = run({"tau-table", "--zoo", (dir / "zoo.json").string(), "--metrics", "H-Score,GBC", "--out",
             (dir / "t.csv").string()});
    REQUIRE(r.code == 0);
    const auto t = load_meta_task_table(dir / "t.csv");
    CHECK(t.num_metrics() == 2);
    CHECK(t.cell("D", "H-Score") == 1.0);
  }
}
