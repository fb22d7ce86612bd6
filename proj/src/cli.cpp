#include "tmeta/cli.hpp"

#include "tmeta/embed_client.hpp"
#include "tmeta/harness.hpp"
#include "tmeta/metrics.hpp"
#include "tmeta/selectors.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace tmeta::cli {

namespace {

using json = nlohmann::json;

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

void log_config(std::ostream& err, const std::string& cmd, const json& cfg) {
  err << "tmeta " << cmd << ": " << cfg.dump() << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct ZooManifest {
  std::vector<std::string> datasets;
  std::map<std::string, std::vector<metrics::ZooMember>> zoos;
  std::map<std::string, VectorXd> accuracies;
};

// {"datasets": [{"name", "models": [{"id", "features", "labels", "probs"?, "accuracy"?}]}]}
// Paths are relative to the manifest's directory.
ZooManifest load_zoo(const fs::path& path, const std::optional<std::string>& only_dataset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  ZooManifest out;
  try {
    for (const auto& d : j.at("datasets")) {
      const auto name = d.at("name").get<std::string>();
      if (only_dataset && name != *only_dataset) continue;
      std::vector<metrics::ZooMember> members;
      std::vector<double> acc;
      bool all_acc = true;
      for (const auto& m : d.at("models")) {
        std::optional<fs::path> probs;
        if (m.contains("probs")) probs = resolve(m.at("probs").get<std::string>());
        metrics::ZooMember member{m.at("id").get<std::string>(),
                                  load_feature_set(resolve(m.at("features").get<std::string>()),
                                                   resolve(m.at("labels").get<std::string>()), probs)};
        members.push_back(std::move(member));
        if (m.contains("accuracy"))
          acc.push_back(m.at("accuracy").get<double>());
        else
          all_acc = false;
      }
      out.datasets.push_back(name);
      out.zoos[name] = std::move(members);
      if (all_acc) out.accuracies[name] = Eigen::Map<const VectorXd>(acc.data(), static_cast<Index>(acc.size()));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed zoo manifest: " + e.what());
  }
  if (only_dataset && out.datasets.empty())
    throw DataError(path.string() + ": no dataset named '" + *only_dataset + "'");
  return out;
}

std::optional<VectorXd> parse_vector(const std::string& s) {
  std::string body = s;
  if (!body.empty() && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
  std::vector<double> values;
  for (const auto& item : split_list(body)) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) return std::nullopt;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (values.size() < 2) return std::nullopt;
  return Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
}

// ---------------------------------------------------------------------------

struct EmbedOpts {
  std::string input, endpoint, from_file, out;
  std::size_t batch_size = 8, max_inflight = 4;
  int retries = 3;
};

int cmd_embed(const EmbedOpts& o, std::ostream& out, std::ostream& err) {
  std::string endpoint = o.endpoint;
  if (!endpoint.empty() && !o.from_file.empty()) throw UsageError("--endpoint and --from-file are exclusive");
  if (endpoint.empty() && o.from_file.empty()) {
    if (const char* env = std::getenv("TMETA_EMBED_ENDPOINT")) endpoint = env;
  }
  if (endpoint.empty() && o.from_file.empty())
    throw UsageError("give --endpoint, --from-file, or set TMETA_EMBED_ENDPOINT");
  log_config(err, "embed", {{"input", o.input}, {"endpoint", endpoint}, {"from_file", o.from_file}, {"out", o.out},
                            {"batch_size", o.batch_size}, {"max_inflight", o.max_inflight}});
  const auto texts = load_descriptions(o.input);
  std::vector<EmbeddingRecord> records;
  if (!o.from_file.empty()) {
    const auto source = load_embeddings(o.from_file);
    for (const auto& t : texts) {
      const auto* r = source.find(t.kind, t.name);
      if (!r) throw DataError(o.from_file + ": no " + std::string(to_string(t.kind)) + " embedding for '" + t.name + "'");
      records.push_back(*r);
    }
  } else {
    EmbedClientOptions opt;
    opt.batch_size = o.batch_size;
    opt.max_inflight = o.max_inflight;
    opt.max_retries = o.retries;
    records = fetch_embeddings(texts, endpoint, opt);
  }
  EmbeddingCorpus corpus;
  for (auto& r : records) corpus.add(std::move(r));
  save_embeddings(corpus, o.out);
  out << "wrote " << corpus.records().size() << " embeddings (" << corpus.names(EmbeddingKind::dataset).size()
      << " datasets, " << corpus.names(EmbeddingKind::metric).size() << " metrics, dim " << corpus.dim() << ") to "
      << o.out << '\n';
  return kSuccess;
}

struct ScoreOpts {
  std::string zoo, dataset, metric, external, out;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

metrics::MetricConfig metric_config() { return {}; }

int cmd_score(const ScoreOpts& o, std::ostream& out, std::ostream& err) {
  log_config(err, "score", {{"zoo", o.zoo}, {"dataset", o.dataset}, {"metric", o.metric}, {"external", o.external},
                            {"seed", o.seed}, {"threads", o.threads}});
  const auto zoo = load_zoo(o.zoo, o.dataset);
  std::optional<metrics::ExternalScores> ext;
  if (!o.external.empty()) ext = metrics::ingest_external_scores(o.external);
  const auto id = metrics::MetricId::parse(o.metric);
  const auto scores = metrics::score_model_zoo(o.dataset, zoo.zoos.at(o.dataset), id, metric_config(), o.seed,
                                               ext ? &*ext : nullptr, o.threads);
  std::ostringstream csv;
  csv << "dataset,model,metric,score\n";
  for (std::size_t i = 0; i < scores.model_ids.size(); ++i)
    csv << o.dataset << ',' << scores.model_ids[i] << ',' << id.name() << ','
        << format_double(scores.scores(static_cast<Index>(i))) << '\n';
  if (o.out.empty()) {
    out << csv.str();
  } else {
    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw DataError("cannot write " + o.out);
    f << csv.str();
    out << "wrote " << scores.model_ids.size() << " scores to " << o.out << '\n';
  }
  return kSuccess;
}

struct TauOpts {
  std::string zoo, metrics, external, out;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

int cmd_tau_table(const TauOpts& o, std::ostream& out, std::ostream& err) {
  log_config(err, "tau-table", {{"zoo", o.zoo}, {"metrics", o.metrics}, {"external", o.external}, {"out", o.out},
                                {"seed", o.seed}, {"threads", o.threads}});
  const auto zoo = load_zoo(o.zoo, std::nullopt);
  std::optional<metrics::ExternalScores> ext;
  if (!o.external.empty()) ext = metrics::ingest_external_scores(o.external);
  std::vector<metrics::MetricId> ids;
  for (const auto& m : split_list(o.metrics)) ids.push_back(metrics::MetricId::parse(m));
  if (ids.empty()) throw UsageError("--metrics needs at least one metric name");
  const auto table = harness::build_tau_table(zoo.datasets, zoo.zoos, zoo.accuracies, ids, metric_config(), o.seed,
                                              ext ? &*ext : nullptr, o.threads);
  save_meta_task_table(table, o.out);
  out << "wrote " << table.num_datasets() << " x " << table.num_metrics() << " tau table to " << o.out << '\n';
  return kSuccess;
}

struct TrainOpts {
  std::string table, embeddings, selector, hyper = "{}", metric_subset, out, name;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainOpts& o, std::ostream& out, std::ostream& err) {
  json hyper;
  try {
    hyper = json::parse(o.hyper);
  } catch (const json::exception& e) {
    throw UsageError(std::string("--hyper is not valid JSON: ") + e.what());
  }
  const auto spec = select::SelectorSpec::from_json({{"kind", o.selector}, {"hyper", hyper}, {"seed", o.seed},
                                                     {"name", o.name}});
  log_config(err, "train", {{"table", o.table}, {"embeddings", o.embeddings}, {"selector", spec.to_json()},
                            {"metric_subset", o.metric_subset}, {"seed", o.seed}, {"out", o.out}});
  auto table = load_meta_task_table(o.table);
  if (!o.metric_subset.empty()) table = table.select_metrics(split_list(o.metric_subset));
  EmbeddingCorpus corpus;
  if (!o.embeddings.empty())
    corpus = load_embeddings(o.embeddings);
  else if (spec.uses_embeddings())
    throw UsageError("selector " + spec.display_name() + " needs --embeddings");
  const auto fitted = select::fit_selector(spec, table, corpus);
  select::save_selector(fitted, o.out);
  out << "trained " << spec.display_name() << " on " << table.num_datasets() << " datasets x " << table.num_metrics()
      << " metrics; wrote " << o.out << '\n';
  return kSuccess;
}

struct RankOpts {
  std::string model, dataset_embedding, metrics, embeddings, candidates;
};

int cmd_rank(const RankOpts& o, std::ostream& out, std::ostream& err) {
  log_config(err, "rank", {{"model", o.model}, {"dataset_embedding", o.dataset_embedding}, {"metrics", o.metrics},
                           {"embeddings", o.embeddings}, {"candidates", o.candidates}});
  const auto selector = select::load_selector(o.model);
  err << "tmeta rank: selector " << selector.spec().display_name() << ", seed " << selector.spec().seed << '\n';
  std::optional<EmbeddingCorpus> metric_corpus;
  if (!o.metrics.empty()) metric_corpus = load_embeddings(o.metrics);

  std::optional<VectorXd> query;
  if (!o.dataset_embedding.empty()) {
    query = parse_vector(o.dataset_embedding);
    if (!query) {
      std::optional<EmbeddingCorpus> extra;
      if (!o.embeddings.empty()) extra = load_embeddings(o.embeddings);
      for (const auto* c : {extra ? &*extra : nullptr, metric_corpus ? &*metric_corpus : nullptr})
        if (!query && c && c->contains(EmbeddingKind::dataset, o.dataset_embedding))
          query = c->vector(EmbeddingKind::dataset, o.dataset_embedding);
      if (!query) throw DataError("no dataset embedding named '" + o.dataset_embedding + "'");
    }
  } else if (selector.spec().uses_embeddings()) {
    throw UsageError("selector " + selector.spec().display_name() + " needs --dataset-embedding");
  }

  std::vector<std::string> candidates = split_list(o.candidates);
  if (candidates.empty()) candidates = metric_corpus ? metric_corpus->names(EmbeddingKind::metric) : selector.training_metrics();
  if (candidates.empty()) throw DataError("no candidate metrics: the metric corpus holds no metric embeddings");
  const auto rec = selector.recommend(query, candidates, metric_corpus ? &*metric_corpus : nullptr);
  for (std::size_t i = 0; i < rec.metrics.size(); ++i) {
    const bool unseen = std::find(rec.unseen.begin(), rec.unseen.end(), rec.metrics[i]) != rec.unseen.end();
    out << rec.metrics[i] << '\t' << (unseen ? std::string("unscored") : format_double(rec.scores[i])) << '\n';
  }
  if (!rec.unseen.empty())
    err << "tmeta rank: " << rec.unseen.size() << " metric(s) unseen by this selector were ranked last\n";
  return kSuccess;
}

struct LodoOpts {
  std::string table, embeddings, config, out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

int cmd_lodo(const LodoOpts& o, std::ostream& out, std::ostream& err) {
  auto cfg = harness::LodoConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  cfg.threads = o.threads;
  log_config(err, "lodo", {{"table", o.table}, {"embeddings", o.embeddings}, {"out", o.out}, {"threads", o.threads},
                           {"config", cfg.to_json()}});
  const auto table = load_meta_task_table(o.table);
  const auto corpus = load_embeddings(o.embeddings);
  const auto report = harness::run_lodo(table, corpus, cfg);
  harness::emit_report(report, o.out);
  out << "LODO over " << report.datasets.size() << " folds, " << report.methods.size() << " methods; reports in "
      << o.out << '\n';
  for (std::size_t r = 0; r < report.methods.size(); ++r)
    out << report.methods[r] << '\t' << format_double(report.mean_ranks(static_cast<Index>(r))) << '\n';
  return kSuccess;
}

struct ReportOpts {
  std::string table, selections, out;
};

int cmd_report(const ReportOpts& o, std::ostream& out, std::ostream& err) {
  log_config(err, "report", {{"table", o.table}, {"selections", o.selections}, {"out", o.out}});
  const auto table = load_meta_task_table(o.table);
  const auto report = harness::report_from_selections(table, o.selections);
  harness::emit_report(report, o.out);
  out << "report over " << report.datasets.size() << " datasets, " << report.methods.size() << " methods in " << o.out
      << '\n';
  return kSuccess;
}

struct SynthOpts {
  harness::SyntheticMetaBenchmark bench;
  std::string table_out, embeddings_out;
};

int cmd_synth(const SynthOpts& o, std::ostream& out, std::ostream& err) {
  log_config(err, "synth", {{"datasets", o.bench.num_datasets}, {"metrics", o.bench.num_metrics},
                            {"dim", o.bench.dim}, {"noise", o.bench.noise}, {"seed", o.bench.seed}});
  const auto data = harness::generate_synthetic(o.bench);
  save_meta_task_table(data.table, o.table_out);
  save_embeddings(data.embeddings, o.embeddings_out);
  out << "wrote " << data.table.num_datasets() << " x " << data.table.num_metrics() << " synthetic table\n";
  return kSuccess;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task-aware selection of model transferability metrics", "tmeta"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "tmeta 1.0.0");

  std::function<int()> action;
  unsigned threads = default_threads();
  app.add_option("--threads", threads, "Worker threads (default: all cores)")->check(CLI::PositiveNumber);

  EmbedOpts embed;
  auto* c_embed = app.add_subcommand("embed", "Embed dataset and metric descriptions");
  c_embed->add_option("--input", embed.input, "Descriptions JSONL")->required();
  auto* ep = c_embed->add_option("--endpoint", embed.endpoint, "Embedding endpoint URL (env TMETA_EMBED_ENDPOINT)");
  auto* ff = c_embed->add_option("--from-file", embed.from_file, "Precomputed embeddings JSONL");
  ep->excludes(ff);
  c_embed->add_option("--out", embed.out, "Output corpus JSONL")->required();
  c_embed->add_option("--batch-size", embed.batch_size, "Texts per request")->check(CLI::PositiveNumber);
  c_embed->add_option("--max-inflight", embed.max_inflight, "Concurrent requests")->check(CLI::PositiveNumber);
  c_embed->add_option("--retries", embed.retries, "Retries per request")->check(CLI::NonNegativeNumber);
  c_embed->callback([&] { action = [&] { return cmd_embed(embed, out, err); }; });

  ScoreOpts score;
  auto* c_score = app.add_subcommand("score", "Score a model zoo with one transferability metric");
  c_score->add_option("--zoo", score.zoo, "Zoo manifest JSON")->required();
  c_score->add_option("--dataset", score.dataset, "Target dataset name")->required();
  c_score->add_option("--metric", score.metric, "Metric name (built in or external)")->required();
  c_score->add_option("--external", score.external, "External scores CSV");
  c_score->add_option("--out", score.out, "Output CSV (default stdout)");
  c_score->add_option("--seed", score.seed, "Seed");
  c_score->callback([&] {
    score.threads = threads;
    action = [&] { return cmd_score(score, out, err); };
  });

  TauOpts tau;
  auto* c_tau = app.add_subcommand("tau-table", "Build the dataset x metric weighted-tau table");
  c_tau->add_option("--zoo", tau.zoo, "Zoo manifest JSON with accuracies")->required();
  c_tau->add_option("--metrics", tau.metrics, "Comma-separated metric names")->required();
  c_tau->add_option("--external", tau.external, "External scores CSV");
  c_tau->add_option("--out", tau.out, "Output table CSV")->required();
  c_tau->add_option("--seed", tau.seed, "Seed");
  c_tau->callback([&] {
    tau.threads = threads;
    action = [&] { return cmd_tau_table(tau, out, err); };
  });

  TrainOpts train;
  auto* c_train = app.add_subcommand("train", "Fit a metric selector");
  c_train->add_option("--table", train.table, "Tau table CSV")->required();
  c_train->add_option("--embeddings", train.embeddings, "Embedding corpus JSONL");
  c_train->add_option("--selector", train.selector, "Selector kind, e.g. metarank_gbdt or fixed(SFDA)")->required();
  c_train->add_option("--hyper", train.hyper, "Hyperparameters as a JSON object");
  c_train->add_option("--metric-subset", train.metric_subset, "Train on these comma-separated metric columns");
  c_train->add_option("--name", train.name, "Report label");
  c_train->add_option("--seed", train.seed, "Seed");
  c_train->add_option("--out", train.out, "Output selector JSON")->required();
  c_train->callback([&] { action = [&] { return cmd_train(train, out, err); }; });

  RankOpts rank;
  auto* c_rank = app.add_subcommand("rank", "Rank metrics for a dataset with a fitted selector");
  c_rank->add_option("--model", rank.model, "Selector JSON")->required();
  c_rank->add_option("--dataset-embedding", rank.dataset_embedding, "Dataset name or comma-separated vector");
  c_rank->add_option("--metrics", rank.metrics, "Metric embedding corpus JSONL (candidates)");
  c_rank->add_option("--embeddings", rank.embeddings, "Corpus to resolve the dataset name in");
  c_rank->add_option("--candidates", rank.candidates, "Comma-separated candidate metrics");
  c_rank->callback([&] { action = [&] { return cmd_rank(rank, out, err); }; });

  LodoOpts lodo;
  auto* c_lodo = app.add_subcommand("lodo", "Leave-one-dataset-out evaluation");
  c_lodo->add_option("--table", lodo.table, "Tau table CSV")->required();
  c_lodo->add_option("--embeddings", lodo.embeddings, "Embedding corpus JSONL")->required();
  c_lodo->add_option("--config", lodo.config, "LODO config JSON")->required();
  c_lodo->add_option("--out", lodo.out, "Report directory")->required();
  c_lodo->add_option("--seed", lodo.seed, "Override the config seed");
  c_lodo->callback([&] {
    lodo.threads = threads;
    action = [&] { return cmd_lodo(lodo, out, err); };
  });

  ReportOpts report;
  auto* c_report = app.add_subcommand("report", "Rank tables from per-dataset selections");
  c_report->add_option("--table", report.table, "Tau table CSV")->required();
  c_report->add_option("--selections", report.selections, "CSV of dataset,method,selected_metric")->required();
  c_report->add_option("--out", report.out, "Report directory")->required();
  c_report->callback([&] { action = [&] { return cmd_report(report, out, err); }; });

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic meta-benchmark");
  c_synth->add_option("--datasets", synth.bench.num_datasets, "Number of datasets");
  c_synth->add_option("--metrics", synth.bench.num_metrics, "Number of metrics");
  c_synth->add_option("--dim", synth.bench.dim, "Embedding dim");
  c_synth->add_option("--noise", synth.bench.noise, "Noise scale");
  c_synth->add_option("--seed", synth.bench.seed, "Seed");
  c_synth->add_option("--table-out", synth.table_out, "Output table CSV")->required();
  c_synth->add_option("--embeddings-out", synth.embeddings_out, "Output corpus JSONL")->required();
  c_synth->callback([&] { action = [&] { return cmd_synth(synth, out, err); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << '\n';
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "tmeta: " << e.what() << '\n';
    return kUsage;
  }
  try {
    return action();
  } catch (const UsageError& e) {
    err << "tmeta: usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "tmeta: data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ComputeError& e) {
    err << "tmeta: runtime error: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "tmeta: runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace tmeta::cli
