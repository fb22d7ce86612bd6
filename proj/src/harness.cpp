#include "tmeta/harness.hpp"

#include "tmeta/rankcorr.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace tmeta::harness {

namespace {

constexpr const char* kConfigFormat = "tmeta-lodo";
constexpr int kConfigVersion = 1;

std::vector<std::string> sorted_copy(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

json merge_hyper(const json& base, const json& point) {
  json out = base.is_object() ? base : json::object();
  for (const auto& [k, v] : point.items()) out[k] = v;
  return out;
}

template <typename Err>
[[noreturn]] void rethrow_with(const std::string& prefix, const Err& e) {
  throw Err(prefix + e.what());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string format_fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

LodoConfig LodoConfig::from_json(const json& j) {
  if (!j.is_object()) throw UsageError("LODO config must be a JSON object");
  if (j.contains("format") && j.at("format") != kConfigFormat)
    throw UsageError("LODO config format must be '" + std::string(kConfigFormat) + "'");
  if (j.contains("version") && j.at("version") != kConfigVersion)
    throw UsageError("unsupported LODO config version " + j.at("version").dump());
  LodoConfig cfg;
  try {
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("n_validation")) cfg.n_validation = j.at("n_validation").get<Index>();
    if (j.contains("metric_subset") && !j.at("metric_subset").is_null())
      cfg.metric_subset = j.at("metric_subset").get<std::vector<std::string>>();
    if (!j.contains("selectors") || !j.at("selectors").is_array() || j.at("selectors").empty())
      throw UsageError("LODO config needs a nonempty 'selectors' list");
    for (const auto& entry : j.at("selectors")) {
      SelectorEntry e;
      e.spec = select::SelectorSpec::from_json(entry);
      if (entry.contains("grid") && !entry.at("grid").is_null()) {
        const auto& grid = entry.at("grid");
        if (!grid.is_object()) throw UsageError("grid must be a JSON object");
        for (const auto& [key, values] : grid.items()) {
          if (!select::hyper_key_allowed(e.spec.kind, key))
            throw UsageError("grid parameter '" + key + "' is not valid for selector " + e.spec.display_name());
          if (!values.is_array() || values.empty())
            throw UsageError("grid values for '" + key + "' must be a nonempty list");
        }
        e.grid = grid;
      }
      cfg.selectors.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed LODO config: ") + e.what());
  }
  std::set<std::string> names;
  for (const auto& e : cfg.selectors)
    if (!names.insert(e.spec.display_name()).second)
      throw UsageError("duplicate method name '" + e.spec.display_name() + "' in LODO config");
  return cfg;
}

LodoConfig LodoConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

json LodoConfig::to_json() const {
  json sel = json::array();
  for (const auto& e : selectors) {
    json s = e.spec.to_json();
    if (e.grid) s["grid"] = *e.grid;
    sel.push_back(std::move(s));
  }
  return json{{"format", kConfigFormat},
              {"version", kConfigVersion},
              {"seed", seed},
              {"n_validation", n_validation},
              {"metric_subset", metric_subset ? json(*metric_subset) : json(nullptr)},
              {"selectors", sel}};
}

void LodoConfig::validate(Index num_datasets) const {
  if (selectors.empty()) throw UsageError("no selectors configured");
  if (num_datasets < 3) throw DataError("LODO needs at least 3 datasets");
  if (n_validation < 1 || n_validation >= num_datasets - 1) {
    throw UsageError("n_validation must lie in [1, J-2] = [1, " + std::to_string(num_datasets - 2) + "]");
  }
}

LodoConfig default_benchmark_config(const std::vector<std::string>& metrics) {
  LodoConfig cfg;
  for (const auto& m : metrics) {
    SelectorEntry e;
    e.spec.kind = select::SelectorKind::fixed;
    e.spec.fixed_metric = m;
    cfg.selectors.push_back(e);
  }
  for (auto kind : {select::SelectorKind::random, select::SelectorKind::global_best, select::SelectorKind::isac_kmeans,
                    select::SelectorKind::argosmart_1nn, select::SelectorKind::ncf_mlp, select::SelectorKind::alors_mf,
                    select::SelectorKind::metarank_gbdt}) {
    SelectorEntry e;
    e.spec.kind = kind;
    const json grid = select::default_grid(kind);
    if (!grid.empty()) e.grid = grid;
    cfg.selectors.push_back(e);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// LODO

std::vector<std::string> validation_split(const std::vector<std::string>& train_datasets, Index n_validation,
                                          Index fold) {
  const auto names = sorted_copy(train_datasets);
  const Index m = static_cast<Index>(names.size());
  if (n_validation < 1 || n_validation >= m) throw UsageError("n_validation must lie in [1, training datasets - 1]");
  std::vector<std::string> out;
  for (Index i = 0; i < n_validation; ++i) {
    const Index idx = (((m - n_validation + fold + i) % m) + m) % m;
    out.push_back(names[idx]);
  }
  return out;
}

GridResult grid_search(const select::SelectorSpec& spec, const MetaTaskTable& train, const MetaTaskTable& validation,
                       const EmbeddingCorpus& embeddings, const json& grid,
                       const std::optional<std::vector<std::string>>& metric_subset) {
  const auto points = select::expand_grid(grid);
  const MetaTaskTable fit_table = metric_subset ? train.select_metrics(*metric_subset) : train;
  GridResult result;
  result.best_score = -std::numeric_limits<double>::infinity();
  std::string last_rejection;
  for (const auto& point : points) {
    auto s = spec;
    s.hyper = merge_hyper(spec.hyper, point);
    double score = -std::numeric_limits<double>::infinity();
    try {
      s.validate();
      const auto fitted = select::fit_selector(s, fit_table, embeddings);
      double sum = 0.0;
      for (Index v = 0; v < validation.num_datasets(); ++v) {
        const auto& name = validation.datasets()[v];
        std::optional<VectorXd> q;
        if (s.uses_embeddings()) q = embeddings.vector(EmbeddingKind::dataset, name);
        const auto rec = fitted.recommend(q, validation.metrics(), &embeddings);
        std::vector<Index> predicted;
        for (const auto& m : rec.metrics) predicted.push_back(*validation.metric_index(m));
        sum += rankcorr::ndcg(predicted, validation.ground_truth_order(v));
      }
      score = sum / static_cast<double>(validation.num_datasets());
    } catch (const UsageError& e) {
      last_rejection = e.what();
    } catch (const DataError& e) {
      last_rejection = e.what();
    }
    result.scores.push_back(score);
    if (score > result.best_score) {
      result.best_score = score;
      result.best = point;
    }
  }
  if (!std::isfinite(result.best_score)) {
    throw UsageError("every grid setting for " + spec.display_name() + " was rejected: " + last_rejection);
  }
  return result;
}

void score_selections(EvaluationReport& report, const MetaTaskTable& table) {
  const Index J = static_cast<Index>(report.datasets.size());
  const Index R = static_cast<Index>(report.methods.size());
  report.tau.resize(J, R);
  report.ranks.resize(J, R);
  for (Index d = 0; d < J; ++d) {
    for (Index r = 0; r < R; ++r) report.tau(d, r) = table.cell(report.datasets[d], report.selected[d][r]);
    report.ranks.row(d) = rankcorr::tie_average_ranks(report.tau.row(d)).transpose();
  }
  report.mean_ranks = report.ranks.colwise().mean().transpose();
}

EvaluationReport run_lodo(const MetaTaskTable& table, const EmbeddingCorpus& embeddings, const LodoConfig& cfg) {
  const Index J = table.num_datasets();
  cfg.validate(J);
  if (cfg.metric_subset) table.select_metrics(*cfg.metric_subset);  // validates names
  EvaluationReport report;
  report.datasets = table.datasets();
  for (const auto& e : cfg.selectors) report.methods.push_back(e.spec.display_name());
  const Index R = static_cast<Index>(cfg.selectors.size());
  report.selected.assign(static_cast<std::size_t>(J), std::vector<std::string>(static_cast<std::size_t>(R)));
  report.folds.resize(static_cast<std::size_t>(J));

  parallel_for(static_cast<std::size_t>(J), cfg.threads, [&](std::size_t f) {
    const std::string& held = report.datasets[f];
    const std::string where = "fold " + std::to_string(f) + " (held out " + held + "): ";
    try {
      std::vector<std::string> train_names;
      for (const auto& d : report.datasets)
        if (d != held) train_names.push_back(d);
      const auto train_table = table.select_datasets(train_names);
      const auto corpus = embeddings.without(EmbeddingKind::dataset, held);
      FoldRecord rec;
      rec.fold = static_cast<Index>(f);
      rec.held_out = held;
      rec.leak_check_passed = !train_table.dataset_index(held) && !corpus.contains(EmbeddingKind::dataset, held);
      if (!rec.leak_check_passed) throw ComputeError("held-out dataset leaked into the training inputs");

      rec.validation = validation_split(train_names, cfg.n_validation, static_cast<Index>(f));
      std::vector<std::string> inner;
      for (const auto& d : sorted_copy(train_names))
        if (std::find(rec.validation.begin(), rec.validation.end(), d) == rec.validation.end()) inner.push_back(d);
      const auto inner_table = train_table.select_datasets(inner);
      const auto val_table = train_table.select_datasets(rec.validation);
      const auto fit_table = cfg.metric_subset ? train_table.select_metrics(*cfg.metric_subset) : train_table;

      std::optional<VectorXd> query;
      for (Index r = 0; r < R; ++r) {
        const auto& entry = cfg.selectors[r];
        auto spec = entry.spec;
        spec.seed = derive_seed(derive_seed(cfg.seed, entry.spec.seed), f);
        const json grid = entry.grid ? *entry.grid : select::default_grid(spec.kind);
        json chosen = json::object();
        if (!grid.empty()) {
          chosen = grid_search(spec, inner_table, val_table, corpus, grid, cfg.metric_subset).best;
          spec.hyper = merge_hyper(spec.hyper, chosen);
        }
        rec.chosen_hyper.push_back(chosen);
        const auto fitted = select::fit_selector(spec, fit_table, corpus);
        std::optional<VectorXd> q;
        if (spec.uses_embeddings()) {
          if (!query) query = embeddings.vector(EmbeddingKind::dataset, held);
          q = query;
        }
        const auto recommendation = fitted.recommend(q, table.metrics(), &corpus);
        report.selected[f][r] = recommendation.metrics.front();
      }
      report.folds[f] = std::move(rec);
    } catch (const UsageError& e) {
      rethrow_with(where, e);
    } catch (const DataError& e) {
      rethrow_with(where, e);
    } catch (const ComputeError& e) {
      rethrow_with(where, e);
    }
  });
  score_selections(report, table);
  return report;
}

EvaluationReport report_from_selections(const MetaTaskTable& table, const fs::path& selections) {
  const auto lines = read_lines(selections);
  if (lines.empty() || split_csv_line(lines[0]) != std::vector<std::string>{"dataset", "method", "selected_metric"})
    throw DataError(selections.string() + ": header must be 'dataset,method,selected_metric'");
  std::map<std::pair<std::string, std::string>, std::string> picks;
  EvaluationReport report;
  report.datasets = table.datasets();
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string ctx = selections.string() + ":" + std::to_string(i + 1) + ": ";
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 3) throw DataError(ctx + "expected 3 fields");
    if (!table.dataset_index(f[0])) throw DataError(ctx + "unknown dataset '" + f[0] + "'");
    if (!table.metric_index(f[2])) throw DataError(ctx + "unknown metric '" + f[2] + "'");
    if (std::find(report.methods.begin(), report.methods.end(), f[1]) == report.methods.end())
      report.methods.push_back(f[1]);
    if (!picks.emplace(std::make_pair(f[0], f[1]), f[2]).second)
      throw DataError(ctx + "duplicate selection for (" + f[0] + ", " + f[1] + ")");
  }
  if (report.methods.empty()) throw DataError(selections.string() + ": no selections");
  for (const auto& d : report.datasets) {
    std::vector<std::string> row;
    for (const auto& m : report.methods) {
      auto it = picks.find({d, m});
      if (it == picks.end()) throw DataError(selections.string() + ": no selection for (" + d + ", " + m + ")");
      row.push_back(it->second);
    }
    report.selected.push_back(std::move(row));
  }
  score_selections(report, table);
  return report;
}

// ---------------------------------------------------------------------------
// Reports

double quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw DataError("quantile of an empty list");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

BoxStats box_stats(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.median = quantile(values, 0.5);
  b.q1 = quantile(values, 0.25);
  b.q3 = quantile(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  bool have_low = false;
  for (double v : values) {
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
      continue;
    }
    if (!have_low) {
      b.whisker_low = v;
      have_low = true;
    }
    b.whisker_high = v;
  }
  return b;
}

void emit_report(const EvaluationReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  const Index J = static_cast<Index>(report.datasets.size());
  const Index R = static_cast<Index>(report.methods.size());
  {
    auto out = open_out(dir / "per_dataset.csv");
    out << "dataset,method,selected_metric,tau_w,rank\n";
    for (Index d = 0; d < J; ++d)
      for (Index r = 0; r < R; ++r)
        out << report.datasets[d] << ',' << report.methods[r] << ',' << report.selected[d][r] << ','
            << format_double(report.tau(d, r)) << ',' << format_double(report.ranks(d, r)) << '\n';
  }
  {
    auto out = open_out(dir / "mean_ranks.csv");
    out << "method,mean_rank\n";
    for (Index r = 0; r < R; ++r) out << report.methods[r] << ',' << format_fixed4(report.mean_ranks(r)) << '\n';
  }
  {
    auto out = open_out(dir / "boxstats.csv");
    out << "method,median,q1,q3,whisker_low,whisker_high,outliers\n";
    for (Index r = 0; r < R; ++r) {
      std::vector<double> col(report.ranks.col(r).data(), report.ranks.col(r).data() + J);
      const auto b = box_stats(col);
      out << report.methods[r] << ',' << format_double(b.median) << ',' << format_double(b.q1) << ','
          << format_double(b.q3) << ',' << format_double(b.whisker_low) << ',' << format_double(b.whisker_high)
          << ',';
      for (std::size_t i = 0; i < b.outliers.size(); ++i) out << (i ? ";" : "") << format_double(b.outliers[i]);
      out << '\n';
    }
  }
  if (!report.folds.empty()) {
    auto out = open_out(dir / "folds.jsonl");
    for (const auto& f : report.folds) {
      json hyper = json::object();
      for (std::size_t r = 0; r < f.chosen_hyper.size(); ++r) hyper[report.methods[r]] = f.chosen_hyper[r];
      out << json{{"fold", f.fold},
                  {"held_out", f.held_out},
                  {"validation", f.validation},
                  {"leak_check_passed", f.leak_check_passed},
                  {"chosen_hyper", hyper}}
                 .dump()
          << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic meta-benchmark

VectorXd default_synthetic_weights(Index dim) {
  VectorXd w(dim);
  for (Index l = 0; l < dim; ++l) w(l) = std::pow(0.2, static_cast<double>(l));
  return w * std::sqrt(static_cast<double>(dim)) / w.norm();
}

SyntheticData generate_synthetic(const SyntheticMetaBenchmark& bench) {
  const Index J = bench.num_datasets, K = bench.num_metrics, dim = bench.dim;
  if (J < 2 || K < 2) throw UsageError("synthetic benchmark needs J >= 2 and K >= 2");
  if (dim < 1) throw UsageError("synthetic embedding dim must be >= 1");
  if (!(bench.noise >= 0.0)) throw UsageError("noise scale must be >= 0");
  const VectorXd w = bench.weights ? *bench.weights : default_synthetic_weights(dim);
  if (w.size() != dim) throw UsageError("latent weight vector must have the embedding dim");

  Rng rng(bench.seed);
  // Embeddings are stored as float32, so draw and round before computing utilities.
  auto draw = [&](Index rows) {
    MatrixXd m(rows, dim);
    for (Index i = 0; i < rows; ++i)
      for (Index l = 0; l < dim; ++l) m(i, l) = static_cast<double>(static_cast<float>(rng.normal()));
    return m;
  };
  const MatrixXd d = draw(J);
  const MatrixXd s = draw(K);
  SyntheticData out;
  out.utility = d * w.asDiagonal() * s.transpose() / std::sqrt(static_cast<double>(dim));

  auto label = [](const char* prefix, Index i, Index n) {
    const int width = static_cast<int>(std::to_string(n - 1).size());
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%0*lld", prefix, width, static_cast<long long>(i));
    return std::string(buf);
  };
  std::vector<std::string> datasets, metrics;
  for (Index j = 0; j < J; ++j) datasets.push_back(label("syn_d", j, J));
  for (Index k = 0; k < K; ++k) metrics.push_back(label("syn_m", k, K));

  MatrixXd tau(J, K);
  for (Index j = 0; j < J; ++j)
    for (Index k = 0; k < K; ++k) {
      const double e = bench.noise > 0.0 ? bench.noise * rng.normal() : 0.0;
      tau(j, k) = std::clamp(std::tanh(out.utility(j, k)) + e, -1.0, 1.0);
    }
  out.table = MetaTaskTable(datasets, metrics, tau);
  for (Index j = 0; j < J; ++j)
    out.embeddings.add({datasets[j], EmbeddingKind::dataset, d.row(j).transpose().cast<float>()});
  for (Index k = 0; k < K; ++k)
    out.embeddings.add({metrics[k], EmbeddingKind::metric, s.row(k).transpose().cast<float>()});
  return out;
}

// ---------------------------------------------------------------------------

MetaTaskTable build_tau_table(const std::vector<std::string>& datasets,
                              const std::map<std::string, std::vector<metrics::ZooMember>>& zoos,
                              const std::map<std::string, VectorXd>& accuracies,
                              const std::vector<metrics::MetricId>& metric_ids, const metrics::MetricConfig& cfg,
                              std::uint64_t seed, const metrics::ExternalScores* external, unsigned threads) {
  if (datasets.empty() || metric_ids.empty()) throw DataError("tau table needs datasets and metrics");
  MatrixXd tau(static_cast<Index>(datasets.size()), static_cast<Index>(metric_ids.size()));
  std::vector<std::string> names;
  for (const auto& m : metric_ids) names.push_back(m.name());
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const auto& name = datasets[d];
    auto zit = zoos.find(name);
    auto ait = accuracies.find(name);
    if (zit == zoos.end()) throw DataError("no model zoo for dataset '" + name + "'");
    if (ait == accuracies.end()) throw DataError("no accuracies for dataset '" + name + "'");
    const auto& zoo = zit->second;
    const VectorXd& acc = ait->second;
    if (acc.size() != static_cast<Index>(zoo.size()))
      throw DataError("dataset '" + name + "': accuracy count does not match the model zoo");
    if (!all_finite(acc)) throw DataError("dataset '" + name + "': accuracies are not finite");
    for (std::size_t m = 0; m < metric_ids.size(); ++m) {
      const std::string where = "cell (" + name + ", " + names[m] + "): ";
      try {
        const auto scores = metrics::score_model_zoo(name, zoo, metric_ids[m], cfg, seed, external, threads);
        tau(static_cast<Index>(d), static_cast<Index>(m)) = rankcorr::weighted_kendall_tau(scores.scores, acc).value;
      } catch (const DataError& e) {
        rethrow_with(where, e);
      } catch (const ComputeError& e) {
        rethrow_with(where, e);
      }
    }
  }
  return MetaTaskTable(datasets, names, tau);
}

}  // namespace tmeta::harness
