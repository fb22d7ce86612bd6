#include "tmeta/data.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace tmeta {

using json = nlohmann::json;

std::string_view to_string(EmbeddingKind kind) {
  return kind == EmbeddingKind::dataset ? "dataset" : "metric";
}

EmbeddingKind parse_embedding_kind(std::string_view s) {
  if (s == "dataset") return EmbeddingKind::dataset;
  if (s == "metric") return EmbeddingKind::metric;
  throw DataError("unknown embedding kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Embedding corpus

EmbeddingCorpus::EmbeddingCorpus(std::vector<EmbeddingRecord> records) {
  for (auto& r : records) add(std::move(r));
}

void EmbeddingCorpus::add(EmbeddingRecord record) {
  if (record.vector.size() == 0) throw DataError("embedding '" + record.name + "' is empty");
  if (!records_.empty() && record.vector.size() != dim_) {
    throw DataError("embedding '" + record.name + "' has dimension " +
                    std::to_string(record.vector.size()) + ", corpus dimension is " +
                    std::to_string(dim_));
  }
  if (!all_finite(record.vector)) {
    throw DataError("embedding '" + record.name + "' has non-finite components");
  }
  auto key = std::make_pair(record.kind, record.name);
  if (index_.count(key)) {
    throw DataError("duplicate " + std::string(to_string(record.kind)) + " embedding '" +
                    record.name + "'");
  }
  dim_ = record.vector.size();
  index_.emplace(std::move(key), records_.size());
  records_.push_back(std::move(record));
}

bool EmbeddingCorpus::contains(EmbeddingKind kind, const std::string& name) const {
  return index_.count({kind, name}) > 0;
}

const EmbeddingRecord* EmbeddingCorpus::find(EmbeddingKind kind, const std::string& name) const {
  auto it = index_.find({kind, name});
  return it == index_.end() ? nullptr : &records_[it->second];
}

VectorXd EmbeddingCorpus::vector(EmbeddingKind kind, const std::string& name) const {
  const auto* rec = find(kind, name);
  if (!rec) {
    throw DataError("missing " + std::string(to_string(kind)) + " embedding '" + name + "'");
  }
  return rec->vector.cast<double>();
}

std::vector<std::string> EmbeddingCorpus::names(EmbeddingKind kind) const {
  std::vector<std::string> out;
  for (const auto& r : records_)
    if (r.kind == kind) out.push_back(r.name);
  return out;
}

EmbeddingCorpus EmbeddingCorpus::without(EmbeddingKind kind, const std::string& name) const {
  EmbeddingCorpus out;
  for (const auto& r : records_)
    if (!(r.kind == kind && r.name == name)) out.add(r);
  return out;
}

std::string embedding_to_json_line(const EmbeddingRecord& record) {
  std::string line = "{\"name\": " + json(record.name).dump() + ", \"kind\": \"" +
                     std::string(to_string(record.kind)) + "\", \"vector\": [";
  for (Index i = 0; i < record.vector.size(); ++i) {
    if (i) line += ", ";
    line += format_float(record.vector(i));
  }
  line += "]}";
  return line;
}

EmbeddingCorpus load_embeddings(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings file " + path.string());
  EmbeddingCorpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto where = [&] { return path.string() + ": line " + std::to_string(line_no) + ": "; };
    EmbeddingRecord rec;
    try {
      json j = json::parse(line);
      rec.name = j.at("name").get<std::string>();
      rec.kind = parse_embedding_kind(j.at("kind").get<std::string>());
      const auto& vec = j.at("vector");
      if (!vec.is_array()) throw DataError("'vector' is not an array");
      rec.vector.resize(static_cast<Index>(vec.size()));
      for (std::size_t i = 0; i < vec.size(); ++i) {
        if (!vec[i].is_number()) throw DataError("non-numeric vector component");
        rec.vector(static_cast<Index>(i)) = static_cast<float>(vec[i].get<double>());
      }
    } catch (const json::exception& e) {
      throw DataError(where() + "malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where() + e.what());
    }
    try {
      corpus.add(std::move(rec));
    } catch (const DataError& e) {
      throw DataError(where() + e.what());
    }
  }
  return corpus;
}

void save_embeddings(const EmbeddingCorpus& corpus, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write embeddings file " + path.string());
  for (const auto& r : corpus.records()) out << embedding_to_json_line(r) << '\n';
}

// ---------------------------------------------------------------------------
// Binary feature files

namespace {

constexpr std::size_t kMagicLen = 5;

class BinaryReader {
 public:
  BinaryReader(const fs::path& path, std::string_view magic) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (bytes_.size() < kMagicLen || std::string_view(bytes_.data(), kMagicLen) != magic) {
      throw DataError(path.string() + ": bad magic, expected " + std::string(magic));
    }
    pos_ = kMagicLen;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + b]);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError(path_.string() + ": truncated payload");
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw DataError(path_.string() + ": trailing bytes after payload");
  }

 private:
  fs::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

class BinaryWriter {
 public:
  BinaryWriter(const fs::path& path, std::string_view magic) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write " + path.string());
    out_.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  }

  void u32(std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    out_.write(b, 4);
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

 private:
  std::ofstream out_;
};

RowMatrixXd read_matrix(const fs::path& path, std::string_view magic) {
  BinaryReader r(path, magic);
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  r.need(static_cast<std::size_t>(n) * d * 4);
  RowMatrixXd m(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j) m(i, j) = static_cast<double>(r.f32());
  r.expect_end();
  return m;
}

void write_matrix(const RowMatrixXd& m, const fs::path& path, std::string_view magic) {
  BinaryWriter w(path, magic);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) w.f32(static_cast<float>(m(i, j)));
}

}  // namespace

void LabeledFeatureSet::validate() const {
  const Index n = features.rows();
  if (n < 2) throw DataError("feature set needs at least 2 samples, got " + std::to_string(n));
  if (features.cols() < 1) throw DataError("feature set needs at least 1 feature column");
  if (num_classes < 1) throw DataError("feature set needs at least 1 class");
  if (static_cast<Index>(labels.size()) != n) {
    throw DataError("label count " + std::to_string(labels.size()) + " does not match " +
                    std::to_string(n) + " feature rows");
  }
  if (!all_finite(features)) throw DataError("features contain non-finite values");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " is out of range for " + std::to_string(num_classes) + " classes");
    }
  }
  if (source_probs) {
    const auto& p = *source_probs;
    if (p.rows() != n) throw DataError("source probability rows do not match feature rows");
    if (p.cols() < 1) throw DataError("source probabilities have no columns");
    if (!all_finite(p)) throw DataError("source probabilities contain non-finite values");
    for (Index i = 0; i < n; ++i) {
      if ((p.row(i).array() < 0.0).any() || (p.row(i).array() > 1.0).any()) {
        throw DataError("source probability row " + std::to_string(i) + " has entries outside [0,1]");
      }
      const double s = p.row(i).sum();
      if (std::abs(s - 1.0) > 1e-5) {
        throw DataError("source probability row " + std::to_string(i) + " sums to " +
                        format_double(s) + ", not 1");
      }
    }
  }
}

LabeledFeatureSet load_feature_set(const fs::path& features_path, const fs::path& labels_path,
                                   const std::optional<fs::path>& probs_path) {
  LabeledFeatureSet set;
  set.features = read_matrix(features_path, "FMAT1");

  BinaryReader lr(labels_path, "LBLS1");
  const std::uint32_t n = lr.u32();
  set.num_classes = lr.u32();
  lr.need(static_cast<std::size_t>(n) * 4);
  set.labels.resize(n);
  for (auto& l : set.labels) l = lr.u32();
  lr.expect_end();

  if (probs_path) set.source_probs = read_matrix(*probs_path, "PROB1");
  set.validate();
  return set;
}

void save_feature_set(const LabeledFeatureSet& set, const fs::path& features_path,
                      const fs::path& labels_path, const std::optional<fs::path>& probs_path) {
  write_matrix(set.features, features_path, "FMAT1");
  BinaryWriter lw(labels_path, "LBLS1");
  lw.u32(static_cast<std::uint32_t>(set.labels.size()));
  lw.u32(set.num_classes);
  for (auto l : set.labels) lw.u32(l);
  if (probs_path) {
    if (!set.source_probs) throw DataError("no source probabilities to save");
    write_matrix(*set.source_probs, *probs_path, "PROB1");
  }
}

// ---------------------------------------------------------------------------
// CSV helpers

std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

namespace {

double parse_real(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(context + ": cannot parse number '" + s + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Meta-task table

MetaTaskTable::MetaTaskTable(std::vector<std::string> datasets, std::vector<std::string> metrics,
                             MatrixXd tau)
    : datasets_(std::move(datasets)), metrics_(std::move(metrics)), tau_(std::move(tau)) {
  if (tau_.rows() != static_cast<Index>(datasets_.size()) ||
      tau_.cols() != static_cast<Index>(metrics_.size())) {
    throw DataError("tau matrix shape does not match dataset/metric lists");
  }
  if (std::set<std::string>(datasets_.begin(), datasets_.end()).size() != datasets_.size())
    throw DataError("duplicate dataset name in table");
  if (std::set<std::string>(metrics_.begin(), metrics_.end()).size() != metrics_.size())
    throw DataError("duplicate metric name in table");
  for (Index j = 0; j < tau_.rows(); ++j) {
    for (Index k = 0; k < tau_.cols(); ++k) {
      const double v = tau_(j, k);
      if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
        throw DataError("tau for (" + datasets_[j] + ", " + metrics_[k] + ") = " +
                        format_double(v) + " is outside [-1, 1]");
      }
    }
  }
}

std::optional<Index> MetaTaskTable::dataset_index(const std::string& name) const {
  auto it = std::find(datasets_.begin(), datasets_.end(), name);
  if (it == datasets_.end()) return std::nullopt;
  return static_cast<Index>(it - datasets_.begin());
}

std::optional<Index> MetaTaskTable::metric_index(const std::string& name) const {
  auto it = std::find(metrics_.begin(), metrics_.end(), name);
  if (it == metrics_.end()) return std::nullopt;
  return static_cast<Index>(it - metrics_.begin());
}

double MetaTaskTable::cell(const std::string& dataset, const std::string& metric) const {
  auto j = dataset_index(dataset);
  auto k = metric_index(metric);
  if (!j) throw DataError("unknown dataset '" + dataset + "'");
  if (!k) throw DataError("unknown metric '" + metric + "'");
  return tau_(*j, *k);
}

std::vector<Index> MetaTaskTable::ground_truth_order(Index row) const {
  return argsort_descending(tau_.row(row));
}

MetaTaskTable MetaTaskTable::select_datasets(const std::vector<std::string>& names) const {
  MatrixXd t(static_cast<Index>(names.size()), tau_.cols());
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto j = dataset_index(names[i]);
    if (!j) throw DataError("unknown dataset '" + names[i] + "'");
    t.row(static_cast<Index>(i)) = tau_.row(*j);
  }
  return MetaTaskTable(names, metrics_, std::move(t));
}

MetaTaskTable MetaTaskTable::select_metrics(const std::vector<std::string>& names) const {
  MatrixXd t(tau_.rows(), static_cast<Index>(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto k = metric_index(names[i]);
    if (!k) throw DataError("unknown metric '" + names[i] + "'");
    t.col(static_cast<Index>(i)) = tau_.col(*k);
  }
  return MetaTaskTable(datasets_, names, std::move(t));
}

MetaTaskTable load_meta_task_table(const fs::path& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": empty table file");
  auto header = split_csv_line(lines[0]);
  if (header != std::vector<std::string>{"dataset", "metric", "tau_w"}) {
    throw DataError(path.string() + ": header must be 'dataset,metric,tau_w'");
  }
  std::vector<std::string> datasets, metrics;
  std::map<std::pair<std::string, std::string>, double> cells;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string ctx = path.string() + ":" + std::to_string(i + 1);
    auto f = split_csv_line(lines[i]);
    if (f.size() != 3) throw DataError(ctx + ": expected 3 fields");
    if (std::find(datasets.begin(), datasets.end(), f[0]) == datasets.end()) datasets.push_back(f[0]);
    if (std::find(metrics.begin(), metrics.end(), f[1]) == metrics.end()) metrics.push_back(f[1]);
    const double v = parse_real(f[2], ctx);
    if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
      throw DataError(ctx + ": tau_w " + f[2] + " is outside [-1, 1]");
    }
    if (!cells.emplace(std::make_pair(f[0], f[1]), v).second) {
      throw DataError(ctx + ": duplicate cell (" + f[0] + ", " + f[1] + ")");
    }
  }
  MatrixXd tau(static_cast<Index>(datasets.size()), static_cast<Index>(metrics.size()));
  for (std::size_t j = 0; j < datasets.size(); ++j) {
    for (std::size_t k = 0; k < metrics.size(); ++k) {
      auto it = cells.find({datasets[j], metrics[k]});
      if (it == cells.end()) {
        throw DataError(path.string() + ": missing cell (" + datasets[j] + ", " + metrics[k] +
                        "); the table must cover the full dataset x metric grid");
      }
      tau(static_cast<Index>(j), static_cast<Index>(k)) = it->second;
    }
  }
  return MetaTaskTable(std::move(datasets), std::move(metrics), std::move(tau));
}

void save_meta_task_table(const MetaTaskTable& table, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "dataset,metric,tau_w\n";
  for (Index j = 0; j < table.num_datasets(); ++j)
    for (Index k = 0; k < table.num_metrics(); ++k)
      out << table.datasets()[j] << ',' << table.metrics()[k] << ','
          << format_double(table.tau()(j, k)) << '\n';
}

void ModelScoreVector::validate() const {
  if (model_ids.size() < 2) throw DataError("a model zoo needs at least 2 models");
  if (scores.size() != static_cast<Index>(model_ids.size()))
    throw DataError("score count does not match model count");
  if (!all_finite(scores)) throw DataError("model scores contain non-finite values");
  if (ground_truth) {
    if (ground_truth->size() != scores.size())
      throw DataError("ground truth length does not match score length");
    if (!all_finite(*ground_truth)) throw DataError("ground truth contains non-finite values");
  }
}

}  // namespace tmeta
