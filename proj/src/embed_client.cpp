#include "tmeta/embed_client.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <future>
#include <thread>

namespace tmeta {

using json = nlohmann::json;

std::vector<DescriptionText> load_descriptions(const fs::path& path) {
  auto lines = read_lines(path);
  std::vector<DescriptionText> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1) + ": ";
    try {
      json j = json::parse(lines[i]);
      DescriptionText t;
      t.name = j.at("name").get<std::string>();
      t.kind = parse_embedding_kind(j.at("kind").get<std::string>());
      t.description = j.at("description").get<std::string>();
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw DataError(where + "malformed description: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  return out;
}

namespace {

struct Url {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw UsageError("endpoint URL needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::vector<VectorXf> post_batch(const Url& url, const std::vector<std::string>& texts,
                                 const EmbedClientOptions& opt) {
  const std::string body = json{{"texts", texts}}.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(opt.retry_backoff * attempt);
    httplib::Client client(url.base);
    client.set_connection_timeout(opt.timeout);
    client.set_read_timeout(opt.timeout);
    auto res = client.Post(url.path, body, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "endpoint returned HTTP " + std::to_string(res->status);
      continue;
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::exception& e) {
      throw EndpointError(std::string("endpoint returned invalid JSON: ") + e.what());
    }
    if (!reply.contains("vectors") || !reply["vectors"].is_array() ||
        reply["vectors"].size() != texts.size()) {
      throw EndpointError("endpoint reply must hold one vector per text under 'vectors'");
    }
    std::vector<VectorXf> out;
    for (const auto& v : reply["vectors"]) {
      if (!v.is_array()) throw EndpointError("endpoint vector is not an array");
      VectorXf vec(static_cast<Index>(v.size()));
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw EndpointError("endpoint vector has a non-numeric entry");
        vec(static_cast<Index>(i)) = static_cast<float>(v[i].get<double>());
      }
      out.push_back(std::move(vec));
    }
    return out;
  }
  throw EndpointError("embedding endpoint failed after " + std::to_string(opt.max_retries + 1) +
                      " attempts: " + last_error);
}

}  // namespace

std::vector<EmbeddingRecord> fetch_embeddings(const std::vector<DescriptionText>& texts,
                                              const std::string& endpoint,
                                              const EmbedClientOptions& options) {
  for (const auto& t : texts) {
    if (t.description.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw DataError("empty description for " + std::string(to_string(t.kind)) + " '" + t.name +
                      "'");
    }
  }
  if (texts.empty()) return {};
  const Url url = split_url(endpoint);
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  const std::size_t inflight = std::max<std::size_t>(1, options.max_inflight);

  std::vector<std::pair<std::size_t, std::size_t>> batches;
  for (std::size_t start = 0; start < texts.size(); start += batch)
    batches.emplace_back(start, std::min(texts.size(), start + batch));

  std::vector<VectorXf> vectors(texts.size());
  // Waves of at most `inflight` concurrent batches; each batch owns a disjoint slice.
  for (std::size_t first = 0; first < batches.size(); first += inflight) {
    std::vector<std::future<std::vector<VectorXf>>> pending;
    const std::size_t last = std::min(batches.size(), first + inflight);
    for (std::size_t b = first; b < last; ++b) {
      std::vector<std::string> chunk;
      for (std::size_t i = batches[b].first; i < batches[b].second; ++i)
        chunk.push_back(texts[i].description);
      pending.push_back(std::async(std::launch::async, [&url, &options, chunk = std::move(chunk)] {
        return post_batch(url, chunk, options);
      }));
    }
    for (std::size_t b = first; b < last; ++b) {
      auto got = pending[b - first].get();
      for (std::size_t i = 0; i < got.size(); ++i) vectors[batches[b].first + i] = std::move(got[i]);
    }
  }

  const Index dim = options.expected_dim > 0 ? options.expected_dim : vectors.front().size();
  std::vector<EmbeddingRecord> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (vectors[i].size() != dim) {
      throw EndpointError("endpoint returned dimension " + std::to_string(vectors[i].size()) +
                          " for '" + texts[i].name + "', expected " + std::to_string(dim));
    }
    out.push_back({texts[i].name, texts[i].kind, std::move(vectors[i])});
  }
  return out;
}

}  // namespace tmeta
