#pragma once

#include "tmeta/data.hpp"

#include <chrono>
#include <string>
#include <vector>

namespace tmeta {

/// One description to embed.
struct DescriptionText {
  std::string name;
  EmbeddingKind kind = EmbeddingKind::dataset;
  std::string description;
};

std::vector<DescriptionText> load_descriptions(const fs::path& path);

struct EmbedClientOptions {
  std::size_t max_inflight = 4;
  std::size_t batch_size = 8;
  int max_retries = 3;  // attempts after the first failure
  std::chrono::milliseconds retry_backoff{100};
  std::chrono::seconds timeout{30};
  Index expected_dim = 0;  // 0 accepts whatever the endpoint returns, if consistent
};

/// Thrown when the endpoint cannot be reached or keeps failing.
class EndpointError : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

/// Embeds descriptions through a POST {"texts": [...]} -> {"vectors": [[...]]} endpoint.
///
/// Output order matches input order. Nothing is returned unless every batch
/// succeeded, so callers never see a partial corpus.
std::vector<EmbeddingRecord> fetch_embeddings(const std::vector<DescriptionText>& texts,
                                              const std::string& endpoint,
                                              const EmbedClientOptions& options = {});

}  // namespace tmeta
