#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hcbfill/backends.hpp"

namespace hcbfill {

// Environment variable consulted for the model server URL.
inline constexpr const char* kRemoteUrlEnv = "HCBFILL_REMOTE_URL";

struct RemoteConfig {
  std::string endpoint;  // e.g. "http://127.0.0.1:8080"
  std::chrono::milliseconds timeout{30000};
  std::size_t batch_size = 64;
  std::size_t max_in_flight = 4;
};

struct RemoteMeta {
  std::size_t vocab_size = 0;
  TokenId mask_token_id = 0;
  std::vector<TokenId> special_token_ids;
  std::string model_name;
};

// Client for the model server's JSON protocol:
//   GET  /v1/meta          -> {vocab_size, mask_token_id, special_token_ids, model_name}
//   POST /v1/tokenize      {text} -> {token_ids}
//   POST /v1/conditionals  {queries:[{token_ids, position}]} -> {results:[{logp}]}
class RemoteBackend : public ConditionalBackend {
 public:
  // Fetches /v1/meta; throws BackendUnavailable if the server is not ready.
  explicit RemoteBackend(RemoteConfig config);

  const Vocab& vocab() const override { return vocab_; }
  std::string name() const override { return "remote:" + meta_.model_name; }
  CondDistribution conditionals(std::span<const TokenId> context,
                                std::size_t position) const override;
  // Splits into chunks of batch_size and keeps up to max_in_flight requests
  // open at once. Results are reassembled by chunk index.
  std::vector<CondDistribution> conditionals_batch(
      std::span<const Query> queries) const override;

  // A single request; 1 <= queries.size() <= batch_size.
  std::vector<CondDistribution> remote_conditionals(
      std::span<const Query> queries) const;

  Sequence tokenize(const std::string& text) const;

  const RemoteMeta& meta() const { return meta_; }
  const RemoteConfig& config() const { return config_; }

 private:
  RemoteConfig config_;
  RemoteMeta meta_;
  Vocab vocab_;
};

// Builds a RemoteConfig from `url`, or from the environment when absent.
RemoteConfig remote_config_from(std::optional<std::string> url);

}  // namespace hcbfill
