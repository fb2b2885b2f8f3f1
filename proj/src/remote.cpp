#include "hcbfill/remote.hpp"

#include <cmath>
#include <cstdlib>
#include <future>

#include "httplib.h"
#include "json.hpp"

#include "hcbfill/errors.hpp"

namespace hcbfill {

using nlohmann::json;

namespace {

// Renormalization is accepted up to this drift; beyond it the payload is
// rejected.
constexpr double kNormalizationSlack = 1e-3;

httplib::Client make_client(const RemoteConfig& config) {
  httplib::Client cli(config.endpoint);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(
      config.timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());
  return cli;
}

json check_response(const httplib::Result& res, const std::string& what) {
  if (!res) {
    throw BackendUnavailable(what + ": " + httplib::to_string(res.error()));
  }
  if (res->status >= 500) {
    throw BackendUnavailable(what + ": HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw ProtocolError(what + ": HTTP " + std::to_string(res->status) + " " +
                        res->body);
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw ProtocolError(what + ": malformed JSON: " + e.what());
  }
}

RemoteMeta fetch_meta(const RemoteConfig& config) {
  auto cli = make_client(config);
  json body = check_response(cli.Get("/v1/meta"), "GET /v1/meta");
  try {
    RemoteMeta meta;
    meta.vocab_size = body.at("vocab_size").get<std::size_t>();
    meta.mask_token_id = body.at("mask_token_id").get<TokenId>();
    meta.special_token_ids =
        body.at("special_token_ids").get<std::vector<TokenId>>();
    meta.model_name = body.value("model_name", std::string("unknown"));
    return meta;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("GET /v1/meta: ") + e.what());
  }
}

}  // namespace

RemoteConfig remote_config_from(std::optional<std::string> url) {
  RemoteConfig config;
  if (url && !url->empty()) {
    config.endpoint = *url;
  } else if (const char* env = std::getenv(kRemoteUrlEnv); env && *env) {
    config.endpoint = env;
  } else {
    throw ConfigError(std::string("no remote endpoint; set ") + kRemoteUrlEnv);
  }
  while (!config.endpoint.empty() && config.endpoint.back() == '/') {
    config.endpoint.pop_back();
  }
  return config;
}

RemoteBackend::RemoteBackend(RemoteConfig config)
    : config_(std::move(config)),
      meta_(fetch_meta(config_)),
      vocab_(Vocab::anonymous(meta_.vocab_size, meta_.mask_token_id,
                              meta_.special_token_ids)) {
  if (config_.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (config_.max_in_flight == 0) config_.max_in_flight = 1;
}

CondDistribution RemoteBackend::conditionals(std::span<const TokenId> context,
                                             std::size_t position) const {
  const Query q{Sequence(context.begin(), context.end()), position};
  return std::move(remote_conditionals(std::span(&q, 1)).front());
}

std::vector<CondDistribution> RemoteBackend::remote_conditionals(
    std::span<const Query> queries) const {
  if (queries.empty()) throw InvalidQuery("empty batch");
  if (queries.size() > config_.batch_size) {
    throw InvalidQuery("batch exceeds batch_size");
  }
  json req;
  req["queries"] = json::array();
  for (const Query& q : queries) {
    if (q.position >= q.context.size()) {
      throw InvalidQuery("position out of range");
    }
    req["queries"].push_back({{"token_ids", q.context}, {"position", q.position}});
  }
  auto cli = make_client(config_);
  json body = check_response(
      cli.Post("/v1/conditionals", req.dump(), "application/json"),
      "POST /v1/conditionals");

  std::vector<CondDistribution> out;
  out.reserve(queries.size());
  try {
    const json& results = body.at("results");
    if (!results.is_array() || results.size() != queries.size()) {
      throw ProtocolError("result count does not match query count");
    }
    for (const json& r : results) {
      auto logp = r.at("logp").get<std::vector<double>>();
      if (logp.size() != vocab_.size()) {
        throw ProtocolError("logp length " + std::to_string(logp.size()) +
                            " != vocab size " + std::to_string(vocab_.size()));
      }
      for (double v : logp) {
        if (!std::isfinite(v)) throw ProtocolError("non-finite logp entry");
      }
      const double drift = log_sum_exp(logp);
      if (std::abs(drift) > kNormalizationSlack) {
        throw ProtocolError("logp not normalized (logsumexp = " +
                            std::to_string(drift) + ")");
      }
      out.push_back(CondDistribution::normalize(logp));
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("POST /v1/conditionals: ") + e.what());
  }
  return out;
}

std::vector<CondDistribution> RemoteBackend::conditionals_batch(
    std::span<const Query> queries) const {
  std::vector<std::span<const Query>> chunks;
  for (std::size_t i = 0; i < queries.size(); i += config_.batch_size) {
    chunks.push_back(queries.subspan(
        i, std::min(config_.batch_size, queries.size() - i)));
  }
  std::vector<std::vector<CondDistribution>> answers(chunks.size());
  for (std::size_t start = 0; start < chunks.size();
       start += config_.max_in_flight) {
    const std::size_t stop =
        std::min(chunks.size(), start + config_.max_in_flight);
    std::vector<std::future<std::vector<CondDistribution>>> pending;
    for (std::size_t c = start; c < stop; ++c) {
      pending.push_back(std::async(std::launch::async, [this, chunk = chunks[c]] {
        return remote_conditionals(chunk);
      }));
    }
    for (std::size_t c = start; c < stop; ++c) {
      answers[c] = pending[c - start].get();
    }
  }
  std::vector<CondDistribution> out;
  out.reserve(queries.size());
  for (auto& a : answers) {
    for (auto& d : a) out.push_back(std::move(d));
  }
  return out;
}

Sequence RemoteBackend::tokenize(const std::string& text) const {
  auto cli = make_client(config_);
  json body = check_response(
      cli.Post("/v1/tokenize", json{{"text", text}}.dump(), "application/json"),
      "POST /v1/tokenize");
  try {
    return body.at("token_ids").get<Sequence>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("POST /v1/tokenize: ") + e.what());
  }
}

}  // namespace hcbfill
