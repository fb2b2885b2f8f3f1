#pragma once

// In-process stand-in for the model server, speaking the /v1 JSON protocol.

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

namespace stub {

enum class Mode {
  Normal,
  SlightDrift,   // logsumexp = 5e-4
  Unnormalized,  // logsumexp = 0.5
  Malformed,     // body is not JSON
  WrongCount,    // one result fewer than queries
  Slow,          // sleeps 1.5 s before answering
  Unavailable,   // 503 on /v1/conditionals
};

constexpr int kVocab = 6;
constexpr int kMask = 5;

// Deterministic normalized log-probs for a query.
inline std::vector<double> reference_logp(const std::vector<int>& ids,
                                          std::size_t position) {
  std::vector<double> s(kVocab);
  double acc = 0.0;
  for (int t : ids) acc = acc * 1.7 + t;
  for (int v = 0; v < kVocab; ++v) {
    s[v] = std::sin(0.9 * v + 0.37 * double(position) + 0.11 * acc);
  }
  double top = s[0];
  for (double x : s) top = std::max(top, x);
  double z = 0.0;
  for (double x : s) z += std::exp(x - top);
  const double lse = top + std::log(z);
  for (double& x : s) x -= lse;
  return s;
}

class Server {
 public:
  explicit Server(Mode mode = Mode::Normal) : mode_(mode) {
    using nlohmann::json;
    svr_.Get("/v1/meta", [](const httplib::Request&, httplib::Response& res) {
      json j{{"vocab_size", kVocab},
             {"mask_token_id", kMask},
             {"special_token_ids", {kMask}},
             {"model_name", "stub"}};
      res.set_content(j.dump(), "application/json");
    });
    svr_.Post("/v1/tokenize", [](const httplib::Request& req,
                                 httplib::Response& res) {
      auto body = json::parse(req.body);
      const std::string text = body.at("text");
      if (text.empty()) {
        res.status = 400;
        return;
      }
      std::vector<int> ids;
      for (char c : text) {
        if (c != ' ') ids.push_back(static_cast<unsigned char>(c) % kMask);
      }
      res.set_content(json{{"token_ids", ids}}.dump(), "application/json");
    });
    svr_.Post("/v1/conditionals", [this](const httplib::Request& req,
                                         httplib::Response& res) {
      ++requests_;
      if (mode_ == Mode::Unavailable) {
        res.status = 503;
        return;
      }
      if (mode_ == Mode::Malformed) {
        res.set_content("{not json", "application/json");
        return;
      }
      if (mode_ == Mode::Slow) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1500));
      }
      auto body = json::parse(req.body);
      json results = json::array();
      for (const auto& q : body.at("queries")) {
        const std::vector<int> ids = q.at("token_ids");
        const std::size_t pos = q.at("position");
        if (pos >= ids.size()) {
          res.status = 422;
          return;
        }
        auto logp = reference_logp(ids, pos);
        const double shift = mode_ == Mode::SlightDrift    ? 5e-4
                             : mode_ == Mode::Unnormalized ? 0.5
                                                           : 0.0;
        for (double& v : logp) v += shift;
        results.push_back({{"logp", logp}});
      }
      if (mode_ == Mode::WrongCount && !results.empty()) results.erase(results.size() - 1);
      res.set_content(json{{"results", results}}.dump(17), "application/json");
    });
    port_ = svr_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
  }

  ~Server() {
    svr_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::size_t requests() const { return requests_.load(); }

 private:
  Mode mode_;
  httplib::Server svr_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::size_t> requests_{0};
};

}  // namespace stub
