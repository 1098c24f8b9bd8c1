// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

// resolv.h (pulled in by httplib) defines _res, which clashes with Eigen internals.
#include <Eigen/Dense>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rsedit/error.hpp"
#include "rsedit/prompts.hpp"

namespace rsedit {

struct ChatClientConfig {
  std::string base_url;                        ///< e.g. http://localhost:8000/v1
  std::string model = "gpt-4o-mini";
  std::string token_env = "RSEDIT_LLM_TOKEN";  ///< environment variable holding the bearer token
  int timeout_seconds = 30;
  int max_retries = 2;
};

/// Paraphrases prompts through an OpenAI-style chat-completion endpoint
/// (POST {base_url}/chat/completions).
class ChatVariantSource final : public VariantSource {
 public:
  explicit ChatVariantSource(ChatClientConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw InvalidConfig("chat client needs a base URL");
    split_url();
  }

  std::vector<std::string> paraphrase(const std::string& text, int count) override {
    nlohmann::json body = {
        {"model", config_.model},
        {"messages",
         {{{"role", "system"}, {"content", std::string(kVariantInstruction)}}, {{"role", "user"}, {"content", text}}}},
        {"n", 1}};

    httplib::Headers headers;
    if (const char* token = std::getenv(config_.token_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      httplib::Client client(origin_);
      client.set_connection_timeout(config_.timeout_seconds, 0);
      client.set_read_timeout(config_.timeout_seconds, 0);
      client.set_write_timeout(config_.timeout_seconds, 0);
      auto res = client.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
      if (!res) {
        last_error = "request failed: " + httplib::to_string(res.error());
      } else if (res->status != 200) {
        last_error = "endpoint returned HTTP " + std::to_string(res->status);
        if (res->status < 500 && res->status != 429) break;  // not worth retrying
      } else {
        try {
          const auto reply = nlohmann::json::parse(res->body);
          auto variants = parse_variant_reply(reply.at("choices").at(0).at("message").at("content").get<std::string>());
          if (static_cast<int>(variants.size()) > count) variants.resize(count);
          return variants;
        } catch (const nlohmann::json::exception& e) {
          last_error = std::string("malformed reply: ") + e.what();
          break;
        }
      }
      if (attempt < config_.max_retries) std::this_thread::sleep_for(std::chrono::milliseconds(200 * (attempt + 1)));
    }
    throw Unavailable("chat endpoint " + config_.base_url + ": " + last_error);
  }

 private:
  void split_url() {
    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) throw InvalidConfig("chat base URL needs a scheme: " + config_.base_url);
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    origin_ = config_.base_url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }

  ChatClientConfig config_;
  std::string origin_;
  std::string path_prefix_;
};

}  // namespace rsedit
