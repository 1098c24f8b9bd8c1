// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "rsedit/service.hpp"

namespace {
rsedit::service::Server* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local job service for rsedit", "rsedit-service"};
  std::string host = "127.0.0.1";
  int port = 8765;
  rsedit::service::ServiceConfig config;
  std::string data_dir = "rsedit-data";
  app.add_option("--host", host, "bind address");
  app.add_option("--port", port, "bind port");
  app.add_option("--data-dir", data_dir, "job store, uploads, checkpoints and results");
  app.add_option("--workers", config.workers, "concurrent compute jobs")->check(CLI::PositiveNumber);
  app.add_option("--llm-url", config.llm_url, "chat endpoint for prompt variants");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  config.data_dir = data_dir;
  try {
    rsedit::service::Server server(config);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "rsedit-service listening on " << host << ":" << port << '\n';
    server.listen(host, port);
    g_server = nullptr;
  } catch (const rsedit::Error& e) {
    std::cerr << nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
