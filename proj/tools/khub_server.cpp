// khub_server: serves the /v1 API for one data directory.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "khub/service.hpp"

namespace {
httplib::Server* running = nullptr;
void on_signal(int) {
  if (running) running->stop();
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"khub HTTP service"};
  std::string config_path, host = "127.0.0.1";
  int port = 8080;
  cli.add_option("--config", config_path, "service config (YAML)")->required()->check(CLI::ExistingFile);
  cli.add_option("--host", host, "bind address");
  cli.add_option("--port", port, "bind port (0 picks a free port)");
  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? 0 : 2;
  }
  try {
    auto cfg = khub::service::load_service_config(khub::read_file(config_path),
                                                  std::filesystem::path(config_path).parent_path());
    khub::service::app app(cfg);
    auto& http = app.http();
    if (port == 0) port = http.bind_to_any_port(host);
    else if (!http.bind_to_port(host, port)) throw khub::error("cannot bind " + host + ":" + std::to_string(port));
    running = &http;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on http://" << host << ":" << port << "/v1" << std::endl;
    http.listen_after_bind();
    app.wait_idle();
  } catch (const std::exception& e) {
    std::cerr << "khub_server: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
