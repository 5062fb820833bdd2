#include "propbench/mock_llm.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

namespace {
httplib::Server* g_server = nullptr;
extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}
} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Canned OpenAI-compatible chat-completions server for offline runs"};
  std::string fixture, host = "127.0.0.1", port_file;
  int port = 0;
  app.add_option("fixture", fixture, "Fixture JSON {responses, default}")->required()->check(CLI::ExistingFile);
  app.add_option("--host", host, "Bind address");
  app.add_option("--port", port, "Port (0 picks a free port)");
  app.add_option("--port-file", port_file, "Write the bound port here");
  CLI11_PARSE(app, argc, argv);

  try {
    propbench::MockLlm mock{std::filesystem::path(fixture)};
    httplib::Server server;
    mock.mount(server);
    int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
      std::cerr << "error: cannot bind " << host << ":" << port << "\n";
      return 1;
    }
    if (!port_file.empty()) propbench::write_file(port_file, std::to_string(bound) + "\n");
    std::cout << "http://" << host << ":" << bound << "/v1" << std::endl;
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.listen_after_bind();
    std::cerr << "served " << mock.request_count() << " requests\n";
  } catch (const propbench::Error& e) {
    std::cerr << "error [" << e.kind() << "]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
