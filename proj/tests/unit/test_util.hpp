#pragma once

#include "propbench/json_io.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <filesystem>
#include <random>
#include <string>
#include <thread>

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("propbench-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

  std::filesystem::path write(const std::string& name, const std::string& content) const {
    auto p = path_ / name;
    propbench::write_file(p, content);
    return p;
  }

private:
  std::filesystem::path path_;
};

// Runs an httplib server on a free loopback port for the lifetime of the object.
class ServerThread {
public:
  explicit ServerThread(httplib::Server& s) : server_(s) {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ServerThread() {
    server_.stop();
    thread_.join();
  }
  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

private:
  httplib::Server& server_;
  int port_ = 0;
  std::thread thread_;
};

inline std::filesystem::path source_dir() { return PROPBENCH_SOURCE_DIR; }

} // namespace testutil
