#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace hilctc {

using Clock = std::function<std::chrono::system_clock::time_point()>;

struct ServiceConfig {
  std::filesystem::path data_dir;  // must exist; holds journal.jsonl and runs/<id>/report.json
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::string> token;  // when set, required in the X-Hilctc-Token header
  std::optional<std::filesystem::path> image_root;  // base for relative image_ref; default: manifest directory
  Clock clock;  // defaults to the system clock
};

/// RFC 3339 UTC with millisecond precision.
std::string format_timestamp(std::chrono::system_clock::time_point t);

/// HTTP facade over ProtocolRun with a write-ahead journal. Construction
/// replays the journal; a corrupt journal throws JournalCorruption.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listening socket and returns the port. Throws Io if the port is taken.
  int bind();
  /// Serves until stop(). Binds first if needed.
  void listen();
  /// bind() + listen() on a background thread.
  int start();
  void stop();

  std::size_t run_count() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace hilctc
