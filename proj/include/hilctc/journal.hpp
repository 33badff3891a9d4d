#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace hilctc {

/// Append-only JSON-lines log. Every append is written with a single write()
/// and fsync'd before returning, so an acknowledged record survives a crash.
class Journal {
 public:
  /// Opens (creating if needed) and reads the existing records. A trailing
  /// partial line left by a crash mid-write is cut off; any other malformed
  /// line throws JournalCorruption with its byte offset.
  explicit Journal(std::filesystem::path path);
  ~Journal();
  Journal(const Journal&) = delete;
  Journal& operator=(const Journal&) = delete;

  /// Records present at open time, in order.
  const std::vector<nlohmann::json>& records() const { return records_; }

  /// Stamps `record` with the next sequence number and appends it.
  std::uint64_t append(nlohmann::json record);

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t next_seq_ = 0;
  std::vector<nlohmann::json> records_;
  std::mutex mutex_;
};

/// Reads and validates a journal without modifying it.
std::vector<nlohmann::json> read_journal(const std::filesystem::path& path, std::uint64_t* valid_bytes = nullptr);

/// Writes `contents` to a temporary sibling, fsyncs and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace hilctc
