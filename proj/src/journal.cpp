#include "hilctc/journal.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hilctc/error.hpp"

namespace hilctc {

using nlohmann::json;

namespace {

[[noreturn]] void io_fail(const std::string& what, const std::filesystem::path& path) {
  fail(ErrorKind::Io, what + " '" + path.string() + "': " + std::strerror(errno));
}

void write_all(int fd, std::string_view data, const std::filesystem::path& path) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("write failed on", path);
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void fsync_dir(const std::filesystem::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

std::vector<json> read_journal(const std::filesystem::path& path, std::uint64_t* valid_bytes) {
  std::vector<json> out;
  if (valid_bytes) *valid_bytes = 0;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    const std::string_view line(text.data() + pos, nl - pos);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorKind::JournalCorruption,
           "journal '" + path.string() + "' is corrupt at byte offset " + std::to_string(pos) + ": " + e.what());
    }
    if (!record.is_object() || !record.contains("seq") || record["seq"] != out.size() || !record.contains("type")) {
      fail(ErrorKind::JournalCorruption, "journal '" + path.string() + "' is corrupt at byte offset " +
                                             std::to_string(pos) + ": bad or out-of-order record header");
    }
    out.push_back(std::move(record));
    pos = nl + 1;
  }
  if (valid_bytes) *valid_bytes = pos;
  return out;
}

Journal::Journal(std::filesystem::path path) : path_(std::move(path)) {
  std::uint64_t valid = 0;
  records_ = read_journal(path_, &valid);
  next_seq_ = records_.size();
  const bool existed = std::filesystem::exists(path_);
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) io_fail("cannot open journal", path_);
  if (existed && std::filesystem::file_size(path_) != valid) {
    if (::ftruncate(fd_, static_cast<off_t>(valid)) != 0) io_fail("cannot truncate torn journal tail in", path_);
    ::fsync(fd_);
  }
  if (!existed) fsync_dir(path_.parent_path());
}

Journal::~Journal() {
  if (fd_ >= 0) ::close(fd_);
}

std::uint64_t Journal::append(json record) {
  std::lock_guard lock(mutex_);
  const std::uint64_t seq = next_seq_;
  record["seq"] = seq;
  const std::string line = record.dump() + "\n";
  write_all(fd_, line, path_);
  if (::fsync(fd_) != 0) io_fail("fsync failed on", path_);
  ++next_seq_;
  return seq;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) io_fail("cannot create", tmp);
  write_all(fd, contents, tmp);
  if (::fsync(fd) != 0) io_fail("fsync failed on", tmp);
  ::close(fd);
  if (std::rename(tmp.c_str(), path.c_str()) != 0) io_fail("cannot rename over", path);
  fsync_dir(path.parent_path());
}

}  // namespace hilctc
