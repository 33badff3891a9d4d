#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "hilctc/error.hpp"
#include "hilctc/journal.hpp"
#include "support.hpp"

using namespace hilctc;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("journal") {

TEST_CASE("records survive reopening in order") {
  const auto dir = testing::scratch_dir("journal-order");
  const auto path = dir / "journal.jsonl";
  {
    Journal j(path);
    CHECK(j.records().empty());
    CHECK(j.append({{"type", "create"}, {"n", 1}}) == 0);
    CHECK(j.append({{"type", "advance"}, {"n", 2}}) == 1);
  }
  Journal j(path);
  REQUIRE(j.records().size() == 2);
  CHECK(j.records()[0]["seq"] == 0);
  CHECK(j.records()[1]["n"] == 2);
  CHECK(j.append({{"type", "label"}}) == 2);
  CHECK(read_journal(path).size() == 3);
}

TEST_CASE("a torn final line is cut off") {
  const auto dir = testing::scratch_dir("journal-torn");
  const auto path = dir / "journal.jsonl";
  {
    Journal j(path);
    j.append({{"type", "create"}});
  }
  const auto good = slurp(path);
  std::ofstream(path, std::ios::app | std::ios::binary) << R"({"type":"adv)";
  std::uint64_t valid = 0;
  CHECK(read_journal(path, &valid).size() == 1);
  CHECK(valid == good.size());
  {
    Journal j(path);
    CHECK(j.records().size() == 1);
    j.append({{"type", "advance"}});
  }
  CHECK(read_journal(path).size() == 2);
  CHECK(slurp(path).substr(0, good.size()) == good);
}

TEST_CASE("corruption in the middle is reported with its offset") {
  const auto dir = testing::scratch_dir("journal-bad");
  const auto path = dir / "journal.jsonl";
  {
    Journal j(path);
    j.append({{"type", "create"}});
  }
  const auto first = slurp(path).size();
  std::ofstream(path, std::ios::app | std::ios::binary) << "garbage\n" << R"({"seq":2,"type":"x"})" << "\n";
  try {
    read_journal(path);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::JournalCorruption);
    CHECK(std::string(e.what()).find("byte offset " + std::to_string(first)) != std::string::npos);
  }
  CHECK_THROWS_AS(Journal{path}, Error);

  // sequence numbers must be contiguous
  std::ofstream(path, std::ios::trunc) << R"({"seq":0,"type":"a"})" << "\n" << R"({"seq":5,"type":"b"})" << "\n";
  CHECK_THROWS_AS(read_journal(path), Error);
}

TEST_CASE("atomic file replacement") {
  const auto dir = testing::scratch_dir("journal-atomic");
  const auto path = dir / "report.json";
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  CHECK(slurp(path) == "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 1);
}

}  // TEST_SUITE
